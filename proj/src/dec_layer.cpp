#include "rmab/dec_layer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "rmab/errors.hpp"

namespace rmab {

namespace {

struct LambdaEval {
    double residual = 0.0;
    double slope = 0.0; // d residual / d lambda
    Table z;
};

LambdaEval softmax_eval(const ReturnsTable& t, double lambda, double alpha, double bd) {
    const int N = t.num_arms();
    const int P = t.num_policies();
    LambdaEval out;
    out.z.resize(N, P);
    double used = 0.0;
    double var_sum = 0.0;
    for (int i = 0; i < N; ++i) {
        double peak = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < P; ++j) {
            const double logit = (t.j_pred(i, j) - lambda * t.j_budget(i, j)) / alpha;
            out.z(i, j) = logit;
            peak = std::max(peak, logit);
        }
        double total = 0.0;
        for (int j = 0; j < P; ++j) {
            out.z(i, j) = std::exp(out.z(i, j) - peak);
            total += out.z(i, j);
        }
        double mean = 0.0;
        double second = 0.0;
        for (int j = 0; j < P; ++j) {
            out.z(i, j) /= total;
            mean += out.z(i, j) * t.j_budget(i, j);
            second += out.z(i, j) * t.j_budget(i, j) * t.j_budget(i, j);
        }
        used += mean;
        var_sum += std::max(0.0, second - mean * mean);
    }
    out.residual = used - bd;
    out.slope = -var_sum / alpha;
    return out;
}

void check_same_shape(const Table& a, const Table& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw InputError(fmt::format("{} is {}x{}, expected {}x{}", what, b.rows(), b.cols(),
                                     a.rows(), a.cols()));
}

void check_alpha(const RegularizerConfig& reg) {
    if (!(reg.alpha > 0.0) || !std::isfinite(reg.alpha))
        throw InputError(fmt::format("regularization weight must be positive, got {}", reg.alpha));
}

// Euclidean projection of v onto the probability simplex.
Eigen::RowVectorXd project_simplex(const Eigen::RowVectorXd& v) {
    std::vector<double> sorted(v.data(), v.data() + v.size());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        cumulative += sorted[k];
        const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
        if (sorted[k] - candidate > 0.0)
            theta = candidate;
    }
    return (v.array() - theta).max(0.0).matrix();
}

// Inner maximizers of the Lagrangian at a fixed multiplier, together with the
// dual value and its first two derivatives.
struct DualPoint {
    double value = 0.0;
    double grad = 0.0;
    double curvature = 0.0;
    Table z;
};

DualPoint dual_point(const ReturnsTable& t, double lambda, const RegularizerConfig& reg,
                     double bd) {
    const int N = t.num_arms();
    const int P = t.num_policies();
    const double alpha = reg.alpha;
    DualPoint out;
    out.z.resize(N, P);
    double used = 0.0;
    for (int i = 0; i < N; ++i) {
        const Eigen::RowVectorXd c = t.j_pred.row(i) - lambda * t.j_budget.row(i);
        const Eigen::RowVectorXd g = t.j_budget.row(i);
        if (reg.kind == Regularizer::Entropy) {
            const double peak = c.maxCoeff();
            const Eigen::RowVectorXd w = ((c.array() - peak) / alpha).exp().matrix();
            const double total = w.sum();
            const Eigen::RowVectorXd z = w / total;
            out.value += peak + alpha * std::log(total);
            const double mean = z.dot(g);
            out.curvature += std::max(0.0, z.dot(g.cwiseProduct(g)) - mean * mean) / alpha;
            used += mean;
            out.z.row(i) = z;
        } else {
            const Eigen::RowVectorXd z = project_simplex(c / (2.0 * alpha));
            out.value += z.dot(c) - alpha * z.squaredNorm();
            double support = 0.0, sum_g = 0.0, sum_g2 = 0.0;
            for (int j = 0; j < P; ++j)
                if (z(j) > 0.0) {
                    support += 1.0;
                    sum_g += g(j);
                    sum_g2 += g(j) * g(j);
                }
            out.curvature += std::max(0.0, sum_g2 - sum_g * sum_g / support) / (2.0 * alpha);
            used += z.dot(g);
            out.z.row(i) = z;
        }
    }
    out.value += lambda * bd;
    out.grad = bd - used;
    return out;
}

double lp_dual(const ReturnsTable& t, double lambda, double bd) {
    double total = lambda * bd;
    for (int i = 0; i < t.num_arms(); ++i)
        total += (t.j_pred.row(i) - lambda * t.j_budget.row(i)).maxCoeff();
    return total;
}

} // namespace

void ReturnsTable::validate() const {
    if (j_pred.rows() < 1 || j_pred.cols() < 1)
        throw InputError("returns table is empty");
    check_same_shape(j_pred, j_budget, "budget table");
    if (j_true.size() != 0)
        check_same_shape(j_pred, j_true, "true-returns table");
    if (!j_pred.allFinite() || !j_budget.allFinite())
        throw NumericError("returns table contains non-finite entries");
    if ((j_budget.array() < -1e-12).any())
        throw InputError("budget usage must be nonnegative");
}

void SolverConfig::validate() const {
    if (!(budget > 0.0))
        throw InputError(fmt::format("budget must be positive, got {}", budget));
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw InputError(fmt::format("discount factor must lie in [0, 1), got {}", gamma));
    if (!(epsilon > 0.0))
        throw InputError(fmt::format("bisection tolerance must be positive, got {}", epsilon));
    if (!(r_max > 0.0))
        throw InputError(fmt::format("maximum reward must be positive, got {}", r_max));
}

EvalLambdaResult eval_lambda(const ReturnsTable& tables, double lambda,
                             const RegularizerConfig& reg, const SolverConfig& cfg) {
    check_alpha(reg);
    LambdaEval e = softmax_eval(tables, lambda, reg.alpha, cfg.discounted_budget());
    return {e.residual, Mixture{std::move(e.z)}};
}

DualSolution forward_pass(const ReturnsTable& tables, const RegularizerConfig& reg,
                          const SolverConfig& cfg) {
    tables.validate();
    cfg.validate();
    check_alpha(reg);
    if (reg.kind != Regularizer::Entropy)
        throw InputError("the bisection forward pass supports the entropy regularizer only");

    const double bd = cfg.discounted_budget();
    DualSolution sol;
    auto eval = [&](double lambda) {
        ++sol.eval_calls;
        return softmax_eval(tables, lambda, reg.alpha, bd);
    };
    auto finish = [&](double lambda, LambdaEval e) {
        sol.lambda_star = lambda;
        sol.slack_xi = -e.residual;
        sol.z_star.z = std::move(e.z);
        return sol;
    };

    // The residual is nonincreasing in lambda, so a nonpositive residual at
    // zero means the root is negative and the constraint is dropped.
    LambdaEval at_zero = eval(0.0);
    if (at_zero.residual <= 0.0)
        return finish(0.0, std::move(at_zero));

    double lo = 0.0;
    double hi = cfg.r_max / (1.0 - cfg.gamma);
    LambdaEval at_hi = eval(hi);
    for (int k = 0; at_hi.residual > 0.0; ++k) {
        if (k == 64)
            throw InfeasibleError(fmt::format(
                "budget {} cannot be met: residual {} at multiplier {}", bd, at_hi.residual, hi));
        lo = hi;
        hi *= 2.0;
        at_hi = eval(hi);
    }

    while (hi - lo > cfg.epsilon) {
        const double mid = 0.5 * (lo + hi);
        LambdaEval e = eval(mid);
        if (e.residual > 0.0) {
            lo = mid;
        } else {
            hi = mid;
            at_hi = std::move(e);
        }
    }

    // Polish inside [lo, hi] until complementary slackness holds.
    double lambda = hi;
    LambdaEval cur = std::move(at_hi);
    const double target = cfg.slackness_tol * std::max(1.0, bd);
    for (int k = 0; k < 200; ++k) {
        if (std::abs(lambda * cur.residual) <= target)
            break;
        double next = 0.5 * (lo + hi);
        if (cur.slope < 0.0) {
            const double newton = lambda - cur.residual / cur.slope;
            if (newton > lo && newton < hi)
                next = newton;
        }
        if (!(next > lo && next < hi))
            break; // bracket exhausted at floating-point resolution
        cur = eval(next);
        lambda = next;
        if (cur.residual > 0.0)
            lo = next;
        else
            hi = next;
    }
    return finish(lambda, std::move(cur));
}

DualSolution solve_reference(const ReturnsTable& tables, const RegularizerConfig& reg,
                             const SolverConfig& cfg, const ReferenceOptions& opts) {
    tables.validate();
    cfg.validate();
    check_alpha(reg);
    const double bd = cfg.discounted_budget();
    const double scale = std::max(1.0, bd);

    DualSolution sol;
    auto done = [&](double lambda, DualPoint p) {
        sol.lambda_star = lambda;
        sol.slack_xi = p.grad;
        sol.z_star.z = std::move(p.z);
        return sol;
    };

    // D is convex in lambda with D'(lambda) = xi(lambda). Optimal at zero
    // when the budget is slack there.
    DualPoint p = dual_point(tables, 0.0, reg, bd);
    ++sol.eval_calls;
    if (p.grad >= 0.0)
        return done(0.0, std::move(p));

    double lo = 0.0;
    double hi = 1.0;
    DualPoint q = dual_point(tables, hi, reg, bd);
    ++sol.eval_calls;
    while (q.grad < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300)
            throw InfeasibleError("reference solver found no feasible multiplier");
        q = dual_point(tables, hi, reg, bd);
        ++sol.eval_calls;
    }

    double lambda = hi;
    DualPoint cur = std::move(q);
    for (int k = 0; k < opts.max_iterations; ++k) {
        const bool stationary = std::abs(cur.grad) * std::max(1.0, lambda) <= opts.kkt_tol * scale;
        if (stationary && cur.grad >= -opts.kkt_tol * scale)
            return done(lambda, std::move(cur));
        if (cur.grad < 0.0)
            lo = lambda;
        else
            hi = lambda;

        double next = 0.5 * (lo + hi);
        if (cur.curvature > 0.0) {
            double step = -cur.grad / cur.curvature;
            // Armijo backtracking on the dual objective
            for (int b = 0; b < 40; ++b) {
                const double trial = std::max(0.0, lambda + step);
                if (trial > lo && trial < hi) {
                    const DualPoint t = dual_point(tables, trial, reg, bd);
                    ++sol.eval_calls;
                    if (t.value <= cur.value + 1e-4 * cur.grad * (trial - lambda)) {
                        next = trial;
                        break;
                    }
                }
                step *= 0.5;
            }
        }
        if (!(hi - lo > 0.0) || next == lambda)
            break;
        lambda = next;
        cur = dual_point(tables, lambda, reg, bd);
        ++sol.eval_calls;
    }
    const double kkt = std::abs(cur.grad) * std::max(1.0, lambda) / scale;
    if (kkt <= opts.kkt_tol)
        return done(lambda, std::move(cur));
    throw NumericError(fmt::format(
        "reference solver stopped at multiplier {} with KKT residual {:.3g}", lambda, kkt));
}

double kkt_residual(const ReturnsTable& tables, const DualSolution& sol,
                    const SolverConfig& cfg) {
    const double bd = cfg.discounted_budget();
    const Table& z = sol.z_star.z;
    const double used = z.cwiseProduct(tables.j_budget).sum();
    const double xi = bd - used;
    double worst = std::max(0.0, -xi);
    worst = std::max(worst, std::abs(sol.lambda_star * xi));
    worst = std::max(worst, std::max(0.0, -sol.lambda_star));
    for (int i = 0; i < z.rows(); ++i)
        worst = std::max(worst, std::abs(z.row(i).sum() - 1.0));
    worst = std::max(worst, std::max(0.0, -z.minCoeff()));
    return worst / std::max(1.0, bd);
}

LpSolution solve_unregularized(const ReturnsTable& tables, const SolverConfig& cfg) {
    tables.validate();
    cfg.validate();
    const double bd = cfg.discounted_budget();
    std::vector<double> candidates{0.0};
    for (int i = 0; i < tables.num_arms(); ++i)
        for (int j = 0; j < tables.num_policies(); ++j)
            for (int k = j + 1; k < tables.num_policies(); ++k) {
                const double dg = tables.j_budget(i, j) - tables.j_budget(i, k);
                if (std::abs(dg) < 1e-15)
                    continue;
                const double lambda = (tables.j_pred(i, j) - tables.j_pred(i, k)) / dg;
                if (lambda > 0.0)
                    candidates.push_back(lambda);
            }
    LpSolution best{std::numeric_limits<double>::infinity(), 0.0};
    for (double lambda : candidates) {
        const double v = lp_dual(tables, lambda, bd);
        if (v < best.value)
            best = {v, lambda};
    }
    return best;
}

LayerGradients backward_pass(const DualSolution& sol, const ReturnsTable& tables,
                             const RegularizerConfig& reg, const SolverConfig& cfg,
                             const Table& upstream) {
    check_alpha(reg);
    if (reg.kind != Regularizer::Entropy)
        throw InputError("the closed-form backward pass supports the entropy regularizer only");
    const Table& z = sol.z_star.z;
    check_same_shape(tables.j_pred, z, "mixture");
    check_same_shape(tables.j_pred, upstream, "upstream gradient");

    const int N = tables.num_arms();
    const int P = tables.num_policies();
    const double alpha = reg.alpha;
    const double lambda = sol.lambda_star;
    const double xi = sol.slack_xi;

    Eigen::VectorXd u_bar(N), g_bar(N);
    double cov = 0.0; // sum_i Cov_z(u, G)
    double var = 0.0; // sum_i Var_z(G)
    for (int i = 0; i < N; ++i) {
        double ub = 0.0, gb = 0.0;
        for (int j = 0; j < P; ++j) {
            ub += z(i, j) * upstream(i, j);
            gb += z(i, j) * tables.j_budget(i, j);
        }
        u_bar(i) = ub;
        g_bar(i) = gb;
        for (int j = 0; j < P; ++j) {
            const double dg = tables.j_budget(i, j) - gb;
            cov += z(i, j) * (upstream(i, j) - ub) * dg;
            var += z(i, j) * dg * dg;
        }
    }

    LayerGradients out;
    BackwardWorkspace& ws = out.workspace;
    if (lambda > 0.0) {
        const double pivot = lambda * var + alpha * xi;
        if (std::abs(pivot / alpha) < 1e-12) {
            out = backward_pass_dense(sol, tables, reg, cfg, upstream, 1e-10);
            out.workspace.dense_fallback = true;
            return out;
        }
        ws.d_lambda = cov / pivot;
    }
    ws.d_nu = u_bar - lambda * ws.d_lambda * g_bar;
    ws.d_z.resize(N, P);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < P; ++j)
            ws.d_z(i, j) = z(i, j) / alpha *
                           (lambda * ws.d_lambda * (tables.j_budget(i, j) - g_bar(i)) -
                            (upstream(i, j) - u_bar(i)));

    out.grad_j_pred = -ws.d_z;
    out.grad_j_budget = lambda * (ws.d_z - ws.d_lambda * z);
    return out;
}

LayerGradients backward_pass_dense(const DualSolution& sol, const ReturnsTable& tables,
                                   const RegularizerConfig& reg, const SolverConfig&,
                                   const Table& upstream, double ridge) {
    check_alpha(reg);
    const Table& z = sol.z_star.z;
    check_same_shape(tables.j_pred, z, "mixture");
    check_same_shape(tables.j_pred, upstream, "upstream gradient");

    const int N = tables.num_arms();
    const int P = tables.num_policies();
    const int nz = N * P;
    const int dim = nz + N + 1;
    const double lambda = sol.lambda_star;
    const double alpha = reg.alpha;

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < P; ++j) {
            const int r = i * P + j;
            const bool off_support = reg.kind == Regularizer::L2 && z(i, j) <= 0.0;
            if (off_support) {
                K(r, r) = 1.0;
                continue;
            }
            K(r, r) = reg.kind == Regularizer::Entropy ? -alpha / z(i, j) : -2.0 * alpha;
            K(r, nz + i) = 1.0;
            K(r, nz + N) = lambda * tables.j_budget(i, j);
            rhs(r) = upstream(i, j);
            K(nz + i, r) = 1.0;
            K(nz + N, r) = tables.j_budget(i, j);
        }
    // an inactive budget row decouples; pin its multiplier direction to zero
    K(nz + N, nz + N) = lambda > 0.0 ? sol.slack_xi : 1.0;
    if (lambda <= 0.0)
        for (int r = 0; r < nz; ++r)
            K(nz + N, r) = 0.0;
    K.diagonal().array() += ridge;

    const Eigen::VectorXd d = K.partialPivLu().solve(rhs);
    if (!d.allFinite())
        throw NumericError("dense KKT adjoint solve produced non-finite values");

    LayerGradients out;
    BackwardWorkspace& ws = out.workspace;
    ws.d_z = Eigen::Map<const Table>(d.data(), N, P);
    ws.d_nu = d.segment(nz, N);
    ws.d_lambda = d(nz + N);
    out.grad_j_pred = -ws.d_z;
    out.grad_j_budget = lambda * (ws.d_z - ws.d_lambda * z);
    return out;
}

Table build_return_table(const std::vector<TransitionTensor>& tensors, const RewardSpec& R,
                         const DiscountedSetup& setup) {
    if (tensors.empty())
        throw InputError("cohort has no arms");
    const int S = tensors.front().num_states();
    setup.validate(S);
    Table out(static_cast<Eigen::Index>(tensors.size()), num_policies(S));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].num_states() != S)
            throw InputError(fmt::format("arm {} has {} states, expected {}", i,
                                         tensors[i].num_states(), S));
        const std::vector<double> row = returns_all_policies(tensors[i], R, setup);
        for (int j = 0; j < out.cols(); ++j)
            out(static_cast<Eigen::Index>(i), j) = row[j];
    }
    return out;
}

TruthTables build_truth_tables(const std::vector<TransitionTensor>& truth,
                               const DiscountedSetup& setup) {
    if (truth.empty())
        throw InputError("cohort has no arms");
    const int S = truth.front().num_states();
    return {build_return_table(truth, RewardSpec::engagement(S), setup),
            build_return_table(truth, RewardSpec::budget(), setup)};
}

DecDflResult dec_dfl_loss(const std::vector<TransitionTensor>& pred,
                          const std::vector<TransitionTensor>& truth,
                          const RegularizerConfig& reg, const SolverConfig& cfg,
                          const DiscountedSetup& setup, const DecDflOptions& opts) {
    if (pred.size() != truth.size())
        throw InputError(fmt::format("{} predicted arms but {} true arms", pred.size(),
                                     truth.size()));
    return dec_dfl_loss(pred, build_truth_tables(truth, setup), reg, cfg, setup, opts);
}

DecDflResult dec_dfl_loss(const std::vector<TransitionTensor>& pred, const TruthTables& truth,
                          const RegularizerConfig& reg, const SolverConfig& cfg,
                          const DiscountedSetup& setup, const DecDflOptions& opts) {
    if (pred.empty() || static_cast<Eigen::Index>(pred.size()) != truth.j_true.rows())
        throw InputError(fmt::format("{} predicted arms for a cohort of {}", pred.size(),
                                     truth.j_true.rows()));
    const int S = pred.front().num_states();
    if (num_policies(S) != truth.j_true.cols())
        throw InputError(fmt::format("predictions have {} states but truth tables have {} "
                                     "policies",
                                     S, truth.j_true.cols()));
    const RewardSpec R = RewardSpec::engagement(S);

    ReturnsTable tables;
    tables.j_pred = build_return_table(pred, R, setup);
    tables.j_true = truth.j_true;
    tables.j_budget = truth.j_budget;

    SolverConfig solver = cfg;
    solver.gamma = setup.gamma;
    solver.r_max = R.max_reward();

    DecDflResult out;
    LayerGradients grads;
    if (opts.fast) {
        out.solution = forward_pass(tables, reg, solver);
        grads = backward_pass(out.solution, tables, reg, solver, tables.j_true);
    } else {
        out.solution = solve_reference(tables, reg, solver);
        grads = backward_pass_dense(out.solution, tables, reg, solver, tables.j_true);
    }
    out.loss = out.solution.z_star.z.cwiseProduct(tables.j_true).sum();

    const std::vector<PerArmPolicy> policies = enumerate_policies(S);
    out.grad_pred.assign(pred.size(), TransitionGrad(pred.front().size(), 0.0));
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (const PerArmPolicy pi : policies) {
            const double w = grads.grad_j_pred(static_cast<Eigen::Index>(i), pi.index);
            if (w == 0.0)
                continue;
            const TransitionGrad g = returns_gradient(pred[i], R, pi, setup);
            for (std::size_t k = 0; k < g.size(); ++k)
                out.grad_pred[i][k] += w * g[k];
        }
    return out;
}

} // namespace rmab
