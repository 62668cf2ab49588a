#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "app/app.hpp"
#include "rmab/dec_layer.hpp"
#include "rmab/errors.hpp"
#include "rmab/planning.hpp"

namespace rmab::app {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

TransitionTensor matrices(std::initializer_list<double> passive,
                          std::initializer_list<double> active) {
    Eigen::MatrixXd p(2, 2), a(2, 2);
    auto fill = [](Eigen::MatrixXd& m, std::initializer_list<double> v) {
        auto it = v.begin();
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c)
                m(r, c) = *it++;
    };
    fill(p, passive);
    fill(a, active);
    return TransitionTensor::from_matrices(p, a);
}

SolverConfig solver_for(double budget, double gamma, int num_states) {
    SolverConfig cfg;
    cfg.budget = budget;
    cfg.gamma = gamma;
    cfg.r_max = RewardSpec::engagement(num_states).max_reward();
    return cfg;
}

ReturnsTable corrected_tables(const std::vector<TransitionTensor>& pred,
                              const std::vector<TransitionTensor>& truth,
                              const DiscountedSetup& setup) {
    const TruthTables tt = build_truth_tables(truth, setup);
    ReturnsTable t;
    t.j_pred = build_return_table(pred, RewardSpec::engagement(pred.front().num_states()), setup);
    t.j_true = tt.j_true;
    t.j_budget = tt.j_budget;
    return t;
}

double realized(const DualSolution& sol, const Table& j_true) {
    return sol.z_star.z.cwiseProduct(j_true).sum();
}

// Dual function of the entropy layer; convex in lambda.
double dual_value(const ReturnsTable& t, double lambda, double alpha, double discounted_budget) {
    double total = lambda * discounted_budget;
    for (int i = 0; i < t.num_arms(); ++i) {
        const Eigen::RowVectorXd s = (t.j_pred.row(i) - lambda * t.j_budget.row(i)) / alpha;
        const double m = s.maxCoeff();
        total += alpha * (m + std::log((s.array() - m).exp().sum()));
    }
    return total;
}

// Minimizes the dual over lambda >= 0 by successively refined grids.
double grid_dual_minimizer(const ReturnsTable& t, double alpha, double discounted_budget,
                           double upper) {
    double lo = 0.0, hi = upper;
    constexpr int kPoints = 400;
    while (hi - lo > 1e-10) {
        const double step = (hi - lo) / kPoints;
        int best = 0;
        double best_value = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= kPoints; ++k) {
            const double v = dual_value(t, lo + k * step, alpha, discounted_budget);
            if (v < best_value) {
                best_value = v;
                best = k;
            }
        }
        const double centre = lo + best * step;
        lo = std::max(0.0, centre - 2 * step);
        hi = centre + 2 * step;
    }
    return 0.5 * (lo + hi);
}

// Optimum over mixtures of joint deterministic policies of a tiny cohort,
// subject only to the expected discounted budget.
double joint_mixture_optimum(const std::vector<TransitionTensor>& truth,
                             const DiscountedSetup& setup, double discounted_budget) {
    const int N = static_cast<int>(truth.size());
    const int S = truth.front().num_states();
    int joint_states = 1;
    for (int i = 0; i < N; ++i)
        joint_states *= S;
    const int joint_actions = 1 << N;
    const RewardSpec R = RewardSpec::engagement(S);

    auto decode = [&](int js, int i) {
        for (int k = 0; k < i; ++k)
            js /= S;
        return js % S;
    };
    Eigen::VectorXd d0(joint_states), reward(joint_states);
    for (int js = 0; js < joint_states; ++js) {
        d0(js) = 1.0;
        reward(js) = 0.0;
        for (int i = 0; i < N; ++i) {
            d0(js) *= setup.initial_dist[decode(js, i)];
            reward(js) += R(decode(js, i), 0);
        }
    }

    double num_policies = 1.0;
    for (int js = 0; js < joint_states; ++js)
        num_policies *= joint_actions;
    if (num_policies > 1e6)
        throw CapacityError("joint policy enumeration is limited to 1e6 policies");

    std::vector<double> value, usage;
    std::vector<int> act(joint_states, 0);
    for (long p = 0; p < static_cast<long>(num_policies); ++p) {
        long code = p;
        for (int js = 0; js < joint_states; ++js) {
            act[js] = static_cast<int>(code % joint_actions);
            code /= joint_actions;
        }
        Eigen::MatrixXd P = Eigen::MatrixXd::Zero(joint_states, joint_states);
        Eigen::VectorXd acts(joint_states);
        for (int js = 0; js < joint_states; ++js) {
            acts(js) = std::popcount(static_cast<unsigned>(act[js]));
            for (int next = 0; next < joint_states; ++next) {
                double prob = 1.0;
                for (int i = 0; i < N; ++i)
                    prob *= truth[i](decode(js, i), (act[js] >> i) & 1, decode(next, i));
                P(js, next) = prob;
            }
        }
        const Eigen::MatrixXd A =
            Eigen::MatrixXd::Identity(joint_states, joint_states) - setup.gamma * P;
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
        value.push_back(d0.dot(lu.solve(reward)));
        usage.push_back(d0.dot(lu.solve(acts)));
    }

    // A single linear constraint: some optimum mixes at most two policies.
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < value.size(); ++p) {
        if (usage[p] > discounted_budget)
            continue;
        best = std::max(best, value[p]);
        for (std::size_t q = 0; q < value.size(); ++q) {
            if (usage[q] <= discounted_budget)
                continue;
            const double t = (usage[q] - discounted_budget) / (usage[q] - usage[p]);
            best = std::max(best, t * value[p] + (1.0 - t) * value[q]);
        }
    }
    return best;
}

std::vector<TransitionTensor> random_arms(int n, int num_states, Rng& rng) {
    std::vector<TransitionTensor> out;
    for (int i = 0; i < n; ++i)
        out.push_back(random_tensor(num_states, rng));
    return out;
}

} // namespace

TransitionTensor random_tensor(int num_states, Rng& rng) {
    TransitionTensor T(num_states);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < kNumActions; ++a) {
            double total = 0.0;
            for (int n = 0; n < num_states; ++n) {
                double u = uniform01(rng);
                while (u <= 0.0)
                    u = uniform01(rng);
                T(s, a, n) = -std::log(u);
                total += T(s, a, n);
            }
            for (int n = 0; n < num_states; ++n)
                T(s, a, n) /= total;
        }
    return T;
}

SingleArmInstance overshoot_instance() {
    return {matrices({1, 0, 0, 1}, {0, 1, 0, 1}), matrices({1, 0, 1, 0}, {1, 0, 1, 0})};
}

SpuriousInstance spurious_instance() {
    SpuriousInstance inst;
    const double gamma = 0.9;
    inst.cohort.budget = 1.0 / (1.0 + gamma);
    inst.cohort.setup = DiscountedSetup::starting_in(2, 0, gamma);
    inst.cohort.arms.push_back({{}, matrices({1, 0, 1, 0}, {0, 1, 1, 0})});
    inst.cohort.arms.push_back({{}, matrices({1, 0, 1, 0}, {0.5, 0.5, 1, 0})});
    inst.cheap = overshoot_instance().pred;
    return inst;
}

ClaimResult check_budget_overshoot() {
    const auto start = Clock::now();
    ClaimResult r;
    r.name = "budget-overshoot";
    const double gamma = 0.9;
    const SingleArmInstance inst = overshoot_instance();
    Cohort cohort;
    cohort.budget = 1.0 - gamma;
    cohort.setup = DiscountedSetup::starting_in(2, 0, gamma);
    cohort.arms.push_back({{}, inst.truth});
    const DualSolution sol = uncorrected_policy({inst.pred}, {Regularizer::Entropy, 0.1},
                                                solver_for(cohort.budget, gamma, 2), cohort.setup);
    const BudgetAudit audit = budget_audit(cohort, sol);
    r.measured = {{"per_step_overshoot", audit.per_step_overshoot},
                  {"discounted_ratio", audit.ratio},
                  {"used", audit.used},
                  {"lambda", sol.lambda_star}};
    r.passed = std::abs(audit.per_step_overshoot - 100.0) <= 1.0;
    r.detail = fmt::format("used {:.6g} interventions against per-step budget {:.6g}", audit.used,
                           audit.budget);
    r.seconds = since(start);
    return r;
}

ClaimResult check_spurious_minimum() {
    const auto start = Clock::now();
    ClaimResult r;
    r.name = "spurious-minimum";
    const SpuriousInstance inst = spurious_instance();
    const Cohort& c = inst.cohort;
    const auto truth = c.true_tensors();
    const TruthTables tt = build_truth_tables(truth, c.setup);
    const SolverConfig cfg = solver_for(c.budget, c.setup.gamma, 2);
    const RegularizerConfig reg{Regularizer::Entropy, 0.01};
    const double truthful = realized(uncorrected_policy(truth, reg, cfg, c.setup), tt.j_true);
    const double cheap =
        realized(uncorrected_policy({inst.cheap, inst.cheap}, reg, cfg, c.setup), tt.j_true);
    r.measured = {{"truthful", truthful}, {"cheap", cheap}, {"gap", cheap - truthful}};
    r.passed = cheap - truthful > 0.0;
    r.detail = fmt::format("true return {:.6f} with cheap predictions vs {:.6f} truthful", cheap,
                           truthful);
    r.seconds = since(start);
    return r;
}

ClaimResult check_truthful_optimal(std::uint64_t seed, int cohorts, int predictions) {
    const auto start = Clock::now();
    ClaimResult r;
    r.name = "truthful-optimal";
    Rng rng(derive_seed(seed, stream::kTransitions, 2));
    const RegularizerConfig reg{Regularizer::Entropy, 1e-3};
    double worst = std::numeric_limits<double>::infinity();
    int violations = 0;
    for (int c = 0; c < cohorts; ++c) {
        const int n = uniform_int(rng, 1, 5);
        const double gamma = uniform(rng, 0.5, 0.95);
        const DiscountedSetup setup = DiscountedSetup::uniform(2, gamma);
        const SolverConfig cfg = solver_for(uniform(rng, 0.1, n - 0.05), gamma, 2);
        const auto truth = random_arms(n, 2, rng);
        const ReturnsTable at_truth = corrected_tables(truth, truth, setup);
        const double best = realized(solve_reference(at_truth, reg, cfg), at_truth.j_true);
        for (int p = 0; p < predictions; ++p) {
            const ReturnsTable t = corrected_tables(random_arms(n, 2, rng), truth, setup);
            const double gap = best - realized(solve_reference(t, reg, cfg), t.j_true);
            worst = std::min(worst, gap);
            if (gap < -1e-3)
                ++violations;
        }
    }
    r.measured = {{"min_gap", worst}, {"violations", violations}};
    r.passed = violations == 0;
    r.detail = fmt::format("{} cohorts x {} predictions", cohorts, predictions);
    r.seconds = since(start);
    return r;
}

ClaimResult check_decomposed_joint_equivalence(std::uint64_t seed, int instances) {
    const auto start = Clock::now();
    ClaimResult r;
    r.name = "decomposed-joint-equivalence";
    Rng rng(derive_seed(seed, stream::kTransitions, 3));
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        const double gamma = uniform(rng, 0.5, 0.95);
        const DiscountedSetup setup = DiscountedSetup::uniform(2, gamma);
        const SolverConfig cfg = solver_for(uniform(rng, 0.1, 1.9), gamma, 2);
        const auto truth = random_arms(2, 2, rng);
        ReturnsTable t = corrected_tables(truth, truth, setup);
        const double decomposed = solve_unregularized(t, cfg).value;
        const double joint = joint_mixture_optimum(truth, setup, cfg.discounted_budget());
        worst = std::max(worst, std::abs(decomposed - joint));
    }
    r.measured = {{"max_abs_difference", worst}};
    r.passed = worst <= 1e-6;
    r.detail = fmt::format("{} two-arm instances", instances);
    r.seconds = since(start);
    return r;
}

ClaimResult check_forward_oracle(std::uint64_t seed, int instances) {
    const auto start = Clock::now();
    ClaimResult r;
    r.name = "forward-oracle";
    Rng rng(derive_seed(seed, stream::kTransitions, 4));
    double lambda_err = 0.0, z_err = 0.0, slack = 0.0;
    for (int k = 0; k < instances; ++k) {
        const int n = uniform_int(rng, 1, 20);
        const int S = uniform_int(rng, 2, 3);
        const double gamma = uniform(rng, 0.5, 0.95);
        const DiscountedSetup setup = DiscountedSetup::uniform(S, gamma);
        SolverConfig cfg = solver_for(uniform(rng, 0.05, 0.6 * n), gamma, S);
        const RegularizerConfig reg{Regularizer::Entropy, std::exp(uniform(rng, std::log(0.05),
                                                                           std::log(2.0)))};
        const ReturnsTable t =
            corrected_tables(random_arms(n, S, rng), random_arms(n, S, rng), setup);
        const DualSolution sol = forward_pass(t, reg, cfg);

        double upper = cfg.r_max / (1.0 - gamma);
        while (eval_lambda(t, upper, reg, cfg).residual > 0.0)
            upper *= 2.0;
        const double oracle = grid_dual_minimizer(t, reg.alpha, cfg.discounted_budget(), upper);
        const Mixture z = eval_lambda(t, oracle, reg, cfg).z;
        lambda_err = std::max(lambda_err, std::abs(sol.lambda_star - oracle));
        z_err = std::max(z_err, (sol.z_star.z - z.z).cwiseAbs().maxCoeff());
        slack = std::max(slack,
                         std::abs(sol.lambda_star * sol.slack_xi) / cfg.discounted_budget());
    }
    r.measured = {{"max_lambda_error", lambda_err},
                  {"max_z_error", z_err},
                  {"max_relative_slackness", slack}};
    r.passed = lambda_err <= 2e-5 && z_err <= 1e-4 && slack <= 1e-6;
    r.detail = fmt::format("{} random instances against a refined-grid dual minimizer", instances);
    r.seconds = since(start);
    return r;
}

ClaimResult check_residual_monotonicity(std::uint64_t seed, int draws) {
    const auto start = Clock::now();
    ClaimResult r;
    r.name = "residual-monotonicity";
    Rng rng(derive_seed(seed, stream::kTransitions, 5));
    int violations = 0;
    const int per_instance = 100;
    for (int k = 0; k < draws; k += per_instance) {
        const int n = uniform_int(rng, 1, 10);
        const int S = uniform_int(rng, 2, 3);
        const double gamma = uniform(rng, 0.5, 0.95);
        const DiscountedSetup setup = DiscountedSetup::uniform(S, gamma);
        const SolverConfig cfg = solver_for(uniform(rng, 0.05, 0.9 * n), gamma, S);
        const RegularizerConfig reg{Regularizer::Entropy, uniform(rng, 0.05, 2.0)};
        const ReturnsTable t =
            corrected_tables(random_arms(n, S, rng), random_arms(n, S, rng), setup);
        const double range = 2.0 * cfg.r_max / (1.0 - gamma);
        for (int d = 0; d < per_instance && k + d < draws; ++d) {
            double a = uniform(rng, -range, range), b = uniform(rng, -range, range);
            if (a > b)
                std::swap(a, b);
            const double ra = eval_lambda(t, a, reg, cfg).residual;
            const double rb = eval_lambda(t, b, reg, cfg).residual;
            if (rb > ra + 1e-12 * std::max(1.0, std::abs(ra)))
                ++violations;
        }
    }
    r.measured = {{"violations", violations}, {"draws", draws}};
    r.passed = violations == 0;
    r.detail = fmt::format("{} (instance, lambda < lambda') pairs", draws);
    r.seconds = since(start);
    return r;
}

std::vector<ClaimResult> run_verification(std::uint64_t seed) {
    return {check_budget_overshoot(),
            check_spurious_minimum(),
            check_truthful_optimal(seed),
            check_decomposed_joint_equivalence(seed),
            check_forward_oracle(seed),
            check_residual_monotonicity(seed)};
}

} // namespace rmab::app
