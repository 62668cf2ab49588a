#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rmab/dec_layer.hpp"
#include "rmab/errors.hpp"
#include "rmab/planning.hpp"

using namespace rmab;

namespace {

struct Instance {
    ReturnsTable tables;
    SolverConfig cfg;
    std::vector<TransitionTensor> pred, truth;
    DiscountedSetup setup;
};

Instance random_instance(Rng& rng, int N, int S, double budget, double gamma = 0.9) {
    Instance in;
    in.setup = DiscountedSetup::uniform(S, gamma);
    in.pred = oracle::random_arms(N, S, rng);
    in.truth = oracle::random_arms(N, S, rng);
    const TruthTables tt = build_truth_tables(in.truth, in.setup);
    in.tables.j_pred = build_return_table(in.pred, RewardSpec::engagement(S), in.setup);
    in.tables.j_true = tt.j_true;
    in.tables.j_budget = tt.j_budget;
    in.cfg.budget = budget;
    in.cfg.gamma = gamma;
    return in;
}

double max_abs_diff(const Table& a, const Table& b) { return (a - b).cwiseAbs().maxCoeff(); }

const RegularizerConfig kEntropy{Regularizer::Entropy, 1.0};

} // namespace

TEST_CASE("eval_lambda examples") {
    ReturnsTable t;
    t.j_pred = Table::Constant(1, 2, 3.0);
    t.j_budget = Table::Constant(1, 2, 4.0);
    SolverConfig cfg;
    for (double lambda : {-3.0, 0.0, 7.0}) {
        const auto r = eval_lambda(t, lambda, kEntropy, cfg);
        CHECK(r.z.z(0, 0) == doctest::Approx(0.5));
        CHECK(r.z.z(0, 1) == doctest::Approx(0.5));
    }

    Rng rng(1);
    Instance in = random_instance(rng, 3, 2, 1.0);
    const auto big = eval_lambda(in.tables, 1e6, kEntropy, in.cfg);
    for (int i = 0; i < 3; ++i)
        CHECK(big.z.z(i, 0) == doctest::Approx(1.0));
    CHECK(big.residual == doctest::Approx(-in.cfg.discounted_budget()).epsilon(1e-9));
}

TEST_CASE("eval_lambda residual decreases in lambda") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Instance in = random_instance(rng, 2, 2, 0.5);
        double prev = std::numeric_limits<double>::infinity();
        for (double lambda : {-10.0, -5.0, 0.0, 5.0, 10.0}) {
            const double r = eval_lambda(in.tables, lambda, kEntropy, in.cfg).residual;
            CHECK(r < prev);
            prev = r;
        }
    }
}

TEST_CASE("forward_pass with a slack budget") {
    ReturnsTable t;
    // never-act (column 0) has the best predicted return on every arm
    t.j_pred = Table(2, 2);
    t.j_pred << 5, 1, 4, 0;
    t.j_budget = Table(2, 2);
    t.j_budget << 0, 10, 0, 10;
    SolverConfig cfg;
    cfg.budget = 1.0;
    const RegularizerConfig reg{Regularizer::Entropy, 1e-3};
    const auto sol = forward_pass(t, reg, cfg);
    CHECK(sol.lambda_star == 0.0);
    CHECK(sol.slack_xi == doctest::Approx(cfg.discounted_budget()).epsilon(1e-9));
}

TEST_CASE("forward_pass matches a dense dual grid") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Instance in = random_instance(rng, 2, 2, 0.3);
        const RegularizerConfig reg{Regularizer::Entropy, oracle::uniform(rng, 0.1, 1.0)};
        in.cfg.epsilon = 1e-9;
        const auto sol = forward_pass(in.tables, reg, in.cfg);
        const double upper = 1.0 / (1.0 - in.cfg.gamma);
        const double coarse = oracle::grid_minimizer(in.tables, reg.alpha, in.cfg.discounted_budget(),
                                                     upper, 1e-3);
        // refine with step 1e-5 around the coarse minimizer
        double best = coarse, best_value = oracle::dual_value(in.tables, coarse, reg.alpha,
                                                              in.cfg.discounted_budget());
        for (double l = std::max(0.0, coarse - 2e-3); l <= coarse + 2e-3; l += 1e-5) {
            const double v = oracle::dual_value(in.tables, l, reg.alpha, in.cfg.discounted_budget());
            if (v < best_value) {
                best_value = v;
                best = l;
            }
        }
        CHECK(std::abs(sol.lambda_star - best) <= 2e-5);
        const Table z = oracle::softmax_rows(in.tables, best, reg.alpha);
        CHECK(max_abs_diff(sol.z_star.z, z) <= 1e-4);
    }
}

TEST_CASE("forward_pass invariants on random instances") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const int N = oracle::uniform_int(rng, 1, 30);
        const int S = oracle::uniform_int(rng, 2, 3);
        Instance in = random_instance(rng, N, S, oracle::uniform(rng, 0.05, 0.5 * N));
        const RegularizerConfig reg{Regularizer::Entropy, oracle::uniform(rng, 0.01, 2.0)};
        const auto sol = forward_pass(in.tables, reg, in.cfg);
        const double used = (sol.z_star.z.array() * in.tables.j_budget.array()).sum();
        CHECK(used <= in.cfg.discounted_budget() + 1e-6);
        CHECK(std::abs(sol.lambda_star * sol.slack_xi) <= 1e-6 * in.cfg.discounted_budget());
        for (int i = 0; i < N; ++i)
            CHECK(sol.z_star.z.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        // bisection budget plus a handful of polishing steps
        const double bracket = 2.0 * in.cfg.r_max / (1.0 - in.cfg.gamma);
        CHECK(sol.eval_calls <= std::ceil(std::log2(bracket / in.cfg.epsilon)) + 60);
    }
}

TEST_CASE("forward_pass on the two-arm counterexample prefers acting in state 0") {
    const double gamma = 0.9;
    const auto setup = DiscountedSetup::starting_in(2, 0, gamma);
    const std::vector<TransitionTensor> pred{oracle::cheap_tensor(), oracle::cheap_tensor()};
    SolverConfig cfg;
    cfg.gamma = gamma;
    cfg.budget = 1.0 / (1.0 + gamma);
    const auto sol = uncorrected_policy(pred, {Regularizer::Entropy, 1e-3}, cfg, setup);
    // policies 1 and 3 both act in state 0; the prediction values them equally
    CHECK(sol.z_star.z(0, 1) + sol.z_star.z(0, 3) >= 0.99);
    CHECK(sol.z_star.z(1, 1) + sol.z_star.z(1, 3) >= 0.99);
}

TEST_CASE("solve_reference agrees with forward_pass") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const int N = oracle::uniform_int(rng, 1, 8);
        Instance in = random_instance(rng, N, 2, oracle::uniform(rng, 0.1, 0.6 * N));
        const RegularizerConfig reg{Regularizer::Entropy, oracle::uniform(rng, 0.05, 1.0)};
        const auto fast = forward_pass(in.tables, reg, in.cfg);
        const auto ref = solve_reference(in.tables, reg, in.cfg);
        CHECK(max_abs_diff(fast.z_star.z, ref.z_star.z) <= 1e-4);
        CHECK(kkt_residual(in.tables, ref, in.cfg) <= 1e-7);
    }
}

TEST_CASE("solve_reference with a budget that never binds is a row softmax") {
    Rng rng(9);
    Instance in = random_instance(rng, 4, 2, 100.0);
    for (const RegularizerConfig reg : {RegularizerConfig{Regularizer::Entropy, 0.5},
                                        RegularizerConfig{Regularizer::L2, 0.5}}) {
        const auto ref = solve_reference(in.tables, reg, in.cfg);
        CHECK(ref.lambda_star == 0.0);
        if (reg.kind == Regularizer::Entropy)
            CHECK(max_abs_diff(ref.z_star.z, oracle::softmax_rows(in.tables, 0.0, reg.alpha)) <=
                  1e-9);
    }
}

TEST_CASE("solve_reference L2 solution satisfies its own optimality conditions") {
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        Instance in = random_instance(rng, 3, 2, 0.4);
        const RegularizerConfig reg{Regularizer::L2, 0.3};
        const auto ref = solve_reference(in.tables, reg, in.cfg);
        // each row is the projection of (J_pred - lambda J_budget) / (2 alpha) onto the simplex
        for (int i = 0; i < 3; ++i) {
            const Eigen::RowVectorXd v = (in.tables.j_pred.row(i) -
                                          ref.lambda_star * in.tables.j_budget.row(i)) /
                                         (2.0 * reg.alpha);
            // support entries share one shift; off-support entries sit at or below it
            double shift = 0.0;
            int support = 0;
            for (int j = 0; j < 4; ++j)
                if (ref.z_star.z(i, j) > 1e-9) {
                    shift += v(j) - ref.z_star.z(i, j);
                    ++support;
                }
            shift /= support;
            for (int j = 0; j < 4; ++j) {
                if (ref.z_star.z(i, j) > 1e-9)
                    CHECK(std::abs(v(j) - ref.z_star.z(i, j) - shift) <= 1e-6);
                else
                    CHECK(v(j) <= shift + 1e-6);
            }
        }
        CHECK(kkt_residual(in.tables, ref, in.cfg) <= 1e-7);
    }
}

TEST_CASE("solve_reference at small alpha approaches the LP vertex optimum") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Instance in = random_instance(rng, 2, 2, oracle::uniform(rng, 0.1, 1.5));
        const auto ref = solve_reference(in.tables, {Regularizer::Entropy, 1e-4}, in.cfg);
        const double value = (ref.z_star.z.array() * in.tables.j_pred.array()).sum();
        const double lp = oracle::lp_vertex_optimum(in.tables, in.cfg.discounted_budget());
        CHECK(std::abs(value - lp) <= 1e-3);
        CHECK(solve_unregularized(in.tables, in.cfg).value == doctest::Approx(lp).epsilon(1e-9));
    }
}

TEST_CASE("backward_pass at a slack budget") {
    Rng rng(13);
    Instance in = random_instance(rng, 3, 2, 100.0);
    const auto sol = forward_pass(in.tables, kEntropy, in.cfg);
    REQUIRE(sol.lambda_star == 0.0);
    const auto g = backward_pass(sol, in.tables, kEntropy, in.cfg, in.tables.j_true);
    CHECK(g.grad_j_budget.cwiseAbs().maxCoeff() == 0.0);
    // softmax Jacobian-vector product per row
    for (int i = 0; i < 3; ++i) {
        const auto z = sol.z_star.z.row(i);
        const double mean = z.dot(in.tables.j_true.row(i));
        for (int j = 0; j < 4; ++j)
            CHECK(g.grad_j_pred(i, j) ==
                  doctest::Approx(z(j) * (in.tables.j_true(i, j) - mean) / kEntropy.alpha)
                      .epsilon(1e-9));
    }
}

TEST_CASE("backward_pass matches finite differences through the forward solve") {
    Rng rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        Instance in = random_instance(rng, 3, 2, 0.6);
        in.cfg.epsilon = 1e-12;
        in.cfg.slackness_tol = 1e-13;
        const RegularizerConfig reg{Regularizer::Entropy, 0.5};
        const auto sol = forward_pass(in.tables, reg, in.cfg);
        const auto g = backward_pass(sol, in.tables, reg, in.cfg, in.tables.j_true);
        const auto dense = backward_pass_dense(sol, in.tables, reg, in.cfg, in.tables.j_true);
        CHECK(max_abs_diff(g.grad_j_pred, dense.grad_j_pred) <= 1e-8);
        CHECK(max_abs_diff(g.grad_j_budget, dense.grad_j_budget) <= 1e-8);

        auto loss_of = [&](const Table& jp, const Table& jb) {
            ReturnsTable t = in.tables;
            t.j_pred = jp;
            t.j_budget = jb;
            const auto s = forward_pass(t, reg, in.cfg);
            return (s.z_star.z.array() * in.tables.j_true.array()).sum();
        };
        std::vector<double> analytic, fd;
        const double h = 1e-5;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) {
                Table up = in.tables.j_pred, down = in.tables.j_pred;
                up(i, j) += h;
                down(i, j) -= h;
                analytic.push_back(g.grad_j_pred(i, j));
                fd.push_back((loss_of(up, in.tables.j_budget) - loss_of(down, in.tables.j_budget)) /
                             (2 * h));
                // the never-act column is identically zero, so its budget entry
                // cannot move without changing the feasible set
                if (j == 0)
                    continue;
                Table bu = in.tables.j_budget, bd = in.tables.j_budget;
                bu(i, j) += h;
                bd(i, j) -= h;
                analytic.push_back(g.grad_j_budget(i, j));
                fd.push_back((loss_of(in.tables.j_pred, bu) - loss_of(in.tables.j_pred, bd)) /
                             (2 * h));
            }
        CHECK(oracle::relative_error(analytic, fd) <= 1e-4);
    }
}

TEST_CASE("dec_dfl_loss gradient matches finite differences") {
    Rng rng(15);
    for (int trial = 0; trial < 5; ++trial) {
        const int N = 3;
        auto pred = oracle::random_arms(N, 2, rng, 0.1);
        const auto truth = oracle::random_arms(N, 2, rng);
        const auto setup = DiscountedSetup::uniform(2, 0.9);
        SolverConfig cfg;
        cfg.budget = 0.6;
        cfg.epsilon = 1e-12;
        cfg.slackness_tol = 1e-13;
        const RegularizerConfig reg{Regularizer::Entropy, 0.5};
        const auto res = dec_dfl_loss(pred, truth, reg, cfg, setup);
        std::vector<double> analytic, x;
        for (int i = 0; i < N; ++i)
            for (double v : pred[i].data())
                x.push_back(v);
        for (const auto& g : res.grad_pred)
            analytic.insert(analytic.end(), g.begin(), g.end());
        const auto fd = oracle::central_difference(
            [&](std::vector<double>& p) {
                std::vector<TransitionTensor> q = pred;
                std::size_t k = 0;
                for (auto& T : q)
                    for (double& v : T.data())
                        v = p[k++];
                return dec_dfl_loss(q, truth, reg, cfg, setup).loss;
            },
            x, 1e-6);
        CHECK(oracle::relative_error(analytic, fd) <= 1e-4);

        DecDflOptions slow;
        slow.fast = false;
        const auto ref = dec_dfl_loss(pred, truth, reg, cfg, setup, slow);
        CHECK(ref.loss == doctest::Approx(res.loss).epsilon(1e-6));
    }
}

TEST_CASE("dec_dfl_loss with truthful predictions is near the reference optimum") {
    Rng rng(16);
    const int N = 5;
    const auto truth = oracle::random_arms(N, 2, rng);
    const auto setup = DiscountedSetup::uniform(2, 0.9);
    SolverConfig cfg;
    cfg.budget = 1.0;
    const RegularizerConfig reg{Regularizer::Entropy, 1e-3};
    const auto res = dec_dfl_loss(truth, truth, reg, cfg, setup);
    const TruthTables tt = build_truth_tables(truth, setup);
    ReturnsTable t{tt.j_true, tt.j_true, tt.j_budget};
    const auto ref = solve_reference(t, reg, cfg);
    const double optimum = (ref.z_star.z.array() * tt.j_true.array()).sum();
    CHECK(std::abs(res.loss - optimum) <= 1e-3);
}

TEST_CASE("dec_dfl_loss with a single arm and an unconstrained budget") {
    Rng rng(18);
    const auto truth = oracle::random_arms(1, 2, rng);
    const auto setup = DiscountedSetup::uniform(2, 0.9);
    SolverConfig cfg;
    cfg.budget = 2.0;
    const auto res = dec_dfl_loss(truth, truth, {Regularizer::Entropy, 1e-4}, cfg, setup);
    const auto all = returns_all_policies(truth[0], RewardSpec::engagement(2), setup);
    CHECK(res.loss == doctest::Approx(*std::max_element(all.begin(), all.end())).epsilon(1e-3));
}

TEST_CASE("uncorrected layer rewards the cheap prediction on the two-arm counterexample") {
    const double gamma = 0.9;
    const auto setup = DiscountedSetup::starting_in(2, 0, gamma);
    const std::vector<TransitionTensor> truth{oracle::good_tensor(), oracle::bad_tensor()};
    const std::vector<TransitionTensor> cheap{oracle::cheap_tensor(), oracle::cheap_tensor()};
    SolverConfig cfg;
    cfg.gamma = gamma;
    cfg.budget = 1.0 / (1.0 + gamma);
    const RegularizerConfig reg{Regularizer::Entropy, 0.01};
    const TruthTables tt = build_truth_tables(truth, setup);
    auto loss_of = [&](const std::vector<TransitionTensor>& pred) {
        const auto sol = uncorrected_policy(pred, reg, cfg, setup);
        return (sol.z_star.z.array() * tt.j_true.array()).sum();
    };
    CHECK(loss_of(cheap) > loss_of(truth) + 1.0);
}

TEST_CASE("dec_dfl_loss rejects mismatched shapes") {
    Rng rng(19);
    const auto a = oracle::random_arms(2, 2, rng);
    const auto b = oracle::random_arms(3, 2, rng);
    CHECK_THROWS_AS(dec_dfl_loss(a, b, kEntropy, SolverConfig{}, DiscountedSetup::uniform(2, 0.9)),
                    InputError);
}
