#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rmab/errors.hpp"
#include "rmab/losses.hpp"
#include "rmab/model.hpp"
#include "rmab/training.hpp"

using namespace rmab;

namespace {

std::vector<std::vector<double>> random_features(int n, int dim, Rng& rng) {
    std::vector<std::vector<double>> f(n, std::vector<double>(dim));
    for (auto& row : f)
        for (double& v : row)
            v = oracle::uniform(rng, -1.0, 1.0);
    return f;
}

Cohort make_cohort(const std::vector<TransitionTensor>& truth, double budget,
                   const DiscountedSetup& setup) {
    Cohort c;
    for (const auto& T : truth)
        c.arms.push_back({{}, T});
    c.budget = budget;
    c.setup = setup;
    return c;
}

DatasetManifest small_manifest(std::uint64_t seed) {
    DatasetManifest m;
    m.cohorts = 10;
    m.train = 4;
    m.validation = 2;
    m.test = 4;
    m.arms_per_cohort = 10;
    m.budget = 2.0;
    m.feature_layers = 3;
    m.feature_hidden = 32;
    m.seed = seed;
    return m;
}

std::vector<double> flatten(const std::vector<TransitionGrad>& g) {
    std::vector<double> out;
    for (const auto& v : g)
        out.insert(out.end(), v.begin(), v.end());
    return out;
}

} // namespace

TEST_CASE("predict with zero parameters gives uniform rows") {
    Rng rng(1);
    const ModelParams model(ModelSpec::linear(4, 3));
    for (const auto& T : model.predict(random_features(5, 4, rng)))
        for (double v : T.data())
            CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("predict is per arm and checks the feature width") {
    Rng rng(2);
    const auto model = ModelParams::initialize(ModelSpec::mlp(3, 2, 2, 8), 7);
    auto f = random_features(4, 3, rng);
    const auto a = model.predict(f);
    std::swap(f[0], f[3]);
    const auto b = model.predict(f);
    CHECK(a[0] == b[3]);
    CHECK(a[3] == b[0]);
    CHECK(a[1] == b[1]);
    f[2].push_back(0.0);
    CHECK_THROWS_AS(model.predict(f), InputError);
}

TEST_CASE("model backward matches finite differences") {
    Rng rng(3);
    for (const ModelSpec spec : {ModelSpec::linear(3, 2), ModelSpec::mlp(3, 2, 3, 6)}) {
        auto model = ModelParams::initialize(spec, 11);
        const auto f = random_features(3, 3, rng);
        std::vector<TransitionGrad> upstream(3, TransitionGrad(spec.output_dim()));
        for (auto& g : upstream)
            for (double& v : g)
                v = oracle::uniform(rng, -1.0, 1.0);
        auto objective = [&](const ModelParams& m) {
            const auto pred = m.predict(f);
            double total = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i)
                for (std::size_t k = 0; k < pred[i].size(); ++k)
                    total += upstream[i][k] * pred[i].data()[k];
            return total;
        };
        ForwardCache cache;
        model.forward(f, cache);
        const Eigen::VectorXd g = model.backward(cache, upstream);
        std::vector<double> x(model.theta().data(), model.theta().data() + model.theta().size());
        const auto fd = oracle::central_difference(
            [&](std::vector<double>& p) {
                ModelParams m = model;
                m.theta() = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<long>(p.size()));
                return objective(m);
            },
            x, 1e-6);
        CHECK(oracle::relative_error(std::vector<double>(g.data(), g.data() + g.size()), fd) <=
              1e-5);
    }
}

TEST_CASE("mse_loss values and gradient") {
    Rng rng(4);
    const auto truth = oracle::random_arms(3, 2, rng);
    CHECK(mse_loss(truth, truth).value == 0.0);

    const TransitionTensor uniform = oracle::matrices({.5, .5, .5, .5}, {.5, .5, .5, .5});
    const TransitionTensor point = oracle::matrices({1, 0, 0, 1}, {0, 1, 1, 0});
    // every entry is off by 0.5, so each row contributes 0.5 and the entry mean is 0.25
    CHECK(mse_loss({uniform}, {point}).value == doctest::Approx(0.25));

    const auto pred = oracle::random_arms(3, 2, rng);
    std::vector<double> x;
    for (const auto& T : pred)
        x.insert(x.end(), T.data().begin(), T.data().end());
    const auto fd = oracle::central_difference(
        [&](std::vector<double>& p) {
            std::vector<TransitionTensor> q = pred;
            std::size_t k = 0;
            for (auto& T : q)
                for (double& v : T.data())
                    v = p[k++];
            return mse_loss(q, truth).value;
        },
        x, 1e-6);
    CHECK(oracle::relative_error(flatten(mse_loss(pred, truth).grad), fd) <= 1e-6);
    CHECK_THROWS_AS(mse_loss(pred, {truth[0]}), InputError);
}

TEST_CASE("nll_loss values and gradient") {
    TrajectoryData one;
    one.num_states = 2;
    one.arms = {{{0, 1}, {1}}};
    const TransitionTensor half = oracle::matrices({.5, .5, .5, .5}, {.5, .5, .5, .5});
    CHECK(nll_loss({half}, one).value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(nll_loss({oracle::cheap_tensor()}, one).value == 0.0);

    Rng rng(5);
    TrajectoryData many;
    many.num_states = 2;
    for (int i = 0; i < 4; ++i) {
        ArmTrajectory t;
        t.states.push_back(oracle::uniform_int(rng, 0, 1));
        for (int k = 0; k < 10; ++k) {
            t.actions.push_back(oracle::uniform_int(rng, 0, 1));
            t.states.push_back(oracle::uniform_int(rng, 0, 1));
        }
        many.arms.push_back(t);
    }
    const auto pred = oracle::random_arms(4, 2, rng);
    double expected = 0.0;
    for (int i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < many.arms[i].actions.size(); ++k)
            expected -= std::log(std::max(
                pred[i](many.arms[i].states[k], many.arms[i].actions[k], many.arms[i].states[k + 1]),
                kNllFloor));
    const auto r = nll_loss(pred, many);
    CHECK(std::abs(r.value - expected) <= 1e-10);

    std::vector<double> x;
    for (const auto& T : pred)
        x.insert(x.end(), T.data().begin(), T.data().end());
    const auto fd = oracle::central_difference(
        [&](std::vector<double>& p) {
            std::vector<TransitionTensor> q = pred;
            std::size_t k = 0;
            for (auto& T : q)
                for (double& v : T.data())
                    v = p[k++];
            return nll_loss(q, many).value;
        },
        x, 1e-7);
    CHECK(oracle::relative_error(flatten(r.grad), fd) <= 1e-5);
}

TEST_CASE("soft_top_b sums to the budget and its vjp matches finite differences") {
    Rng rng(6);
    std::vector<double> w(6);
    for (double& v : w)
        v = oracle::uniform(rng, -1.0, 1.0);
    const auto p = soft_top_b(w, 2.0, 0.1);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(2.0).epsilon(1e-10));
    for (double v : soft_top_b(w, 6.0, 0.1))
        CHECK(v == 1.0);

    std::vector<double> up(6);
    for (double& v : up)
        v = oracle::uniform(rng, -1.0, 1.0);
    const auto g = soft_top_b_vjp(p, 0.1, up);
    const auto fd = oracle::central_difference(
        [&](std::vector<double>& x) {
            const auto q = soft_top_b(x, 2.0, 0.1);
            return std::inner_product(q.begin(), q.end(), up.begin(), 0.0);
        },
        w, 1e-6);
    CHECK(oracle::relative_error(g, fd) <= 1e-5);
}

TEST_CASE("sim_dfl_loss ignores predictions when actions do not matter") {
    Rng rng(7);
    const auto setup = DiscountedSetup::uniform(2, 0.9);
    std::vector<TransitionTensor> truth;
    for (int i = 0; i < 3; ++i) {
        auto T = oracle::random_tensor(2, rng);
        for (int s = 0; s < 2; ++s)
            for (int n = 0; n < 2; ++n)
                T(s, 1, n) = T(s, 0, n);
        truth.push_back(T);
    }
    const Cohort c = make_cohort(truth, 3.0, setup);
    SimDflOptions opts;
    opts.trajectories = 200;
    const auto a = sim_dfl_loss(oracle::random_arms(3, 2, rng, 0.1), c, opts);
    const auto b = sim_dfl_loss(oracle::random_arms(3, 2, rng, 0.1), c, opts);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
    for (double v : flatten(a.grad))
        CHECK(std::abs(v) <= 1e-9);
}

TEST_CASE("sim_dfl_loss at the truth matches the analytic value") {
    Rng rng(8);
    const auto setup = DiscountedSetup::uniform(2, 0.9);
    const auto truth = oracle::random_arms(2, 2, rng);
    // budget covers both arms, so top-B always acts on everything
    const Cohort c = make_cohort(truth, 2.0, setup);
    SimDflOptions opts;
    opts.trajectories = 1000;
    opts.seed = 3;
    const auto r = sim_dfl_loss(truth, c, opts);
    const RewardSpec R = RewardSpec::engagement(2);
    const double analytic = get_returns(truth[0], R, PerArmPolicy::always_act(2), setup) +
                            get_returns(truth[1], R, PerArmPolicy::always_act(2), setup);
    const auto sim = simulate_joint(c, whittle_policy(truth, setup), 1000, 3);
    CHECK(std::abs(r.value - analytic) <= 3.0 * sim.std_error);
}

TEST_CASE("sim_dfl_loss spread shrinks with more trajectories") {
    Rng rng(9);
    const auto setup = DiscountedSetup::uniform(2, 0.9);
    const auto truth = oracle::random_arms(6, 2, rng);
    const auto pred = oracle::random_arms(6, 2, rng);
    const Cohort c = make_cohort(truth, 2.0, setup);
    auto spread = [&](int k) {
        std::vector<double> values;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            SimDflOptions opts;
            opts.trajectories = k;
            opts.seed = seed;
            values.push_back(sim_dfl_loss(pred, c, opts).value);
        }
        const double mean = std::accumulate(values.begin(), values.end(), 0.0) / 20.0;
        double ss = 0.0;
        for (double v : values)
            ss += (v - mean) * (v - mean);
        return std::sqrt(ss / 19.0);
    };
    // about 10x in expectation; allow sampling noise in the spread estimates
    CHECK(spread(10) / spread(1000) >= 4.0);
}

TEST_CASE("train with a zero learning rate leaves the model unchanged") {
    const Dataset data = generate_synthetic(small_manifest(1));
    TrainingConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.patience = 10;
    cfg.seed = 5;
    const auto r = train(cfg, data);
    const auto init = ModelParams::initialize(
        ModelSpec::preset("small", data.manifest.feature_dim, data.manifest.states), 5);
    CHECK(r.model.theta() == init.theta());
    for (const auto& e : r.log)
        CHECK(e.validation == doctest::Approx(r.log.front().validation).epsilon(1e-12));
}

TEST_CASE("train is deterministic") {
    const Dataset data = generate_synthetic(small_manifest(2));
    for (LossKind loss : {LossKind::MSE, LossKind::NLL, LossKind::FastDecDFL, LossKind::SimDFL}) {
        TrainingConfig cfg;
        cfg.loss = loss;
        cfg.epochs = 2;
        cfg.sim.trajectories = 5;
        const auto a = train(cfg, data);
        const auto b = train(cfg, data);
        CHECK(a.model.theta() == b.model.theta());
        CHECK(a.best_epoch == b.best_epoch);
    }
}

TEST_CASE("train_grid picks the best validation run") {
    const Dataset data = generate_synthetic(small_manifest(3));
    TrainingConfig cfg;
    cfg.loss = LossKind::MSE;
    cfg.epochs = 3;
    const auto grid = train_grid(cfg, {1e-1, 1e-3}, {1.0}, data, 2);
    REQUIRE(grid.runs.size() == 2);
    // MSE is minimized, so the best run has the smallest validation loss
    for (const auto& r : grid.runs)
        CHECK(grid.runs[grid.best].best_validation <= r.best_validation);
}

TEST_CASE("fast DEC-DFL raises validation decision quality early in training") {
    double gain = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Dataset data = generate_synthetic(small_manifest(10 + seed));
        TrainingConfig cfg;
        cfg.loss = LossKind::FastDecDFL;
        cfg.epochs = 10;
        cfg.patience = 10;
        cfg.seed = seed;
        const auto r = train(cfg, data);
        gain += r.log.back().validation_decomposed_dq - r.log.front().validation_decomposed_dq;
    }
    CHECK(gain / 5.0 > 0.0);
}

TEST_CASE("evaluate_predictions normalization anchors") {
    const Dataset data = generate_synthetic(small_manifest(4));
    const auto cohorts = select_cohorts(data, data.test);
    std::vector<std::vector<TransitionTensor>> perfect;
    for (const Cohort* c : cohorts)
        perfect.push_back(c->true_tensors());
    EvalOptions opts;
    opts.trajectories = 50;
    const auto p = evaluate_predictions(perfect, cohorts, opts);
    CHECK(p.total.normalized_decomposed_dq == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.total.normalized_joint_dq == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(normalize_dq(3.0, 3.0, 3.0) == std::nullopt);
    CHECK(*normalize_dq(2.0, 1.0, 3.0) == doctest::Approx(0.5));
    CHECK(*normalize_dq(1.0, 1.0, 3.0) == 0.0);
}
