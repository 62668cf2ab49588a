#include <algorithm>
#include <chrono>

#include "app/app.hpp"
#include "rmab/dec_layer.hpp"
#include "rmab/errors.hpp"

namespace rmab::app {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
    if (v.empty())
        return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

} // namespace

EpochTiming time_epoch(const TrainingConfig& base, const Dataset& data, int repeats) {
    if (repeats < 1)
        throw InputError("repeats must be positive");
    TrainingConfig cfg = base;
    cfg.epochs = 1;
    std::vector<double> secs;
    for (int k = 0; k < repeats; ++k) {
        const TrainResult r = train(cfg, data);
        secs.push_back(r.log.front().seconds);
    }
    return {loss_name(cfg.loss), mean_sem(secs), median(secs)};
}

ScalingTiming time_layer(int arms, int repeats, std::uint64_t seed) {
    if (arms < 1 || repeats < 1)
        throw InputError("arms and repeats must be positive");
    Rng rng(derive_seed(seed, stream::kTransitions, static_cast<std::uint64_t>(arms)));
    const DiscountedSetup setup = DiscountedSetup::uniform(2, 0.9);
    std::vector<TransitionTensor> pred, truth;
    for (int i = 0; i < arms; ++i) {
        pred.push_back(random_tensor(2, rng));
        truth.push_back(random_tensor(2, rng));
    }
    const TruthTables tt = build_truth_tables(truth, setup);
    ReturnsTable tables;
    tables.j_pred = build_return_table(pred, RewardSpec::engagement(2), setup);
    tables.j_true = tt.j_true;
    tables.j_budget = tt.j_budget;
    SolverConfig cfg;
    cfg.budget = std::max(1.0, 0.1 * arms);
    const RegularizerConfig reg{Regularizer::Entropy, 1.0};

    // small instances are timed in batches so each sample spans a measurable interval
    const int batch = std::max(1, 20000 / arms);
    std::vector<double> fwd, bwd;
    for (int k = 0; k < repeats; ++k) {
        auto t0 = Clock::now();
        DualSolution sol;
        for (int b = 0; b < batch; ++b)
            sol = forward_pass(tables, reg, cfg);
        auto t1 = Clock::now();
        for (int b = 0; b < batch; ++b)
            (void)backward_pass(sol, tables, reg, cfg, tables.j_true);
        auto t2 = Clock::now();
        fwd.push_back(std::chrono::duration<double>(t1 - t0).count() / batch);
        bwd.push_back(std::chrono::duration<double>(t2 - t1).count() / batch);
    }
    return {arms, median(fwd), median(bwd)};
}

} // namespace rmab::app
