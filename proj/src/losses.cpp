#include "rmab/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rmab/errors.hpp"
#include "rmab/rng.hpp"

namespace rmab {

namespace {

void check_pair(const std::vector<TransitionTensor>& pred, std::size_t n, const char* what) {
    if (pred.size() != n)
        throw InputError(fmt::format("{} predicted arms but {} {}", pred.size(), n, what));
}

std::vector<TransitionGrad> zero_grads(const std::vector<TransitionTensor>& pred) {
    std::vector<TransitionGrad> g;
    g.reserve(pred.size());
    for (const TransitionTensor& T : pred)
        g.emplace_back(T.size(), 0.0);
    return g;
}

double sigmoid(double x) {
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct PolicyTables {
    std::vector<WhittleTable> tables;
    std::vector<std::vector<double>> wi; // [arm][state]
};

PolicyTables whittle_tables(const std::vector<TransitionTensor>& pred,
                            const DiscountedSetup& setup) {
    PolicyTables out;
    for (const TransitionTensor& T : pred) {
        out.tables.push_back(whittle_index(T, RewardSpec::engagement(T.num_states()), setup));
        out.wi.push_back(out.tables.back().wi);
    }
    return out;
}

std::vector<double> step_probs(const PolicyTables& pt, const int* states, int N, double budget,
                               double temperature) {
    std::vector<double> scores(N);
    for (int i = 0; i < N; ++i)
        scores[i] = pt.wi[i][states[i]];
    return soft_top_b(scores, budget, temperature);
}

struct TrajectorySample {
    std::vector<int> states;  // [t][i]
    std::vector<int> actions; // [t][i]
    std::vector<double> probs; // [t][i]
    std::vector<double> reward_to_go; // discounted rewards strictly after t
    double total = 0.0;
};

TrajectorySample sample_trajectory(const PolicyTables& pt, const Cohort& cohort, int H,
                                   const SimDflOptions& opts, int k) {
    const int N = cohort.num_arms();
    const RewardSpec R = RewardSpec::engagement(cohort.num_states());
    const double gamma = cohort.setup.gamma;
    Rng rng(derive_seed(opts.seed, stream::kSimDfl, static_cast<std::uint64_t>(k)));

    TrajectorySample out;
    out.states.resize(static_cast<std::size_t>(H) * N);
    out.actions.resize(static_cast<std::size_t>(H) * N);
    out.probs.resize(static_cast<std::size_t>(H) * N);
    std::vector<int> s(N);
    for (int i = 0; i < N; ++i)
        s[i] = sample_index(cohort.setup.initial_dist, uniform01(rng));
    std::vector<double> rewards(H);
    double discount = 1.0;
    for (int t = 0; t < H; ++t) {
        const std::size_t base = static_cast<std::size_t>(t) * N;
        std::copy(s.begin(), s.end(), out.states.begin() + static_cast<std::ptrdiff_t>(base));
        const std::vector<double> p = step_probs(pt, s.data(), N, cohort.budget, opts.temperature);
        std::copy(p.begin(), p.end(), out.probs.begin() + static_cast<std::ptrdiff_t>(base));
        double r = 0.0;
        for (int i = 0; i < N; ++i) {
            const int a = uniform01(rng) < p[i] ? 1 : 0;
            out.actions[base + i] = a;
            r += R(s[i], a);
        }
        rewards[t] = discount * r;
        for (int i = 0; i < N; ++i)
            s[i] = sample_index(cohort.arms[i].truth.row(s[i], out.actions[base + i]),
                                uniform01(rng));
        discount *= gamma;
    }
    out.reward_to_go.assign(H, 0.0);
    double acc = 0.0;
    for (int t = H - 1; t >= 0; --t) {
        out.reward_to_go[t] = acc;
        acc += rewards[t];
    }
    out.total = acc;
    return out;
}

// Adds d/dw of adv * sum_i log pi(a_i | p_i(w)) for one step into dw[i][s].
double accumulate_step(const std::vector<double>& p, const int* states, const int* actions,
                       double adv, double temperature, std::vector<std::vector<double>>& dw) {
    const int N = static_cast<int>(p.size());
    double logp = 0.0;
    std::vector<double> dp(N);
    for (int i = 0; i < N; ++i) {
        const double pi = actions[i] ? p[i] : 1.0 - p[i];
        logp += std::log(std::max(pi, 1e-300));
        dp[i] = adv * (actions[i] ? 1.0 / std::max(p[i], 1e-300)
                                  : -1.0 / std::max(1.0 - p[i], 1e-300));
    }
    const std::vector<double> dscore = soft_top_b_vjp(p, temperature, dp);
    for (int i = 0; i < N; ++i)
        dw[i][states[i]] += dscore[i];
    return adv * logp;
}

std::vector<TransitionGrad> chain_whittle(const std::vector<TransitionTensor>& pred,
                                          const PolicyTables& pt, const DiscountedSetup& setup,
                                          const std::vector<std::vector<double>>& dw) {
    std::vector<TransitionGrad> grad = zero_grads(pred);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (std::all_of(dw[i].begin(), dw[i].end(), [](double v) { return v == 0.0; }))
            continue;
        const auto g = whittle_index_gradient(
            pred[i], RewardSpec::engagement(pred[i].num_states()), setup, pt.tables[i]);
        for (std::size_t s = 0; s < g.size(); ++s)
            for (std::size_t e = 0; e < g[s].size(); ++e)
                grad[i][e] += dw[i][s] * g[s][e];
    }
    return grad;
}

void check_sim_inputs(const std::vector<TransitionTensor>& pred, const Cohort& cohort,
                      const SimDflOptions& opts) {
    cohort.validate();
    check_pair(pred, cohort.arms.size(), "arms in the cohort");
    if (opts.trajectories < 1)
        throw InputError("SIM-DFL needs at least one trajectory");
    if (!(opts.temperature > 0.0))
        throw InputError("soft top-B temperature must be positive");
}

} // namespace

LossValue mse_loss(const std::vector<TransitionTensor>& pred,
                   const std::vector<TransitionTensor>& truth) {
    check_pair(pred, truth.size(), "true arms");
    LossValue out;
    out.grad = zero_grads(pred);
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].num_states() != truth[i].num_states())
            throw InputError(fmt::format("arm {} predicted and true state counts differ", i));
        count += pred[i].size();
    }
    if (count == 0)
        return out;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t e = 0; e < pred[i].size(); ++e) {
            const double d = pred[i].data()[e] - truth[i].data()[e];
            out.value += d * d;
            out.grad[i][e] = 2.0 * d / static_cast<double>(count);
        }
    out.value /= static_cast<double>(count);
    return out;
}

LossValue nll_loss(const std::vector<TransitionTensor>& pred, const TrajectoryData& data) {
    check_pair(pred, data.arms.size(), "observed trajectories");
    const std::vector<TransitionCounts> counts = data.counts();
    LossValue out;
    out.grad = zero_grads(pred);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].num_states() != data.num_states)
            throw InputError(fmt::format("arm {} has {} states, trajectories use {}", i,
                                         pred[i].num_states(), data.num_states));
        for (std::size_t e = 0; e < pred[i].size(); ++e) {
            const double n = counts[i][e];
            if (n == 0.0)
                continue;
            const double p = pred[i].data()[e];
            if (p > kNllFloor) {
                out.value -= n * std::log(p);
                out.grad[i][e] = -n / p;
            } else {
                out.value -= n * std::log(kNllFloor);
            }
        }
    }
    return out;
}

std::vector<double> soft_top_b(const std::vector<double>& scores, double budget,
                               double temperature) {
    const int N = static_cast<int>(scores.size());
    if (budget >= N)
        return std::vector<double>(N, 1.0);
    std::vector<double> p(N, 0.0);
    if (N == 0 || budget <= 0.0)
        return p;
    const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
    double lo = *mn - 40.0 * temperature; // excess(lo) >= 0
    double hi = *mx + 40.0 * temperature; // excess(hi) <= 0
    double tau = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        double total = 0.0, slope = 0.0;
        for (int i = 0; i < N; ++i) {
            p[i] = sigmoid((scores[i] - tau) / temperature);
            total += p[i];
            slope += p[i] * (1.0 - p[i]);
        }
        const double excess = total - budget;
        if (std::abs(excess) <= 1e-12 * N)
            break;
        if (excess > 0.0)
            lo = tau;
        else
            hi = tau;
        double next = 0.5 * (lo + hi);
        if (slope > 0.0) {
            const double newton = tau + excess * temperature / slope;
            if (newton > lo && newton < hi)
                next = newton;
        }
        if (next == tau)
            break;
        tau = next;
    }
    return p;
}

std::vector<double> soft_top_b_vjp(const std::vector<double>& probs, double temperature,
                                   const std::vector<double>& upstream) {
    const std::size_t N = probs.size();
    std::vector<double> out(N, 0.0);
    double total = 0.0, weighted = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double d = probs[i] * (1.0 - probs[i]);
        total += d;
        weighted += d * upstream[i];
    }
    if (!(total > 0.0))
        return out;
    const double mean = weighted / total;
    for (std::size_t i = 0; i < N; ++i)
        out[i] = probs[i] * (1.0 - probs[i]) / temperature * (upstream[i] - mean);
    return out;
}

SimDflTrace sample_sim_dfl_trace(const std::vector<TransitionTensor>& pred, const Cohort& cohort,
                                 const SimDflOptions& opts) {
    check_sim_inputs(pred, cohort, opts);
    const int N = cohort.num_arms();
    const int H = truncation_horizon(cohort.setup.gamma, 1.0, N, cohort.setup.horizon_tol);
    const PolicyTables pt = whittle_tables(pred, cohort.setup);

    SimDflTrace trace;
    trace.trajectories = opts.trajectories;
    trace.horizon = H;
    trace.num_arms = N;
    std::vector<double> baseline(H, 0.0);
    double total = 0.0;
    for (int k = 0; k < opts.trajectories; ++k) {
        TrajectorySample s = sample_trajectory(pt, cohort, H, opts, k);
        trace.states.insert(trace.states.end(), s.states.begin(), s.states.end());
        trace.actions.insert(trace.actions.end(), s.actions.begin(), s.actions.end());
        for (int t = 0; t < H; ++t) {
            trace.advantages.push_back(s.reward_to_go[t] - (k ? baseline[t] / k : 0.0));
            baseline[t] += s.reward_to_go[t];
        }
        total += s.total;
    }
    trace.mean_return = total / opts.trajectories;
    return trace;
}

LossValue sim_dfl_surrogate(const std::vector<TransitionTensor>& pred, const Cohort& cohort,
                            const SimDflTrace& trace, const SimDflOptions& opts) {
    check_sim_inputs(pred, cohort, opts);
    const int N = cohort.num_arms();
    if (trace.num_arms != N)
        throw InputError("trace was recorded on a different cohort");
    const PolicyTables pt = whittle_tables(pred, cohort.setup);
    std::vector<std::vector<double>> dw(N, std::vector<double>(cohort.num_states(), 0.0));
    LossValue out;
    for (int k = 0; k < trace.trajectories; ++k)
        for (int t = 0; t < trace.horizon; ++t) {
            const std::size_t step = static_cast<std::size_t>(k) * trace.horizon + t;
            const int* states = trace.states.data() + step * N;
            const std::vector<double> p =
                step_probs(pt, states, N, cohort.budget, opts.temperature);
            out.value += accumulate_step(p, states, trace.actions.data() + step * N,
                                         trace.advantages[step], opts.temperature, dw);
        }
    const double scale = 1.0 / trace.trajectories;
    out.value *= scale;
    for (auto& row : dw)
        for (double& v : row)
            v *= scale;
    out.grad = chain_whittle(pred, pt, cohort.setup, dw);
    return out;
}

LossValue sim_dfl_loss(const std::vector<TransitionTensor>& pred, const Cohort& cohort,
                       const SimDflOptions& opts) {
    check_sim_inputs(pred, cohort, opts);
    const int N = cohort.num_arms();
    const int H = truncation_horizon(cohort.setup.gamma, 1.0, N, cohort.setup.horizon_tol);
    const PolicyTables pt = whittle_tables(pred, cohort.setup);

    // same computation as sim_dfl_surrogate, streamed one trajectory at a time
    std::vector<std::vector<double>> dw(N, std::vector<double>(cohort.num_states(), 0.0));
    std::vector<double> baseline(H, 0.0);
    for (int k = 0; k < opts.trajectories; ++k) {
        const TrajectorySample s = sample_trajectory(pt, cohort, H, opts, k);
        for (int t = 0; t < H; ++t) {
            const double adv = s.reward_to_go[t] - (k ? baseline[t] / k : 0.0);
            baseline[t] += s.reward_to_go[t];
            const std::size_t base = static_cast<std::size_t>(t) * N;
            const std::vector<double> p(s.probs.begin() + static_cast<std::ptrdiff_t>(base),
                                        s.probs.begin() + static_cast<std::ptrdiff_t>(base + N));
            accumulate_step(p, s.states.data() + base, s.actions.data() + base, adv,
                            opts.temperature, dw);
        }
    }
    for (auto& row : dw)
        for (double& v : row)
            v /= opts.trajectories;

    LossValue out;
    out.grad = chain_whittle(pred, pt, cohort.setup, dw);
    WhittleTopB hard;
    hard.indices = pt.tables;
    out.value = simulate_joint(cohort, hard, opts.trajectories, opts.seed).mean_return;
    return out;
}

} // namespace rmab
