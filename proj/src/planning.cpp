#include "rmab/planning.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include <fmt/format.h>

#include "rmab/errors.hpp"
#include "rmab/rng.hpp"

namespace rmab {

namespace {

int integer_budget(double budget) { return static_cast<int>(std::floor(budget + 1e-9)); }

int sample_state(std::span<const double> probs, Rng& rng) {
    return sample_index(probs, uniform01(rng));
}

// Top-B selection into `actions`, reusing `keyed` as scratch. Keys are
// (-index, arm id), so the selected set matches a stable descending sort.
void select_top_b(const std::vector<WhittleTable>& indices, const std::vector<int>& states,
                  int budget, bool suppress_nonpositive, std::vector<std::pair<double, int>>& keyed,
                  std::vector<int>& actions) {
    const int N = static_cast<int>(indices.size());
    keyed.resize(N);
    for (int i = 0; i < N; ++i)
        keyed[i] = {-indices[i].wi[states[i]], i};
    const int picks = std::clamp(budget, 0, N);
    if (picks < N)
        std::nth_element(keyed.begin(), keyed.begin() + picks, keyed.end());
    actions.assign(N, 0);
    for (int k = 0; k < picks; ++k)
        if (!suppress_nonpositive || -keyed[k].first > 0.0)
            actions[keyed[k].second] = 1;
}

} // namespace

std::vector<TransitionTensor> Cohort::true_tensors() const {
    std::vector<TransitionTensor> out;
    out.reserve(arms.size());
    for (const Arm& arm : arms)
        out.push_back(arm.truth);
    return out;
}

void Cohort::validate() const {
    if (arms.empty())
        throw InputError("cohort has no arms");
    const int S = num_states();
    for (std::size_t i = 0; i < arms.size(); ++i) {
        if (arms[i].truth.num_states() != S)
            throw InputError(fmt::format("arm {} has {} states, expected {}", i,
                                         arms[i].truth.num_states(), S));
        arms[i].truth.validate();
    }
    if (!(budget > 0.0) || budget > num_arms())
        throw InputError(fmt::format("budget {} must lie in (0, {}]", budget, num_arms()));
    setup.validate(S);
}

std::vector<int> whittle_top_b_step(const std::vector<WhittleTable>& indices,
                                    const std::vector<int>& states, int budget,
                                    bool suppress_nonpositive) {
    const int N = static_cast<int>(indices.size());
    if (static_cast<int>(states.size()) != N)
        throw InputError("one state per arm is required");
    for (int i = 0; i < N; ++i)
        if (states[i] < 0 || states[i] >= static_cast<int>(indices[i].wi.size()))
            throw InputError(fmt::format("arm {} is in state {} outside its index table", i,
                                         states[i]));
    std::vector<std::pair<double, int>> keyed;
    std::vector<int> actions;
    select_top_b(indices, states, budget, suppress_nonpositive, keyed, actions);
    return actions;
}

int truncation_horizon(double gamma, double r_max, int num_arms, double tol) {
    if (!(tol > 0.0))
        throw InputError("horizon tolerance must be positive");
    double mass = r_max * num_arms / (1.0 - gamma);
    int H = 0;
    while (mass >= tol) {
        mass *= gamma;
        ++H;
    }
    return H;
}

WhittleTopB whittle_policy(const std::vector<TransitionTensor>& tensors,
                           const DiscountedSetup& setup) {
    WhittleTopB policy;
    policy.indices.reserve(tensors.size());
    for (const TransitionTensor& T : tensors)
        policy.indices.push_back(
            whittle_index(T, RewardSpec::engagement(T.num_states()), setup));
    return policy;
}

SimulationResult simulate_joint(const Cohort& cohort, const JointPolicy& policy,
                                int trajectories, std::uint64_t seed) {
    if (trajectories < 1)
        throw InputError("at least one trajectory is required");
    cohort.validate();
    const int N = cohort.num_arms();
    const int S = cohort.num_states();
    const double gamma = cohort.setup.gamma;
    const RewardSpec R = RewardSpec::engagement(S);
    const int H = truncation_horizon(gamma, R.max_reward(), N, cohort.setup.horizon_tol);
    const int B = integer_budget(cohort.budget);

    const auto* whittle = std::get_if<WhittleTopB>(&policy);
    const auto* mixture = std::get_if<Decomposed>(&policy);
    if (whittle && static_cast<int>(whittle->indices.size()) != N)
        throw InputError("Whittle policy has the wrong number of arms");
    if (mixture && (mixture->mixture.num_arms() != N ||
                    mixture->mixture.num_policies() != num_policies(S)))
        throw InputError("mixture shape does not match the cohort");

    double sum = 0.0, sum_sq = 0.0, budget_sum = 0.0;
    std::vector<int> states(N);
    std::vector<int> actions(N);
    std::vector<PerArmPolicy> assigned(N);
    std::vector<std::pair<double, int>> keyed;
    if (whittle)
        for (const WhittleTable& w : whittle->indices)
            if (static_cast<int>(w.wi.size()) != S)
                throw InputError("Whittle table size does not match the number of states");
    for (int t = 0; t < trajectories; ++t) {
        Rng rng(derive_seed(seed, stream::kSimulation, static_cast<std::uint64_t>(t)));
        for (int i = 0; i < N; ++i)
            states[i] = sample_state(cohort.setup.initial_dist, rng);
        if (mixture)
            for (int i = 0; i < N; ++i) {
                const auto row = mixture->mixture.z.row(i);
                assigned[i].index = static_cast<std::uint32_t>(
                    sample_index(std::span<const double>(row.data(), row.size()),
                                 uniform01(rng)));
            }

        double ret = 0.0, used = 0.0, discount = 1.0;
        for (int step = 0; step < H; ++step) {
            if (whittle) {
                select_top_b(whittle->indices, states, B, whittle->suppress_nonpositive, keyed,
                             actions);
            } else {
                for (int i = 0; i < N; ++i)
                    actions[i] = assigned[i].action(states[i]);
            }
            double reward = 0.0;
            int acted = 0;
            for (int i = 0; i < N; ++i) {
                reward += R(states[i], actions[i]);
                acted += actions[i];
            }
            ret += discount * reward;
            used += discount * acted;
            for (int i = 0; i < N; ++i)
                states[i] = sample_state(cohort.arms[i].truth.row(states[i], actions[i]), rng);
            discount *= gamma;
        }
        sum += ret;
        sum_sq += ret * ret;
        budget_sum += used;
    }

    SimulationResult out;
    const double n = trajectories;
    out.mean_return = sum / n;
    out.mean_budget_used = budget_sum / n;
    out.trajectories_used = trajectories;
    out.horizon = H;
    if (trajectories > 1) {
        const double var = std::max(0.0, (sum_sq - n * out.mean_return * out.mean_return) / (n - 1));
        out.std_error = std::sqrt(var / n);
    }
    return out;
}

DualSolution uncorrected_policy(const std::vector<TransitionTensor>& pred,
                                const RegularizerConfig& reg, const SolverConfig& cfg,
                                const DiscountedSetup& setup) {
    if (pred.empty())
        throw InputError("cohort has no arms");
    const RewardSpec R = RewardSpec::engagement(pred.front().num_states());
    ReturnsTable tables;
    tables.j_pred = build_return_table(pred, R, setup);
    tables.j_budget = build_return_table(pred, RewardSpec::budget(), setup);
    SolverConfig solver = cfg;
    solver.gamma = setup.gamma;
    solver.r_max = R.max_reward();
    return forward_pass(tables, reg, solver);
}

JointSolution brute_force_joint(const Cohort& cohort, int budget) {
    cohort.validate();
    const int N = cohort.num_arms();
    const int S = cohort.num_states();
    if (N > 31)
        throw CapacityError(fmt::format("joint solve over {} arms is out of range", N));
    std::size_t joint = 1;
    for (int i = 0; i < N; ++i) {
        joint *= static_cast<std::size_t>(S);
        if (joint > kMaxJointStates)
            throw CapacityError(fmt::format(
                "joint state space {}^{} exceeds the {}-state limit", S, N, kMaxJointStates));
    }
    const double gamma = cohort.setup.gamma;
    const RewardSpec R = RewardSpec::engagement(S);

    std::vector<std::uint32_t> masks;
    for (std::uint32_t a = 0; a < (1U << N); ++a)
        if (std::popcount(a) <= budget)
            masks.push_back(a);

    std::vector<std::size_t> stride(N);
    for (int i = 0, s = 1; i < N; ++i, s *= S)
        stride[i] = static_cast<std::size_t>(s);
    auto arm_state = [&](std::size_t x, int i) { return static_cast<int>(x / stride[i] % S); };

    std::vector<double> reward(joint, 0.0);
    for (std::size_t x = 0; x < joint; ++x)
        for (int i = 0; i < N; ++i)
            reward[x] += R(arm_state(x, i), 0);

    // E[V(x') | x, a] for every x at once, one arm at a time.
    auto expected_next = [&](const std::vector<double>& V, std::uint32_t mask) {
        std::vector<double> cur = V, next(joint);
        for (int i = 0; i < N; ++i) {
            const int a = static_cast<int>((mask >> i) & 1U);
            const TransitionTensor& T = cohort.arms[i].truth;
            for (std::size_t x = 0; x < joint; ++x) {
                const int s = arm_state(x, i);
                const std::size_t base = x - static_cast<std::size_t>(s) * stride[i];
                double acc = 0.0;
                for (int n = 0; n < S; ++n)
                    acc += T(s, a, n) * cur[base + n * stride[i]];
                next[x] = acc;
            }
            std::swap(cur, next);
        }
        return cur;
    };

    JointSolution out;
    std::vector<double> V(joint, 0.0);
    out.policy.assign(joint, 0);
    for (int iter = 0;; ++iter) {
        std::vector<double> best(joint, -std::numeric_limits<double>::infinity());
        std::vector<std::uint32_t> arg(joint, 0);
        for (std::uint32_t mask : masks) {
            const std::vector<double> ev = expected_next(V, mask);
            for (std::size_t x = 0; x < joint; ++x) {
                const double q = reward[x] + gamma * ev[x];
                if (q > best[x] + 1e-13) {
                    best[x] = q;
                    arg[x] = mask;
                }
            }
        }
        double delta = 0.0;
        for (std::size_t x = 0; x < joint; ++x)
            delta = std::max(delta, std::abs(best[x] - V[x]));
        V = std::move(best);
        out.policy = std::move(arg);
        if (delta < 1e-10)
            break;
        if (iter > 100000)
            throw NumericError("joint value iteration did not converge");
    }

    out.value = 0.0;
    for (std::size_t x = 0; x < joint; ++x) {
        double p = 1.0;
        for (int i = 0; i < N; ++i)
            p *= cohort.setup.initial_dist[arm_state(x, i)];
        out.value += p * V[x];
    }
    out.state_values = std::move(V);
    return out;
}

BudgetAudit budget_audit(const Cohort& cohort, const DualSolution& sol) {
    const Table jb = build_return_table(cohort.true_tensors(), RewardSpec::budget(), cohort.setup);
    if (jb.rows() != sol.z_star.z.rows() || jb.cols() != sol.z_star.z.cols())
        throw InputError("mixture shape does not match the cohort");
    BudgetAudit audit;
    audit.used = sol.z_star.z.cwiseProduct(jb).sum();
    audit.budget = cohort.budget;
    audit.discounted_budget = cohort.budget / (1.0 - cohort.setup.gamma);
    audit.ratio = audit.used / audit.discounted_budget;
    audit.per_step_overshoot = audit.used / audit.budget;
    return audit;
}

} // namespace rmab
