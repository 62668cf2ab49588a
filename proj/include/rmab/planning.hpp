#pragma once

// Joint policies over a cohort: Whittle top-B, sampled decomposed mixtures,
// Monte Carlo evaluation, an exact product-space solver for toy instances,
// and the budget audit used to expose the uncorrected relaxation.

#include <cstdint>
#include <variant>
#include <vector>

#include "rmab/dec_layer.hpp"
#include "rmab/mdp.hpp"

namespace rmab {

struct Arm {
    std::vector<double> features;
    TransitionTensor truth;
};

struct Cohort {
    std::vector<Arm> arms;
    double budget = 1.0; // interventions per step
    DiscountedSetup setup;

    int num_arms() const { return static_cast<int>(arms.size()); }
    int num_states() const { return arms.empty() ? 0 : arms.front().truth.num_states(); }
    std::vector<TransitionTensor> true_tensors() const;
    void validate() const;
};

struct WhittleTopB {
    std::vector<WhittleTable> indices;
    bool suppress_nonpositive = false;
};

/// Per-trajectory, each arm draws one deterministic policy from its row of `mixture`.
struct Decomposed {
    Mixture mixture;
};

using JointPolicy = std::variant<WhittleTopB, Decomposed>;

struct SimulationResult {
    double mean_return = 0.0;
    double std_error = 0.0;
    double mean_budget_used = 0.0; // discounted interventions
    int trajectories_used = 0;
    int horizon = 0;
};

/// Acts on the `budget` arms with the largest current-state index. Ties go to
/// the lower arm id. With suppress_nonpositive, arms whose index is <= 0 are
/// never acted on.
std::vector<int> whittle_top_b_step(const std::vector<WhittleTable>& indices,
                                    const std::vector<int>& states, int budget,
                                    bool suppress_nonpositive = false);

/// Smallest H with gamma^H * r_max * N / (1 - gamma) < tol.
int truncation_horizon(double gamma, double r_max, int num_arms, double tol);

SimulationResult simulate_joint(const Cohort& cohort, const JointPolicy& policy,
                                int trajectories, std::uint64_t seed);

/// WhittleTopB over indices computed from `tensors` (predicted or true).
WhittleTopB whittle_policy(const std::vector<TransitionTensor>& tensors,
                           const DiscountedSetup& setup);

/// Decomposed layer with the budget evaluated on the predictions themselves.
DualSolution uncorrected_policy(const std::vector<TransitionTensor>& pred,
                                const RegularizerConfig& reg, const SolverConfig& cfg,
                                const DiscountedSetup& setup);

struct JointSolution {
    double value = 0.0;
    /// Optimal action bitmask (bit i = act on arm i) per joint state, where a
    /// joint state is encoded in base |S| with arm 0 least significant.
    std::vector<std::uint32_t> policy;
    std::vector<double> state_values;
};

inline constexpr std::size_t kMaxJointStates = 4096;

/// Exact optimum of the per-step budgeted joint MDP by value iteration on
/// the product space. Throws CapacityError when |S|^N > kMaxJointStates.
JointSolution brute_force_joint(const Cohort& cohort, int budget);

struct BudgetAudit {
    double used = 0.0;            // sum Z * Jbar on the true transitions
    double budget = 0.0;          // per-step B
    double discounted_budget = 0.0;
    double ratio = 0.0;           // used / (B / (1 - gamma))
    double per_step_overshoot = 0.0; // used / B
};

BudgetAudit budget_audit(const Cohort& cohort, const DualSolution& sol);

} // namespace rmab
