#pragma once

// Training losses over a cohort's predicted tensors. Each returns its value
// and the gradient with respect to every predicted tensor entry.

#include <cstdint>
#include <vector>

#include "rmab/datasets.hpp"
#include "rmab/mdp.hpp"
#include "rmab/planning.hpp"

namespace rmab {

struct LossValue {
    double value = 0.0;
    std::vector<TransitionGrad> grad;
};

/// Mean of squared entry differences over all arms and entries.
LossValue mse_loss(const std::vector<TransitionTensor>& pred,
                   const std::vector<TransitionTensor>& truth);

inline constexpr double kNllFloor = 1e-12;

/// -sum over observed (s, a, s') of log max(T^(s,a,s'), 1e-12).
LossValue nll_loss(const std::vector<TransitionTensor>& pred, const TrajectoryData& data);

/// Smoothed top-B: p_i = sigmoid((w_i - tau) / temperature) with tau chosen
/// so that sum p = budget. Every p is 1 when budget >= N.
std::vector<double> soft_top_b(const std::vector<double>& scores, double budget,
                               double temperature);

/// Vector-Jacobian product of soft_top_b at the probabilities it returned.
std::vector<double> soft_top_b_vjp(const std::vector<double>& probs, double temperature,
                                   const std::vector<double>& upstream);

struct SimDflOptions {
    int trajectories = 100;
    double temperature = 0.1;
    std::uint64_t seed = 0;
};

/// Sampled rollouts under the smoothed Whittle policy, with each step's
/// reward-to-go minus a baseline built from earlier trajectories.
struct SimDflTrace {
    int trajectories = 0;
    int horizon = 0;
    int num_arms = 0;
    std::vector<int> states;          // [k][t][i]
    std::vector<int> actions;         // [k][t][i]
    std::vector<double> advantages;   // [k][t]
    double mean_return = 0.0;
};

/// Rolls `trajectories` episodes on the true dynamics. Action draws and
/// transitions use common random numbers keyed by (seed, trajectory), so
/// the same seed replays the same uniforms across epochs.
SimDflTrace sample_sim_dfl_trace(const std::vector<TransitionTensor>& pred, const Cohort& cohort,
                                 const SimDflOptions& opts);

/// Score-function surrogate (1/K) sum_{k,t} adv_{k,t} sum_i log pi(a_i | p_i(pred))
/// on a fixed trace. Its gradient is the policy-gradient estimate SIM-DFL ascends.
LossValue sim_dfl_surrogate(const std::vector<TransitionTensor>& pred, const Cohort& cohort,
                            const SimDflTrace& trace, const SimDflOptions& opts);

/// Value: simulated return of the hard Whittle top-B policy planned on
/// `pred`. Gradient: the surrogate gradient on a freshly sampled trace.
LossValue sim_dfl_loss(const std::vector<TransitionTensor>& pred, const Cohort& cohort,
                       const SimDflOptions& opts);

} // namespace rmab
