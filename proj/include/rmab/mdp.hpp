#pragma once

// Per-arm MDP primitives: transition tensors, deterministic per-arm policies,
// exact discounted policy evaluation and its gradient, and Whittle indices.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace rmab {

inline constexpr int kNumActions = 2;
inline constexpr int kMaxStates = 12;

/// Dense tensor of P(s' | s, a) for one arm, stored row-major as [s][a][s'].
class TransitionTensor {
  public:
    TransitionTensor() = default;
    /// All-zero tensor; callers fill it and call validate().
    explicit TransitionTensor(int num_states);
    /// Takes ownership of `probs` (size S*2*S) and validates it.
    TransitionTensor(int num_states, std::vector<double> probs);

    /// Row (s, a) is the point mass on `next_of(s, a)`.
    static TransitionTensor deterministic(int num_states,
                                          const std::vector<int>& next_of_state_action);
    /// Builds from the two per-action S x S matrices, as usually printed.
    static TransitionTensor from_matrices(const Eigen::MatrixXd& passive,
                                          const Eigen::MatrixXd& active);

    int num_states() const noexcept { return num_states_; }
    std::size_t size() const noexcept { return probs_.size(); }

    std::size_t offset(int s, int a, int next) const noexcept {
        return (static_cast<std::size_t>(s) * kNumActions + a) * num_states_ + next;
    }
    double operator()(int s, int a, int next) const { return probs_[offset(s, a, next)]; }
    double& operator()(int s, int a, int next) { return probs_[offset(s, a, next)]; }

    std::span<const double> row(int s, int a) const {
        return {probs_.data() + offset(s, a, 0), static_cast<std::size_t>(num_states_)};
    }
    std::span<const double> data() const noexcept { return probs_; }
    std::span<double> data() noexcept { return probs_; }

    /// Throws InputError unless entries are in [0,1] and rows sum to 1 within tol.
    void validate(double tol = 1e-9) const;
    bool is_valid(double tol = 1e-9) const noexcept;

    friend bool operator==(const TransitionTensor&, const TransitionTensor&) = default;

  private:
    int num_states_ = 0;
    std::vector<double> probs_;
};

/// Gradient with the same [s][a][s'] layout as TransitionTensor.
using TransitionGrad = std::vector<double>;

enum class RewardKind { Engagement, Budget };

/// Engagement pays R(s) = s/(|S|-1) in state s; Budget pays the action bit.
struct RewardSpec {
    RewardKind kind = RewardKind::Engagement;
    std::vector<double> values; // Engagement only

    static RewardSpec engagement(int num_states);
    static RewardSpec budget() { return {RewardKind::Budget, {}}; }

    double operator()(int s, int a) const {
        return kind == RewardKind::Budget ? static_cast<double>(a) : values[s];
    }
    double max_reward() const;
};

/// Deterministic per-arm policy; bit s of `index` is the action in state s.
struct PerArmPolicy {
    std::uint32_t index = 0;

    int action(int s) const noexcept { return static_cast<int>((index >> s) & 1U); }
    static PerArmPolicy never_act() { return {0}; }
    static PerArmPolicy always_act(int num_states) { return {(1U << num_states) - 1U}; }
};

inline int num_policies(int num_states) { return 1 << num_states; }

/// All 2^|S| deterministic policies in index order. Throws CapacityError
/// outside 1 <= num_states <= kMaxStates.
std::vector<PerArmPolicy> enumerate_policies(int num_states);

struct DiscountedSetup {
    double gamma = 0.9;
    std::vector<double> initial_dist;
    double horizon_tol = 1e-3;

    static DiscountedSetup uniform(int num_states, double gamma);
    static DiscountedSetup starting_in(int num_states, int state, double gamma);
    void validate(int num_states) const;
};

/// Discounted value function V = (I - gamma T_pi)^{-1} r_pi of a policy.
Eigen::VectorXd policy_values(const TransitionTensor& T, const RewardSpec& R,
                              PerArmPolicy pi, double gamma);

/// J_T(pi) = E_{s0}[V(s0)].
double get_returns(const TransitionTensor& T, const RewardSpec& R, PerArmPolicy pi,
                   const DiscountedSetup& setup);

/// Expected discounted number of interventions of `pi`.
double get_budget_usage(const TransitionTensor& T, PerArmPolicy pi,
                        const DiscountedSetup& setup);

/// get_returns for every policy of enumerate_policies, in index order.
std::vector<double> returns_all_policies(const TransitionTensor& T, const RewardSpec& R,
                                         const DiscountedSetup& setup);

/// dJ/dT(s,a,s') treating every entry as a free parameter. Entries of the
/// action the policy does not take in s are zero.
TransitionGrad returns_gradient(const TransitionTensor& T, const RewardSpec& R,
                                PerArmPolicy pi, const DiscountedSetup& setup);

struct WhittleOptions {
    double tol = 1e-8;
    int max_iterations = 200;
};

/// Per-state Whittle indices (passive subsidy at which the two actions tie).
struct WhittleTable {
    std::vector<double> wi;
    /// States whose bracket did not contain a sign change (non-indexable
    /// behaviour); the index was clamped to the bracket end.
    std::vector<int> bracket_violations;
};

WhittleTable whittle_index(const TransitionTensor& T, const RewardSpec& R,
                           const DiscountedSetup& setup, const WhittleOptions& opts = {});

/// Q(s,1) - Q(s,0) of the optimal policy for the single arm whose passive
/// action is paid `subsidy`.
std::vector<double> subsidized_advantage(const TransitionTensor& T, const RewardSpec& R,
                                         double gamma, double subsidy);

/// d wi[s] / dT for every state, by implicit differentiation of the
/// indifference condition at the computed index.
std::vector<TransitionGrad> whittle_index_gradient(const TransitionTensor& T,
                                                   const RewardSpec& R,
                                                   const DiscountedSetup& setup,
                                                   const WhittleTable& table);

} // namespace rmab
