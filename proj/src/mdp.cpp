#include "rmab/mdp.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rmab/errors.hpp"

namespace rmab {

namespace {

void check_num_states(int num_states) {
    if (num_states < 1 || num_states > kMaxStates)
        throw CapacityError(fmt::format("number of states {} outside supported range [1, {}]",
                                        num_states, kMaxStates));
}

// Policy-induced chain T_pi(s, s') = T(s, pi(s), s').
Eigen::MatrixXd induced_chain(const TransitionTensor& T, PerArmPolicy pi) {
    const int S = T.num_states();
    Eigen::MatrixXd P(S, S);
    for (int s = 0; s < S; ++s) {
        const auto row = T.row(s, pi.action(s));
        for (int n = 0; n < S; ++n)
            P(s, n) = row[n];
    }
    return P;
}

Eigen::VectorXd induced_rewards(const RewardSpec& R, PerArmPolicy pi, int S) {
    Eigen::VectorXd r(S);
    for (int s = 0; s < S; ++s)
        r(s) = R(s, pi.action(s));
    return r;
}

Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

void check_gamma(double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw NumericError(fmt::format(
            "discount factor {} makes I - gamma*T_pi singular; need 0 <= gamma < 1", gamma));
}

} // namespace

TransitionTensor::TransitionTensor(int num_states)
    : num_states_(num_states),
      probs_(static_cast<std::size_t>(num_states) * kNumActions * num_states, 0.0) {
    check_num_states(num_states);
}

TransitionTensor::TransitionTensor(int num_states, std::vector<double> probs)
    : num_states_(num_states), probs_(std::move(probs)) {
    check_num_states(num_states);
    if (probs_.size() != static_cast<std::size_t>(num_states) * kNumActions * num_states)
        throw InputError(fmt::format("transition tensor for {} states needs {} entries, got {}",
                                     num_states, num_states * kNumActions * num_states,
                                     probs_.size()));
    validate();
}

TransitionTensor TransitionTensor::deterministic(int num_states,
                                                 const std::vector<int>& next_of_state_action) {
    TransitionTensor T(num_states);
    if (next_of_state_action.size() != static_cast<std::size_t>(num_states * kNumActions))
        throw InputError("deterministic tensor needs one successor per (state, action)");
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < kNumActions; ++a)
            T(s, a, next_of_state_action[s * kNumActions + a]) = 1.0;
    T.validate();
    return T;
}

TransitionTensor TransitionTensor::from_matrices(const Eigen::MatrixXd& passive,
                                                 const Eigen::MatrixXd& active) {
    const int S = static_cast<int>(passive.rows());
    if (passive.cols() != S || active.rows() != S || active.cols() != S)
        throw InputError("per-action transition matrices must be square and equal-sized");
    TransitionTensor T(S);
    for (int s = 0; s < S; ++s)
        for (int n = 0; n < S; ++n) {
            T(s, 0, n) = passive(s, n);
            T(s, 1, n) = active(s, n);
        }
    T.validate();
    return T;
}

bool TransitionTensor::is_valid(double tol) const noexcept {
    if (num_states_ < 1 || probs_.size() != offset(num_states_, 0, 0))
        return false;
    for (int s = 0; s < num_states_; ++s)
        for (int a = 0; a < kNumActions; ++a) {
            double sum = 0.0;
            for (double p : row(s, a)) {
                if (!(p >= -tol && p <= 1.0 + tol))
                    return false;
                sum += p;
            }
            if (std::abs(sum - 1.0) > tol)
                return false;
        }
    return true;
}

void TransitionTensor::validate(double tol) const {
    for (int s = 0; s < num_states_; ++s)
        for (int a = 0; a < kNumActions; ++a) {
            double sum = 0.0;
            for (int n = 0; n < num_states_; ++n) {
                const double p = (*this)(s, a, n);
                if (!(p >= -tol && p <= 1.0 + tol))
                    throw InputError(fmt::format("T({},{},{}) = {} is not a probability", s, a,
                                                 n, p));
                sum += p;
            }
            if (std::abs(sum - 1.0) > tol)
                throw InputError(fmt::format("row T({},{},.) sums to {:.17g}", s, a, sum));
        }
}

RewardSpec RewardSpec::engagement(int num_states) {
    check_num_states(num_states);
    RewardSpec r;
    r.kind = RewardKind::Engagement;
    r.values.resize(num_states);
    for (int s = 0; s < num_states; ++s)
        r.values[s] = num_states == 1 ? 0.0 : static_cast<double>(s) / (num_states - 1);
    return r;
}

double RewardSpec::max_reward() const {
    if (kind == RewardKind::Budget || values.empty())
        return 1.0;
    return *std::max_element(values.begin(), values.end());
}

std::vector<PerArmPolicy> enumerate_policies(int num_states) {
    check_num_states(num_states);
    std::vector<PerArmPolicy> out(static_cast<std::size_t>(num_policies(num_states)));
    for (std::uint32_t j = 0; j < out.size(); ++j)
        out[j].index = j;
    return out;
}

DiscountedSetup DiscountedSetup::uniform(int num_states, double gamma) {
    return {gamma, std::vector<double>(num_states, 1.0 / num_states), 1e-3};
}

DiscountedSetup DiscountedSetup::starting_in(int num_states, int state, double gamma) {
    std::vector<double> d(num_states, 0.0);
    d.at(state) = 1.0;
    return {gamma, std::move(d), 1e-3};
}

void DiscountedSetup::validate(int num_states) const {
    if (static_cast<int>(initial_dist.size()) != num_states)
        throw InputError(fmt::format("initial distribution has {} entries for {} states",
                                     initial_dist.size(), num_states));
    double sum = 0.0;
    for (double p : initial_dist) {
        if (p < 0.0)
            throw InputError("initial distribution has a negative entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InputError(fmt::format("initial distribution sums to {:.17g}", sum));
}

Eigen::VectorXd policy_values(const TransitionTensor& T, const RewardSpec& R,
                              PerArmPolicy pi, double gamma) {
    check_gamma(gamma);
    const int S = T.num_states();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S, S) - gamma * induced_chain(T, pi);
    return M.partialPivLu().solve(induced_rewards(R, pi, S));
}

double get_returns(const TransitionTensor& T, const RewardSpec& R, PerArmPolicy pi,
                   const DiscountedSetup& setup) {
    return as_vector(setup.initial_dist).dot(policy_values(T, R, pi, setup.gamma));
}

double get_budget_usage(const TransitionTensor& T, PerArmPolicy pi,
                        const DiscountedSetup& setup) {
    return get_returns(T, RewardSpec::budget(), pi, setup);
}

std::vector<double> returns_all_policies(const TransitionTensor& T, const RewardSpec& R,
                                         const DiscountedSetup& setup) {
    const int S = T.num_states();
    std::vector<double> out(static_cast<std::size_t>(num_policies(S)));
    const auto d0 = as_vector(setup.initial_dist);
    for (const PerArmPolicy pi : enumerate_policies(S))
        out[pi.index] = d0.dot(policy_values(T, R, pi, setup.gamma));
    return out;
}

TransitionGrad returns_gradient(const TransitionTensor& T, const RewardSpec& R,
                                PerArmPolicy pi, const DiscountedSetup& setup) {
    check_gamma(setup.gamma);
    const int S = T.num_states();
    const double gamma = setup.gamma;
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S, S) - gamma * induced_chain(T, pi);
    const auto lu = M.partialPivLu();
    const Eigen::VectorXd V = lu.solve(induced_rewards(R, pi, S));
    // discounted state occupancy from the initial distribution
    const Eigen::VectorXd occupancy = lu.transpose().solve(as_vector(setup.initial_dist));

    TransitionGrad grad(T.size(), 0.0);
    for (int s = 0; s < S; ++s) {
        const int a = pi.action(s);
        for (int n = 0; n < S; ++n)
            grad[T.offset(s, a, n)] = gamma * occupancy(s) * V(n);
    }
    return grad;
}

} // namespace rmab
