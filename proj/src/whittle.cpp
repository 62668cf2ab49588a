#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rmab/errors.hpp"
#include "rmab/mdp.hpp"

namespace rmab {

namespace {

struct SubsidizedSolution {
    PerArmPolicy policy;
    Eigen::VectorXd values;
    Eigen::MatrixXd inverse; // (I - gamma T_pi)^{-1}
};

double subsidized_reward(const RewardSpec& R, int s, int a, double subsidy) {
    return R(s, a) + (a == 0 ? subsidy : 0.0);
}

double q_value(const TransitionTensor& T, const RewardSpec& R, double gamma, double subsidy,
               const Eigen::VectorXd& V, int s, int a) {
    double ev = 0.0;
    const auto row = T.row(s, a);
    for (int n = 0; n < T.num_states(); ++n)
        ev += row[n] * V(n);
    return subsidized_reward(R, s, a, subsidy) + gamma * ev;
}

SubsidizedSolution evaluate(const TransitionTensor& T, const RewardSpec& R, double gamma,
                            double subsidy, PerArmPolicy pi) {
    const int S = T.num_states();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd r(S);
    for (int s = 0; s < S; ++s) {
        const int a = pi.action(s);
        r(s) = subsidized_reward(R, s, a, subsidy);
        for (int n = 0; n < S; ++n)
            M(s, n) -= gamma * T(s, a, n);
    }
    SubsidizedSolution out;
    out.policy = pi;
    out.inverse = M.inverse();
    out.values = out.inverse * r;
    return out;
}

// Policy iteration with exact evaluation; ties keep the incumbent action.
SubsidizedSolution solve_subsidized(const TransitionTensor& T, const RewardSpec& R,
                                    double gamma, double subsidy) {
    const int S = T.num_states();
    PerArmPolicy pi = PerArmPolicy::never_act();
    for (int iter = 0; iter < 64 * S + 64; ++iter) {
        SubsidizedSolution sol = evaluate(T, R, gamma, subsidy, pi);
        PerArmPolicy next = pi;
        for (int s = 0; s < S; ++s) {
            const double q0 = q_value(T, R, gamma, subsidy, sol.values, s, 0);
            const double q1 = q_value(T, R, gamma, subsidy, sol.values, s, 1);
            const double scale = 1e-12 * (1.0 + std::abs(q0) + std::abs(q1));
            const int current = pi.action(s);
            const double gain = current == 0 ? q1 - q0 : q0 - q1;
            if (gain > scale)
                next.index ^= (1U << s);
        }
        if (next.index == pi.index)
            return sol;
        pi = next;
    }
    throw NumericError(fmt::format("policy iteration did not settle at subsidy {}", subsidy));
}

} // namespace

std::vector<double> subsidized_advantage(const TransitionTensor& T, const RewardSpec& R,
                                         double gamma, double subsidy) {
    const SubsidizedSolution sol = solve_subsidized(T, R, gamma, subsidy);
    std::vector<double> adv(T.num_states());
    for (int s = 0; s < T.num_states(); ++s)
        adv[s] = q_value(T, R, gamma, subsidy, sol.values, s, 1) -
                 q_value(T, R, gamma, subsidy, sol.values, s, 0);
    return adv;
}

WhittleTable whittle_index(const TransitionTensor& T, const RewardSpec& R,
                           const DiscountedSetup& setup, const WhittleOptions& opts) {
    const int S = T.num_states();
    const double bound = R.max_reward() / (1.0 - setup.gamma);
    WhittleTable table;
    table.wi.assign(S, 0.0);

    for (int s = 0; s < S; ++s) {
        double lo = -bound;
        double hi = bound;
        if (subsidized_advantage(T, R, setup.gamma, lo)[s] <= 0.0) {
            table.wi[s] = lo;
            table.bracket_violations.push_back(s);
            continue;
        }
        if (subsidized_advantage(T, R, setup.gamma, hi)[s] > 0.0) {
            table.wi[s] = hi;
            table.bracket_violations.push_back(s);
            continue;
        }
        int iter = 0;
        while (hi - lo > opts.tol && iter < opts.max_iterations) {
            const double mid = 0.5 * (lo + hi);
            // a tie at mid moves the upper end, so ties settle on the lower subsidy
            if (subsidized_advantage(T, R, setup.gamma, mid)[s] > 0.0)
                lo = mid;
            else
                hi = mid;
            ++iter;
        }
        if (hi - lo > opts.tol)
            throw NumericError(fmt::format(
                "Whittle search for state {} stopped after {} iterations with bracket [{}, {}]",
                s, iter, lo, hi));
        table.wi[s] = hi;
    }
    return table;
}

std::vector<TransitionGrad> whittle_index_gradient(const TransitionTensor& T,
                                                   const RewardSpec& R,
                                                   const DiscountedSetup& setup,
                                                   const WhittleTable& table) {
    const int S = T.num_states();
    const double gamma = setup.gamma;
    std::vector<TransitionGrad> grads(S, TransitionGrad(T.size(), 0.0));

    for (int s = 0; s < S; ++s) {
        if (std::find(table.bracket_violations.begin(), table.bracket_violations.end(), s) !=
            table.bracket_violations.end())
            continue; // clamped index: locally constant
        const double subsidy = table.wi[s];
        PerArmPolicy pi = solve_subsidized(T, R, gamma, subsidy).policy;
        pi.index |= (1U << s); // both actions are optimal in s; use the active one
        const SubsidizedSolution sol = evaluate(T, R, gamma, subsidy, pi);

        // h(subsidy, T) = gamma * c . V - subsidy, with c = T(s,1,.) - T(s,0,.)
        Eigen::VectorXd c(S);
        for (int n = 0; n < S; ++n)
            c(n) = T(s, 1, n) - T(s, 0, n);
        const Eigen::RowVectorXd cMinv = gamma * c.transpose() * sol.inverse;

        Eigen::VectorXd passive_bits(S);
        for (int x = 0; x < S; ++x)
            passive_bits(x) = pi.action(x) == 0 ? 1.0 : 0.0;
        const double dh_dsubsidy = -1.0 + cMinv.dot(passive_bits);
        if (std::abs(dh_dsubsidy) < 1e-14)
            continue;

        TransitionGrad& g = grads[s];
        for (int n = 0; n < S; ++n) {
            g[T.offset(s, 1, n)] += gamma * sol.values(n);
            g[T.offset(s, 0, n)] -= gamma * sol.values(n);
        }
        for (int x = 0; x < S; ++x) {
            const int a = pi.action(x);
            for (int n = 0; n < S; ++n)
                g[T.offset(x, a, n)] += cMinv(x) * gamma * sol.values(n);
        }
        for (double& v : g)
            v = -v / dh_dsubsidy;
    }
    return grads;
}

} // namespace rmab
