#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rmab/errors.hpp"
#include "rmab/mdp.hpp"

using namespace rmab;

namespace {

// Act in 0, stay passive in 1.
const PerArmPolicy kActInZero{1};

// Dense subsidy sweep: the smallest subsidy at which the passive action is
// weakly preferred in s, from brute-force value iteration over both actions.
double sweep_index(const TransitionTensor& T, const RewardSpec& R, double gamma, int s,
                   double lo, double hi, double step) {
    const int S = T.num_states();
    for (double m = lo; m <= hi; m += step) {
        std::vector<double> v(S, 0.0), next(S);
        for (int it = 0; it < 2000; ++it) {
            for (int x = 0; x < S; ++x) {
                double best = -1e300;
                for (int a = 0; a < 2; ++a) {
                    double q = R(x, a) + (a == 0 ? m : 0.0);
                    for (int n = 0; n < S; ++n)
                        q += gamma * T(x, a, n) * v[n];
                    best = std::max(best, q);
                }
                next[x] = best;
            }
            v.swap(next);
        }
        double q[2];
        for (int a = 0; a < 2; ++a) {
            q[a] = R(s, a) + (a == 0 ? m : 0.0);
            for (int n = 0; n < S; ++n)
                q[a] += gamma * T(s, a, n) * v[n];
        }
        if (q[0] >= q[1])
            return m;
    }
    return hi;
}

} // namespace

TEST_CASE("enumerate_policies counts and bit patterns") {
    CHECK(enumerate_policies(1).size() == 2);
    const auto two = enumerate_policies(2);
    REQUIRE(two.size() == 4);
    for (std::uint32_t j = 0; j < 4; ++j) {
        CHECK(two[j].index == j);
        CHECK(two[j].action(0) == static_cast<int>(j & 1U));
        CHECK(two[j].action(1) == static_cast<int>((j >> 1) & 1U));
    }
    CHECK(enumerate_policies(5).size() == 32);
    CHECK_THROWS_AS(enumerate_policies(0), CapacityError);
    CHECK_THROWS_AS(enumerate_policies(13), CapacityError);
}

TEST_CASE("get_returns matches closed forms") {
    const RewardSpec R = RewardSpec::engagement(2);
    // self-loop at state 1 under any action
    const auto loop = oracle::matrices({1, 0, 0, 1}, {1, 0, 0, 1});
    CHECK(get_returns(loop, R, PerArmPolicy::never_act(), DiscountedSetup::starting_in(2, 1, 0.5)) ==
          doctest::Approx(2.0).epsilon(1e-12));
    CHECK(get_returns(oracle::cheap_tensor(), R, kActInZero,
                      DiscountedSetup::starting_in(2, 0, 0.9)) ==
          doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("get_returns agrees with value iteration on random arms") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int S = oracle::uniform_int(rng, 1, 8);
        const auto T = oracle::random_tensor(S, rng);
        const double gamma = oracle::uniform(rng, 0.1, 0.95);
        const DiscountedSetup setup = DiscountedSetup::uniform(S, gamma);
        const RewardSpec R = RewardSpec::engagement(S);
        const PerArmPolicy pi{static_cast<std::uint32_t>(rng() % (1U << S))};
        CHECK(std::abs(get_returns(T, R, pi, setup) - oracle::vi_returns(T, R, pi, setup)) <=
              1e-8);
        CHECK(std::abs(get_budget_usage(T, pi, setup) -
                       oracle::vi_returns(T, RewardSpec::budget(), pi, setup)) <= 1e-8);
    }
}

TEST_CASE("get_budget_usage examples") {
    const double gamma = 0.9;
    const auto start0 = DiscountedSetup::starting_in(2, 0, gamma);
    CHECK(get_budget_usage(oracle::sink_tensor(), kActInZero, start0) ==
          doctest::Approx(1.0 / (1.0 - gamma)).epsilon(1e-12));
    CHECK(get_budget_usage(oracle::good_tensor(), kActInZero, start0) ==
          doctest::Approx(1.0 / (1.0 - gamma * gamma)).epsilon(1e-12));

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int S = oracle::uniform_int(rng, 1, 6);
        const auto T = oracle::random_tensor(S, rng);
        const double g = oracle::uniform(rng, 0.1, 0.95);
        DiscountedSetup setup = DiscountedSetup::uniform(S, g);
        CHECK(get_budget_usage(T, PerArmPolicy::never_act(), setup) == 0.0);
        CHECK(get_budget_usage(T, PerArmPolicy::always_act(S), setup) ==
              doctest::Approx(1.0 / (1.0 - g)).epsilon(1e-10));
    }
}

TEST_CASE("get_returns rejects gamma at one") {
    DiscountedSetup setup = DiscountedSetup::uniform(2, 1.0);
    CHECK_THROWS_AS(get_returns(oracle::good_tensor(), RewardSpec::engagement(2), kActInZero, setup),
                    Error);
}

TEST_CASE("returns_gradient matches finite differences") {
    Rng rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto T = oracle::random_tensor(2, rng, 0.05);
        const RewardSpec R = RewardSpec::engagement(2);
        const DiscountedSetup setup = DiscountedSetup::uniform(2, 0.9);
        const PerArmPolicy pi{static_cast<std::uint32_t>(trial % 4)};
        const auto g = returns_gradient(T, R, pi, setup);
        std::vector<double> x(T.data().begin(), T.data().end());
        const auto fd = oracle::central_difference(
            [&](std::vector<double>& p) {
                TransitionTensor U(2);
                std::copy(p.begin(), p.end(), U.data().begin());
                return oracle::vi_returns(U, R, pi, setup);
            },
            x, 1e-6);
        worst = std::max(worst, oracle::relative_error(g, fd));
        for (int s = 0; s < 2; ++s)
            for (int n = 0; n < 2; ++n)
                CHECK(g[T.offset(s, 1 - pi.action(s), n)] == 0.0);
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("returns_gradient of a one-state self loop") {
    const double gamma = 0.8, p = 1.0;
    TransitionTensor T(1, {1.0, 1.0});
    RewardSpec R{RewardKind::Engagement, {0.7}};
    const auto g = returns_gradient(T, R, PerArmPolicy::never_act(),
                                    DiscountedSetup::uniform(1, gamma));
    // d/dp R / (1 - gamma p)
    CHECK(g[0] == doctest::Approx(0.7 * gamma / std::pow(1.0 - gamma * p, 2)).epsilon(1e-10));
    CHECK(g[1] == 0.0);
}

TEST_CASE("whittle_index examples") {
    const RewardSpec R = RewardSpec::engagement(2);
    const auto setup = DiscountedSetup::starting_in(2, 0, 0.9);
    const auto cheap = whittle_index(oracle::cheap_tensor(), R, setup);
    CHECK(cheap.wi[0] == doctest::Approx(9.0).epsilon(1e-6));
    CHECK(std::abs(cheap.wi[1]) <= 1e-6);
    const auto sink = whittle_index(oracle::sink_tensor(), R, setup);
    CHECK(std::abs(sink.wi[0]) <= 1e-6);
    CHECK(std::abs(sink.wi[1]) <= 1e-6);
}

TEST_CASE("whittle_index matches a subsidy sweep") {
    Rng rng(17);
    const RewardSpec R = RewardSpec::engagement(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto T = oracle::random_tensor(2, rng);
        const double gamma = 0.9;
        const auto table = whittle_index(T, R, DiscountedSetup::uniform(2, gamma));
        for (int s = 0; s < 2; ++s) {
            // coarse pass then a 1e-4 pass around it
            const double coarse = sweep_index(T, R, gamma, s, -10.0, 10.0, 1e-2);
            const double fine = sweep_index(T, R, gamma, s, coarse - 2e-2, coarse + 1e-2, 1e-4);
            CHECK(std::abs(table.wi[s] - fine) <= 1e-3);
        }
    }
}

TEST_CASE("whittle index is zero where the action has no effect") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int S = oracle::uniform_int(rng, 2, 4);
        auto T = oracle::random_tensor(S, rng);
        const int s = oracle::uniform_int(rng, 0, S - 1);
        for (int n = 0; n < S; ++n)
            T(s, 1, n) = T(s, 0, n);
        const auto table =
            whittle_index(T, RewardSpec::engagement(S), DiscountedSetup::uniform(S, 0.9));
        CHECK(std::abs(table.wi[s]) <= 1e-6);
    }
}

TEST_CASE("whittle_index_gradient matches finite differences") {
    Rng rng(29);
    const RewardSpec R = RewardSpec::engagement(2);
    const auto setup = DiscountedSetup::uniform(2, 0.9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto T = oracle::random_tensor(2, rng, 0.1);
        const auto table = whittle_index(T, R, setup, {1e-12, 400});
        const auto grads = whittle_index_gradient(T, R, setup, table);
        std::vector<double> x(T.data().begin(), T.data().end());
        for (int s = 0; s < 2; ++s) {
            const auto fd = oracle::central_difference(
                [&](std::vector<double>& p) {
                    TransitionTensor U(2);
                    std::copy(p.begin(), p.end(), U.data().begin());
                    return whittle_index(U, R, setup, {1e-12, 400}).wi[s];
                },
                x, 1e-5);
            CHECK(oracle::relative_error(grads[s], fd, 1e-3) <= 1e-3);
        }
    }
}
