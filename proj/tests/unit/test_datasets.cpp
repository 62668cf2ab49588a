#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "rmab/datasets.hpp"
#include "rmab/errors.hpp"
#include "rmab/io.hpp"

using namespace rmab;
namespace fs = std::filesystem;

namespace {

DatasetManifest tiny_manifest(std::uint64_t seed) {
    DatasetManifest m;
    m.cohorts = 5;
    m.train = 1;
    m.validation = 1;
    m.test = 3;
    m.arms_per_cohort = 6;
    m.budget = 2.0;
    m.feature_layers = 2;
    m.feature_hidden = 16;
    m.seed = seed;
    return m;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("rmab_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("estimate_from_trajectories hand arithmetic") {
    TransitionTensor prior = oracle::matrices({.5, .5, .5, .5}, {.5, .5, .5, .5});
    TrajectoryData data;
    data.num_states = 2;
    // acting throughout: three 0 -> 1 transitions and two 1 -> 0
    data.arms = {{{0, 1, 0, 1, 0, 1}, {1, 1, 1, 1, 1}}};
    const auto est = estimate_from_trajectories(data, 5.0, prior);
    CHECK(est[0](0, 1, 1) == doctest::Approx(0.6875).epsilon(1e-14));
    CHECK(est[0](0, 1, 0) == doctest::Approx(0.3125).epsilon(1e-14));
}

TEST_CASE("estimate_from_trajectories reduces to the prior") {
    Rng rng(1);
    const TransitionTensor prior = oracle::random_tensor(2, rng);
    TrajectoryData data;
    data.num_states = 2;
    data.arms = {{{0}, {}}, {{1, 0}, {1}}};
    const auto est = estimate_from_trajectories(data, 5.0, prior);
    for (std::size_t k = 0; k < prior.size(); ++k)
        CHECK(est[0].data()[k] == doctest::Approx(prior.data()[k]).epsilon(1e-15));
    const auto far = estimate_from_trajectories(data, 1e12, prior);
    for (std::size_t k = 0; k < prior.size(); ++k)
        CHECK(far[1].data()[k] == doctest::Approx(prior.data()[k]).epsilon(1e-9));
    CHECK_THROWS_AS(estimate_from_trajectories(data, -1.0, prior), InputError);
}

TEST_CASE("estimate_from_trajectories always yields valid tensors") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        TrajectoryData data;
        data.num_states = oracle::uniform_int(rng, 2, 4);
        for (int i = 0; i < 5; ++i) {
            ArmTrajectory t;
            t.states.push_back(oracle::uniform_int(rng, 0, data.num_states - 1));
            const int L = oracle::uniform_int(rng, 0, 8);
            for (int k = 0; k < L; ++k) {
                t.actions.push_back(oracle::uniform_int(rng, 0, 1));
                t.states.push_back(oracle::uniform_int(rng, 0, data.num_states - 1));
            }
            data.arms.push_back(t);
        }
        for (const auto& T : estimate_from_trajectories(data, oracle::uniform(rng, 0.1, 10.0)))
            CHECK(T.is_valid());
    }
}

TEST_CASE("discretize_engagement") {
    const std::vector<double> listens{45, 10, 31};
    CHECK(discretize_engagement(listens) == std::vector<int>{1, 0, 1});
    const std::vector<double> boundary{30};
    CHECK(discretize_engagement(boundary) == std::vector<int>{0});
    CHECK(discretize_engagement(std::vector<double>{}).empty());
    const std::vector<double> negative{-1};
    CHECK_THROWS_AS(discretize_engagement(negative), InputError);
    CHECK_THROWS_AS(discretize_engagement(listens, 0.0), InputError);
}

TEST_CASE("default manifest matches the synthetic setting") {
    const DatasetManifest m;
    CHECK(m.cohorts == 100);
    CHECK(m.arms_per_cohort == 100);
    CHECK(m.budget == 10.0);
    CHECK(m.trajectory_length == 10);
    CHECK(m.train == 20);
    CHECK(m.validation == 20);
    CHECK(m.test == 60);
    CHECK(m.feature_layers == 8);
    CHECK(m.feature_hidden == 1000);
}

TEST_CASE("generate_synthetic produces valid, split, deterministic data") {
    const auto m = tiny_manifest(3);
    const Dataset a = generate_synthetic(m, 1);
    const Dataset b = generate_synthetic(m, 3);
    CHECK(serialize_dataset(a) == serialize_dataset(b));
    REQUIRE(a.cohorts.size() == 5);
    for (const auto& rec : a.cohorts) {
        CHECK(rec.cohort.num_arms() == 6);
        for (const Arm& arm : rec.cohort.arms) {
            CHECK(arm.truth.is_valid(1e-9));
            CHECK(static_cast<int>(arm.features.size()) == m.feature_dim);
        }
        for (const auto& t : rec.trajectories.arms)
            CHECK(t.actions.size() == static_cast<std::size_t>(m.trajectory_length));
    }
    std::vector<int> all;
    for (const auto* split : {&a.train, &a.validation, &a.test})
        all.insert(all.end(), split->begin(), split->end());
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(a.train.size() == 1);
    CHECK(a.test.size() == 3);

    const Dataset other = generate_synthetic(tiny_manifest(4));
    CHECK(serialize_dataset(other) != serialize_dataset(a));
}

TEST_CASE("dataset files round-trip exactly") {
    const fs::path dir = scratch_dir("roundtrip");
    const Dataset a = generate_synthetic(tiny_manifest(5));
    write_dataset(a, dir / "a.jsonl");
    const Dataset b = read_dataset(dir / "a.jsonl");
    CHECK(b.manifest == a.manifest);
    CHECK(b.train == a.train);
    CHECK(b.test == a.test);
    for (std::size_t c = 0; c < a.cohorts.size(); ++c)
        for (std::size_t i = 0; i < a.cohorts[c].cohort.arms.size(); ++i) {
            CHECK(b.cohorts[c].cohort.arms[i].truth == a.cohorts[c].cohort.arms[i].truth);
            CHECK(b.cohorts[c].cohort.arms[i].features == a.cohorts[c].cohort.arms[i].features);
            CHECK(b.cohorts[c].trajectories.arms[i].states == a.cohorts[c].trajectories.arms[i].states);
            CHECK(b.cohorts[c].trajectories.arms[i].actions ==
                  a.cohorts[c].trajectories.arms[i].actions);
        }
    write_dataset(b, dir / "b.jsonl");
    CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
    CHECK(manifest_hash(a.manifest) == manifest_hash(b.manifest));
    CHECK(manifest_hash(a.manifest).size() == 16);
    fs::remove_all(dir);
}

TEST_CASE("parse_dataset rejects malformed input") {
    CHECK_THROWS_AS(parse_dataset("not json"), InputError);
    CHECK_THROWS_AS(parse_dataset("{\"format\":\"other\"}"), InputError);
    CHECK_THROWS_AS(read_dataset("/nonexistent/rmab/data.jsonl"), Error);
}

TEST_CASE("manifest validation") {
    DatasetManifest m = tiny_manifest(0);
    m.test = 10;
    CHECK_THROWS_AS(m.validate(), InputError);
    m = tiny_manifest(0);
    m.budget = 100;
    CHECK_THROWS_AS(m.validate(), InputError);
}
