#pragma once

// Synthetic cohorts, observed trajectories, smoothed transition estimates,
// and the on-disk dataset format.
//
// A dataset file is JSON lines: the first line is the manifest
// ({"format":"rmab-dataset","version":1,...}), followed by one line per
// cohort holding arm features, true tensors (row-major [s][a][s']) and
// trajectories. Reals are written with 17 significant digits.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rmab/mdp.hpp"
#include "rmab/planning.hpp"

namespace rmab {

/// One arm's observed sequence s0, a0, s1, a1, ..., sL.
struct ArmTrajectory {
    std::vector<int> states;  // length L + 1
    std::vector<int> actions; // length L
};

/// N(s, a, s') per arm, same layout as TransitionTensor.
using TransitionCounts = std::vector<double>;

struct TrajectoryData {
    int num_states = 2;
    std::vector<ArmTrajectory> arms;

    std::vector<TransitionCounts> counts() const;
    /// Pooled empirical transitions over all arms. Rows without any pooled
    /// observation are uniform.
    TransitionTensor pooled_prior() const;
    void validate() const;
};

/// Smoothed per-arm estimate
///   T_i(s,a,s') = (k P_pop(s'|s,a) + N_i(s,a,s')) / sum_x (k P_pop(x|s,a) + N_i(s,a,x))
/// with k = prior_strength.
std::vector<TransitionTensor> estimate_from_trajectories(const TrajectoryData& data,
                                                         double prior_strength,
                                                         const TransitionTensor& prior);
std::vector<TransitionTensor> estimate_from_trajectories(const TrajectoryData& data,
                                                         double prior_strength = 5.0);

/// State 1 iff the listen duration is strictly above `threshold`.
std::vector<int> discretize_engagement(std::span<const double> listen_seconds,
                                       double threshold = 30.0);

struct DatasetManifest {
    int cohorts = 100;
    int arms_per_cohort = 100;
    double budget = 10.0;
    int states = 2;
    double gamma = 0.9;
    int feature_dim = 16;
    std::uint64_t seed = 0;
    int train = 20;
    int validation = 20;
    int test = 60;
    int trajectory_length = 10;
    int feature_layers = 8;
    int feature_hidden = 1000;
    std::string feature_activation = "tanh";
    std::string feature_init = "normal(0, 1/fan_in)";
    std::string trajectory_actions = "uniform";
    std::string initial_state = "uniform";

    void validate() const;
    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct CohortRecord {
    Cohort cohort;
    TrajectoryData trajectories;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<CohortRecord> cohorts;
    std::vector<int> train;
    std::vector<int> validation;
    std::vector<int> test;
};

/// Deterministic in the manifest (seed included). Cohorts are generated
/// on up to `jobs` threads with per-cohort derived seeds.
Dataset generate_synthetic(const DatasetManifest& manifest, int jobs = 1);

/// Splits a permutation of cohort ids (drawn from the seed) into train /
/// validation / test lists of the manifest's sizes.
void assign_splits(Dataset& data);

std::string serialize_dataset(const Dataset& data);
Dataset parse_dataset(const std::string& text);

/// Atomic write (temporary file + rename).
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// FNV-1a hash of the serialized manifest line, as 16 hex digits.
std::string manifest_hash(const DatasetManifest& manifest);

} // namespace rmab
