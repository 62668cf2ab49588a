#pragma once

// Command implementations behind the rmabdfl executable.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rmab/datasets.hpp"
#include "rmab/model.hpp"
#include "rmab/results.hpp"
#include "rmab/rng.hpp"
#include "rmab/training.hpp"

namespace rmab::app {

namespace fs = std::filesystem;

struct RunConfig {
    std::string command;
    fs::path dataset;
    fs::path out;
    fs::path results; // export input directory
    std::string kind; // export kind
    std::vector<std::string> losses{"fast-dec-dfl"};
    int trajectories = 100; // SIM-DFL rollouts per step
    std::vector<double> alphas{1.0};
    std::vector<double> learning_rates{1e-2, 1e-3};
    int epochs = 50;
    int patience = 10;
    std::vector<std::uint64_t> seeds{0};
    int jobs = 1;
    std::string capacity = "small";
    double epsilon = 1e-6;
    double eval_alpha = 0.1;
    int eval_trajectories = 1000;
    bool overwrite = false;
    int verbosity = 1;
    int repeats = 5; // bench
    std::vector<int> scaling_arms{100, 500, 2000};
    DatasetManifest manifest; // generate

    /// Flat JSON object of every field, for provenance next to the outputs.
    std::string to_json() const;
    /// Applies the fields present in a JSON object; unknown keys are errors.
    void apply_json(const std::string& text);
};

/// Directory used when --out is absent: $RMABDFL_OUTPUT_ROOT or "results".
fs::path default_output_root();

/// A trained model with the run that produced it.
struct SavedModel {
    ModelParams model;
    std::string loss; // result label, e.g. "sim-dfl-100"
    std::uint64_t seed = 0;
    double learning_rate = 0.0;
    double alpha = 0.0;
    int best_epoch = 0;
    double seconds_per_epoch = 0.0;
    std::string manifest_hash;
    std::string version;
};

std::string serialize_model(const SavedModel& saved);
SavedModel parse_model(const std::string& text);

/// Dataset name used in result rows: the file stem.
std::string dataset_name(const fs::path& path);

int cmd_generate(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_eval(const RunConfig& cfg, std::ostream& log);
int cmd_bench(const RunConfig& cfg, std::ostream& log);
int cmd_verify(const RunConfig& cfg, std::ostream& log);
int cmd_export(const RunConfig& cfg, std::ostream& log);

/// Tensor with independent Dirichlet(1) rows.
TransitionTensor random_tensor(int num_states, Rng& rng);

// ---- verification claims -------------------------------------------------

struct ClaimResult {
    std::string name;
    bool passed = false;
    std::vector<std::pair<std::string, double>> measured;
    std::string detail;
    double seconds = 0.0;
};

ClaimResult check_budget_overshoot();
ClaimResult check_spurious_minimum();
ClaimResult check_truthful_optimal(std::uint64_t seed, int cohorts = 100, int predictions = 20);
ClaimResult check_decomposed_joint_equivalence(std::uint64_t seed, int instances = 25);
ClaimResult check_forward_oracle(std::uint64_t seed, int instances = 100);
ClaimResult check_residual_monotonicity(std::uint64_t seed, int draws = 10000);

std::vector<ClaimResult> run_verification(std::uint64_t seed);

/// The Example-1 single-arm instance: prediction and truth.
struct SingleArmInstance {
    TransitionTensor pred;
    TransitionTensor truth;
};
SingleArmInstance overshoot_instance();

/// The two-arm counterexample cohort (truth = [good, bad]) and the
/// budget-cheap prediction used for both arms.
struct SpuriousInstance {
    Cohort cohort;
    TransitionTensor cheap;
};
SpuriousInstance spurious_instance();

// ---- benchmarking --------------------------------------------------------

struct EpochTiming {
    std::string loss;
    MeanSem seconds;
    double median = 0.0;
};

/// Times one training epoch of `loss` on the dataset, `repeats` times.
EpochTiming time_epoch(const TrainingConfig& base, const Dataset& data, int repeats);

struct ScalingTiming {
    int arms = 0;
    double forward_seconds = 0.0;  // median
    double backward_seconds = 0.0; // median
};

/// Median forward and backward wall time of the layer on a random |S| = 2
/// instance with `arms` arms.
ScalingTiming time_layer(int arms, int repeats, std::uint64_t seed);

// ---- export --------------------------------------------------------------

/// Rows: loss, seed, epoch, validation normalized decomposed DQ, read from
/// the log_*.jsonl files of a train output directory.
std::string dq_vs_epoch_csv(const fs::path& results_dir, const std::string& manifest_hash);

/// One row per arm of the given cohorts: true and predicted index of state 0
/// and whether top-B on the predicted indices selects the arm.
std::string wi_scatter_csv(const SavedModel& saved, const Dataset& data,
                           const std::vector<int>& cohort_ids);

} // namespace rmab::app
