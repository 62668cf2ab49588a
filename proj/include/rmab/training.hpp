#pragma once

// Gradient training of predictive models and decision-quality evaluation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rmab/datasets.hpp"
#include "rmab/dec_layer.hpp"
#include "rmab/losses.hpp"
#include "rmab/model.hpp"

namespace rmab {

enum class LossKind { MSE, NLL, SimDFL, DecDFL, FastDecDFL };

std::string loss_name(LossKind kind);
LossKind parse_loss(const std::string& name);
/// Decision-quality losses are maximized; MSE and NLL are minimized.
bool is_decision_loss(LossKind kind);

struct TrainingConfig {
    LossKind loss = LossKind::FastDecDFL;
    double learning_rate = 1e-2;
    RegularizerConfig reg; // layer regularizer used by the DEC-DFL losses
    int epochs = 50;
    int patience = 10;
    std::uint64_t seed = 0;
    std::string capacity = "small";
    SimDflOptions sim;
    double epsilon = 1e-6;
    /// Regularization weight of the layer used for decomposed DQ on the
    /// validation and test splits, independent of the training alpha.
    double eval_alpha = 0.1;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double validation = 0.0; // objective used for model selection
    double validation_decomposed_dq = 0.0; // normalized
    double seconds = 0.0;
};

struct TrainResult {
    TrainingConfig config;
    ModelParams model; // parameters of the best validation epoch
    std::vector<EpochRecord> log;
    int best_epoch = 0;
    double best_validation = 0.0;
};

/// Trains one configuration with Adam, one step per training cohort per
/// epoch (cohorts visited in a seeded random order), stopping early when the
/// validation objective has not improved for `patience` epochs.
TrainResult train(const TrainingConfig& config, const Dataset& data);

struct GridResult {
    std::vector<TrainResult> runs;
    std::size_t best = 0;
};

/// Trains every (learning rate, alpha) pair and selects the best validation
/// objective. Runs use up to `jobs` threads.
GridResult train_grid(const TrainingConfig& base, const std::vector<double>& learning_rates,
                      const std::vector<double>& alphas, const Dataset& data, int jobs = 1);

/// Line-delimited JSON: one record per (epoch, split) with loss name, value
/// and wall-clock seconds.
std::string training_log_jsonl(const TrainResult& result);

struct EvalOptions {
    int trajectories = 1000;
    double alpha = 0.1;
    double epsilon = 1e-6;
    std::uint64_t seed = 0;
    bool joint = true; // skip the Monte Carlo joint DQ when false
};

struct DQReport {
    double joint_dq = 0.0;
    double decomposed_dq = 0.0;
    double normalized_joint_dq = 0.0;
    double normalized_decomposed_dq = 0.0;
    double never_act_dq = 0.0;       // decomposed
    double perfect_dq = 0.0;         // decomposed
    double never_act_joint_dq = 0.0;
    double perfect_joint_dq = 0.0;
    bool joint_normalization_defined = true;
    bool decomposed_normalization_defined = true;
};

struct EvaluationResult {
    DQReport total;                    // normalized from summed raw values
    std::vector<DQReport> per_cohort;
};

/// Evaluates given predictions (one tensor list per cohort).
EvaluationResult evaluate_predictions(const std::vector<std::vector<TransitionTensor>>& pred,
                                      const std::vector<const Cohort*>& cohorts,
                                      const EvalOptions& opts);

EvaluationResult evaluate_dq(const ModelParams& model, const std::vector<const Cohort*>& cohorts,
                             const EvalOptions& opts);

/// (value - never) / (perfect - never); nullopt when the anchors coincide.
std::optional<double> normalize_dq(double value, double never, double perfect);

std::vector<const Cohort*> select_cohorts(const Dataset& data, const std::vector<int>& ids);

} // namespace rmab
