#pragma once

// Feature -> transition-tensor predictors. The network emits one logit per
// (s, a, s') entry and each (s, a) row is normalized with a softmax, so every
// prediction is a valid tensor.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rmab/mdp.hpp"

namespace rmab {

enum class Architecture { Linear, MLP };

struct ModelSpec {
    Architecture arch = Architecture::Linear;
    int layers = 1;     // weight layers; Linear uses exactly one
    int hidden_dim = 0; // width of the hidden ReLU layers
    int input_dim = 0;
    int num_states = 2;

    static ModelSpec linear(int input_dim, int num_states);
    static ModelSpec mlp(int input_dim, int num_states, int layers, int hidden_dim);
    /// Capacity presets: "small" (linear), "medium" (2 x 64), "large" (4 x 500).
    static ModelSpec preset(const std::string& name, int input_dim, int num_states);

    int output_dim() const { return num_states * kNumActions * num_states; }
    std::size_t num_parameters() const;
    void validate() const;
};

/// Activations kept from a forward pass for backpropagation.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs; // input to each weight layer (rows = arms)
    Eigen::MatrixXd probs;               // normalized outputs, rows = arms
};

class ModelParams {
  public:
    ModelParams() = default;
    /// All parameters zero.
    explicit ModelParams(ModelSpec spec);

    /// Weights ~ N(0, 1/fan_in) from the seed, biases zero.
    static ModelParams initialize(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    Eigen::VectorXd& theta() { return theta_; }
    const Eigen::VectorXd& theta() const { return theta_; }

    std::vector<TransitionTensor> predict(const std::vector<std::vector<double>>& features) const;
    std::vector<TransitionTensor> forward(const std::vector<std::vector<double>>& features,
                                          ForwardCache& cache) const;

    /// d loss / d theta given d loss / d (predicted tensor entries).
    Eigen::VectorXd backward(const ForwardCache& cache,
                             const std::vector<TransitionGrad>& grad_tensors) const;

  private:
    struct LayerView {
        Eigen::Map<const Eigen::MatrixXd> W; // (out x in), column-major
        Eigen::Map<const Eigen::VectorXd> b;
    };
    LayerView layer(int k) const;
    int layer_in(int k) const;
    int layer_out(int k) const;
    std::size_t layer_offset(int k) const;

    ModelSpec spec_;
    Eigen::VectorXd theta_;
};

} // namespace rmab
