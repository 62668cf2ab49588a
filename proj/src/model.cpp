#include "rmab/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "rmab/errors.hpp"
#include "rmab/rng.hpp"

namespace rmab {

ModelSpec ModelSpec::linear(int input_dim, int num_states) {
    return {Architecture::Linear, 1, 0, input_dim, num_states};
}

ModelSpec ModelSpec::mlp(int input_dim, int num_states, int layers, int hidden_dim) {
    return {Architecture::MLP, layers, hidden_dim, input_dim, num_states};
}

ModelSpec ModelSpec::preset(const std::string& name, int input_dim, int num_states) {
    if (name == "small" || name == "linear")
        return linear(input_dim, num_states);
    if (name == "medium")
        return mlp(input_dim, num_states, 2, 64);
    if (name == "large")
        return mlp(input_dim, num_states, 4, 500);
    throw InputError(fmt::format("unknown model capacity '{}'", name));
}

void ModelSpec::validate() const {
    if (input_dim < 1)
        throw InputError("model input dimension must be positive");
    if (num_states < 1 || num_states > kMaxStates)
        throw CapacityError(fmt::format("{} states outside supported range", num_states));
    if (arch == Architecture::Linear && layers != 1)
        throw InputError("a linear model has exactly one weight layer");
    if (arch == Architecture::MLP && (layers < 2 || hidden_dim < 1))
        throw InputError("an MLP needs at least two layers and a positive hidden width");
}

std::size_t ModelSpec::num_parameters() const {
    std::size_t total = 0;
    int in = input_dim;
    for (int k = 0; k < layers; ++k) {
        const int out = k + 1 == layers ? output_dim() : hidden_dim;
        total += static_cast<std::size_t>(out) * (in + 1);
        in = out;
    }
    return total;
}

ModelParams::ModelParams(ModelSpec spec)
    : spec_(spec), theta_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.num_parameters()))) {
    spec_.validate();
}

ModelParams ModelParams::initialize(const ModelSpec& spec, std::uint64_t seed) {
    ModelParams m(spec);
    Rng rng(derive_seed(seed, stream::kModelInit));
    for (int k = 0; k < spec.layers; ++k) {
        const std::size_t off = m.layer_offset(k);
        const int in = m.layer_in(k);
        const std::size_t weights = static_cast<std::size_t>(m.layer_out(k)) * in;
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (std::size_t w = 0; w < weights; ++w)
            m.theta_(static_cast<Eigen::Index>(off + w)) = scale * standard_normal(rng);
    }
    return m;
}

int ModelParams::layer_in(int k) const { return k == 0 ? spec_.input_dim : spec_.hidden_dim; }

int ModelParams::layer_out(int k) const {
    return k + 1 == spec_.layers ? spec_.output_dim() : spec_.hidden_dim;
}

std::size_t ModelParams::layer_offset(int k) const {
    std::size_t off = 0;
    for (int j = 0; j < k; ++j)
        off += static_cast<std::size_t>(layer_out(j)) * (layer_in(j) + 1);
    return off;
}

ModelParams::LayerView ModelParams::layer(int k) const {
    const double* base = theta_.data() + layer_offset(k);
    const int in = layer_in(k);
    const int out = layer_out(k);
    return {Eigen::Map<const Eigen::MatrixXd>(base, out, in),
            Eigen::Map<const Eigen::VectorXd>(base + static_cast<std::size_t>(out) * in, out)};
}

std::vector<TransitionTensor> ModelParams::predict(
    const std::vector<std::vector<double>>& features) const {
    ForwardCache cache;
    return forward(features, cache);
}

std::vector<TransitionTensor> ModelParams::forward(
    const std::vector<std::vector<double>>& features, ForwardCache& cache) const {
    const int N = static_cast<int>(features.size());
    Eigen::MatrixXd h(N, spec_.input_dim);
    for (int i = 0; i < N; ++i) {
        if (static_cast<int>(features[i].size()) != spec_.input_dim)
            throw InputError(fmt::format("arm {} has {} features, model expects {}", i,
                                         features[i].size(), spec_.input_dim));
        for (int f = 0; f < spec_.input_dim; ++f)
            h(i, f) = features[i][f];
    }
    cache.inputs.clear();
    for (int k = 0; k < spec_.layers; ++k) {
        const LayerView L = layer(k);
        cache.inputs.push_back(h);
        Eigen::MatrixXd z = h * L.W.transpose();
        z.rowwise() += L.b.transpose();
        if (k + 1 < spec_.layers)
            z = z.cwiseMax(0.0);
        h = std::move(z);
    }

    const int S = spec_.num_states;
    cache.probs.resize(N, spec_.output_dim());
    std::vector<TransitionTensor> out;
    out.reserve(N);
    for (int i = 0; i < N; ++i) {
        TransitionTensor T(S);
        for (int r = 0; r < S * kNumActions; ++r) {
            const auto logits = h.row(i).segment(r * S, S);
            const double peak = logits.maxCoeff();
            double total = 0.0;
            for (int n = 0; n < S; ++n)
                total += std::exp(logits(n) - peak);
            for (int n = 0; n < S; ++n) {
                const double p = std::exp(logits(n) - peak) / total;
                T.data()[static_cast<std::size_t>(r * S + n)] = p;
                cache.probs(i, r * S + n) = p;
            }
        }
        out.push_back(std::move(T));
    }
    return out;
}

Eigen::VectorXd ModelParams::backward(const ForwardCache& cache,
                                      const std::vector<TransitionGrad>& grad_tensors) const {
    const int N = static_cast<int>(cache.probs.rows());
    const int S = spec_.num_states;
    if (static_cast<int>(grad_tensors.size()) != N)
        throw InputError("one tensor gradient per arm is required");

    // softmax Jacobian per (s, a) row: dlogit = p * (g - <p, g>)
    Eigen::MatrixXd delta(N, spec_.output_dim());
    for (int i = 0; i < N; ++i) {
        if (static_cast<int>(grad_tensors[i].size()) != spec_.output_dim())
            throw InputError("tensor gradient has the wrong size");
        for (int r = 0; r < S * kNumActions; ++r) {
            double inner = 0.0;
            for (int n = 0; n < S; ++n)
                inner += cache.probs(i, r * S + n) * grad_tensors[i][r * S + n];
            for (int n = 0; n < S; ++n)
                delta(i, r * S + n) =
                    cache.probs(i, r * S + n) * (grad_tensors[i][r * S + n] - inner);
        }
    }

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta_.size());
    for (int k = spec_.layers - 1; k >= 0; --k) {
        const LayerView L = layer(k);
        const std::size_t off = layer_offset(k);
        const int in = layer_in(k);
        const int out = layer_out(k);
        Eigen::Map<Eigen::MatrixXd> dW(grad.data() + off, out, in);
        Eigen::Map<Eigen::VectorXd> db(grad.data() + off + static_cast<std::size_t>(out) * in,
                                       out);
        dW = delta.transpose() * cache.inputs[k];
        db = delta.colwise().sum().transpose();
        if (k > 0) {
            Eigen::MatrixXd back = delta * L.W;
            // ReLU: the cached input of layer k is the activated output of k-1
            delta = (cache.inputs[k].array() > 0.0).select(back, 0.0);
        }
    }
    return grad;
}

} // namespace rmab
