#pragma once

// Discrete-time spike response model network with rate decoding.
//
// Every layer is fully connected to the previous one. A neuron keeps a
// synaptic trace and a membrane potential, both first-order filters:
//
//   trace     <- beta_syn * trace + W * input
//   potential <- beta_mem * potential + trace - threshold * previous_spike
//   spike      = potential >= threshold
//
// The read-out layer spikes the same way; its spike counts are decoded into
// class confidences with a softmax.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spikecp/common.hpp"

namespace spikecp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Floor applied to confidences before taking the log-loss.
inline constexpr double kLossClamp = 1e-12;

struct NeuronParams {
    double beta_mem = 0.9;
    double beta_syn = 0.9;
    double threshold = 1.0;

    friend bool operator==(const NeuronParams&, const NeuronParams&) = default;
};

struct Architecture {
    /// [inputs, hidden..., classes]
    std::vector<std::size_t> layer_sizes;
    NeuronParams neuron;

    std::size_t num_layers() const { return layer_sizes.size() - 1; }
    std::size_t num_inputs() const { return layer_sizes.front(); }
    std::size_t num_classes() const { return layer_sizes.back(); }
    std::size_t fan_in(std::size_t layer) const { return layer_sizes[layer]; }
    std::size_t fan_out(std::size_t layer) const { return layer_sizes[layer + 1]; }

    std::size_t layer_offset(std::size_t layer) const {
        std::size_t off = 0;
        for (std::size_t l = 0; l < layer; ++l) off += fan_in(l) * fan_out(l);
        return off;
    }

    std::size_t weight_count() const { return layer_offset(num_layers()); }

    void validate() const {
        require(layer_sizes.size() >= 2, "architecture needs at least an input and an output layer");
        for (auto n : layer_sizes) require(n >= 1, "layer sizes must be positive");
        require(neuron.beta_mem > 0.0 && neuron.beta_mem < 1.0, "beta_mem must lie in (0,1)");
        require(neuron.beta_syn > 0.0 && neuron.beta_syn < 1.0, "beta_syn must lie in (0,1)");
        require(neuron.threshold > 0.0 && std::isfinite(neuron.threshold), "threshold must be positive");
    }

    /// Stable identifier of the layout and neuron constants.
    std::string hash() const {
        std::string key = "arch:v1";
        for (auto n : layer_sizes) key += ":" + std::to_string(n);
        key += ":" + format_double(neuron.beta_mem) + ":" + format_double(neuron.beta_syn) + ":" +
               format_double(neuron.threshold);
        return to_hex(fnv1a64(key));
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Synaptic weights of one network. Layer l is a row-major fan_out x fan_in
/// block starting at arch.layer_offset(l).
struct ModelParams {
    Architecture arch;
    std::vector<double> weights;

    ModelParams() = default;
    ModelParams(Architecture a, std::vector<double> w) : arch(std::move(a)), weights(std::move(w)) { validate(); }

    static ModelParams zeros(Architecture a) {
        auto n = a.weight_count();
        return ModelParams(std::move(a), std::vector<double>(n, 0.0));
    }

    void validate() const {
        arch.validate();
        require(weights.size() == arch.weight_count(), "weight vector length does not match architecture");
        for (double w : weights) require(std::isfinite(w), "weights must be finite");
    }

    Eigen::Map<const RowMatrix> layer(std::size_t l) const {
        return {weights.data() + arch.layer_offset(l), static_cast<Eigen::Index>(arch.fan_out(l)),
                static_cast<Eigen::Index>(arch.fan_in(l))};
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// One example: `steps` x `channels` samples, optionally labelled (0-based).
struct InputSequence {
    RowMatrix samples;
    std::optional<int> label;

    std::size_t steps() const { return static_cast<std::size_t>(samples.rows()); }
    std::size_t channels() const { return static_cast<std::size_t>(samples.cols()); }

    friend bool operator==(const InputSequence& a, const InputSequence& b) {
        return a.label == b.label && a.samples.rows() == b.samples.rows() &&
               a.samples.cols() == b.samples.cols() && a.samples == b.samples;
    }
};

struct LayerState {
    Vector trace;
    Vector potential;
    Vector spikes;

    explicit LayerState(std::size_t n = 0)
        : trace(Vector::Zero(static_cast<Eigen::Index>(n))),
          potential(Vector::Zero(static_cast<Eigen::Index>(n))),
          spikes(Vector::Zero(static_cast<Eigen::Index>(n))) {}
};

/// Per-layer state of a whole network. Reset state is all zeros.
using NeuronState = std::vector<LayerState>;

inline NeuronState initial_state(const Architecture& arch) {
    NeuronState s;
    s.reserve(arch.num_layers());
    for (std::size_t l = 0; l < arch.num_layers(); ++l) s.emplace_back(arch.fan_out(l));
    return s;
}

/// Advances one layer by one step; `state.spikes` holds the emitted spikes.
template <typename Input, typename Weights>
void srm_step(LayerState& state, const Input& input, const Weights& weights, const NeuronParams& neuron) {
    if (weights.cols() != input.size() || weights.rows() != state.potential.size())
        throw ContractError("srm_step: input length " + std::to_string(input.size()) +
                            " does not match layer fan-in " + std::to_string(weights.cols()));
    state.trace = neuron.beta_syn * state.trace + weights * input;
    state.potential = neuron.beta_mem * state.potential + state.trace - neuron.threshold * state.spikes;
    state.spikes = (state.potential.array() >= neuron.threshold).cast<double>().matrix();
}

/// Column sums of a binary T' x C spike raster.
inline std::vector<std::uint32_t> spike_count(const RowMatrix& raster) {
    std::vector<std::uint32_t> counts(static_cast<std::size_t>(raster.cols()), 0);
    for (Eigen::Index t = 0; t < raster.rows(); ++t)
        for (Eigen::Index c = 0; c < raster.cols(); ++c) {
            double y = raster(t, c);
            require(y == 0.0 || y == 1.0, "spike raster entries must be 0 or 1");
            counts[static_cast<std::size_t>(c)] += y == 1.0 ? 1u : 0u;
        }
    return counts;
}

/// Softmax with max-subtraction.
inline std::vector<double> confidence(std::span<const double> r) {
    std::vector<double> f(r.size());
    if (r.empty()) return f;
    double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t c = 0; c < r.size(); ++c) z += (f[c] = std::exp(r[c] - m));
    for (double& v : f) v /= z;
    return f;
}

inline std::vector<double> confidence(std::span<const std::uint32_t> counts) {
    std::vector<double> r(counts.begin(), counts.end());
    return confidence(std::span<const double>(r));
}

inline double log_loss(double f) { return -std::log(std::clamp(f, kLossClamp, 1.0)); }

inline double log_loss(std::span<const double> f, std::size_t c) {
    require(c < f.size(), "log_loss: class index out of range");
    return log_loss(f[c]);
}

struct CheckpointScore {
    int time = 0;
    std::vector<std::uint32_t> counts;
    std::vector<double> confidence;
    std::vector<double> loss;

    friend bool operator==(const CheckpointScore&, const CheckpointScore&) = default;
};

/// Scores of one example under one model at each requested checkpoint.
struct ScoreTrace {
    std::vector<CheckpointScore> entries;

    std::size_t size() const { return entries.size(); }
    const CheckpointScore& operator[](std::size_t i) const { return entries[i]; }

    friend bool operator==(const ScoreTrace&, const ScoreTrace&) = default;
};

inline void validate_checkpoints(std::span<const int> checkpoints, std::size_t horizon) {
    require(!checkpoints.empty(), "checkpoint set must be non-empty");
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        require(checkpoints[i] >= 1, "checkpoints are 1-based time steps");
        if (i > 0) require(checkpoints[i] > checkpoints[i - 1], "checkpoints must be strictly increasing");
    }
    if (static_cast<std::size_t>(checkpoints.back()) > horizon)
        throw ContractError("checkpoint " + std::to_string(checkpoints.back()) + " exceeds sequence length " +
                            std::to_string(horizon));
}

inline CheckpointScore score_counts(int time, std::vector<std::uint32_t> counts) {
    CheckpointScore s;
    s.time = time;
    s.confidence = confidence(std::span<const std::uint32_t>(counts));
    s.loss.resize(s.confidence.size());
    for (std::size_t c = 0; c < s.loss.size(); ++c) s.loss[c] = log_loss(s.confidence[c]);
    s.counts = std::move(counts);
    return s;
}

/// Simulates the network once up to the last checkpoint and records
/// counts, confidences and losses at every checkpoint on the way.
inline ScoreTrace forward(const InputSequence& x, const ModelParams& model, std::span<const int> checkpoints) {
    const auto& arch = model.arch;
    require(x.channels() == arch.num_inputs(), "input channel count does not match architecture");
    validate_checkpoints(checkpoints, x.steps());

    NeuronState state = initial_state(arch);
    std::vector<Eigen::Map<const RowMatrix>> layers;
    layers.reserve(arch.num_layers());
    for (std::size_t l = 0; l < arch.num_layers(); ++l) layers.push_back(model.layer(l));

    std::vector<std::uint32_t> counts(arch.num_classes(), 0);
    ScoreTrace trace;
    trace.entries.reserve(checkpoints.size());
    std::size_t next = 0;
    const int last = checkpoints.back();
    for (int t = 1; t <= last; ++t) {
        Vector input = x.samples.row(t - 1).transpose();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (l == 0)
                srm_step(state[0], input, layers[0], arch.neuron);
            else
                srm_step(state[l], state[l - 1].spikes, layers[l], arch.neuron);
        }
        const Vector& out = state.back().spikes;
        for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += out[static_cast<Eigen::Index>(c)] != 0.0;
        if (t == checkpoints[next]) {
            trace.entries.push_back(score_counts(t, counts));
            ++next;
        }
    }
    return trace;
}

inline std::vector<int> every_step(int horizon) {
    std::vector<int> ts(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) ts[static_cast<std::size_t>(t)] = t + 1;
    return ts;
}

}  // namespace spikecp
