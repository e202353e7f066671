#pragma once

// Surrogate-gradient training of spiking networks, deep ensembles and
// mean-field variational inference with the reparameterization trick.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "spikecp/common.hpp"
#include "spikecp/snn.hpp"

namespace spikecp {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    /// Slope of the sigmoid whose derivative replaces the spike derivative.
    double surrogate_slope = 5.0;
    /// Variance of the Gaussian initialization, also the prior variance of VI.
    double init_variance = 0.03;
    /// Initial posterior standard deviation for VI, as a fraction of sqrt(init_variance).
    double posterior_init_scale = 0.25;
    std::uint64_t seed = 0;

    void validate() const {
        require(batch_size >= 1, "batch_size must be positive");
        require(learning_rate > 0.0, "learning_rate must be positive");
        require(surrogate_slope > 0.0, "surrogate_slope must be positive");
        require(init_variance > 0.0, "init_variance must be positive");
        require(posterior_init_scale > 0.0, "posterior_init_scale must be positive");
    }
};

/// How spikes are produced when differentiating the network.
enum class SpikeMode {
    /// Heaviside forward, sigmoid-derivative backward (surrogate gradient).
    hard,
    /// Sigmoid forward and backward; the gradient is exact for this relaxation.
    smooth,
};

namespace detail {

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline void check_dataset(std::span<const InputSequence> data, const Architecture& arch) {
    if (data.empty()) throw TrainingError("training set is empty");
    std::vector<std::size_t> per_class(arch.num_classes(), 0);
    for (const auto& x : data) {
        require(x.label.has_value(), "training examples must be labelled");
        require(*x.label >= 0 && static_cast<std::size_t>(*x.label) < arch.num_classes(),
                "training label out of range");
        require(x.channels() == arch.num_inputs(), "training example channel count does not match architecture");
        require(x.steps() >= 1, "training example has no time steps");
        ++per_class[static_cast<std::size_t>(*x.label)];
    }
    for (std::size_t c = 0; c < per_class.size(); ++c)
        require(per_class[c] > 0, "training set has no example of class " + std::to_string(c));
}

}  // namespace detail

/// Cross-entropy of softmax(spike counts at the final step) for one labelled
/// sequence. Adds d(loss)/d(weights) into `grad` and returns the loss.
inline double sequence_loss_gradient(std::span<const double> weights, const Architecture& arch,
                                     const InputSequence& x, int label, SpikeMode mode, double slope,
                                     std::span<double> grad) {
    const std::size_t L = arch.num_layers();
    const auto T = static_cast<Eigen::Index>(x.steps());
    const auto& nrn = arch.neuron;

    std::vector<Eigen::Map<const RowMatrix>> W;
    std::vector<Eigen::Map<RowMatrix>> G;
    for (std::size_t l = 0; l < L; ++l) {
        auto rows = static_cast<Eigen::Index>(arch.fan_out(l));
        auto cols = static_cast<Eigen::Index>(arch.fan_in(l));
        W.emplace_back(weights.data() + arch.layer_offset(l), rows, cols);
        G.emplace_back(grad.data() + arch.layer_offset(l), rows, cols);
    }

    auto fire = [&](double v) {
        return mode == SpikeMode::hard ? (v >= nrn.threshold ? 1.0 : 0.0)
                                       : detail::sigmoid(slope * (v - nrn.threshold));
    };
    auto fire_grad = [&](double v) {
        double s = detail::sigmoid(slope * (v - nrn.threshold));
        return slope * s * (1.0 - s);
    };

    std::vector<RowMatrix> pot(L), spk(L);
    NeuronState state = initial_state(arch);
    for (std::size_t l = 0; l < L; ++l) {
        pot[l].resize(T, static_cast<Eigen::Index>(arch.fan_out(l)));
        spk[l].resize(T, static_cast<Eigen::Index>(arch.fan_out(l)));
    }
    for (Eigen::Index t = 0; t < T; ++t) {
        for (std::size_t l = 0; l < L; ++l) {
            auto& st = state[l];
            if (l == 0)
                st.trace = nrn.beta_syn * st.trace + W[0] * x.samples.row(t).transpose();
            else
                st.trace = nrn.beta_syn * st.trace + W[l] * state[l - 1].spikes;
            st.potential = nrn.beta_mem * st.potential + st.trace - nrn.threshold * st.spikes;
            st.spikes = st.potential.unaryExpr(fire);
            pot[l].row(t) = st.potential.transpose();
            spk[l].row(t) = st.spikes.transpose();
        }
    }

    Vector counts = spk[L - 1].colwise().sum().transpose();
    double m = counts.maxCoeff();
    Vector e = (counts.array() - m).exp().matrix();
    double z = e.sum();
    double loss = std::log(z) + m - counts[label];
    Vector dcounts = e / z;
    dcounts[label] -= 1.0;

    std::vector<Vector> gv_next, ga_next;
    for (std::size_t l = 0; l < L; ++l) {
        gv_next.push_back(Vector::Zero(static_cast<Eigen::Index>(arch.fan_out(l))));
        ga_next.push_back(Vector::Zero(static_cast<Eigen::Index>(arch.fan_out(l))));
    }
    Vector down;
    for (Eigen::Index t = T - 1; t >= 0; --t) {
        for (std::size_t l = L; l-- > 0;) {
            Vector gs = (l == L - 1 ? dcounts : down) - nrn.threshold * gv_next[l];
            Vector gv = gs.cwiseProduct(pot[l].row(t).transpose().unaryExpr(fire_grad)) + nrn.beta_mem * gv_next[l];
            Vector ga = gv + nrn.beta_syn * ga_next[l];
            if (l == 0)
                G[0].noalias() += ga * x.samples.row(t);
            else {
                G[l].noalias() += ga * spk[l - 1].row(t);
                down = W[l].transpose() * ga;
            }
            gv_next[l] = std::move(gv);
            ga_next[l] = std::move(ga);
        }
    }
    return loss;
}

/// Mean loss over `batch` with the mean gradient written into `grad`.
inline double batch_loss_gradient(std::span<const double> weights, const Architecture& arch,
                                  std::span<const InputSequence> data, std::span<const std::size_t> batch,
                                  SpikeMode mode, double slope, std::span<double> grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double total = 0.0;
    for (auto i : batch) total += sequence_loss_gradient(weights, arch, data[i], *data[i].label, mode, slope, grad);
    double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv;
    return total * inv;
}

/// Adaptive-moment optimizer.
class Adam {
public:
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad) {
        ++t_;
        double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

inline std::vector<double> gaussian_vector(std::size_t n, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(n);
    for (double& v : out) v = stddev * normal(rng);
    return out;
}

struct TrainResult {
    ModelParams model;
    /// Mean minibatch objective of each epoch.
    std::vector<double> epoch_losses;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    return batches;
}

// Hard spikes keep the loss finite even when weights blow up, so the
// updated parameters are checked as well.
inline void check_finite(double loss, std::span<const double> params, std::size_t epoch, std::size_t batch) {
    bool ok = std::isfinite(loss) && std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); });
    if (!ok)
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", minibatch " +
                            std::to_string(batch));
}

}  // namespace detail

/// Trains one network from a N(0, init_variance) initialization.
inline TrainResult train_single(std::span<const InputSequence> data, const Architecture& arch,
                                const TrainConfig& cfg) {
    arch.validate();
    cfg.validate();
    detail::check_dataset(data, arch);

    Rng rng = make_rng(cfg.seed);
    ModelParams model(arch, gaussian_vector(arch.weight_count(), std::sqrt(cfg.init_variance), rng));
    std::vector<double> grad(arch.weight_count());
    Adam adam(grad.size(), cfg.learning_rate);

    TrainResult result{std::move(model), {}};
    auto& w = result.model.weights;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = detail::epoch_batches(data.size(), cfg.batch_size, rng);
        double sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            double loss = batch_loss_gradient(w, arch, data, batches[b], SpikeMode::hard, cfg.surrogate_slope, grad);
            adam.step(w, grad);
            detail::check_finite(loss, w, epoch, b);
            sum += loss;
        }
        result.epoch_losses.push_back(sum / static_cast<double>(batches.size()));
    }
    return result;
}

enum class EnsembleKind { deep, variational };

inline std::string to_string(EnsembleKind k) { return k == EnsembleKind::deep ? "de" : "vi"; }

struct Ensemble {
    std::vector<ModelParams> members;
    EnsembleKind kind = EnsembleKind::deep;
    /// Seed each member was generated from.
    std::vector<std::uint64_t> seeds;

    std::size_t size() const { return members.size(); }
    const Architecture& arch() const { return members.front().arch; }

    void validate() const {
        require(!members.empty(), "ensemble must have at least one member");
        require(seeds.size() == members.size(), "ensemble needs one seed per member");
        for (const auto& m : members) {
            m.validate();
            require(m.arch == members.front().arch, "ensemble members must share one architecture");
        }
    }

    Ensemble prefix(std::size_t k) const {
        require(k >= 1 && k <= members.size(), "ensemble prefix size out of range");
        Ensemble e{{members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k)},
                   kind,
                   {seeds.begin(), seeds.begin() + static_cast<std::ptrdiff_t>(k)}};
        return e;
    }

    friend bool operator==(const Ensemble&, const Ensemble&) = default;
};

/// K independently initialized and trained members. Member 0 uses cfg.seed
/// and member k > 0 uses derive_seed(cfg.seed, k), so any member can be
/// reproduced on its own and a prefix of a larger ensemble is itself a valid
/// smaller ensemble.
inline Ensemble train_deep_ensemble(std::span<const InputSequence> data, const Architecture& arch,
                                    const TrainConfig& cfg, std::size_t k) {
    require(k >= 1, "ensemble size must be at least 1");
    Ensemble e;
    e.kind = EnsembleKind::deep;
    for (std::size_t i = 0; i < k; ++i) {
        TrainConfig member = cfg;
        member.seed = i == 0 ? cfg.seed : derive_seed(cfg.seed, i);
        e.members.push_back(train_single(data, arch, member).model);
        e.seeds.push_back(member.seed);
    }
    return e;
}

/// Factorized Gaussian N(mu, zeta^2) with zeta = softplus(rho).
struct VariationalPosterior {
    Architecture arch;
    std::vector<double> mu;
    std::vector<double> rho;

    std::vector<double> stddev() const {
        std::vector<double> z(rho.size());
        for (std::size_t i = 0; i < rho.size(); ++i) z[i] = detail::softplus(rho[i]);
        return z;
    }

    void validate() const {
        arch.validate();
        require(mu.size() == arch.weight_count() && rho.size() == arch.weight_count(),
                "posterior vectors do not match architecture");
        for (std::size_t i = 0; i < mu.size(); ++i)
            require(std::isfinite(mu[i]) && std::isfinite(rho[i]), "posterior parameters must be finite");
    }

    friend bool operator==(const VariationalPosterior&, const VariationalPosterior&) = default;
};

/// KL(N(mu, zeta^2) || N(0, prior_variance)) summed over coordinates.
inline double gaussian_kl(std::span<const double> mu, std::span<const double> zeta, double prior_variance) {
    double kl = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        double z2 = zeta[i] * zeta[i];
        kl += 0.5 * (std::log(prior_variance / z2) + (z2 + mu[i] * mu[i]) / prior_variance - 1.0);
    }
    return kl;
}

struct VariationalResult {
    VariationalPosterior posterior;
    /// Per-epoch mean of (minibatch cross-entropy + KL / dataset size).
    std::vector<double> epoch_objectives;
};

/// Minimizes the negative evidence lower bound with one reparameterized
/// sample per minibatch. The KL term is scaled by 1 / |data| so that a
/// minibatch objective is an unbiased per-example estimate.
inline VariationalResult train_vi(std::span<const InputSequence> data, const Architecture& arch,
                                  const TrainConfig& cfg) {
    arch.validate();
    cfg.validate();
    detail::check_dataset(data, arch);

    const std::size_t n = arch.weight_count();
    const double prior_sd = std::sqrt(cfg.init_variance);
    Rng rng = make_rng(cfg.seed);
    VariationalResult result;
    auto& post = result.posterior;
    post.arch = arch;
    post.mu = gaussian_vector(n, prior_sd, rng);
    post.rho.assign(n, detail::inverse_softplus(cfg.posterior_init_scale * prior_sd));

    // mu and rho are optimized jointly as one vector [mu, rho].
    std::vector<double> params(2 * n), grad(2 * n), wgrad(n), theta(n), eps(n), zeta(n);
    std::copy(post.mu.begin(), post.mu.end(), params.begin());
    std::copy(post.rho.begin(), post.rho.end(), params.begin() + static_cast<std::ptrdiff_t>(n));
    Adam adam(2 * n, cfg.learning_rate);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double kl_scale = 1.0 / static_cast<double>(data.size());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = detail::epoch_batches(data.size(), cfg.batch_size, rng);
        double sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            std::span<const double> mu(params.data(), n), rho(params.data() + n, n);
            for (std::size_t i = 0; i < n; ++i) {
                zeta[i] = detail::softplus(rho[i]);
                eps[i] = normal(rng);
                theta[i] = mu[i] + zeta[i] * eps[i];
            }
            double ce =
                batch_loss_gradient(theta, arch, data, batches[b], SpikeMode::hard, cfg.surrogate_slope, wgrad);
            double kl = gaussian_kl(mu, zeta, cfg.init_variance);
            double objective = ce + kl_scale * kl;
            for (std::size_t i = 0; i < n; ++i) {
                double dzeta = wgrad[i] * eps[i] + kl_scale * (zeta[i] / cfg.init_variance - 1.0 / zeta[i]);
                grad[i] = wgrad[i] + kl_scale * mu[i] / cfg.init_variance;
                grad[n + i] = dzeta * detail::sigmoid(rho[i]);
            }
            adam.step(params, grad);
            detail::check_finite(objective, params, epoch, b);
            sum += objective;
        }
        result.epoch_objectives.push_back(sum / static_cast<double>(batches.size()));
    }
    post.mu.assign(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(n));
    post.rho.assign(params.begin() + static_cast<std::ptrdiff_t>(n), params.end());
    return result;
}

/// K weight vectors theta_k = mu + zeta * eps_k, member k drawn from
/// derive_seed(seed, k).
inline Ensemble sample_ensemble(const VariationalPosterior& post, std::size_t k, std::uint64_t seed) {
    require(k >= 1, "ensemble size must be at least 1");
    post.validate();
    auto zeta = post.stddev();
    Ensemble e;
    e.kind = EnsembleKind::variational;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t m = 0; m < k; ++m) {
        std::uint64_t s = derive_seed(seed, m);
        Rng rng = make_rng(s);
        std::vector<double> w(post.mu.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = post.mu[i] + zeta[i] * normal(rng);
        e.members.emplace_back(post.arch, std::move(w));
        e.seeds.push_back(s);
    }
    return e;
}

}  // namespace spikecp
