#pragma once

// Conformal p-variables, set prediction with adaptive stopping, ensemble
// pooling of confidences (CM) or p-variables (PM), and the calibrated
// max-confidence stopping baseline (DC-SNN).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spikecp/common.hpp"
#include "spikecp/snn.hpp"
#include "spikecp/training.hpp"

namespace spikecp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class MergeMode {
    /// Generalized mean of member confidences, then one conformal p-variable.
    confidence,
    /// One conformal p-variable per member, merged with a p-merging function.
    p_value,
};

inline std::string to_string(MergeMode m) { return m == MergeMode::confidence ? "cm" : "pm"; }

/// Conformal p-variable (1 + #{i : test_loss <= cal_losses[i]}) / (n + 1).
inline double p_value(double test_loss, std::span<const double> cal_losses) {
    if (cal_losses.empty()) throw ContractError("p_value: calibration set is empty");
    require(!std::isnan(test_loss), "p_value: test loss is NaN");
    std::size_t ge = 0;
    for (double s : cal_losses) ge += test_loss <= s;
    return static_cast<double>(ge + 1) / static_cast<double>(cal_losses.size() + 1);
}

/// Classes whose p-variable strictly exceeds alpha, in increasing order.
inline std::vector<std::size_t> predictive_set(std::span<const double> p, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, "predictive_set: alpha must lie in [0,1]");
    std::vector<std::size_t> set;
    for (std::size_t c = 0; c < p.size(); ++c)
        if (p[c] > alpha) set.push_back(c);
    return set;
}

/// Index of the first checkpoint whose set size is <= threshold, or the last
/// index when none qualifies.
inline std::size_t stopping_index(std::span<const std::size_t> set_sizes, std::size_t threshold) {
    require(!set_sizes.empty(), "stopping_index: no checkpoints");
    for (std::size_t j = 0; j < set_sizes.size(); ++j)
        if (set_sizes[j] <= threshold) return j;
    return set_sizes.size() - 1;
}

inline int stopping_time(std::span<const std::size_t> set_sizes, std::span<const int> checkpoints,
                         std::size_t threshold) {
    require(set_sizes.size() == checkpoints.size(), "stopping_time: one set size per checkpoint");
    return checkpoints[stopping_index(set_sizes, threshold)];
}

/// Power mean ((1/K) sum x^r)^(1/r), with the min, geometric and max limits
/// at r = -inf, 0 and +inf.
inline double generalized_mean(std::span<const double> xs, double r) {
    require(!xs.empty(), "generalized_mean: empty input");
    require(!std::isnan(r), "generalized_mean: exponent is NaN");
    if (xs.size() == 1) return xs[0];
    if (r == kInf) return *std::max_element(xs.begin(), xs.end());
    if (r == -kInf) return *std::min_element(xs.begin(), xs.end());
    const double k = static_cast<double>(xs.size());
    if (r == 0.0) {
        double s = 0.0;
        for (double x : xs) s += std::log(x);
        return std::exp(s / k);
    }
    if (r == 1.0) return std::accumulate(xs.begin(), xs.end(), 0.0) / k;
    double s = 0.0;
    for (double x : xs) s += std::pow(x, r);
    return std::pow(s / k, 1.0 / r);
}

/// Per-class generalized mean of a K x C matrix of member confidences. The
/// result is not renormalized across classes.
inline std::vector<double> cm_pool(std::span<const std::vector<double>> confidences, double r) {
    require(!confidences.empty(), "cm_pool: no members");
    const std::size_t classes = confidences.front().size();
    std::vector<double> column(confidences.size()), out(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < confidences.size(); ++k) {
            require(confidences[k].size() == classes, "cm_pool: ragged confidence matrix");
            column[k] = confidences[k][c];
        }
        out[c] = generalized_mean(column, r);
    }
    return out;
}

/// Loss of the CM-pooled confidence, computed from member losses so that
/// calibration and test scores go through the identical arithmetic.
inline double cm_pool_loss(std::span<const double> member_losses, double r) {
    if (member_losses.size() == 1) return member_losses[0];
    std::vector<double> f(member_losses.size());
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = std::exp(-member_losses[k]);
    return log_loss(generalized_mean(f, r));
}

/// True when pm_pool accepts exponent r.
inline bool pm_exponent_supported(double r) { return r == kInf || r == -kInf || (std::isfinite(r) && r > 0.0); }

/// p-merging function a_r * ((1/K) sum p^r)^(1/r), clamped to 1.
///   r = -inf: a_r = K   (K * min)
///   r = +inf: a_r = 1   (max)
///   r > 0   : a_r = K^(1/r), i.e. (sum p^r)^(1/r), which dominates max
inline double pm_pool(std::span<const double> p, double r) {
    require(!p.empty(), "pm_pool: no p-variables");
    for (double v : p) require(v > 0.0 && v <= 1.0, "pm_pool: p-variables must lie in (0,1]");
    if (!pm_exponent_supported(r))
        throw UnsupportedMode("pm_pool: exponent r = " + format_double(r) +
                              " is not supported (use -inf, +inf or a finite r > 0)");
    if (p.size() == 1) return p[0];
    const double k = static_cast<double>(p.size());
    double merged;
    if (r == -kInf) {
        merged = k * *std::min_element(p.begin(), p.end());
    } else if (r == kInf) {
        merged = *std::max_element(p.begin(), p.end());
    } else {
        // Scale by the max so large r does not underflow.
        double m = *std::max_element(p.begin(), p.end());
        double s = 0.0;
        for (double v : p) s += std::pow(v / m, r);
        merged = m * std::pow(s, 1.0 / r);
    }
    return std::min(merged, 1.0);
}

struct SpikeCPConfig {
    double p_targ = 0.9;
    std::vector<int> checkpoints{20, 40, 60, 80};
    std::size_t set_size_threshold = 3;
    MergeMode merge = MergeMode::p_value;
    double exponent = 45.0;

    /// Per-checkpoint miscoverage budget (1 - p_targ) / |checkpoints|.
    double alpha() const { return (1.0 - p_targ) / static_cast<double>(checkpoints.size()); }

    void validate(std::size_t classes) const {
        require(p_targ > 0.0 && p_targ < 1.0, "p_targ must lie in (0,1)");
        require(!checkpoints.empty(), "checkpoint set must be non-empty");
        for (std::size_t i = 1; i < checkpoints.size(); ++i)
            require(checkpoints[i] > checkpoints[i - 1], "checkpoints must be strictly increasing");
        require(set_size_threshold >= 1 && set_size_threshold <= classes, "set-size threshold must lie in [1, C]");
        require(!std::isnan(exponent), "pooling exponent is NaN");
        if (merge == MergeMode::p_value && !pm_exponent_supported(exponent))
            throw UnsupportedMode("p-merging exponent r = " + format_double(exponent) + " is not supported");
    }
};

struct CheckpointDiagnostic {
    int time = 0;
    /// p-variables (SpikeCP) or pooled confidences (DC-SNN), one per class.
    std::vector<double> values;
    std::size_t set_size = 0;
};

struct AdaptiveDecision {
    int stop_time = 0;
    std::size_t stop_index = 0;
    std::vector<std::size_t> set;
    std::optional<std::size_t> point_label;
    std::vector<CheckpointDiagnostic> diagnostics;

    bool covers(std::size_t label) const { return std::find(set.begin(), set.end(), label) != set.end(); }
};

/// Scores of every calibration example under every ensemble member.
class CalibrationTable {
public:
    CalibrationTable() = default;

    /// traces[k][i] is example i scored by member k.
    CalibrationTable(std::vector<int> checkpoints, std::vector<int> labels, std::size_t classes,
                     std::vector<std::vector<ScoreTrace>> traces, std::string arch_hash = {})
        : checkpoints_(std::move(checkpoints)),
          labels_(std::move(labels)),
          classes_(classes),
          traces_(std::move(traces)),
          arch_hash_(std::move(arch_hash)) {
        validate();
    }

    static CalibrationTable build(const Ensemble& ensemble, std::span<const InputSequence> data,
                                  std::span<const int> checkpoints) {
        ensemble.validate();
        std::vector<int> labels;
        for (const auto& x : data) {
            require(x.label.has_value(), "calibration examples must be labelled");
            labels.push_back(*x.label);
        }
        std::vector<std::vector<ScoreTrace>> traces(ensemble.size());
        for (std::size_t k = 0; k < ensemble.size(); ++k)
            for (const auto& x : data) traces[k].push_back(forward(x, ensemble.members[k], checkpoints));
        return CalibrationTable({checkpoints.begin(), checkpoints.end()}, std::move(labels),
                                ensemble.arch().num_classes(), std::move(traces), ensemble.arch().hash());
    }

    std::size_t num_models() const { return traces_.size(); }
    std::size_t num_examples() const { return labels_.size(); }
    std::size_t num_classes() const { return classes_; }
    const std::vector<int>& checkpoints() const { return checkpoints_; }
    const std::vector<int>& labels() const { return labels_; }
    const std::string& arch_hash() const { return arch_hash_; }
    const ScoreTrace& trace(std::size_t model, std::size_t example) const { return traces_[model][example]; }

    /// Loss of the true label of every example under `model` at checkpoint index j.
    std::vector<double> true_losses(std::size_t model, std::size_t j) const {
        std::vector<double> out(labels_.size());
        for (std::size_t i = 0; i < labels_.size(); ++i)
            out[i] = traces_[model][i][j].loss[static_cast<std::size_t>(labels_[i])];
        return out;
    }

    friend bool operator==(const CalibrationTable&, const CalibrationTable&) = default;

private:
    void validate() const {
        require(!labels_.empty(), "calibration table needs at least one example");
        require(!traces_.empty(), "calibration table needs at least one model");
        require(!checkpoints_.empty(), "calibration table needs at least one checkpoint");
        for (int c : labels_) require(c >= 0 && static_cast<std::size_t>(c) < classes_, "calibration label out of range");
        for (const auto& per_model : traces_) {
            require(per_model.size() == labels_.size(), "every model must score every calibration example");
            for (const auto& tr : per_model) {
                require(tr.size() == checkpoints_.size(), "calibration trace checkpoint count mismatch");
                for (std::size_t j = 0; j < tr.size(); ++j) {
                    require(tr[j].time == checkpoints_[j], "calibration trace checkpoint mismatch");
                    require(tr[j].loss.size() == classes_, "calibration trace class count mismatch");
                    for (double s : tr[j].loss) require(std::isfinite(s) && s >= 0.0, "calibration losses must be finite and >= 0");
                }
            }
        }
    }

    std::vector<int> checkpoints_;
    std::vector<int> labels_;
    std::size_t classes_ = 0;
    std::vector<std::vector<ScoreTrace>> traces_;
    std::string arch_hash_;
};

/// Ensemble SpikeCP decision rule with the calibration scores preprocessed
/// once; decide() is then cheap per test input.
class SpikeCP {
public:
    SpikeCP(const CalibrationTable& cal, SpikeCPConfig cfg) : cfg_(std::move(cfg)), classes_(cal.num_classes()) {
        cfg_.validate(classes_);
        require(cfg_.checkpoints == cal.checkpoints(), "SpikeCP: configuration and calibration checkpoints differ");
        models_ = cal.num_models();
        const std::size_t n = cal.num_examples();
        scores_.resize(cfg_.checkpoints.size());
        for (std::size_t j = 0; j < cfg_.checkpoints.size(); ++j) {
            if (cfg_.merge == MergeMode::p_value) {
                for (std::size_t k = 0; k < models_; ++k) scores_[j].push_back(cal.true_losses(k, j));
            } else {
                std::vector<std::vector<double>> per_model;
                for (std::size_t k = 0; k < models_; ++k) per_model.push_back(cal.true_losses(k, j));
                std::vector<double> pooled(n), member(models_);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t k = 0; k < models_; ++k) member[k] = per_model[k][i];
                    pooled[i] = cm_pool_loss(member, cfg_.exponent);
                }
                scores_[j].push_back(std::move(pooled));
            }
        }
    }

    const SpikeCPConfig& config() const { return cfg_; }

    /// p-variable of every class at checkpoint index j.
    std::vector<double> p_values(std::span<const ScoreTrace> traces, std::size_t j) const {
        std::vector<double> p(classes_), member(models_), member_p(models_);
        for (std::size_t c = 0; c < classes_; ++c) {
            for (std::size_t k = 0; k < models_; ++k) member[k] = traces[k][j].loss[c];
            if (cfg_.merge == MergeMode::confidence) {
                p[c] = p_value(cm_pool_loss(member, cfg_.exponent), scores_[j][0]);
            } else {
                for (std::size_t k = 0; k < models_; ++k) member_p[k] = p_value(member[k], scores_[j][k]);
                p[c] = pm_pool(member_p, cfg_.exponent);
            }
        }
        return p;
    }

    AdaptiveDecision decide(std::span<const ScoreTrace> traces) const {
        if (traces.size() != models_)
            throw ContractError("spikecp_decide: got " + std::to_string(traces.size()) + " traces for " +
                                std::to_string(models_) + " calibrated models");
        for (const auto& tr : traces) {
            require(tr.size() == cfg_.checkpoints.size(), "spikecp_decide: trace checkpoint count mismatch");
            for (std::size_t j = 0; j < tr.size(); ++j) {
                require(tr[j].time == cfg_.checkpoints[j], "spikecp_decide: trace checkpoint mismatch");
                require(tr[j].loss.size() == classes_, "spikecp_decide: trace class count mismatch");
            }
        }
        const double alpha = cfg_.alpha();
        AdaptiveDecision d;
        for (std::size_t j = 0; j < cfg_.checkpoints.size(); ++j) {
            auto p = p_values(traces, j);
            auto set = predictive_set(p, alpha);
            d.diagnostics.push_back({cfg_.checkpoints[j], std::move(p), set.size()});
            bool last = j + 1 == cfg_.checkpoints.size();
            if (set.size() <= cfg_.set_size_threshold || last) {
                d.stop_index = j;
                d.stop_time = cfg_.checkpoints[j];
                d.set = std::move(set);
                break;
            }
        }
        return d;
    }

private:
    SpikeCPConfig cfg_;
    std::size_t classes_;
    std::size_t models_ = 0;
    // scores_[j][k]: calibration true-label losses at checkpoint j for member k
    // (PM) or the single CM-pooled vector (CM).
    std::vector<std::vector<std::vector<double>>> scores_;
};

inline AdaptiveDecision spikecp_decide(std::span<const ScoreTrace> traces, const CalibrationTable& cal,
                                       const SpikeCPConfig& cfg) {
    return SpikeCP(cal, cfg).decide(traces);
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    require(!v.empty(), "argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

/// The k largest entries (ties to the lowest index), returned in increasing class order.
inline std::vector<std::size_t> top_k(std::span<const double> v, std::size_t k) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    idx.resize(std::min(k, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Confidences of every member averaged per class at each checkpoint.
inline std::vector<std::vector<double>> pooled_confidences(std::span<const ScoreTrace> traces, double r = 1.0) {
    require(!traces.empty(), "pooled_confidences: no traces");
    std::vector<std::vector<double>> out;
    std::vector<std::vector<double>> members(traces.size());
    for (std::size_t j = 0; j < traces.front().size(); ++j) {
        for (std::size_t k = 0; k < traces.size(); ++k) members[k] = traces[k][j].confidence;
        out.push_back(cm_pool(members, r));
    }
    return out;
}

/// Max-confidence stopping: first checkpoint whose largest pooled confidence
/// reaches p_th; otherwise the horizon, which must be the last checkpoint.
inline AdaptiveDecision dc_snn_decide(std::span<const std::vector<double>> pooled, std::span<const int> times,
                                      double p_th, int horizon, std::size_t set_size) {
    require(p_th >= 0.0 && p_th <= 1.0, "dc_snn_decide: p_th must lie in [0,1]");
    require(!pooled.empty() && pooled.size() == times.size(), "dc_snn_decide: one confidence vector per checkpoint");
    require(times.back() == horizon, "dc_snn_decide: the last checkpoint must equal the horizon");
    AdaptiveDecision d;
    std::size_t stop = pooled.size() - 1;
    for (std::size_t j = 0; j < pooled.size(); ++j) {
        double top = *std::max_element(pooled[j].begin(), pooled[j].end());
        d.diagnostics.push_back({times[j], pooled[j], set_size});
        if (top >= p_th) {
            stop = j;
            break;
        }
    }
    d.stop_index = stop;
    d.stop_time = times[stop];
    d.point_label = argmax(pooled[stop]);
    d.set = top_k(pooled[stop], set_size);
    return d;
}

/// Selection rule over a threshold grid: the smallest grid value whose
/// accuracy reaches p_targ, else the smallest value attaining the maximum.
inline double select_dc_threshold(std::span<const double> grid, std::span<const double> accuracies, double p_targ) {
    require(!grid.empty() && grid.size() == accuracies.size(), "select_dc_threshold: one accuracy per grid point");
    for (std::size_t g = 0; g < grid.size(); ++g)
        if (accuracies[g] >= p_targ) return grid[g];
    std::size_t best = 0;
    for (std::size_t g = 1; g < grid.size(); ++g)
        if (accuracies[g] > accuracies[best]) best = g;
    return grid[best];
}

/// Calibration accuracy of dc_snn_decide at every grid value.
inline std::vector<double> dc_accuracies(std::span<const std::vector<std::vector<double>>> cal_pooled,
                                         std::span<const int> labels, std::span<const int> times, int horizon,
                                         std::span<const double> grid) {
    require(cal_pooled.size() == labels.size() && !labels.empty(), "dc_accuracies: one label per calibration example");
    std::vector<double> acc(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto d = dc_snn_decide(cal_pooled[i], times, grid[g], horizon, 1);
            hits += *d.point_label == static_cast<std::size_t>(labels[i]);
        }
        acc[g] = static_cast<double>(hits) / static_cast<double>(labels.size());
    }
    return acc;
}

inline std::vector<double> default_dc_grid() {
    std::vector<double> g(100);
    for (int i = 0; i < 100; ++i) g[static_cast<std::size_t>(i)] = i / 100.0;
    return g;
}

inline double calibrate_dc_threshold(std::span<const std::vector<std::vector<double>>> cal_pooled,
                                     std::span<const int> labels, std::span<const int> times, int horizon,
                                     double p_targ, std::span<const double> grid) {
    require(!grid.empty(), "calibrate_dc_threshold: empty grid");
    require(std::is_sorted(grid.begin(), grid.end()), "calibrate_dc_threshold: grid must be sorted ascending");
    auto acc = dc_accuracies(cal_pooled, labels, times, horizon, grid);
    return select_dc_threshold(grid, acc, p_targ);
}

}  // namespace spikecp
