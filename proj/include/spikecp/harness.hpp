#pragma once

// Synthetic exchangeable data, calibration/test resampling, coverage and
// latency metrics, Monte Carlo validity checks and parameter sweeps.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "spikecp/common.hpp"
#include "spikecp/conformal.hpp"
#include "spikecp/snn.hpp"
#include "spikecp/training.hpp"

namespace spikecp {

/// Class-conditional Bernoulli spike trains. Channels are split into C
/// contiguous groups; class c fires at `high_rate` on group c and at
/// `low_rate` elsewhere. Each example draws a difficulty d uniformly from
/// [difficulty_min, difficulty_max] and uses rate low + d * (pattern - low),
/// so d = 0 gives class-independent noise.
struct SyntheticSpec {
    std::size_t classes = 4;
    std::size_t channels = 40;
    std::size_t steps = 80;
    double high_rate = 0.3;
    double low_rate = 0.1;
    double difficulty_min = 0.3;
    double difficulty_max = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(classes >= 2, "synthetic data needs at least two classes");
        require(channels >= classes, "need at least one channel per class");
        require(steps >= 1, "synthetic sequences need at least one step");
        require(high_rate >= 0.0 && high_rate <= 1.0 && low_rate >= 0.0 && low_rate <= 1.0,
                "firing rates must lie in [0,1]");
        require(difficulty_min >= 0.0 && difficulty_min <= difficulty_max && difficulty_max <= 1.0,
                "difficulty range must satisfy 0 <= min <= max <= 1");
    }

    std::size_t group_of(std::size_t channel) const { return channel * classes / channels; }

    double rate(std::size_t cls, std::size_t channel, double difficulty) const {
        double pattern = group_of(channel) == cls ? high_rate : low_rate;
        return low_rate + difficulty * (pattern - low_rate);
    }
};

/// Examples [first, first + count) of the stream defined by `spec`; example
/// i depends only on (spec, i).
inline std::vector<InputSequence> generate_dataset(const SyntheticSpec& spec, std::size_t count,
                                                   std::size_t first = 0) {
    spec.validate();
    require(count >= 1, "generate_dataset: count must be positive");
    std::vector<InputSequence> out;
    out.reserve(count);
    for (std::size_t i = first; i < first + count; ++i) {
        Rng rng = make_rng(derive_seed(spec.seed, i));
        std::uniform_int_distribution<int> label_dist(0, static_cast<int>(spec.classes) - 1);
        std::uniform_real_distribution<double> diff_dist(spec.difficulty_min, spec.difficulty_max);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        int label = label_dist(rng);
        double d = spec.difficulty_min == spec.difficulty_max ? spec.difficulty_min : diff_dist(rng);
        InputSequence x;
        x.label = label;
        x.samples.resize(static_cast<Eigen::Index>(spec.steps), static_cast<Eigen::Index>(spec.channels));
        for (std::size_t t = 0; t < spec.steps; ++t)
            for (std::size_t n = 0; n < spec.channels; ++n)
                x.samples(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) =
                    unit(rng) < spec.rate(static_cast<std::size_t>(label), n, d) ? 1.0 : 0.0;
        out.push_back(std::move(x));
    }
    return out;
}

struct Split {
    std::vector<std::size_t> calibration;
    std::vector<std::size_t> test;
};

/// Uniform without-replacement split of indices 0..pool_size-1.
inline Split split_cal_test(std::size_t pool_size, std::size_t cal_size, std::uint64_t seed) {
    if (cal_size >= pool_size)
        throw ContractError("split_cal_test: calibration size " + std::to_string(cal_size) +
                            " must be smaller than the pool (" + std::to_string(pool_size) + ")");
    std::vector<std::size_t> order(pool_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    Split s;
    s.calibration.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cal_size));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cal_size), order.end());
    return s;
}

enum class ResamplePolicy {
    /// One ensemble for the whole experiment.
    fixed,
    /// A fresh posterior sample for every calibration/test realization.
    per_resample,
    /// A fresh posterior sample for every test input (calibration is rescored with it).
    per_input,
};

inline std::string to_string(ResamplePolicy p) {
    switch (p) {
        case ResamplePolicy::fixed: return "fixed";
        case ResamplePolicy::per_resample: return "per-resample";
        case ResamplePolicy::per_input: return "per-input";
    }
    return "?";
}

struct PosteriorSource {
    VariationalPosterior posterior;
    std::size_t k = 6;
    ResamplePolicy policy = ResamplePolicy::per_resample;
};

using EnsembleSource = std::variant<Ensemble, PosteriorSource>;

inline std::size_t source_size(const EnsembleSource& src) {
    return std::visit([](const auto& s) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, Ensemble>)
            return s.size();
        else
            return s.k;
    }, src);
}

inline std::string source_kind(const EnsembleSource& src) {
    return std::holds_alternative<Ensemble>(src) ? to_string(std::get<Ensemble>(src).kind) : "vi";
}

struct ExperimentConfig {
    SpikeCPConfig cp;
    std::size_t cal_size = 50;
    std::size_t test_size = 200;
    std::size_t resamples = 20;
    bool run_dc = false;
    bool dc_every_step = false;
    std::vector<double> dc_grid = default_dc_grid();
    std::uint64_t seed = 0;

    std::string hash(const EnsembleSource& src) const {
        std::string key = "experiment:v1:" + source_kind(src) + ":" + std::to_string(source_size(src)) + ":" +
                          to_string(cp.merge) + ":" + format_double(cp.exponent) + ":" + format_double(cp.p_targ) +
                          ":" + std::to_string(cp.set_size_threshold) + ":";
        for (int t : cp.checkpoints) key += std::to_string(t) + ",";
        key += ":" + std::to_string(cal_size) + ":" + std::to_string(test_size) + ":" + std::to_string(resamples) +
               ":" + (run_dc ? "dc" : "nodc") + (dc_every_step ? "-every" : "") + ":" + std::to_string(seed);
        if (const auto* ps = std::get_if<PosteriorSource>(&src)) key += ":" + to_string(ps->policy);
        return to_hex(fnv1a64(key));
    }
};

struct DecisionRecord {
    std::string mode;
    std::size_t k = 0;
    double r = 0.0;
    double p_targ = 0.0;
    std::size_t resample = 0;
    /// Index of the example in the pool.
    std::size_t example = 0;
    int label = 0;
    int stop_time = 0;
    std::vector<std::size_t> set;
    bool covered = false;

    friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

struct SummaryRow {
    std::string mode;
    std::size_t k = 0;
    double r = 0.0;
    double p_targ = 0.0;
    double coverage = 0.0;
    /// Mean stopping time over the horizon.
    double latency = 0.0;
    double set_size = 0.0;
    /// Normal-approximation 95% half-width of the coverage estimate.
    double ci_halfwidth = 0.0;

    friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct ExperimentReport {
    std::vector<SummaryRow> rows;
    std::vector<DecisionRecord> records;
    std::string config_hash;
    std::uint64_t seed = 0;

    const SummaryRow& row(const std::string& mode) const {
        for (const auto& r : rows)
            if (r.mode == mode) return r;
        throw ContractError("report has no row for mode '" + mode + "'");
    }

    friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

inline SummaryRow summarize(std::span<const DecisionRecord> records, int horizon) {
    require(!records.empty(), "summarize: no records");
    SummaryRow row;
    row.mode = records.front().mode;
    row.k = records.front().k;
    row.r = records.front().r;
    row.p_targ = records.front().p_targ;
    double covered = 0.0, stop = 0.0, size = 0.0;
    for (const auto& rec : records) {
        covered += rec.covered;
        stop += rec.stop_time;
        size += static_cast<double>(rec.set.size());
    }
    const double n = static_cast<double>(records.size());
    row.coverage = covered / n;
    row.latency = stop / n / horizon;
    row.set_size = size / n;
    row.ci_halfwidth = 1.96 * std::sqrt(row.coverage * (1.0 - row.coverage) / n);
    return row;
}

namespace detail {

inline std::vector<std::vector<ScoreTrace>> score_examples(const Ensemble& ens, std::span<const InputSequence> pool,
                                                           std::span<const std::size_t> idx,
                                                           std::span<const int> checkpoints) {
    std::vector<std::vector<ScoreTrace>> out(ens.size());
    for (std::size_t k = 0; k < ens.size(); ++k) {
        out[k].reserve(idx.size());
        for (auto i : idx) out[k].push_back(forward(pool[i], ens.members[k], checkpoints));
    }
    return out;
}

inline std::vector<ScoreTrace> column(const std::vector<std::vector<ScoreTrace>>& traces, std::size_t i) {
    std::vector<ScoreTrace> out;
    out.reserve(traces.size());
    for (const auto& per_model : traces) out.push_back(per_model[i]);
    return out;
}

}  // namespace detail

/// Repeats calibration/test splits of `pool` and records one SpikeCP decision
/// (and optionally one DC-SNN decision) per test example.
inline ExperimentReport run_experiment(const EnsembleSource& source, std::span<const InputSequence> pool,
                                       const ExperimentConfig& cfg) {
    require(cfg.resamples >= 1, "run_experiment: resamples must be positive");
    require(!pool.empty(), "run_experiment: empty pool");
    require(cfg.cal_size + cfg.test_size <= pool.size(), "run_experiment: pool too small for calibration + test");
    const int horizon = static_cast<int>(pool.front().steps());
    for (const auto& x : pool) {
        require(x.label.has_value(), "run_experiment: pool examples must be labelled");
        require(static_cast<int>(x.steps()) == horizon, "run_experiment: pool sequences must share one length");
    }
    const auto& cps = cfg.cp.checkpoints;
    const std::size_t k = source_size(source);
    const std::string kind = source_kind(source);
    const std::string mode = kind + "-" + to_string(cfg.cp.merge);
    const std::vector<int> dc_times = cfg.dc_every_step ? every_step(horizon) : cps;

    const auto* fixed_ens = std::get_if<Ensemble>(&source);
    const auto* post = std::get_if<PosteriorSource>(&source);
    Ensemble shared;
    if (post && post->policy == ResamplePolicy::fixed) {
        shared = sample_ensemble(post->posterior, post->k, derive_seed(cfg.seed, 0xF1ED));
        fixed_ens = &shared;
    }
    const std::size_t classes = fixed_ens ? fixed_ens->arch().num_classes() : post->posterior.arch.num_classes();
    std::vector<std::size_t> all(pool.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::vector<ScoreTrace>> pool_traces, pool_dc_traces;
    if (fixed_ens) {
        pool_traces = detail::score_examples(*fixed_ens, pool, all, cps);
        if (cfg.run_dc && cfg.dc_every_step) pool_dc_traces = detail::score_examples(*fixed_ens, pool, all, dc_times);
    }

    ExperimentReport report;
    report.seed = cfg.seed;
    report.config_hash = cfg.hash(source);
    std::vector<DecisionRecord> cp_records, dc_records;

    for (std::size_t rs = 0; rs < cfg.resamples; ++rs) {
        const std::uint64_t rs_seed = derive_seed(cfg.seed, rs);
        Split split = split_cal_test(pool.size(), cfg.cal_size, rs_seed);
        split.test.resize(cfg.test_size);

        std::vector<std::size_t> used(split.calibration);
        used.insert(used.end(), split.test.begin(), split.test.end());
        std::vector<int> cal_labels;
        for (auto i : split.calibration) cal_labels.push_back(*pool[i].label);

        // traces[k][j]: member k on used[j] (calibration first, then test).
        std::vector<std::vector<ScoreTrace>> traces, dc_traces;
        Ensemble resampled;
        const Ensemble* ens = fixed_ens;
        if (fixed_ens) {
            traces.resize(k);
            for (std::size_t m = 0; m < k; ++m)
                for (auto i : used) traces[m].push_back(pool_traces[m][i]);
            if (cfg.run_dc && cfg.dc_every_step) {
                dc_traces.resize(k);
                for (std::size_t m = 0; m < k; ++m)
                    for (auto i : used) dc_traces[m].push_back(pool_dc_traces[m][i]);
            }
        } else if (post->policy == ResamplePolicy::per_resample) {
            resampled = sample_ensemble(post->posterior, post->k, derive_seed(rs_seed, 0xE5));
            ens = &resampled;
            traces = detail::score_examples(resampled, pool, used, cps);
            if (cfg.run_dc && cfg.dc_every_step) dc_traces = detail::score_examples(resampled, pool, used, dc_times);
        }
        if (cfg.run_dc && !cfg.dc_every_step) dc_traces = traces;

        auto calibration_table = [&](const std::vector<std::vector<ScoreTrace>>& tr) {
            std::vector<std::vector<ScoreTrace>> cal(tr.size());
            for (std::size_t m = 0; m < tr.size(); ++m)
                cal[m].assign(tr[m].begin(), tr[m].begin() + static_cast<std::ptrdiff_t>(cfg.cal_size));
            return CalibrationTable(cps, cal_labels, classes, std::move(cal));
        };

        auto record = [&](const std::string& m, std::size_t test_pos, const AdaptiveDecision& d) {
            std::size_t ex = split.test[test_pos];
            DecisionRecord rec{m, k, m == kind + "-dc" ? 1.0 : cfg.cp.exponent, cfg.cp.p_targ, rs, ex,
                               *pool[ex].label, d.stop_time, d.set, d.covers(static_cast<std::size_t>(*pool[ex].label))};
            return rec;
        };

        if (ens) {
            SpikeCP rule(calibration_table(traces), cfg.cp);
            for (std::size_t j = 0; j < cfg.test_size; ++j) {
                auto x_traces = detail::column(traces, cfg.cal_size + j);
                cp_records.push_back(record(mode, j, rule.decide(x_traces)));
            }
        } else {
            // Per-input posterior sampling: every test input gets its own
            // ensemble, and the calibration set is rescored with it.
            for (std::size_t j = 0; j < cfg.test_size; ++j) {
                Ensemble e = sample_ensemble(post->posterior, post->k, derive_seed(rs_seed, 0x1000 + j));
                std::vector<std::size_t> idx(split.calibration);
                idx.push_back(split.test[j]);
                auto tr = detail::score_examples(e, pool, idx, cps);
                SpikeCP rule(calibration_table(tr), cfg.cp);
                cp_records.push_back(record(mode, j, rule.decide(detail::column(tr, cfg.cal_size))));
                if (cfg.run_dc) {
                    auto dtr = cfg.dc_every_step ? detail::score_examples(e, pool, idx, dc_times) : tr;
                    std::vector<std::vector<std::vector<double>>> cal_pooled;
                    for (std::size_t i = 0; i < cfg.cal_size; ++i)
                        cal_pooled.push_back(pooled_confidences(detail::column(dtr, i)));
                    double p_th = calibrate_dc_threshold(cal_pooled, cal_labels, dc_times, horizon, cfg.cp.p_targ,
                                                         cfg.dc_grid);
                    auto d = dc_snn_decide(pooled_confidences(detail::column(dtr, cfg.cal_size)), dc_times, p_th,
                                           horizon, cfg.cp.set_size_threshold);
                    dc_records.push_back(record(kind + "-dc", j, d));
                }
            }
        }

        if (cfg.run_dc && ens) {
            std::vector<std::vector<std::vector<double>>> cal_pooled;
            for (std::size_t i = 0; i < cfg.cal_size; ++i)
                cal_pooled.push_back(pooled_confidences(detail::column(dc_traces, i)));
            double p_th =
                calibrate_dc_threshold(cal_pooled, cal_labels, dc_times, horizon, cfg.cp.p_targ, cfg.dc_grid);
            for (std::size_t j = 0; j < cfg.test_size; ++j) {
                auto d = dc_snn_decide(pooled_confidences(detail::column(dc_traces, cfg.cal_size + j)), dc_times,
                                       p_th, horizon, cfg.cp.set_size_threshold);
                dc_records.push_back(record(kind + "-dc", j, d));
            }
        }
    }

    report.rows.push_back(summarize(cp_records, horizon));
    if (!dc_records.empty()) report.rows.push_back(summarize(dc_records, horizon));
    report.records = std::move(cp_records);
    report.records.insert(report.records.end(), dc_records.begin(), dc_records.end());
    return report;
}

/// Empirical Pr(p_value <= alpha) when test and calibration losses are i.i.d.
/// draws from one continuous distribution.
inline std::vector<double> validity_monte_carlo(std::size_t trials, std::size_t n_cal, std::span<const double> alphas,
                                                std::uint64_t seed) {
    require(trials >= 1000, "validity_monte_carlo: use at least 1000 trials");
    require(n_cal >= 1, "validity_monte_carlo: calibration size must be positive");
    Rng rng = make_rng(seed);
    std::exponential_distribution<double> loss_dist(1.0);
    std::vector<double> cal(n_cal);
    std::vector<std::size_t> hits(alphas.size(), 0);
    for (std::size_t t = 0; t < trials; ++t) {
        for (double& s : cal) s = loss_dist(rng);
        double p = p_value(loss_dist(rng), cal);
        for (std::size_t a = 0; a < alphas.size(); ++a) hits[a] += p <= alphas[a];
    }
    std::vector<double> rates(alphas.size());
    for (std::size_t a = 0; a < alphas.size(); ++a) rates[a] = static_cast<double>(hits[a]) / static_cast<double>(trials);
    return rates;
}

/// Empirical Pr(pm_pool(p^1..p^K) <= alpha) for K dependent conformal
/// p-variables. Member k scores example i as sqrt(rho) u_i + sqrt(1-rho) e_ki,
/// where u_i is shared by all members, so members are correlated but each
/// p^k is exactly valid.
inline std::vector<double> pm_validity_monte_carlo(std::size_t trials, std::size_t k, std::size_t n_cal, double r,
                                                   std::span<const double> alphas, std::uint64_t seed,
                                                   double rho = 0.5) {
    require(trials >= 1000, "pm_validity_monte_carlo: use at least 1000 trials");
    require(k >= 1 && n_cal >= 1, "pm_validity_monte_carlo: K and calibration size must be positive");
    require(rho >= 0.0 && rho <= 1.0, "pm_validity_monte_carlo: rho must lie in [0,1]");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
    std::vector<double> shared(n_cal + 1), cal(n_cal), p(k);
    std::vector<std::size_t> hits(alphas.size(), 0);
    for (std::size_t t = 0; t < trials; ++t) {
        for (double& u : shared) u = normal(rng);
        for (std::size_t m = 0; m < k; ++m) {
            for (std::size_t i = 0; i < n_cal; ++i) cal[i] = a * shared[i] + b * normal(rng);
            p[m] = p_value(a * shared[n_cal] + b * normal(rng), cal);
        }
        double merged = pm_pool(p, r);
        for (std::size_t j = 0; j < alphas.size(); ++j) hits[j] += merged <= alphas[j];
    }
    std::vector<double> rates(alphas.size());
    for (std::size_t j = 0; j < alphas.size(); ++j) rates[j] = static_cast<double>(hits[j]) / static_cast<double>(trials);
    return rates;
}

enum class SweepParam { p_targ, k, r };

inline SweepParam parse_sweep_param(const std::string& s) {
    if (s == "p-targ" || s == "p_targ") return SweepParam::p_targ;
    if (s == "k" || s == "K") return SweepParam::k;
    if (s == "r") return SweepParam::r;
    throw ContractError("unknown sweep parameter '" + s + "' (expected p-targ, k or r)");
}

inline std::string to_string(SweepParam p) {
    switch (p) {
        case SweepParam::p_targ: return "p-targ";
        case SweepParam::k: return "k";
        case SweepParam::r: return "r";
    }
    return "?";
}

/// One experiment per value of `param`, everything else (seeds included) held fixed.
/// A K sweep over a trained ensemble uses its first K members.
inline std::vector<ExperimentReport> sweep(const EnsembleSource& base, std::span<const InputSequence> pool,
                                           const ExperimentConfig& cfg, SweepParam param,
                                           std::span<const double> values) {
    require(!values.empty(), "sweep: no values");
    std::vector<ExperimentReport> reports;
    for (double v : values) {
        ExperimentConfig c = cfg;
        EnsembleSource src = base;
        switch (param) {
            case SweepParam::p_targ: c.cp.p_targ = v; break;
            case SweepParam::r: c.cp.exponent = v; break;
            case SweepParam::k: {
                require(v >= 1 && v == std::floor(v), "sweep: K values must be positive integers");
                auto kk = static_cast<std::size_t>(v);
                if (auto* e = std::get_if<Ensemble>(&src))
                    *e = e->prefix(kk);
                else
                    std::get<PosteriorSource>(src).k = kk;
                break;
            }
        }
        reports.push_back(run_experiment(src, pool, c));
    }
    return reports;
}

}  // namespace spikecp
