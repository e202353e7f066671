// spikecp: train spiking-network ensembles, calibrate them, make adaptive
// set-valued decisions, and run coverage/latency sweeps and validity checks.
//
//   spikecp gen-data  --count 600 --seed 1 --out data/pool.json
//   spikecp train     --mode de --k 6 --seed 7 --out out/ensemble.json
//   spikecp calibrate --ensemble out/ensemble.json --data data/cal.json --out out/cal.csv
//   spikecp decide    --ensemble out/ensemble.json --calibration out/cal.csv --data data/test.json
//   spikecp sweep     --param k --values 1,2,4,6 --out-dir out/sweep_k
//   spikecp validate  --trials 10000 --cal 50
//
// Every subcommand accepts --config FILE (TOML/INI key = value); explicit
// flags override the file, which overrides the defaults.
//
// Exit codes: 0 success, 1 usage/config/input error, 2 validation failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikecp/spikecp.hpp"

namespace fs = std::filesystem;
using namespace spikecp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;

/// Hash of every effective option of `cmd` except output locations.
std::string config_hash(const CLI::App& cmd) {
    std::map<std::string, std::string> items;
    for (const CLI::Option* opt : cmd.get_options()) {
        std::string name = opt->get_name(false, true);
        if (name.empty() || name == "--help" || name == "--config" || name.rfind("--out", 0) == 0 ||
            name == "--traces-dir")
            continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->reduced_results()) value += r + ";";
        } else {
            value = opt->get_default_str();
        }
        items[name] = value;
    }
    std::string key = "cli:v1:" + cmd.get_name();
    for (const auto& [k, v] : items) key += "|" + k + "=" + v;
    return to_hex(fnv1a64(key));
}

/// Turns the key = value pairs of a config file into command-line arguments
/// for `cmd`. They are placed before the user's own flags, and every option
/// keeps its last value, so explicit flags win.
std::vector<std::string> config_args(const CLI::App& cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::FileError::Missing(path);
    std::vector<std::string> args;
    for (const auto& item : CLI::ConfigTOML().from_config(in)) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        std::string name = item.name;
        std::replace(name.begin(), name.end(), '_', '-');
        const CLI::Option* opt = item.parents.empty() ? cmd.get_option_no_throw("--" + name) : nullptr;
        if (opt == nullptr || name == "config")
            throw CLI::ConfigError("unknown key '" + item.fullname() + "' in config file " + path);
        if (opt->get_expected_min() == 0) {
            std::string v = item.inputs.empty() ? "true" : item.inputs.front();
            if (v == "true" || v == "1" || v == "yes" || v == "on") args.push_back("--" + name);
        } else {
            args.push_back("--" + name);
            args.insert(args.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    return args;
}

std::vector<int> parse_checkpoints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            out.push_back(std::stoi(part));
        } catch (const std::exception&) {
            throw ContractError("--checkpoints: cannot parse '" + part + "'");
        }
    }
    return out;
}

std::vector<double> parse_values(const std::string& s, const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            out.push_back(io::parse_r(part));
        } catch (const std::exception&) {
            throw ContractError(flag + ": cannot parse '" + part + "'");
        }
    }
    if (out.empty()) throw ContractError(flag + ": no values given");
    return out;
}

MergeMode parse_merge(const std::string& s) {
    if (s == "cm") return MergeMode::confidence;
    if (s == "pm") return MergeMode::p_value;
    throw ContractError("--merge must be 'cm' or 'pm', got '" + s + "'");
}

ResamplePolicy parse_policy(const std::string& s) {
    if (s == "fixed") return ResamplePolicy::fixed;
    if (s == "per-resample") return ResamplePolicy::per_resample;
    if (s == "per-input") return ResamplePolicy::per_input;
    throw ContractError("--policy must be fixed, per-resample or per-input, got '" + s + "'");
}

// ------------------------------------------------------------ options ---

struct DataOpts {
    std::size_t classes = 4;
    std::size_t channels = 40;
    std::size_t steps = 80;
    double high_rate = 0.3;
    double low_rate = 0.1;
    double difficulty_min = 0.3;
    double difficulty_max = 1.0;

    SyntheticSpec spec(std::uint64_t seed) const {
        return {classes, channels, steps, high_rate, low_rate, difficulty_min, difficulty_max, seed};
    }

    void add(CLI::App* cmd) {
        cmd->add_option("--classes", classes, "Number of classes")->check(CLI::PositiveNumber);
        cmd->add_option("--channels", channels, "Input channels")->check(CLI::PositiveNumber);
        cmd->add_option("--steps", steps, "Time steps per sequence")->check(CLI::PositiveNumber);
        cmd->add_option("--high-rate", high_rate, "Firing rate on the class's own channels");
        cmd->add_option("--low-rate", low_rate, "Background firing rate");
        cmd->add_option("--difficulty-min", difficulty_min, "Lower end of the per-example difficulty range");
        cmd->add_option("--difficulty-max", difficulty_max, "Upper end of the per-example difficulty range");
    }
};

struct TrainOpts {
    std::string mode = "de";
    std::size_t k = 6;
    std::size_t hidden = 32;
    double beta_mem = 0.9;
    double beta_syn = 0.9;
    double threshold = 1.0;
    TrainConfig cfg;

    void add(CLI::App* cmd) {
        cmd->add_option("--mode", mode, "single | de | vi")->check(CLI::IsMember({"single", "de", "vi"}));
        cmd->add_option("--k", k, "Ensemble size (de)")->check(CLI::PositiveNumber);
        cmd->add_option("--hidden", hidden, "Hidden layer width (0 for no hidden layer)");
        cmd->add_option("--beta-mem", beta_mem, "Membrane decay");
        cmd->add_option("--beta-syn", beta_syn, "Synaptic decay");
        cmd->add_option("--threshold", threshold, "Firing threshold");
        cmd->add_option("--epochs", cfg.epochs, "Training epochs");
        cmd->add_option("--batch-size", cfg.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
        cmd->add_option("--lr", cfg.learning_rate, "Adam step size");
        cmd->add_option("--slope", cfg.surrogate_slope, "Surrogate sigmoid slope");
        cmd->add_option("--prior-var", cfg.init_variance, "Initialization / prior variance");
        cmd->add_option("--posterior-scale", cfg.posterior_init_scale,
                        "Initial posterior std as a fraction of the prior std (vi)");
    }

    Architecture architecture(std::size_t inputs, std::size_t classes) const {
        Architecture a;
        a.layer_sizes = hidden > 0 ? std::vector<std::size_t>{inputs, hidden, classes}
                                   : std::vector<std::size_t>{inputs, classes};
        a.neuron = {beta_mem, beta_syn, threshold};
        a.validate();
        return a;
    }
};

struct EnsembleInput {
    std::string ensemble;
    std::string posterior;
    std::size_t k = 6;
    std::uint64_t sample_seed = 0;

    void add(CLI::App* cmd) {
        auto* e = cmd->add_option("--ensemble", ensemble, "Ensemble file")->check(CLI::ExistingFile);
        auto* p = cmd->add_option("--posterior", posterior, "Posterior file (members are sampled)")
                      ->check(CLI::ExistingFile);
        e->excludes(p);
        cmd->add_option("--k", k, "Members to sample from a posterior")->check(CLI::PositiveNumber);
        cmd->add_option("--sample-seed", sample_seed, "Seed for posterior sampling");
    }

    Ensemble load() const {
        if (!ensemble.empty()) return io::ensemble_from_json(io::load_json(ensemble));
        if (!posterior.empty())
            return sample_ensemble(io::posterior_from_json(io::load_json(posterior)), k, sample_seed);
        throw ContractError("one of --ensemble or --posterior is required");
    }
};

std::size_t infer_classes(std::span<const InputSequence> data, std::size_t requested) {
    int max_label = -1;
    for (const auto& x : data)
        if (x.label) max_label = std::max(max_label, *x.label);
    require(static_cast<int>(requested) > max_label, "--classes is smaller than the largest label in the data");
    return requested;
}

// ----------------------------------------------------------- commands ---

struct GenDataCmd {
    DataOpts data;
    std::size_t count = 600;
    std::size_t first = 0;
    std::uint64_t seed = 0;
    std::string out;

    void add(CLI::App* cmd) {
        data.add(cmd);
        cmd->add_option("--count", count, "Examples to generate")->check(CLI::PositiveNumber);
        cmd->add_option("--first", first, "Index of the first example in the stream");
        cmd->add_option("--seed", seed, "Master seed");
        cmd->add_option("--out", out, "Output dataset file")->required();
    }

    int run(const CLI::App& cmd) const {
        auto ds = generate_dataset(data.spec(seed), count, first);
        io::save_json(out, io::to_json(std::span<const InputSequence>(ds), config_hash(cmd)));
        std::cout << "wrote " << ds.size() << " examples to " << out << "\n";
        return kExitOk;
    }
};

struct TrainCmd {
    TrainOpts train;
    DataOpts data;
    std::string data_file;
    std::size_t train_size = 600;
    std::uint64_t seed = 0;
    std::string out;

    void add(CLI::App* cmd) {
        train.add(cmd);
        data.add(cmd);
        cmd->add_option("--data", data_file, "Training dataset (synthetic data is generated when absent)")
            ->check(CLI::ExistingFile);
        cmd->add_option("--train-size", train_size, "Synthetic training examples when --data is absent");
        cmd->add_option("--seed", seed, "Master seed");
        cmd->add_option("--out", out, "Output file (default out/<mode>.json)");
    }

    int run(const CLI::App& cmd) {
        std::vector<InputSequence> ds = data_file.empty()
                                            ? generate_dataset(data.spec(derive_seed(seed, 0xDA7A)), train_size)
                                            : io::dataset_from_json(io::load_json(data_file));
        require(!ds.empty(), "training dataset is empty");
        auto arch = train.architecture(ds.front().channels(), infer_classes(ds, data.classes));
        TrainConfig cfg = train.cfg;
        cfg.seed = seed;
        const std::string hash = config_hash(cmd);
        fs::path path = out.empty() ? fs::path("out") / (train.mode + ".json") : fs::path(out);
        if (train.mode == "single") {
            io::save_json(path, io::to_json(train_single(ds, arch, cfg).model, hash));
        } else if (train.mode == "de") {
            io::save_json(path, io::to_json(train_deep_ensemble(ds, arch, cfg, train.k), hash));
        } else {
            io::save_json(path, io::to_json(train_vi(ds, arch, cfg).posterior, hash));
        }
        std::cout << "wrote " << train.mode << " artifact to " << path.string() << " (config " << hash << ")\n";
        return kExitOk;
    }
};

struct CalibrateCmd {
    EnsembleInput input;
    std::string data_file;
    std::string checkpoints = "20,40,60,80";
    std::string out;

    void add(CLI::App* cmd) {
        input.add(cmd);
        cmd->add_option("--data", data_file, "Labelled calibration dataset")->required()->check(CLI::ExistingFile);
        cmd->add_option("--checkpoints", checkpoints, "Comma-separated checkpoint times");
        cmd->add_option("--out", out, "Output calibration table")->required();
    }

    int run(const CLI::App& cmd) const {
        auto ens = input.load();
        auto ds = io::dataset_from_json(io::load_json(data_file));
        auto cps = parse_checkpoints(checkpoints);
        auto cal = CalibrationTable::build(ens, ds, cps);
        io::write_file(out, io::format_calibration(cal, config_hash(cmd)));
        std::cout << "calibrated " << cal.num_models() << " models on " << cal.num_examples() << " examples\n";
        return kExitOk;
    }
};

struct DecideCmd {
    EnsembleInput input;
    std::string calibration;
    std::string data_file;
    std::string merge = "pm";
    std::string r = "45";
    double p_targ = 0.9;
    std::size_t i_th = 3;
    std::string baseline = "none";
    std::string p_th = "auto";
    bool dc_every_step = false;
    std::string dc_cal_data;
    std::string out;
    std::string traces_dir;

    void add(CLI::App* cmd) {
        input.add(cmd);
        cmd->add_option("--calibration", calibration, "Calibration table")->required()->check(CLI::ExistingFile);
        cmd->add_option("--data", data_file, "Inputs to decide on")->required()->check(CLI::ExistingFile);
        cmd->add_option("--merge", merge, "cm | pm");
        cmd->add_option("--r", r, "Pooling exponent (inf and -inf accepted)");
        cmd->add_option("--p-targ", p_targ, "Target coverage");
        cmd->add_option("--i-th", i_th, "Set-size stopping threshold");
        cmd->add_option("--baseline", baseline, "none | dc")->check(CLI::IsMember({"none", "dc"}));
        cmd->add_option("--p-th", p_th, "DC-SNN confidence threshold, or 'auto' to calibrate it");
        cmd->add_flag("--dc-every-step", dc_every_step, "DC-SNN may stop at any step, not only checkpoints");
        cmd->add_option("--dc-cal-data", dc_cal_data, "Calibration dataset for --dc-every-step with --p-th auto")
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", out, "Decision records file (default stdout)");
        cmd->add_option("--traces-dir", traces_dir, "Also write each input's score traces here");
    }

    int run(const CLI::App& cmd) const {
        auto ens = input.load();
        auto loaded = io::parse_calibration(io::read_file(calibration));
        const auto& cal = loaded.table;
        if (cal.arch_hash() != ens.arch().hash())
            throw ContractError("calibration table architecture hash " + cal.arch_hash() +
                                " does not match the ensemble's " + ens.arch().hash());
        if (cal.num_models() != ens.size())
            throw ContractError("calibration table has " + std::to_string(cal.num_models()) +
                                " models, ensemble has " + std::to_string(ens.size()));
        auto ds = io::dataset_from_json(io::load_json(data_file));

        SpikeCPConfig cp;
        cp.p_targ = p_targ;
        cp.checkpoints = cal.checkpoints();
        cp.set_size_threshold = i_th;
        cp.merge = parse_merge(merge);
        cp.exponent = io::parse_r(r);
        SpikeCP rule(cal, cp);

        const std::string hash = config_hash(cmd);
        const bool dc = baseline == "dc";
        const int horizon = ds.empty() ? 0 : static_cast<int>(ds.front().steps());
        const auto& cps = cal.checkpoints();
        std::vector<int> dc_times = dc_every_step ? every_step(horizon) : cps;
        double threshold = 0.0;
        if (dc) {
            if (p_th == "auto") {
                std::vector<std::vector<std::vector<double>>> cal_pooled;
                std::vector<int> labels = cal.labels();
                if (dc_every_step) {
                    if (dc_cal_data.empty())
                        throw ContractError("--dc-every-step with --p-th auto needs --dc-cal-data");
                    auto cal_ds = io::dataset_from_json(io::load_json(dc_cal_data));
                    labels.clear();
                    for (const auto& x : cal_ds) {
                        std::vector<ScoreTrace> tr;
                        for (const auto& m : ens.members) tr.push_back(forward(x, m, dc_times));
                        cal_pooled.push_back(pooled_confidences(tr));
                        labels.push_back(*x.label);
                    }
                } else {
                    for (std::size_t i = 0; i < cal.num_examples(); ++i) {
                        std::vector<ScoreTrace> tr;
                        for (std::size_t k = 0; k < cal.num_models(); ++k) tr.push_back(cal.trace(k, i));
                        cal_pooled.push_back(pooled_confidences(tr));
                    }
                }
                threshold = calibrate_dc_threshold(cal_pooled, labels, dc_times, horizon, p_targ, default_dc_grid());
            } else {
                threshold = parse_double(p_th);
            }
        }

        std::ostringstream rec;
        rec << "# spikecp-decisions v" << io::kFormatVersion << '\n' << "# config_hash=" << hash << '\n';
        if (dc) rec << "# p_th=" << format_double(threshold) << '\n';
        rec << "example,label,method,stop_time,set,point_label,diagnostics\n";
        auto diag = [](const AdaptiveDecision& d) {
            std::string s;
            for (std::size_t j = 0; j < d.diagnostics.size(); ++j) {
                if (j) s += ';';
                s += std::to_string(d.diagnostics[j].time) + ":";
                for (std::size_t c = 0; c < d.diagnostics[j].values.size(); ++c)
                    s += (c ? " " : "") + format_double(d.diagnostics[j].values[c]);
            }
            return s;
        };
        for (std::size_t i = 0; i < ds.size(); ++i) {
            std::vector<ScoreTrace> traces;
            for (const auto& m : ens.members) traces.push_back(forward(ds[i], m, cps));
            if (!traces_dir.empty())
                io::write_file(fs::path(traces_dir) / ("trace_" + std::to_string(i) + ".csv"),
                               io::format_traces(traces, ens.arch().hash(), hash));
            std::string label = ds[i].label ? std::to_string(*ds[i].label) : "";
            auto d = rule.decide(traces);
            rec << i << ',' << label << ",spikecp-" << merge << ',' << d.stop_time << ',' << io::format_set(d.set)
                << ",," << diag(d) << '\n';
            if (dc) {
                std::vector<ScoreTrace> dtr;
                if (dc_every_step)
                    for (const auto& m : ens.members) dtr.push_back(forward(ds[i], m, dc_times));
                auto dd = dc_snn_decide(pooled_confidences(dc_every_step ? dtr : traces), dc_times, threshold,
                                        horizon, i_th);
                rec << i << ',' << label << ",dc," << dd.stop_time << ',' << io::format_set(dd.set) << ','
                    << *dd.point_label << ',' << diag(dd) << '\n';
            }
        }
        if (out.empty())
            std::cout << rec.str();
        else
            io::write_file(out, rec.str());
        return kExitOk;
    }
};

struct SweepCmd {
    std::string param = "k";
    std::string values = "1,2,4,6";
    std::string ensemble_mode = "vi";
    std::string merge = "pm";
    std::string r = "45";
    double p_targ = 0.9;
    std::size_t k = 6;
    std::size_t i_th = 3;
    std::string checkpoints = "20,40,60,80";
    std::size_t resamples = 20;
    std::size_t cal_size = 50;
    std::size_t test_size = 200;
    std::size_t pool_size = 600;
    std::size_t train_size = 600;
    std::string policy = "per-resample";
    bool dc = false;
    bool dc_every_step = false;
    std::string ensemble_file;
    std::string posterior_file;
    std::uint64_t seed = 0;
    TrainOpts train;
    DataOpts data;
    std::string out_dir = "out/sweep";

    void add(CLI::App* cmd) {
        train.add(cmd);
        data.add(cmd);
        // The sweep's --k is the base ensemble size; TrainOpts registered its own --k above.
        cmd->remove_option(cmd->get_option("--k"));
        cmd->remove_option(cmd->get_option("--mode"));
        cmd->add_option("--param", param, "Swept parameter: k | p-targ | r")
            ->check(CLI::IsMember({"k", "p-targ", "r"}));
        cmd->add_option("--values", values, "Comma-separated values of the swept parameter");
        cmd->add_option("--ensemble-mode", ensemble_mode, "de | vi")->check(CLI::IsMember({"de", "vi"}));
        cmd->add_option("--merge", merge, "cm | pm");
        cmd->add_option("--r", r, "Pooling exponent (inf and -inf accepted)");
        cmd->add_option("--p-targ", p_targ, "Target coverage");
        cmd->add_option("--k", k, "Ensemble size when not swept")->check(CLI::PositiveNumber);
        cmd->add_option("--i-th", i_th, "Set-size stopping threshold");
        cmd->add_option("--checkpoints", checkpoints, "Comma-separated checkpoint times");
        cmd->add_option("--resamples", resamples, "Calibration/test realizations")->check(CLI::PositiveNumber);
        cmd->add_option("--cal-size", cal_size, "Calibration examples per realization");
        cmd->add_option("--test-size", test_size, "Test examples per realization");
        cmd->add_option("--pool-size", pool_size, "Synthetic pool size");
        cmd->add_option("--train-size", train_size, "Synthetic training examples");
        cmd->add_option("--policy", policy, "VI sampling: fixed | per-resample | per-input");
        cmd->add_flag("--dc", dc, "Also run the DC-SNN baseline");
        cmd->add_flag("--dc-every-step", dc_every_step, "DC-SNN may stop at any step");
        auto* e = cmd->add_option("--ensemble", ensemble_file, "Pretrained ensemble (skips training)")
                      ->check(CLI::ExistingFile);
        auto* p = cmd->add_option("--posterior", posterior_file, "Pretrained posterior (skips training)")
                      ->check(CLI::ExistingFile);
        e->excludes(p);
        cmd->add_option("--seed", seed, "Master seed");
        cmd->add_option("--out-dir", out_dir, "Directory for summary.csv, records.csv and sweep.svg");
    }

    int run(const CLI::App& cmd) {
        const SweepParam sp = parse_sweep_param(param);
        const auto vals = parse_values(values, "--values");
        const std::string hash = config_hash(cmd);

        auto pool = generate_dataset(data.spec(derive_seed(seed, 0xB001)), pool_size);
        std::size_t max_k = k;
        if (sp == SweepParam::k) max_k = static_cast<std::size_t>(*std::max_element(vals.begin(), vals.end()));

        EnsembleSource source;
        if (!ensemble_file.empty()) {
            source = io::ensemble_from_json(io::load_json(ensemble_file));
        } else if (!posterior_file.empty()) {
            source = PosteriorSource{io::posterior_from_json(io::load_json(posterior_file)), k, parse_policy(policy)};
        } else {
            auto tr = generate_dataset(data.spec(derive_seed(seed, 0xDA7A)), train_size);
            auto arch = train.architecture(data.channels, data.classes);
            TrainConfig cfg = train.cfg;
            cfg.seed = derive_seed(seed, 0x7A1);
            if (ensemble_mode == "de")
                source = train_deep_ensemble(tr, arch, cfg, max_k);
            else
                source = PosteriorSource{train_vi(tr, arch, cfg).posterior, k, parse_policy(policy)};
        }
        if (auto* e = std::get_if<Ensemble>(&source); e && sp != SweepParam::k) *e = e->prefix(std::min(k, e->size()));

        ExperimentConfig ec;
        ec.cp.p_targ = p_targ;
        ec.cp.checkpoints = parse_checkpoints(checkpoints);
        ec.cp.set_size_threshold = i_th;
        ec.cp.merge = parse_merge(merge);
        ec.cp.exponent = io::parse_r(r);
        ec.cal_size = cal_size;
        ec.test_size = test_size;
        ec.resamples = resamples;
        ec.run_dc = dc;
        ec.dc_every_step = dc_every_step;
        ec.seed = derive_seed(seed, 0xE4);

        auto reports = sweep(source, pool, ec, sp, vals);

        fs::path dir(out_dir);
        io::write_file(dir / "summary.csv", io::format_summary(reports, hash));
        io::write_file(dir / "records.csv", io::format_records(reports, hash));

        std::map<std::string, io::PlotSeries> cov, lat;
        std::vector<std::string> order;
        for (const auto& rep : reports)
            for (const auto& row : rep.rows) {
                if (!cov.count(row.mode)) order.push_back(row.mode);
                cov[row.mode].name = lat[row.mode].name = row.mode;
                cov[row.mode].y.push_back(row.coverage);
                lat[row.mode].y.push_back(row.latency);
            }
        std::vector<io::PlotSeries> cs, ls;
        for (const auto& m : order) cs.push_back(cov[m]), ls.push_back(lat[m]);
        std::optional<double> target;
        if (sp != SweepParam::p_targ) target = p_targ;
        io::write_file(dir / "sweep.svg",
                       io::format_sweep_svg("sweep over " + param + " (config " + hash + ")", param, vals, cs, ls,
                                            target));

        std::cout << io::kSummaryColumns << '\n';
        for (const auto& rep : reports) std::cout << io::format_summary_rows(rep.rows);
        return kExitOk;
    }
};

struct ValidateCmd {
    std::size_t trials = 10000;
    std::size_t cal = 50;
    std::string alphas = "0.05,0.1,0.25,0.5";
    double slack = 0.02;
    std::size_t k = 6;
    std::size_t dominance_samples = 100000;
    std::uint64_t seed = 0;
    std::string out;

    void add(CLI::App* cmd) {
        cmd->add_option("--trials", trials, "Monte Carlo trials per check")->check(CLI::Range(1000, 100000000));
        cmd->add_option("--cal", cal, "Calibration set size")->check(CLI::PositiveNumber);
        cmd->add_option("--alphas", alphas, "Comma-separated significance levels");
        cmd->add_option("--slack", slack, "Allowed excess of the empirical rate over alpha");
        cmd->add_option("--k", k, "Number of merged p-variables")->check(CLI::PositiveNumber);
        cmd->add_option("--dominance-samples", dominance_samples, "Random inputs for the exact merging checks");
        cmd->add_option("--seed", seed, "Master seed");
        cmd->add_option("--out", out, "Also write the check table to this file");
    }

    int run(const CLI::App& cmd) const {
        const auto as = parse_values(alphas, "--alphas");
        std::ostringstream table;
        table << "# spikecp-validation v" << io::kFormatVersion << '\n'
              << "# config_hash=" << config_hash(cmd) << '\n'
              << "check,alpha,rate,limit,pass\n";
        std::vector<std::string> failures;
        auto row = [&](const std::string& name, double alpha, double rate, double limit, bool pass) {
            table << name << ',' << format_double(alpha) << ',' << format_double(rate) << ','
                  << format_double(limit) << ',' << (pass ? "yes" : "no") << '\n';
            if (!pass) failures.push_back(name + " at alpha=" + format_double(alpha));
        };

        auto rates = validity_monte_carlo(trials, cal, as, derive_seed(seed, 1));
        for (std::size_t a = 0; a < as.size(); ++a) row("p-value", as[a], rates[a], as[a] + slack, rates[a] <= as[a] + slack);

        const std::pair<const char*, double> modes[] = {{"pm-min", -kInf}, {"pm-max", kInf}, {"pm-r45", 45.0}};
        for (std::size_t m = 0; m < 3; ++m) {
            auto pr = pm_validity_monte_carlo(trials, k, cal, modes[m].second, as, derive_seed(seed, 2 + m));
            for (std::size_t a = 0; a < as.size(); ++a)
                row(modes[m].first, as[a], pr[a], as[a] + slack, pr[a] <= as[a] + slack);
        }

        // Exact identities on random inputs.
        Rng rng = make_rng(derive_seed(seed, 9));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::size_t bad_min = 0, bad_max = 0, bad_dom = 0;
        std::vector<double> p(k);
        for (std::size_t s = 0; s < dominance_samples; ++s) {
            for (double& v : p) v = 1.0 - unit(rng);  // (0, 1]
            double mn = *std::min_element(p.begin(), p.end()), mx = *std::max_element(p.begin(), p.end());
            bad_min += pm_pool(p, -kInf) != std::min(static_cast<double>(k) * mn, 1.0);
            bad_max += pm_pool(p, kInf) != mx;
            bad_dom += pm_pool(p, 45.0) < mx;
        }
        row("pm-min-equals-K-min", 0, static_cast<double>(bad_min), 0, bad_min == 0);
        row("pm-max-equals-max", 0, static_cast<double>(bad_max), 0, bad_max == 0);
        row("pm-r45-dominates-max", 0, static_cast<double>(bad_dom), 0, bad_dom == 0);

        std::cout << table.str();
        if (!out.empty()) io::write_file(out, table.str());
        if (!failures.empty()) {
            std::cerr << "validation failed:\n";
            for (const auto& f : failures) std::cerr << "  " << f << '\n';
            return kExitValidation;
        }
        return kExitOk;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ensemble conformal early stopping for spiking networks"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    auto add_cmd = [&](const char* name, const char* help) {
        auto* cmd = app.add_subcommand(name, help);
        cmd->add_option("--config", "Read options from a TOML/INI key = value file")->check(CLI::ExistingFile);
        return cmd;
    };

    GenDataCmd gen;
    TrainCmd train;
    CalibrateCmd calibrate;
    DecideCmd decide;
    SweepCmd sweep_cmd;
    ValidateCmd validate;
    auto* c_gen = add_cmd("gen-data", "Generate a synthetic labelled dataset");
    auto* c_train = add_cmd("train", "Train a single model, a deep ensemble or a variational posterior");
    auto* c_cal = add_cmd("calibrate", "Score a calibration set with every ensemble member");
    auto* c_decide = add_cmd("decide", "Adaptive set-valued decisions for a dataset");
    auto* c_sweep = add_cmd("sweep", "Coverage/latency sweep over K, p_targ or r");
    auto* c_val = add_cmd("validate", "Monte Carlo p-variable and p-merging validity checks");
    gen.add(c_gen);
    train.add(c_train);
    calibrate.add(c_cal);
    decide.add(c_decide);
    sweep_cmd.add(c_sweep);
    validate.add(c_val);

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        if (!args.empty()) {
            if (CLI::App* sub = app.get_subcommand_no_throw(args[0])) {
                for (std::size_t i = 1; i < args.size(); ++i) {
                    std::string file;
                    if (args[i] == "--config" && i + 1 < args.size())
                        file = args[i + 1];
                    else if (args[i].rfind("--config=", 0) == 0)
                        file = args[i].substr(9);
                    if (file.empty()) continue;
                    auto extra = config_args(*sub, file);
                    args.insert(args.begin() + 1, extra.begin(), extra.end());
                    break;
                }
            }
        }
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (c_gen->parsed()) return gen.run(*c_gen);
        if (c_train->parsed()) return train.run(*c_train);
        if (c_cal->parsed()) return calibrate.run(*c_cal);
        if (c_decide->parsed()) return decide.run(*c_decide);
        if (c_sweep->parsed()) return sweep_cmd.run(*c_sweep);
        if (c_val->parsed()) return validate.run(*c_val);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
