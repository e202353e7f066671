#pragma once

// File formats.
//
//   models, ensembles, posteriors, datasets   JSON documents tagged with a
//                                             format name and version
//   calibration tables, score traces          delimited text, one row per
//                                             (model, checkpoint, [example,] class)
//   experiment reports                        delimited summary + raw records
//
// Every file carries the config hash of the run that produced it. Doubles are
// written in shortest round-trip form, so load(save(x)) == x bit for bit.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikecp/common.hpp"
#include "spikecp/conformal.hpp"
#include "spikecp/harness.hpp"
#include "spikecp/snn.hpp"
#include "spikecp/training.hpp"

namespace spikecp::io {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    out << content;
}

// ---------------------------------------------------------------- JSON ---

inline json to_json(const Architecture& a) {
    return {{"layers", a.layer_sizes},
            {"beta_mem", a.neuron.beta_mem},
            {"beta_syn", a.neuron.beta_syn},
            {"threshold", a.neuron.threshold}};
}

inline Architecture architecture_from_json(const json& j) {
    Architecture a;
    a.layer_sizes = j.at("layers").get<std::vector<std::size_t>>();
    a.neuron.beta_mem = j.at("beta_mem").get<double>();
    a.neuron.beta_syn = j.at("beta_syn").get<double>();
    a.neuron.threshold = j.at("threshold").get<double>();
    a.validate();
    return a;
}

inline json header(const std::string& format, const std::string& config_hash) {
    return {{"format", format}, {"version", kFormatVersion}, {"config_hash", config_hash}};
}

inline void check_header(const json& j, const std::string& format) {
    if (!j.is_object() || j.value("format", "") != format)
        throw FormatError("expected a '" + format + "' document, found '" +
                          (j.is_object() ? j.value("format", "?") : std::string("?")) + "'");
    if (j.at("version").get<int>() != kFormatVersion)
        throw FormatError(format + ": unsupported format version " + std::to_string(j.at("version").get<int>()));
}

inline json to_json(const ModelParams& m, const std::string& config_hash = {}) {
    json j = header("spikecp-model", config_hash);
    j["arch"] = to_json(m.arch);
    j["arch_hash"] = m.arch.hash();
    j["weights"] = m.weights;
    return j;
}

inline ModelParams model_from_json(const json& j) {
    check_header(j, "spikecp-model");
    return ModelParams(architecture_from_json(j.at("arch")), j.at("weights").get<std::vector<double>>());
}

inline json to_json(const Ensemble& e, const std::string& config_hash = {}) {
    json j = header("spikecp-ensemble", config_hash);
    j["kind"] = to_string(e.kind);
    j["seeds"] = e.seeds;
    j["arch_hash"] = e.arch().hash();
    j["members"] = json::array();
    for (const auto& m : e.members) j["members"].push_back(to_json(m, config_hash));
    return j;
}

inline Ensemble ensemble_from_json(const json& j) {
    check_header(j, "spikecp-ensemble");
    Ensemble e;
    auto kind = j.at("kind").get<std::string>();
    if (kind != "de" && kind != "vi") throw FormatError("ensemble: unknown kind '" + kind + "'");
    e.kind = kind == "de" ? EnsembleKind::deep : EnsembleKind::variational;
    e.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& m : j.at("members")) e.members.push_back(model_from_json(m));
    e.validate();
    return e;
}

inline json to_json(const VariationalPosterior& p, const std::string& config_hash = {}) {
    json j = header("spikecp-posterior", config_hash);
    j["arch"] = to_json(p.arch);
    j["arch_hash"] = p.arch.hash();
    j["mu"] = p.mu;
    j["rho"] = p.rho;
    return j;
}

inline VariationalPosterior posterior_from_json(const json& j) {
    check_header(j, "spikecp-posterior");
    VariationalPosterior p;
    p.arch = architecture_from_json(j.at("arch"));
    p.mu = j.at("mu").get<std::vector<double>>();
    p.rho = j.at("rho").get<std::vector<double>>();
    p.validate();
    return p;
}

inline json to_json(std::span<const InputSequence> data, const std::string& config_hash = {}) {
    require(!data.empty(), "cannot serialize an empty dataset");
    json j = header("spikecp-dataset", config_hash);
    j["steps"] = data.front().steps();
    j["channels"] = data.front().channels();
    j["examples"] = json::array();
    for (const auto& x : data) {
        require(x.steps() == data.front().steps() && x.channels() == data.front().channels(),
                "dataset examples must share one shape");
        json ex;
        ex["label"] = x.label ? json(*x.label) : json(nullptr);
        std::vector<double> flat(x.samples.data(), x.samples.data() + x.samples.size());
        ex["samples"] = std::move(flat);
        j["examples"].push_back(std::move(ex));
    }
    return j;
}

inline std::vector<InputSequence> dataset_from_json(const json& j) {
    check_header(j, "spikecp-dataset");
    auto steps = j.at("steps").get<Eigen::Index>();
    auto channels = j.at("channels").get<Eigen::Index>();
    std::vector<InputSequence> out;
    for (const auto& ex : j.at("examples")) {
        InputSequence x;
        if (!ex.at("label").is_null()) x.label = ex.at("label").get<int>();
        auto flat = ex.at("samples").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(flat.size()) != steps * channels)
            throw FormatError("dataset: example has " + std::to_string(flat.size()) + " samples, expected " +
                              std::to_string(steps * channels));
        x.samples = Eigen::Map<const RowMatrix>(flat.data(), steps, channels);
        out.push_back(std::move(x));
    }
    return out;
}

inline json load_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline void save_json(const std::filesystem::path& path, const json& j) { write_file(path, j.dump() + "\n"); }

// --------------------------------------------------------- delimited ---

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

template <typename T>
std::string join(const std::vector<T>& xs, char sep) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out.push_back(sep);
        if constexpr (std::is_floating_point_v<T>)
            out += format_double(xs[i]);
        else
            out += std::to_string(xs[i]);
    }
    return out;
}

inline long long parse_int(const std::string& s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("cannot parse integer '" + s + "'");
    return v;
}

inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    if (s.empty()) return out;
    for (const auto& part : split(s, ',')) out.push_back(static_cast<int>(parse_int(part)));
    return out;
}

/// "# key=value" header lines followed by a column header and data rows.
struct Table {
    std::map<std::string, std::string> meta;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    const std::string& meta_at(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw FormatError("missing header field '" + key + "'");
        return it->second;
    }

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw FormatError("missing column '" + name + "'");
    }
};

inline Table parse_table(const std::string& text, const std::string& format) {
    Table t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.rfind("# ", 0) == 0) {
            if (first) {
                if (line.substr(2) != format + " v" + std::to_string(kFormatVersion))
                    throw FormatError("expected '" + format + " v" + std::to_string(kFormatVersion) + "' header, found '" +
                                      line.substr(2) + "'");
                first = false;
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            t.meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
            continue;
        }
        if (first) throw FormatError("missing '" + format + "' header line");
        if (t.columns.empty()) {
            t.columns = split(line, ',');
        } else {
            auto row = split(line, ',');
            if (row.size() != t.columns.size())
                throw FormatError("row has " + std::to_string(row.size()) + " fields, expected " +
                                  std::to_string(t.columns.size()));
            t.rows.push_back(std::move(row));
        }
    }
    if (first) throw FormatError("empty file, expected '" + format + "'");
    return t;
}

inline void write_score_row(std::ostringstream& out, const CheckpointScore& s, std::size_t c) {
    out << s.counts[c] << ',' << format_double(s.confidence[c]) << ',' << format_double(s.loss[c]) << '\n';
}

}  // namespace detail

/// Columns: model,checkpoint,example,label,class,count,confidence,loss.
inline std::string format_calibration(const CalibrationTable& cal, const std::string& config_hash) {
    std::ostringstream out;
    out << "# spikecp-calibration v" << kFormatVersion << '\n'
        << "# config_hash=" << config_hash << '\n'
        << "# arch_hash=" << cal.arch_hash() << '\n'
        << "# models=" << cal.num_models() << '\n'
        << "# examples=" << cal.num_examples() << '\n'
        << "# classes=" << cal.num_classes() << '\n'
        << "# checkpoints=" << detail::join(cal.checkpoints(), ',') << '\n'
        << "model,checkpoint,example,label,class,count,confidence,loss\n";
    for (std::size_t k = 0; k < cal.num_models(); ++k)
        for (std::size_t j = 0; j < cal.checkpoints().size(); ++j)
            for (std::size_t i = 0; i < cal.num_examples(); ++i) {
                const auto& s = cal.trace(k, i)[j];
                for (std::size_t c = 0; c < cal.num_classes(); ++c) {
                    out << k << ',' << s.time << ',' << i << ',' << cal.labels()[i] << ',' << c << ',';
                    detail::write_score_row(out, s, c);
                }
            }
    return out.str();
}

struct LoadedCalibration {
    CalibrationTable table;
    std::string config_hash;
};

inline LoadedCalibration parse_calibration(const std::string& text) {
    auto t = detail::parse_table(text, "spikecp-calibration");
    const auto models = static_cast<std::size_t>(detail::parse_int(t.meta_at("models")));
    const auto examples = static_cast<std::size_t>(detail::parse_int(t.meta_at("examples")));
    const auto classes = static_cast<std::size_t>(detail::parse_int(t.meta_at("classes")));
    const auto cps = detail::parse_int_list(t.meta_at("checkpoints"));
    if (t.rows.size() != models * cps.size() * examples * classes)
        throw FormatError("calibration: expected " + std::to_string(models * cps.size() * examples * classes) +
                          " rows, found " + std::to_string(t.rows.size()));
    const std::size_t cm = t.column("model"), ct = t.column("checkpoint"), ce = t.column("example"),
                      cl = t.column("label"), cc = t.column("class"), cn = t.column("count"),
                      cf = t.column("confidence"), cs = t.column("loss");

    std::vector<int> labels(examples, -1);
    std::vector<std::vector<ScoreTrace>> traces(models, std::vector<ScoreTrace>(examples));
    for (auto& per_model : traces)
        for (auto& tr : per_model) {
            tr.entries.resize(cps.size());
            for (std::size_t j = 0; j < cps.size(); ++j) {
                tr.entries[j].time = cps[j];
                tr.entries[j].counts.assign(classes, 0);
                tr.entries[j].confidence.assign(classes, 0.0);
                tr.entries[j].loss.assign(classes, 0.0);
            }
        }
    std::size_t row = 0;
    for (std::size_t k = 0; k < models; ++k)
        for (std::size_t j = 0; j < cps.size(); ++j)
            for (std::size_t i = 0; i < examples; ++i)
                for (std::size_t c = 0; c < classes; ++c, ++row) {
                    const auto& r = t.rows[row];
                    if (static_cast<std::size_t>(detail::parse_int(r[cm])) != k ||
                        detail::parse_int(r[ct]) != cps[j] ||
                        static_cast<std::size_t>(detail::parse_int(r[ce])) != i ||
                        static_cast<std::size_t>(detail::parse_int(r[cc])) != c)
                        throw FormatError("calibration: row " + std::to_string(row) + " is out of order");
                    labels[i] = static_cast<int>(detail::parse_int(r[cl]));
                    auto& s = traces[k][i].entries[j];
                    s.counts[c] = static_cast<std::uint32_t>(detail::parse_int(r[cn]));
                    s.confidence[c] = parse_double(r[cf]);
                    s.loss[c] = parse_double(r[cs]);
                }
    return {CalibrationTable(cps, std::move(labels), classes, std::move(traces), t.meta_at("arch_hash")),
            t.meta_at("config_hash")};
}

/// Scores of one example under every member. Columns:
/// model,checkpoint,class,count,confidence,loss.
inline std::string format_traces(std::span<const ScoreTrace> traces, const std::string& arch_hash,
                                 const std::string& config_hash) {
    require(!traces.empty(), "format_traces: no traces");
    std::ostringstream out;
    std::vector<int> cps;
    for (const auto& e : traces.front().entries) cps.push_back(e.time);
    out << "# spikecp-trace v" << kFormatVersion << '\n'
        << "# config_hash=" << config_hash << '\n'
        << "# arch_hash=" << arch_hash << '\n'
        << "# models=" << traces.size() << '\n'
        << "# classes=" << traces.front()[0].loss.size() << '\n'
        << "# checkpoints=" << detail::join(cps, ',') << '\n'
        << "model,checkpoint,class,count,confidence,loss\n";
    for (std::size_t k = 0; k < traces.size(); ++k)
        for (const auto& s : traces[k].entries)
            for (std::size_t c = 0; c < s.loss.size(); ++c) {
                out << k << ',' << s.time << ',' << c << ',';
                detail::write_score_row(out, s, c);
            }
    return out.str();
}

inline std::vector<ScoreTrace> parse_traces(const std::string& text) {
    auto t = detail::parse_table(text, "spikecp-trace");
    const auto models = static_cast<std::size_t>(detail::parse_int(t.meta_at("models")));
    const auto classes = static_cast<std::size_t>(detail::parse_int(t.meta_at("classes")));
    const auto cps = detail::parse_int_list(t.meta_at("checkpoints"));
    if (t.rows.size() != models * cps.size() * classes) throw FormatError("trace: unexpected row count");
    const std::size_t cm = t.column("model"), ct = t.column("checkpoint"), cc = t.column("class"),
                      cn = t.column("count"), cf = t.column("confidence"), cs = t.column("loss");
    std::vector<ScoreTrace> out(models);
    std::size_t row = 0;
    for (std::size_t k = 0; k < models; ++k)
        for (int time : cps) {
            CheckpointScore s;
            s.time = time;
            for (std::size_t c = 0; c < classes; ++c, ++row) {
                const auto& r = t.rows[row];
                if (static_cast<std::size_t>(detail::parse_int(r[cm])) != k || detail::parse_int(r[ct]) != time ||
                    static_cast<std::size_t>(detail::parse_int(r[cc])) != c)
                    throw FormatError("trace: row " + std::to_string(row) + " is out of order");
                s.counts.push_back(static_cast<std::uint32_t>(detail::parse_int(r[cn])));
                s.confidence.push_back(parse_double(r[cf]));
                s.loss.push_back(parse_double(r[cs]));
            }
            out[k].entries.push_back(std::move(s));
        }
    return out;
}

inline std::string format_r(double r) {
    if (r == kInf) return "inf";
    if (r == -kInf) return "-inf";
    return format_double(r);
}

inline double parse_r(const std::string& s) {
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
    return parse_double(s);
}

inline std::string format_set(const std::vector<std::size_t>& set) {
    std::string out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (i) out.push_back(' ');
        out += std::to_string(set[i]);
    }
    return out;
}

inline std::vector<std::size_t> parse_set(const std::string& s) {
    std::vector<std::size_t> out;
    if (s.empty()) return out;
    for (const auto& part : detail::split(s, ' ')) out.push_back(static_cast<std::size_t>(detail::parse_int(part)));
    return out;
}

inline constexpr const char* kSummaryColumns = "mode,K,r,p_targ,coverage,latency,set_size,ci_halfwidth";

inline std::string format_summary_rows(std::span<const SummaryRow> rows) {
    std::ostringstream out;
    for (const auto& r : rows)
        out << r.mode << ',' << r.k << ',' << format_r(r.r) << ',' << format_double(r.p_targ) << ','
            << format_double(r.coverage) << ',' << format_double(r.latency) << ',' << format_double(r.set_size)
            << ',' << format_double(r.ci_halfwidth) << '\n';
    return out.str();
}

inline std::string format_summary(std::span<const ExperimentReport> reports, const std::string& config_hash) {
    std::ostringstream out;
    out << "# spikecp-summary v" << kFormatVersion << '\n' << "# config_hash=" << config_hash << '\n';
    out << kSummaryColumns << '\n';
    for (const auto& rep : reports) out << format_summary_rows(rep.rows);
    return out.str();
}

struct LoadedSummary {
    std::vector<SummaryRow> rows;
    std::string config_hash;
};

inline LoadedSummary parse_summary(const std::string& text) {
    auto t = detail::parse_table(text, "spikecp-summary");
    LoadedSummary s;
    s.config_hash = t.meta_at("config_hash");
    for (const auto& r : t.rows) {
        SummaryRow row;
        row.mode = r[t.column("mode")];
        row.k = static_cast<std::size_t>(detail::parse_int(r[t.column("K")]));
        row.r = parse_r(r[t.column("r")]);
        row.p_targ = parse_double(r[t.column("p_targ")]);
        row.coverage = parse_double(r[t.column("coverage")]);
        row.latency = parse_double(r[t.column("latency")]);
        row.set_size = parse_double(r[t.column("set_size")]);
        row.ci_halfwidth = parse_double(r[t.column("ci_halfwidth")]);
        s.rows.push_back(std::move(row));
    }
    return s;
}

inline std::string format_records(std::span<const ExperimentReport> reports, const std::string& config_hash) {
    std::ostringstream out;
    out << "# spikecp-records v" << kFormatVersion << '\n' << "# config_hash=" << config_hash << '\n';
    out << "mode,K,r,p_targ,resample,example,label,stop_time,set,covered\n";
    for (const auto& rep : reports)
        for (const auto& r : rep.records)
            out << r.mode << ',' << r.k << ',' << format_r(r.r) << ',' << format_double(r.p_targ) << ','
                << r.resample << ',' << r.example << ',' << r.label << ',' << r.stop_time << ','
                << format_set(r.set) << ',' << (r.covered ? 1 : 0) << '\n';
    return out.str();
}

inline std::vector<DecisionRecord> parse_records(const std::string& text) {
    auto t = detail::parse_table(text, "spikecp-records");
    std::vector<DecisionRecord> out;
    for (const auto& r : t.rows) {
        DecisionRecord rec;
        rec.mode = r[t.column("mode")];
        rec.k = static_cast<std::size_t>(detail::parse_int(r[t.column("K")]));
        rec.r = parse_r(r[t.column("r")]);
        rec.p_targ = parse_double(r[t.column("p_targ")]);
        rec.resample = static_cast<std::size_t>(detail::parse_int(r[t.column("resample")]));
        rec.example = static_cast<std::size_t>(detail::parse_int(r[t.column("example")]));
        rec.label = static_cast<int>(detail::parse_int(r[t.column("label")]));
        rec.stop_time = static_cast<int>(detail::parse_int(r[t.column("stop_time")]));
        rec.set = parse_set(r[t.column("set")]);
        rec.covered = detail::parse_int(r[t.column("covered")]) != 0;
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------- SVG ---

struct PlotSeries {
    std::string name;
    std::vector<double> y;
};

/// Two stacked panels (coverage, latency) against the swept values.
inline std::string format_sweep_svg(const std::string& title, const std::string& x_label, std::span<const double> x,
                                    std::span<const PlotSeries> coverage, std::span<const PlotSeries> latency,
                                    std::optional<double> target = std::nullopt) {
    const double W = 640, H = 260, left = 70, right = 20, top = 30, bottom = 40;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << 2 * H + 20
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<text x=\"" << W / 2 << "\" y=\"16\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";

    // Finite x positions; an infinite r is drawn one step past the last finite value.
    std::vector<double> xs(x.begin(), x.end());
    double lo = kInf, hi = -kInf;
    for (double v : xs)
        if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    double span = hi > lo ? hi - lo : 1.0;
    for (double& v : xs)
        if (v == kInf) v = hi + 0.15 * span;
        else if (v == -kInf) v = lo - 0.15 * span;
    double xmin = *std::min_element(xs.begin(), xs.end()), xmax = *std::max_element(xs.begin(), xs.end());
    if (xmax <= xmin) xmax = xmin + 1;

    auto panel = [&](double y0, const std::string& ylabel, std::span<const PlotSeries> series,
                     std::optional<double> hline) {
        double ph = H - top - bottom, pw = W - left - right;
        double py = y0 + top;
        auto X = [&](double v) { return left + (v - xmin) / (xmax - xmin) * pw; };
        auto Y = [&](double v) { return py + (1.0 - v) * ph; };
        s << "<rect x=\"" << left << "\" y=\"" << py << "\" width=\"" << pw << "\" height=\"" << ph
          << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            double v = i / 4.0;
            s << "<text x=\"" << left - 6 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << format_double(v)
              << "</text>\n";
        }
        for (std::size_t i = 0; i < xs.size(); ++i)
            s << "<text x=\"" << X(xs[i]) << "\" y=\"" << py + ph + 16 << "\" text-anchor=\"middle\">"
              << format_r(x[i]) << "</text>\n";
        s << "<text x=\"" << left + pw / 2 << "\" y=\"" << py + ph + 32 << "\" text-anchor=\"middle\">" << x_label
          << "</text>\n";
        s << "<text x=\"16\" y=\"" << py + ph / 2 << "\" transform=\"rotate(-90 16 " << py + ph / 2
          << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
        if (hline)
            s << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << Y(*hline) << "\" y2=\"" << Y(*hline)
              << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
        for (std::size_t k = 0; k < series.size(); ++k) {
            const char* color = colors[k % 6];
            s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < series[k].y.size(); ++i) s << X(xs[i]) << ',' << Y(series[k].y[i]) << ' ';
            s << "\"/>\n";
            for (std::size_t i = 0; i < series[k].y.size(); ++i)
                s << "<circle cx=\"" << X(xs[i]) << "\" cy=\"" << Y(series[k].y[i]) << "\" r=\"3\" fill=\"" << color
                  << "\"/>\n";
            s << "<text x=\"" << left + 8 << "\" y=\"" << py + 14 + 14 * static_cast<double>(k) << "\" fill=\""
              << color << "\">" << series[k].name << "</text>\n";
        }
    };
    panel(20, "coverage", coverage, target);
    panel(20 + H, "normalized latency", latency, std::nullopt);
    s << "</svg>\n";
    return s.str();
}

}  // namespace spikecp::io
