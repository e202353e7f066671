#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <limits>

#include "spikecp/io.hpp"

using namespace spikecp;

namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

std::vector<double> awkward_doubles(std::size_t n, Rng& rng) {
    std::uniform_int_distribution<std::uint64_t> bits;
    std::vector<double> out;
    const double specials[] = {0.0, -0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::min(),
                               std::numeric_limits<double>::max(), 1.0 / 3.0, -1e-300, 0.1};
    for (double s : specials) out.push_back(s);
    while (out.size() < n) {
        double d = std::bit_cast<double>(bits(rng));
        if (std::isfinite(d)) out.push_back(d);
    }
    return out;
}

Ensemble small_ensemble(std::size_t k) {
    Architecture arch{{5, 4, 3}, {0.8, 0.85, 1.0}};
    Rng rng = make_rng(3);
    Ensemble e;
    e.kind = EnsembleKind::variational;
    for (std::size_t m = 0; m < k; ++m) {
        e.members.emplace_back(arch, gaussian_vector(arch.weight_count(), 0.7, rng));
        e.seeds.push_back(derive_seed(42, m));
    }
    return e;
}

std::vector<InputSequence> small_data(std::size_t n) {
    Rng rng = make_rng(4);
    std::bernoulli_distribution b(0.4);
    std::vector<InputSequence> out;
    for (std::size_t i = 0; i < n; ++i) {
        InputSequence x;
        x.samples.resize(30, 5);
        for (Eigen::Index t = 0; t < 30; ++t)
            for (Eigen::Index c = 0; c < 5; ++c) x.samples(t, c) = b(rng) ? 1.0 : 0.0;
        x.label = static_cast<int>(i % 3);
        out.push_back(x);
    }
    return out;
}

}  // namespace

TEST_CASE("model files round-trip bit-exactly") {
    Rng rng = make_rng(1);
    Architecture arch{{6, 5, 4}, {0.9, 0.7, 1.25}};
    for (int trial = 0; trial < 50; ++trial) {
        ModelParams m(arch, awkward_doubles(arch.weight_count(), rng));
        auto text = io::to_json(m, "abc").dump();
        auto back = io::model_from_json(io::json::parse(text));
        CHECK(back.arch == m.arch);
        CHECK(same_bits(back.weights, m.weights));
    }
}

TEST_CASE("ensemble, posterior and dataset files round-trip") {
    auto e = small_ensemble(3);
    auto back = io::ensemble_from_json(io::json::parse(io::to_json(e, "h").dump()));
    CHECK(back == e);

    Rng rng = make_rng(2);
    Architecture arch{{4, 3}, {}};
    VariationalPosterior p{arch, awkward_doubles(12, rng), awkward_doubles(12, rng)};
    auto pb = io::posterior_from_json(io::json::parse(io::to_json(p, "h").dump()));
    CHECK(same_bits(pb.mu, p.mu));
    CHECK(same_bits(pb.rho, p.rho));

    auto data = small_data(4);
    data[2].label.reset();
    auto db = io::dataset_from_json(io::json::parse(io::to_json(std::span<const InputSequence>(data), "h").dump()));
    CHECK(db == data);

    auto dir = std::filesystem::temp_directory_path() / "spikecp_io_test";
    io::save_json(dir / "nested" / "e.json", io::to_json(e, "h"));
    CHECK(io::ensemble_from_json(io::load_json(dir / "nested" / "e.json")) == e);
    std::filesystem::remove_all(dir);
}

TEST_CASE("JSON format errors") {
    auto e = small_ensemble(2);
    auto j = io::to_json(e, "h");
    auto wrong = j;
    wrong["format"] = "spikecp-model";
    CHECK_THROWS_AS(io::ensemble_from_json(wrong), io::FormatError);
    auto version = j;
    version["version"] = 99;
    CHECK_THROWS_AS(io::ensemble_from_json(version), io::FormatError);

    auto m = io::to_json(e.members[0], "h");
    m["weights"].erase(0);
    CHECK_THROWS(io::model_from_json(m));

    auto path = std::filesystem::temp_directory_path() / "spikecp_bad.json";
    io::write_file(path, "{ not json");
    CHECK_THROWS_AS(io::load_json(path), io::FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS(io::read_file("/nonexistent/spikecp/file"));
}

TEST_CASE("calibration tables and traces round-trip") {
    auto e = small_ensemble(2);
    auto data = small_data(6);
    std::vector<int> cps{10, 20, 30};
    auto cal = CalibrationTable::build(e, data, cps);
    auto text = io::format_calibration(cal, "cfg1");
    auto loaded = io::parse_calibration(text);
    CHECK(loaded.table == cal);
    CHECK(loaded.config_hash == "cfg1");
    CHECK(loaded.table.arch_hash() == e.arch().hash());
    CHECK(io::format_calibration(loaded.table, "cfg1") == text);

    std::vector<ScoreTrace> tr;
    for (const auto& m : e.members) tr.push_back(forward(data[0], m, cps));
    CHECK(io::parse_traces(io::format_traces(tr, e.arch().hash(), "x")) == tr);
}

TEST_CASE("delimited format errors name the problem") {
    auto e = small_ensemble(1);
    auto data = small_data(3);
    auto cal = CalibrationTable::build(e, data, std::vector<int>{10, 30});
    auto text = io::format_calibration(cal, "c");

    CHECK_THROWS_AS(io::parse_calibration(""), io::FormatError);
    CHECK_THROWS_AS(io::parse_calibration("# spikecp-summary v1\n"), io::FormatError);
    auto truncated = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    CHECK_THROWS_AS(io::parse_calibration(truncated), io::FormatError);
    auto bad = text;
    bad.replace(bad.rfind(",0."), 3, ",x.");
    CHECK_THROWS(io::parse_calibration(bad));
    CHECK_THROWS_AS(io::parse_summary("# spikecp-summary v2\n"), io::FormatError);
}

TEST_CASE("summary and records round-trip") {
    ExperimentReport rep;
    rep.rows.push_back({"vi-pm", 6, 45.0, 0.9, 0.935, 0.4625, 2.75, 0.0123});
    rep.rows.push_back({"vi-cm", 6, kInf, 0.9, 1.0 / 3.0, 0.1, 3.0, 0.0});
    rep.records.push_back({"vi-pm", 6, 45.0, 0.9, 0, 17, 2, 40, {0, 2}, true});
    rep.records.push_back({"vi-cm", 6, -kInf, 0.9, 3, 5, 1, 80, {}, false});
    std::vector<ExperimentReport> reps{rep};

    auto s = io::parse_summary(io::format_summary(reps, "hh"));
    CHECK(s.config_hash == "hh");
    CHECK(s.rows == rep.rows);
    CHECK(io::parse_records(io::format_records(reps, "hh")) == rep.records);
    CHECK(io::parse_r("inf") == kInf);
    CHECK(io::parse_r("-inf") == -kInf);
    CHECK(io::format_r(-kInf) == "-inf");
}

TEST_CASE("sweep plot is an SVG with one polyline per series") {
    std::vector<double> x{1, 2, 4, 6};
    std::vector<io::PlotSeries> cov{{"vi-pm", {0.9, 0.92, 0.95, 0.97}}}, lat{{"vi-pm", {0.5, 0.55, 0.6, 0.65}}};
    auto svg = io::format_sweep_svg("t", "k", x, cov, lat, 0.9);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    std::size_t lines = 0;
    for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++lines;
    CHECK(lines == 2);
}
