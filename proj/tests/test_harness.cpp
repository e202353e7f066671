#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "spikecp/harness.hpp"

using namespace spikecp;
using Catch::Approx;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
    SyntheticSpec s;
    s.channels = 16;
    s.steps = 40;
    s.seed = seed;
    return s;
}

Ensemble untrained(std::size_t k, std::uint64_t seed) {
    Architecture arch{{16, 12, 4}, {}};
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.init_variance = 0.3;
    cfg.seed = seed;
    auto data = generate_dataset(small_spec(99), 40);
    return train_deep_ensemble(data, arch, cfg, k);
}

ExperimentConfig small_experiment() {
    ExperimentConfig c;
    c.cp.checkpoints = {10, 20, 30, 40};
    c.cal_size = 30;
    c.test_size = 60;
    c.resamples = 5;
    c.seed = 4;
    return c;
}

}  // namespace

TEST_CASE("synthetic data is deterministic and index addressable") {
    auto s = small_spec(1);
    auto a = generate_dataset(s, 20), b = generate_dataset(s, 20);
    CHECK(a == b);
    auto tail = generate_dataset(s, 5, 15);
    for (std::size_t i = 0; i < 5; ++i) CHECK(tail[i] == a[15 + i]);
    s.seed = 2;
    CHECK(generate_dataset(s, 20) != a);
    for (const auto& x : a) {
        CHECK(x.steps() == 40);
        CHECK(x.channels() == 16);
        CHECK(*x.label >= 0);
        CHECK(*x.label < 4);
    }
}

TEST_CASE("zero difficulty gives class-independent rates") {
    SyntheticSpec s = small_spec(3);
    for (std::size_t c = 0; c < s.classes; ++c)
        for (std::size_t n = 0; n < s.channels; ++n) CHECK(s.rate(c, n, 0.0) == s.low_rate);
    CHECK(s.rate(0, 0, 1.0) == s.high_rate);
    CHECK(s.rate(1, 0, 1.0) == s.low_rate);
    s.difficulty_min = s.difficulty_max = 0.0;
    auto data = generate_dataset(s, 400);
    std::vector<double> per_class_rate(4, 0.0), n(4, 0.0);
    for (const auto& x : data) {
        per_class_rate[static_cast<std::size_t>(*x.label)] += x.samples.leftCols(4).mean();
        n[static_cast<std::size_t>(*x.label)] += 1;
    }
    for (std::size_t c = 0; c < 4; ++c) CHECK(per_class_rate[c] / n[c] == Approx(s.low_rate).margin(0.02));
}

TEST_CASE("calibration/test split is a partition") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto sp = split_cal_test(100, 30, seed);
        CHECK(sp.calibration.size() == 30);
        CHECK(sp.test.size() == 70);
        std::set<std::size_t> all(sp.calibration.begin(), sp.calibration.end());
        all.insert(sp.test.begin(), sp.test.end());
        CHECK(all.size() == 100);
        CHECK(*all.rbegin() == 99);
    }
    CHECK(split_cal_test(10, 3, 1).calibration == split_cal_test(10, 3, 1).calibration);
    CHECK_THROWS_AS(split_cal_test(10, 10, 1), ContractError);
}

TEST_CASE("experiment record counts, latency grid and determinism") {
    auto pool = generate_dataset(small_spec(5), 150);
    auto ens = untrained(2, 1);
    auto cfg = small_experiment();
    cfg.run_dc = true;
    auto rep = run_experiment(ens, pool, cfg);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].mode == "de-pm");
    CHECK(rep.rows[1].mode == "de-dc");
    CHECK(rep.records.size() == 2 * cfg.resamples * cfg.test_size);
    for (const auto& r : rep.records) {
        bool on_grid = r.stop_time == 10 || r.stop_time == 20 || r.stop_time == 30 || r.stop_time == 40;
        CHECK(on_grid);
        CHECK(r.covered == (std::find(r.set.begin(), r.set.end(), static_cast<std::size_t>(r.label)) != r.set.end()));
    }
    for (const auto& row : rep.rows) {
        double l4 = row.latency * 4;
        CHECK(l4 >= 1.0 - 1e-12);
        CHECK(l4 <= 4.0 + 1e-12);
    }
    CHECK(run_experiment(ens, pool, cfg) == rep);
}

TEST_CASE("near-one target forces the full set and full coverage") {
    auto pool = generate_dataset(small_spec(6), 150);
    auto cfg = small_experiment();
    cfg.cp.p_targ = 0.999;  // alpha below 1/(n+1), so every class is kept
    auto rep = run_experiment(untrained(2, 2), pool, cfg);
    CHECK(rep.rows[0].coverage == 1.0);
    CHECK(rep.rows[0].latency == 1.0);
    CHECK(rep.rows[0].set_size == 4.0);
}

TEST_CASE("coverage holds on exchangeable data for every merge mode") {
    auto pool = generate_dataset(small_spec(7), 300);
    auto ens = untrained(3, 3);
    auto cfg = small_experiment();
    cfg.cal_size = 50;
    cfg.test_size = 200;
    cfg.resamples = 10;
    for (auto merge : {MergeMode::confidence, MergeMode::p_value}) {
        for (double r : {1.0, 45.0, kInf}) {
            cfg.cp.merge = merge;
            cfg.cp.exponent = r;
            auto rep = run_experiment(ens, pool, cfg);
            // 2000 decisions: 3 sigma of a 0.9 binomial is about 0.02.
            CHECK(rep.rows[0].coverage >= 0.88);
        }
    }
}

TEST_CASE("calibration order does not change decisions") {
    auto pool = generate_dataset(small_spec(8), 80);
    auto ens = untrained(2, 4);
    std::vector<int> cps{10, 20, 30, 40};
    std::vector<std::vector<ScoreTrace>> tr(2);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 40; ++i) {
        labels.push_back(*pool[i].label);
        for (std::size_t m = 0; m < 2; ++m) tr[m].push_back(forward(pool[i], ens.members[m], cps));
    }
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(9);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<ScoreTrace>> tr2(2);
    std::vector<int> labels2;
    for (auto i : perm) {
        labels2.push_back(labels[i]);
        for (std::size_t m = 0; m < 2; ++m) tr2[m].push_back(tr[m][i]);
    }
    CalibrationTable a(cps, labels, 4, tr), b(cps, labels2, 4, tr2);
    for (auto merge : {MergeMode::confidence, MergeMode::p_value}) {
        SpikeCPConfig cfg;
        cfg.checkpoints = cps;
        cfg.merge = merge;
        SpikeCP ra(a, cfg), rb(b, cfg);
        for (std::size_t i = 40; i < 80; ++i) {
            std::vector<ScoreTrace> x{forward(pool[i], ens.members[0], cps), forward(pool[i], ens.members[1], cps)};
            auto da = ra.decide(x), db = rb.decide(x);
            CHECK(da.stop_time == db.stop_time);
            CHECK(da.set == db.set);
        }
    }
}

TEST_CASE("posterior sources and sweeps") {
    auto pool = generate_dataset(small_spec(10), 120);
    Architecture arch{{16, 12, 4}, {}};
    VariationalPosterior post{arch, std::vector<double>(arch.weight_count(), 0.1),
                              std::vector<double>(arch.weight_count(), detail::inverse_softplus(0.3))};
    auto cfg = small_experiment();
    cfg.resamples = 2;
    cfg.test_size = 20;
    for (auto policy : {ResamplePolicy::fixed, ResamplePolicy::per_resample, ResamplePolicy::per_input}) {
        PosteriorSource src{post, 2, policy};
        auto rep = run_experiment(src, pool, cfg);
        CHECK(rep.rows[0].mode == "vi-pm");
        CHECK(rep.records.size() == 40);
        CHECK(run_experiment(src, pool, cfg) == rep);
    }

    auto ens = untrained(3, 5);
    std::vector<double> ks{1, 2, 3};
    auto reps = sweep(ens, pool, cfg, SweepParam::k, ks);
    REQUIRE(reps.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(reps[i].rows[0].k == i + 1);
    CHECK(reps[0] == run_experiment(ens.prefix(1), pool, cfg));

    std::vector<double> ps{0.8, 0.9};
    auto pt = sweep(ens, pool, cfg, SweepParam::p_targ, ps);
    CHECK(pt[1].rows[0].p_targ == 0.9);
    CHECK_THROWS_AS(sweep(ens, pool, cfg, SweepParam::k, std::vector<double>{4}), ContractError);
    CHECK_THROWS_AS(parse_sweep_param("q"), ContractError);
}

TEST_CASE("validity Monte Carlo is within slack") {
    std::vector<double> alphas{0.05, 0.1, 0.25, 0.5};
    auto rates = validity_monte_carlo(5000, 50, alphas, 1);
    for (std::size_t a = 0; a < alphas.size(); ++a) CHECK(rates[a] <= alphas[a] + 0.02);
    auto pm = pm_validity_monte_carlo(2000, 4, 30, 45.0, alphas, 2);
    for (std::size_t a = 0; a < alphas.size(); ++a) CHECK(pm[a] <= alphas[a] + 0.02);
    CHECK_THROWS_AS(validity_monte_carlo(10, 50, alphas, 1), ContractError);
}
