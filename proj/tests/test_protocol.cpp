#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <heraldsim/protocol.hpp>

using namespace heraldsim;

namespace {

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double stddev(const std::vector<double>& xs) {
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

ExperimentConfig photon_only_config(double eta) {
    ExperimentConfig c;
    c.eta_a = eta;
    c.eta_b = eta;
    c.laser_scatter_fraction = 0.0;
    c.dark_count_rate_hz = 0.0;
    c.afterpulse_prob = 0.0;
    c.protocol.ionization_prob = 0.0;
    c.cr.resonance_jump_sigma = 0.0;
    return c;
}

}  // namespace

TEST_CASE("geometric draws have the right mean and edge cases") {
    RandomStream rng(871, 3);
    CHECK(rng.geometric(1.0) == 1);
    CHECK(rng.geometric(0.0) == std::numeric_limits<std::int64_t>::max());
    CHECK(rng.geometric(-0.5) == std::numeric_limits<std::int64_t>::max());

    const double p = 0.01;
    const int n = 20000;
    std::vector<double> draws;
    draws.reserve(n);
    for (int i = 0; i < n; ++i) {
        const std::int64_t d = rng.geometric(p);
        REQUIRE(d >= 1);
        draws.push_back(static_cast<double>(d));
    }
    const double expected_mean = 1.0 / p;
    const double se = std::sqrt(1.0 - p) / p / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(mean(draws) - expected_mean) < 4.5 * se);
}

TEST_CASE("poisson draws match mean and variance in both regimes") {
    RandomStream rng(4242, 0);
    for (const double lambda : {5.0, 135.0}) {
        const int n = 20000;
        std::vector<double> draws;
        draws.reserve(n);
        for (int i = 0; i < n; ++i)
            draws.push_back(static_cast<double>(rng.poisson(lambda)));
        const double se_mean = std::sqrt(lambda / n);
        CHECK(std::fabs(mean(draws) - lambda) < 4.5 * se_mean);
        const double sd = stddev(draws);
        const double se_var = lambda * std::sqrt(2.0 / n);
        CHECK(std::fabs(sd * sd - lambda) < 4.5 * se_var);
    }
}

TEST_CASE("basis scheduler realizes the target fractions at every prefix") {
    BasisSchedule thirds;
    BasisScheduler scheduler(thirds);
    std::array<std::int64_t, 3> counts = {0, 0, 0};
    for (int i = 1; i <= 1000; ++i) {
        ++counts[static_cast<int>(scheduler.next())];
        for (int b = 0; b < 3; ++b)
            REQUIRE(std::fabs(static_cast<double>(counts[b]) - i / 3.0) <= 1.0);
    }
    CHECK(counts[0] == 334);
    CHECK(counts[1] == 333);
    CHECK(counts[2] == 333);

    BasisSchedule skewed{0.5, 0.3, 0.2};
    BasisScheduler skewed_scheduler(skewed);
    std::array<std::int64_t, 3> skewed_counts = {0, 0, 0};
    for (int i = 0; i < 1000; ++i) ++skewed_counts[static_cast<int>(skewed_scheduler.next())];
    CHECK(skewed_counts[0] == 500);
    CHECK(skewed_counts[1] == 300);
    CHECK(skewed_counts[2] == 200);
}

TEST_CASE("basis settings map to per-node measurement bases") {
    CHECK(node_basis(BasisSetting::zz, Node::a) == MeasurementBasis::z);
    CHECK(node_basis(BasisSetting::zz, Node::b) == MeasurementBasis::z);
    CHECK(node_basis(BasisSetting::xx, Node::a) == MeasurementBasis::x);
    CHECK(node_basis(BasisSetting::xx, Node::b) == MeasurementBasis::x);
    CHECK(node_basis(BasisSetting::minus_xx, Node::a) == MeasurementBasis::minus_x);
    CHECK(node_basis(BasisSetting::minus_xx, Node::b) == MeasurementBasis::x);
}

TEST_CASE("charge-resonance check passes immediately on resonance") {
    CrCheckParams params;
    params.resonance_jump_sigma = 0.0;
    RandomStream rng(99, 1);
    for (int trial = 0; trial < 500; ++trial) {
        NodeCrState a;
        NodeCrState b;
        const CrCheckResult r = run_cr_check(params, a, b, rng);
        REQUIRE(r.probes == 1);
        REQUIRE(r.repumps == 0);
        REQUIRE(r.elapsed_us == Catch::Approx(params.probe_duration_us));
        REQUIRE(a.charge_ok);
        REQUIRE(b.charge_ok);
    }
}

TEST_CASE("charge-resonance check repumps an ionized node before probing") {
    CrCheckParams params;
    params.resonance_jump_sigma = 0.0;
    RandomStream rng(100, 1);
    NodeCrState a{false, 3.0};
    NodeCrState b;
    const CrCheckResult r = run_cr_check(params, a, b, rng);
    CHECK(r.repumps >= 1);
    CHECK(a.charge_ok);
    CHECK(a.resonance_offset == 0.0);
}

TEST_CASE("probe thresholds narrow the accepted resonance offsets") {
    RandomStream rng(7, 2);
    auto accepted_sd = [&](int threshold) {
        CrCheckParams params;
        params.threshold_a = threshold;
        params.threshold_b = 0;
        std::vector<double> offsets;
        for (int trial = 0; trial < 3000; ++trial) {
            NodeCrState a{false, 0.0};
            NodeCrState b;
            run_cr_check(params, a, b, rng);
            offsets.push_back(a.resonance_offset);
        }
        return stddev(offsets);
    };
    const double sd_loose = accepted_sd(5);
    const double sd_tight = accepted_sd(60);
    CHECK(sd_tight < sd_loose - 0.1);
    CHECK(sd_loose < 0.7);
}

TEST_CASE("charge-resonance check rejects unreachable thresholds") {
    CrCheckParams params;
    params.probe_mean_a = 0.0;
    RandomStream rng(1, 0);
    NodeCrState a;
    NodeCrState b;
    CHECK_THROWS_AS(run_cr_check(params, a, b, rng), std::runtime_error);
}

TEST_CASE("bright-node table follows the branch and the inter-round flips") {
    CHECK(ProtocolSimulator::node_bright(SpinBranch::uu, Node::a, 1));
    CHECK(ProtocolSimulator::node_bright(SpinBranch::uu, Node::b, 1));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::uu, Node::a, 2));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::uu, Node::b, 2));
    CHECK(ProtocolSimulator::node_bright(SpinBranch::ud, Node::a, 1));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::ud, Node::b, 1));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::ud, Node::a, 2));
    CHECK(ProtocolSimulator::node_bright(SpinBranch::ud, Node::b, 2));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::du, Node::a, 1));
    CHECK(ProtocolSimulator::node_bright(SpinBranch::du, Node::b, 1));
    CHECK(ProtocolSimulator::node_bright(SpinBranch::du, Node::a, 2));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::du, Node::b, 2));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::dd, Node::a, 1));
    CHECK_FALSE(ProtocolSimulator::node_bright(SpinBranch::dd, Node::b, 1));
    CHECK(ProtocolSimulator::node_bright(SpinBranch::dd, Node::a, 2));
    CHECK(ProtocolSimulator::node_bright(SpinBranch::dd, Node::b, 2));
}

TEST_CASE("lossless attempts produce exactly the branch's photon clicks") {
    const ExperimentConfig config = ideal_config();
    ProtocolSimulator sim(config);
    RandomStream rng(config.seed, 5);
    std::vector<ClickEvent> clicks;

    for (int trial = 0; trial < 200; ++trial) {
        sim.simulate_attempt(SpinBranch::ud, true, true, trial, rng, clicks);
        REQUIRE(clicks.size() == 2);
        CHECK(clicks[0].round == 1);
        CHECK(clicks[0].provenance == ClickProvenance::nv_a);
        CHECK(clicks[1].round == 2);
        CHECK(clicks[1].provenance == ClickProvenance::nv_b);
        CHECK(clicks[0].time_ns >= 0);
        CHECK(clicks[1].time_ns >= 0);

        sim.simulate_attempt(SpinBranch::uu, true, true, trial, rng, clicks);
        REQUIRE(clicks.size() == 2);
        CHECK(clicks[0].round == 1);
        CHECK(clicks[1].round == 1);
        // Perfect indistinguishability bunches both photons onto one detector.
        CHECK(clicks[0].detector == clicks[1].detector);

        sim.simulate_attempt(SpinBranch::dd, true, true, trial, rng, clicks);
        REQUIRE(clicks.size() == 2);
        CHECK(clicks[0].round == 2);
        CHECK(clicks[1].round == 2);

        sim.simulate_attempt(SpinBranch::du, false, true, trial, rng, clicks);
        REQUIRE(clicks.size() == 1);
        CHECK(clicks[0].round == 1);
        CHECK(clicks[0].provenance == ClickProvenance::nv_b);
    }
}

TEST_CASE("two-photon coalescence follows the mode overlap") {
    ExperimentConfig config = ideal_config();
    config.indist.v0 = 0.6;
    ProtocolSimulator sim(config);
    RandomStream rng(11, 0);
    std::vector<ClickEvent> clicks;
    int same = 0;
    const int n = 4000;
    for (int trial = 0; trial < n; ++trial) {
        sim.simulate_attempt(SpinBranch::uu, true, true, trial, rng, clicks);
        REQUIRE(clicks.size() == 2);
        if (clicks[0].detector == clicks[1].detector) ++same;
    }
    const double p_same = 0.5 * (1.0 + config.indist.v0);
    const double se = std::sqrt(p_same * (1.0 - p_same) / n);
    CHECK(std::fabs(static_cast<double>(same) / n - p_same) < 4.5 * se);
}

TEST_CASE("lossless runs herald every odd-parity branch with perfect states") {
    ExperimentConfig config = ideal_config();
    RunOptions options;
    options.max_heralds = 200;
    const RunResult result = run_experiment(config, options);

    REQUIRE(result.counters.heralds == 200);
    REQUIRE(result.heralds.size() == 200);
    const double n_attempts = static_cast<double>(result.counters.attempts);
    CHECK(std::fabs(n_attempts - 400.0) < 4.5 * std::sqrt(400.0));
    CHECK(result.counters.cr_cycles == 200);
    CHECK(result.counters.cr_probes ==
          result.counters.cr_cycles + result.counters.false_starts);

    for (const HeraldRecord& rec : result.heralds) {
        CHECK(rec.true_state_fidelity == Catch::Approx(1.0).margin(1e-9));
        CHECK(is_nv(rec.prov1));
        CHECK(is_nv(rec.prov2));
        CHECK((rec.branch == SpinBranch::ud || rec.branch == SpinBranch::du));
        CHECK((rec.sign == BellSign::plus) == (rec.detector1 == rec.detector2));
        switch (rec.basis) {
            case BasisSetting::zz:
                CHECK(rec.up_a != rec.up_b);
                break;
            case BasisSetting::xx:
                CHECK((rec.up_a == rec.up_b) == (rec.sign == BellSign::plus));
                break;
            case BasisSetting::minus_xx:
                CHECK((rec.up_a == rec.up_b) == (rec.sign == BellSign::minus));
                break;
        }
    }

    const RunCounters& c = result.counters;
    const double expected_wall =
        static_cast<double>(c.attempts) / config.protocol.attempt_rate_hz +
        static_cast<double>(c.heralds) * config.protocol.readout_dead_time_us * 1e-6 +
        static_cast<double>(c.cr_probes) * config.cr.probe_duration_us * 1e-6 +
        static_cast<double>(c.cr_repumps) * config.cr.repump_duration_us * 1e-6;
    CHECK(c.wall_time_s == Catch::Approx(expected_wall).epsilon(1e-9));
}

TEST_CASE("identical seeds reproduce runs and different seeds diverge") {
    ExperimentConfig config = ideal_config();
    RunOptions options;
    options.max_heralds = 50;
    const RunResult first = run_experiment(config, options);
    const RunResult second = run_experiment(config, options);
    REQUIRE(first.heralds.size() == second.heralds.size());
    CHECK(first.counters.attempts == second.counters.attempts);
    CHECK(first.counters.wall_time_s == second.counters.wall_time_s);
    for (std::size_t i = 0; i < first.heralds.size(); ++i) {
        CHECK(first.heralds[i].attempt == second.heralds[i].attempt);
        CHECK(first.heralds[i].sign == second.heralds[i].sign);
        CHECK(first.heralds[i].t1_ns == second.heralds[i].t1_ns);
        CHECK(first.heralds[i].t2_ns == second.heralds[i].t2_ns);
        CHECK(first.heralds[i].basis == second.heralds[i].basis);
        CHECK(first.heralds[i].up_a == second.heralds[i].up_a);
        CHECK(first.heralds[i].up_b == second.heralds[i].up_b);
    }

    config.seed = 54321;
    const RunResult other = run_experiment(config, options);
    bool differs = other.counters.attempts != first.counters.attempts;
    for (std::size_t i = 0; !differs && i < other.heralds.size(); ++i)
        differs = other.heralds[i].t1_ns != first.heralds[i].t1_ns ||
                  other.heralds[i].up_a != first.heralds[i].up_a;
    CHECK(differs);
}

TEST_CASE("ionization pauses a node until the next charge-resonance check") {
    ExperimentConfig config = ideal_config();
    config.protocol.ionization_prob = 0.02;
    RunOptions options;
    options.max_attempts = 20000;
    const RunResult result = run_experiment(config, options);
    CHECK(result.counters.ionization_events > 0);
    CHECK(result.counters.heralds > 0);
    CHECK(result.counters.cr_repumps > 0);
    CHECK(result.counters.cr_cycles > result.counters.heralds);
    CHECK(result.counters.cr_probes ==
          result.counters.cr_cycles + result.counters.false_starts);
    for (const HeraldRecord& rec : result.heralds) {
        CHECK(is_nv(rec.prov1));
        CHECK(is_nv(rec.prov2));
    }
}

TEST_CASE("click-level herald statistics match the analytic model") {
    const ExperimentConfig base = [] {
        ExperimentConfig c;
        c.eta_a = 0.05;
        c.eta_b = 0.05;
        c.protocol.ionization_prob = 0.0;
        return c;
    }();
    const AnalyticHeraldModel model = build_analytic_model(base);

    RunOptions options;
    options.max_attempts = 400000;
    const RunResult result = run_experiment(base, options);

    const double n = static_cast<double>(options.max_attempts);
    const double expected = n * model.p_herald;
    const double observed = static_cast<double>(result.counters.heralds);
    CHECK(std::fabs(observed - expected) < 5.0 * std::sqrt(expected));

    int plus = 0;
    for (const HeraldRecord& rec : result.heralds)
        if (rec.sign == BellSign::plus) ++plus;
    const double f_plus = model.p_plus / model.p_herald;
    const double se = std::sqrt(f_plus * (1.0 - f_plus) / observed);
    CHECK(std::fabs(static_cast<double>(plus) / observed - f_plus) < 5.0 * se);
}

TEST_CASE("aggregated path reproduces the analytic herald rate") {
    ExperimentConfig config;
    config.eta_a = 0.05;
    config.eta_b = 0.05;
    config.protocol.ionization_prob = 0.0;
    config.protocol.fast_path = true;
    const AnalyticHeraldModel model = build_analytic_model(config);

    RunOptions options;
    options.max_attempts = 400000;
    const RunResult result = run_experiment(config, options);
    CHECK(result.counters.attempts == options.max_attempts);

    const double expected = static_cast<double>(options.max_attempts) * model.p_herald;
    const double observed = static_cast<double>(result.counters.heralds);
    CHECK(std::fabs(observed - expected) < 5.0 * std::sqrt(expected));
    for (const HeraldRecord& rec : result.heralds) {
        CHECK(rec.t1_ns >= 2);
        CHECK(std::llabs(rec.dtau_ns()) <= 25);
        CHECK((rec.sign == BellSign::plus) == (rec.detector1 == rec.detector2));
    }
}

TEST_CASE("interference histogram collects only cross-detector coincidences") {
    ExperimentConfig config;
    config.eta_a = 0.4;
    config.eta_b = 0.4;
    config.laser_scatter_fraction = 0.0;
    config.dark_count_rate_hz = 0.0;
    config.afterpulse_prob = 0.0;
    config.protocol.ionization_prob = 0.0;
    config.cr.resonance_jump_sigma = 0.0;
    config.indist.kind = IndistinguishabilityModel::Kind::constant;

    RunOptions options;
    options.max_attempts = 200000;
    options.collect_g2 = true;

    config.indist.v0 = 0.0;
    const RunResult distinguishable = run_experiment(config, options);
    const VisibilityEstimate v0 = visibility_from_histogram(distinguishable.g2);
    CHECK(std::fabs(v0.central_to_side_ratio - 0.5) < 0.05);
    CHECK(std::fabs(v0.visibility) < 0.1);

    config.indist.v0 = 1.0;
    const RunResult indistinguishable = run_experiment(config, options);
    const VisibilityEstimate v1 = visibility_from_histogram(indistinguishable.g2);
    CHECK(v1.visibility > 0.9);
    CHECK(v1.central_counts < v0.central_counts / 2);
}

TEST_CASE("run options and path conflicts are rejected") {
    ExperimentConfig config = ideal_config();
    RunOptions none;
    CHECK_THROWS_AS(run_experiment(config, none), std::invalid_argument);

    RunOptions bad_bins;
    bad_bins.max_heralds = 1;
    bad_bins.g2_bin_width_ns = 0.0;
    CHECK_THROWS_AS(run_experiment(config, bad_bins), std::invalid_argument);

    RunOptions g2_fast;
    g2_fast.max_heralds = 1;
    g2_fast.collect_g2 = true;
    config.protocol.fast_path = true;
    CHECK_THROWS_AS(run_experiment(config, g2_fast), std::invalid_argument);
}
