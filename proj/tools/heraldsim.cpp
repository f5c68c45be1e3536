#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <heraldsim/analysis.hpp>
#include <heraldsim/analytic.hpp>
#include <heraldsim/eventlog_io.hpp>
#include <heraldsim/protocol.hpp>

namespace {

constexpr const char* kToolVersion = "1.0.0";

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitAnalysis = 4;

struct RunArgs {
    std::string config_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> attempts;
    std::optional<double> hours;
    std::optional<std::int64_t> heralds;
    bool clicks = false;
    bool oracle = false;
    bool fast = false;
};

struct AnalyzeArgs {
    std::string log_path;
    std::optional<double> dtau_max;
    int replicates = 2000;
    bool exposure_weighting = false;
};

struct G2Args {
    std::string log_path;
    double bin_width_ns = 1.0;
    double dt_cut_ns = 2.56;
};

struct SweepArgs {
    std::string log_path;
    std::vector<double> cuts;
    std::string sign = "minus";
    int replicates = 500;
};

std::string format_double(const char* fmt, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, value);
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw std::runtime_error("failed reading '" + path + "'");
    return buf.str();
}

// Configuration errors (including an unreadable --config file surfacing
// before any run output) map to the usage exit code; everything after the
// manifest is I/O or analysis.
heraldsim::ExperimentConfig load_config(const RunArgs& args) {
    heraldsim::ExperimentConfig config;
    if (!args.config_path.empty())
        config = heraldsim::parse_config(read_text_file(args.config_path));
    if (args.seed) config.seed = *args.seed;
    if (args.fast) config.protocol.fast_path = true;
    return config;
}

void write_manifest(const std::string& path, const RunArgs& args,
                    const heraldsim::ExperimentConfig& config) {
    nlohmann::json manifest = {
        {"command", "run"},
        {"tool", "heraldsim"},
        {"version", kToolVersion},
        {"config_path", args.config_path.empty() ? "(defaults)" : args.config_path},
        {"config_hash", heraldsim::hash_hex(heraldsim::config_hash(config))},
        {"seed", config.seed},
        {"out", args.out_path},
        {"options",
         {{"attempts", args.attempts ? *args.attempts : -1},
          {"hours", args.hours ? *args.hours : -1.0},
          {"heralds", args.heralds ? *args.heralds : -1},
          {"clicks", args.clicks},
          {"oracle", args.oracle},
          {"fast", args.fast}}},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << manifest.dump(2) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

int cmd_run(const RunArgs& args) {
    heraldsim::ExperimentConfig config;
    heraldsim::RunOptions options;
    try {
        config = load_config(args);
        if (args.attempts) options.max_attempts = *args.attempts;
        if (args.hours) options.max_hours = *args.hours;
        if (args.heralds) options.max_heralds = *args.heralds;
        options.collect_g2 = args.clicks;
        options.retain_clicks = args.clicks;
        options.validate();
        if (config.protocol.fast_path && args.clicks)
            throw std::invalid_argument("--clicks requires the click-level path (no --fast)");
    } catch (const std::exception& e) {
        std::cerr << "heraldsim run: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        write_manifest(args.out_path + ".manifest.json", args, config);
    } catch (const std::exception& e) {
        std::cerr << "heraldsim run: " << e.what() << '\n';
        return kExitIo;
    }

    const heraldsim::RunResult result = heraldsim::run_experiment(config, options);

    try {
        heraldsim::write_event_log_file(args.out_path, config, result, args.oracle);
    } catch (const std::exception& e) {
        std::cerr << "heraldsim run: " << e.what() << '\n';
        return kExitIo;
    }

    nlohmann::json summary = {
        {"attempts", result.counters.attempts},
        {"heralds", result.counters.heralds},
        {"cr_cycles", result.counters.cr_cycles},
        {"cr_probes", result.counters.cr_probes},
        {"cr_repumps", result.counters.cr_repumps},
        {"false_starts", result.counters.false_starts},
        {"ionization_events", result.counters.ionization_events},
        {"wall_time_s", result.counters.wall_time_s},
        {"clicks", result.clicks.size()},
        {"log", args.out_path},
    };
    if (result.counters.attempts > 0) {
        const heraldsim::RateSummary rate = heraldsim::rate_summary(result.counters);
        summary["p_herald"] = rate.p_herald;
        summary["p_herald_ci68"] = {rate.ci_lo, rate.ci_hi};
        summary["heralds_per_hour"] = rate.heralds_per_hour;
        if (result.counters.heralds > 0)
            summary["minutes_per_herald"] = rate.minutes_per_herald;
    }
    std::cout << summary.dump() << '\n';
    return kExitOk;
}

// Default per-sign selection: minus-state records are used as logged (the
// classifier already enforced the physical windows); plus-state records are
// re-filtered to the tighter second-round window and click-separation cut
// carried by the config. An explicit --dtau-max adds a strict |dtau| < cut
// on top for both signs.
std::vector<heraldsim::HeraldRecord> select_records(
    const heraldsim::EventLog& log, const heraldsim::ExperimentConfig& config,
    heraldsim::BellSign sign, std::optional<double> dtau_max) {
    const heraldsim::DetectionWindows plus_windows = config.psi_plus_windows();
    std::vector<heraldsim::HeraldRecord> out;
    for (const heraldsim::HeraldRecord& rec : log.heralds) {
        if (rec.sign != sign) continue;
        if (sign == heraldsim::BellSign::plus) {
            if (!plus_windows.in_window(2, static_cast<double>(rec.t2_ns))) continue;
            if (std::fabs(static_cast<double>(rec.dtau_ns())) >
                plus_windows.dtau_max_ns)
                continue;
        }
        if (dtau_max && std::fabs(static_cast<double>(rec.dtau_ns())) >= *dtau_max)
            continue;
        out.push_back(rec);
    }
    return out;
}

void print_sign_report(const char* label, const heraldsim::SignReport& report) {
    const heraldsim::CorrelationAnalysis& p = report.point;
    std::printf("state %s\n", label);
    std::printf("  records %lld (zz %lld, xx %lld, -xx %lld)\n",
                static_cast<long long>(p.n_records), static_cast<long long>(p.n_zz),
                static_cast<long long>(p.n_xx), static_cast<long long>(p.n_minus_xx));
    static constexpr const char* names[4] = {"P_uu", "P_ud", "P_du", "P_dd"};
    for (int i = 0; i < 4; ++i)
        std::printf("  %s %s  ci68 [%s, %s]\n", names[i],
                    format_double("%.6f", p.populations[i]).c_str(),
                    format_double("%.6f", report.populations_ci[i].lo).c_str(),
                    format_double("%.6f", report.populations_ci[i].hi).c_str());
    std::printf("  contrast %s  ci68 [%s, %s]\n",
                format_double("%.6f", p.contrast).c_str(),
                format_double("%.6f", report.contrast_ci.lo).c_str(),
                format_double("%.6f", report.contrast_ci.hi).c_str());
    std::printf("  fidelity_best %s  ci68 [%s, %s]\n",
                format_double("%.6f", p.fidelity_estimate).c_str(),
                format_double("%.6f", report.fidelity_ci.lo).c_str(),
                format_double("%.6f", report.fidelity_ci.hi).c_str());
    std::printf("  fidelity_lower_bound %s (raw %s)  ci68 [%s, %s]\n",
                format_double("%.6f", p.fidelity_lower_bound).c_str(),
                format_double("%.6f", p.fidelity_lower_bound_raw).c_str(),
                format_double("%.6f", report.lower_bound_ci.lo).c_str(),
                format_double("%.6f", report.lower_bound_ci.hi).c_str());
    std::printf("  p_above_half %s (%d replicates)\n",
                format_double("%.4f", report.p_above_half).c_str(), report.replicates);
}

int cmd_analyze(const AnalyzeArgs& args) {
    if (args.dtau_max && !(*args.dtau_max >= 0.0)) {
        std::cerr << "heraldsim analyze: --dtau-max must be >= 0\n";
        return kExitUsage;
    }
    heraldsim::EventLog log;
    heraldsim::ExperimentConfig config;
    try {
        log = heraldsim::read_event_log_file(args.log_path);
        config = log.config();
    } catch (const std::exception& e) {
        std::cerr << "heraldsim analyze: " << e.what() << '\n';
        return kExitIo;
    }

    const auto weighting = args.exposure_weighting
                               ? heraldsim::ContrastWeighting::exposure
                               : heraldsim::ContrastWeighting::equal;
    try {
        const auto minus_records =
            select_records(log, config, heraldsim::BellSign::minus, args.dtau_max);
        const auto plus_records =
            select_records(log, config, heraldsim::BellSign::plus, args.dtau_max);
        const heraldsim::SignReport minus = heraldsim::build_sign_report(
            minus_records, heraldsim::BellSign::minus, config.readout, args.replicates,
            config.seed ^ 0x9e3779b97f4a7c15ull, 0.68, weighting);
        const heraldsim::SignReport plus = heraldsim::build_sign_report(
            plus_records, heraldsim::BellSign::plus, config.readout, args.replicates,
            config.seed ^ 0x517cc1b727220a95ull, 0.68, weighting);
        print_sign_report("minus", minus);
        print_sign_report("plus", plus);
    } catch (const std::exception& e) {
        std::cerr << "heraldsim analyze: " << e.what() << '\n';
        return kExitAnalysis;
    }
    return kExitOk;
}

int cmd_g2(const G2Args& args) {
    if (!(args.bin_width_ns > 0.0)) {
        std::cerr << "heraldsim g2: --bins must be positive\n";
        return kExitUsage;
    }
    heraldsim::EventLog log;
    heraldsim::ExperimentConfig config;
    try {
        log = heraldsim::read_event_log_file(args.log_path);
        config = log.config();
    } catch (const std::exception& e) {
        std::cerr << "heraldsim g2: " << e.what() << '\n';
        return kExitIo;
    }
    if (log.clicks.empty()) {
        std::cerr << "heraldsim g2: log contains no click records (run with --clicks)\n";
        return kExitAnalysis;
    }

    try {
        const std::vector<heraldsim::ClickEvent> gated =
            heraldsim::window_gated_clicks(log.clicks, config.windows());
        const heraldsim::G2Histogram hist = heraldsim::g2_histogram(
            gated, args.bin_width_ns, config.protocol.repetition_period_ns,
            config.protocol.attempts_per_cr);
        const double period = hist.repetition_period_ns;
        std::printf("pairs %llu  bin_width_ns %s\n",
                    static_cast<unsigned long long>(hist.total_pairs),
                    format_double("%g", hist.bin_width_ns).c_str());
        for (int k = -5; k <= 5; ++k) {
            const std::uint64_t counts = hist.counts_in(k * period, 0.45 * period);
            std::printf("peak %+d  counts %llu\n", k,
                        static_cast<unsigned long long>(counts));
        }
        const heraldsim::VisibilityEstimate vis =
            heraldsim::visibility_from_histogram(hist, args.dt_cut_ns);
        std::printf("central_counts %s (|dt| <= %s ns)\n",
                    format_double("%.1f", vis.central_counts).c_str(),
                    format_double("%g", args.dt_cut_ns).c_str());
        std::printf("side_mean_counts %s\n",
                    format_double("%.3f", vis.side_mean_counts).c_str());
        std::printf("central_to_side_ratio %s\n",
                    format_double("%.4f", vis.central_to_side_ratio).c_str());
        std::printf("visibility %s\n", format_double("%.4f", vis.visibility).c_str());
    } catch (const std::exception& e) {
        std::cerr << "heraldsim g2: " << e.what() << '\n';
        return kExitAnalysis;
    }
    return kExitOk;
}

int cmd_sweep(const SweepArgs& args) {
    heraldsim::EventLog log;
    heraldsim::ExperimentConfig config;
    try {
        log = heraldsim::read_event_log_file(args.log_path);
        config = log.config();
    } catch (const std::exception& e) {
        std::cerr << "heraldsim sweep: " << e.what() << '\n';
        return kExitIo;
    }

    const double max_cut =
        std::max(config.windows_phys.round1_len_ns, config.windows_phys.round2_len_ns);
    for (const double cut : args.cuts) {
        if (!(cut >= 0.0) || cut > max_cut) {
            std::cerr << "heraldsim sweep: cut " << format_double("%g", cut)
                      << " outside [0, " << format_double("%g", max_cut)
                      << "] for the log's detection windows\n";
            return kExitUsage;
        }
    }
    const heraldsim::BellSign sign =
        args.sign == "plus" ? heraldsim::BellSign::plus : heraldsim::BellSign::minus;

    try {
        const auto records = select_records(log, config, sign, std::nullopt);
        const auto points =
            heraldsim::sweep_dtau(records, sign, config, args.cuts, args.replicates,
                                  config.seed ^ 0x2545f4914f6cdd1dull);
        std::printf("dtau_max_ns  events  fidelity  ci68_lo  ci68_hi  interference_bound\n");
        for (const heraldsim::SweepPoint& point : points) {
            if (point.has_estimate)
                std::printf("%s  %lld  %s  %s  %s  %s\n",
                            format_double("%g", point.dtau_max_ns).c_str(),
                            static_cast<long long>(point.n_events),
                            format_double("%.6f", point.fidelity_estimate).c_str(),
                            format_double("%.6f", point.ci_lo).c_str(),
                            format_double("%.6f", point.ci_hi).c_str(),
                            format_double("%.6f", point.interference_bound).c_str());
            else
                std::printf("%s  %lld  -  -  -  %s\n",
                            format_double("%g", point.dtau_max_ns).c_str(),
                            static_cast<long long>(point.n_events),
                            format_double("%.6f", point.interference_bound).c_str());
        }
    } catch (const std::exception& e) {
        std::cerr << "heraldsim sweep: " << e.what() << '\n';
        return kExitAnalysis;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-node heralded-entanglement simulator and analysis toolkit"};
    app.require_subcommand(1);

    RunArgs run_args;
    CLI::App* run = app.add_subcommand(
        "run", "Simulate an entanglement run and write an event log");
    run->add_option("--config", run_args.config_path,
                    "Configuration file (key = value); defaults when omitted");
    run->add_option("--out", run_args.out_path, "Event log output path (JSONL)")
        ->required();
    run->add_option("--seed", run_args.seed, "Override the configured random seed");
    run->add_option("--attempts", run_args.attempts, "Stop after this many attempts");
    run->add_option("--hours", run_args.hours, "Stop after this much simulated time");
    run->add_option("--heralds", run_args.heralds, "Stop after this many heralds");
    run->add_flag("--clicks", run_args.clicks,
                  "Interference mode: retain raw clicks, do not consume heralds");
    run->add_flag("--oracle", run_args.oracle,
                  "Include simulator-internal fields (click sources, branches, "
                  "true fidelities) in the log");
    run->add_flag("--fast", run_args.fast,
                  "Aggregated sampling path (no click records)");

    AnalyzeArgs analyze_args;
    CLI::App* analyze = app.add_subcommand(
        "analyze", "Correlation and fidelity report from an event log");
    analyze->add_option("--log", analyze_args.log_path, "Event log to analyze")
        ->required();
    analyze->add_option("--dtau-max", analyze_args.dtau_max,
                        "Extra strict click-separation cut |dtau| < value (ns)");
    analyze->add_option("--replicates", analyze_args.replicates,
                        "Bootstrap replicates per sign")
        ->check(CLI::Range(10, 1000000));
    analyze->add_flag("--exposure-weighting", analyze_args.exposure_weighting,
                      "Weight the rotated-basis settings by record counts instead of "
                      "equally");

    G2Args g2_args;
    CLI::App* g2 = app.add_subcommand(
        "g2", "Cross-detector coincidence histogram and interference visibility");
    g2->add_option("--log", g2_args.log_path, "Event log with click records")->required();
    g2->add_option("--bins", g2_args.bin_width_ns, "Histogram bin width (ns)");
    g2->add_option("--dt-cut", g2_args.dt_cut_ns,
                   "Central coincidence window half-width (ns)");

    SweepArgs sweep_args;
    CLI::App* sweep = app.add_subcommand(
        "sweep", "Fidelity versus click-separation cut");
    sweep->add_option("--log", sweep_args.log_path, "Event log to analyze")->required();
    sweep->add_option("--cuts", sweep_args.cuts, "Separation cuts in ns (|dtau| < cut)")
        ->required()
        ->delimiter(',');
    sweep->add_option("--sign", sweep_args.sign, "Herald sign to analyze")
        ->check(CLI::IsMember({"minus", "plus"}));
    sweep->add_option("--replicates", sweep_args.replicates,
                      "Bootstrap replicates per point")
        ->check(CLI::Range(10, 1000000));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (run->parsed()) return cmd_run(run_args);
    if (analyze->parsed()) return cmd_analyze(analyze_args);
    if (g2->parsed()) return cmd_g2(g2_args);
    return cmd_sweep(sweep_args);
}
