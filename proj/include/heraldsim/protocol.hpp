#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "heraldsim/analytic.hpp"
#include "heraldsim/config.hpp"
#include "heraldsim/discrete.hpp"
#include "heraldsim/photonics.hpp"
#include "heraldsim/qstate.hpp"
#include "heraldsim/rng.hpp"

namespace heraldsim {

enum class BasisSetting { zz, xx, minus_xx };

inline const char* to_string(BasisSetting b) {
    switch (b) {
        case BasisSetting::zz: return "ZZ";
        case BasisSetting::xx: return "XX";
        case BasisSetting::minus_xx: return "-XX";
    }
    return "?";
}

inline MeasurementBasis node_basis(BasisSetting setting, Node node) {
    switch (setting) {
        case BasisSetting::zz: return MeasurementBasis::z;
        case BasisSetting::xx: return MeasurementBasis::x;
        case BasisSetting::minus_xx:
            return node == Node::a ? MeasurementBasis::minus_x : MeasurementBasis::x;
    }
    return MeasurementBasis::z;
}

// Deterministic largest-remainder assignment: each herald gets the basis with
// the largest deficit against the target fractions, so every prefix of the
// sequence matches the requested split to within one count per basis.
class BasisScheduler {
  public:
    explicit BasisScheduler(const BasisSchedule& schedule) : schedule_(schedule) {
        schedule.validate();
    }

    BasisSetting next() {
        const std::array<double, 3> frac = {schedule_.frac_zz, schedule_.frac_xx,
                                            schedule_.frac_minus_xx};
        const double n = static_cast<double>(total_) + 1.0;
        int best = 0;
        double best_deficit = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < 3; ++i) {
            const double deficit = frac[i] * n - static_cast<double>(counts_[i]);
            if (deficit > best_deficit + 1e-12) {
                best = i;
                best_deficit = deficit;
            }
        }
        ++counts_[best];
        ++total_;
        return static_cast<BasisSetting>(best);
    }

    const std::array<std::int64_t, 3>& counts() const { return counts_; }

  private:
    BasisSchedule schedule_;
    std::array<std::int64_t, 3> counts_ = {0, 0, 0};
    std::int64_t total_ = 0;
};

struct NodeCrState {
    bool charge_ok = true;
    double resonance_offset = 0.0;
};

struct CrCheckResult {
    int probes = 0;
    int repumps = 0;
    double elapsed_us = 0.0;
};

// Lorentzian excitation efficiency versus resonance offset in half-linewidth
// units; offset 0.5 sits at the half-maximum point.
inline double resonance_lineshape(double offset) {
    return 1.0 / (1.0 + 4.0 * offset * offset);
}

// Alternating repump/probe until both nodes pass their photon-count
// thresholds. A repump restores the charge state and redraws the resonance
// offset; only nodes that failed the previous probe (or lost their charge
// state) are repumped, so offsets that pass are kept -- the selection narrows
// the distribution of offsets at which attempts actually run.
inline CrCheckResult run_cr_check(const CrCheckParams& params, NodeCrState& node_a,
                                  NodeCrState& node_b, RandomStream& rng) {
    params.validate();
    CrCheckResult result;
    bool repump_a = !node_a.charge_ok;
    bool repump_b = !node_b.charge_ok;
    for (long iter = 0; iter < 1000000; ++iter) {
        if (repump_a) {
            node_a.charge_ok = true;
            node_a.resonance_offset = rng.normal(0.0, params.resonance_jump_sigma);
            ++result.repumps;
            result.elapsed_us += params.repump_duration_us;
        }
        if (repump_b) {
            node_b.charge_ok = true;
            node_b.resonance_offset = rng.normal(0.0, params.resonance_jump_sigma);
            ++result.repumps;
            result.elapsed_us += params.repump_duration_us;
        }
        ++result.probes;
        result.elapsed_us += params.probe_duration_us;
        const std::uint64_t counts_a =
            rng.poisson(params.probe_mean_a * resonance_lineshape(node_a.resonance_offset));
        const std::uint64_t counts_b =
            rng.poisson(params.probe_mean_b * resonance_lineshape(node_b.resonance_offset));
        const bool pass_a = counts_a >= static_cast<std::uint64_t>(params.threshold_a);
        const bool pass_b = counts_b >= static_cast<std::uint64_t>(params.threshold_b);
        if (pass_a && pass_b) return result;
        repump_a = !pass_a;
        repump_b = !pass_b;
    }
    throw std::runtime_error(
        "run_cr_check: thresholds unreachable for the configured probe means");
}

struct HeraldRecord {
    std::int64_t index = 0;
    std::int64_t attempt = 0;
    double time_s = 0.0;
    BellSign sign = BellSign::minus;
    std::int64_t t1_ns = 0;
    std::int64_t t2_ns = 0;
    int detector1 = 1;
    int detector2 = 1;
    BasisSetting basis = BasisSetting::zz;
    bool up_a = false;
    bool up_b = false;
    ClickProvenance prov1 = ClickProvenance::nv_a;
    ClickProvenance prov2 = ClickProvenance::nv_b;
    SpinBranch branch = SpinBranch::ud;
    double true_state_fidelity = 0.0;

    std::int64_t dtau_ns() const { return t2_ns - t1_ns; }
};

struct RunCounters {
    std::int64_t attempts = 0;
    std::int64_t heralds = 0;
    std::int64_t cr_cycles = 0;
    std::int64_t cr_probes = 0;
    std::int64_t cr_repumps = 0;
    std::int64_t false_starts = 0;
    std::int64_t ionization_events = 0;
    double wall_time_s = 0.0;
};

struct RunOptions {
    std::int64_t max_attempts = -1;
    double max_hours = -1.0;
    std::int64_t max_heralds = -1;
    // Interference mode: accumulate the cross-detector coincidence histogram
    // from the raw click stream. Heralds are counted but not consumed, so
    // trains always run to full length and no readout dead time is spent;
    // truncating on heralds would bias the side peaks against the central
    // peak. No herald records are produced in this mode.
    bool collect_g2 = false;
    double g2_bin_width_ns = 1.0;
    double g2_domain_ns = 3600.0;
    // Keep every raw click in the result; click-level path only.
    bool retain_clicks = false;

    void validate() const {
        if (max_attempts < 0 && max_hours < 0.0 && max_heralds < 0)
            throw std::invalid_argument("RunOptions: set at least one stop limit");
        if (!(g2_bin_width_ns > 0.0))
            throw std::invalid_argument("RunOptions: nonpositive g2 bin width");
        if (!(g2_domain_ns > 0.0))
            throw std::invalid_argument("RunOptions: nonpositive g2 domain");
    }
};

struct RunResult {
    RunCounters counters;
    std::vector<HeraldRecord> heralds;
    std::vector<ClickEvent> clicks;
    G2Histogram g2;
};

inline bool apply_readout_error(bool up, double f_up, double f_down, RandomStream& rng) {
    return up ? rng.bernoulli(f_up) : !rng.bernoulli(f_down);
}

// Click-level Monte Carlo over one entanglement attempt plus the shared
// herald post-processing used by both run paths. Sampling follows the same
// event decomposition as the analytic model: integer-ns click cells, the
// in-window eta convention divided out to a raw detection probability, at
// most one dark count per detector and round, and afterpulses that inherit
// their parent's detector.
class ProtocolSimulator {
  public:
    explicit ProtocolSimulator(const ExperimentConfig& config)
        : config_(validated(config)),
          emission_a_(config.emission(Node::a)),
          emission_b_(config.emission(Node::b)),
          raw_a_(detection_prob_raw(emission_a_, config.windows())),
          raw_b_(detection_prob_raw(emission_b_, config.windows())),
          scatter_a_(emission_a_.laser_scatter_fraction * raw_a_),
          scatter_b_(emission_b_.laser_scatter_fraction * raw_b_),
          dark_cell_prob_(dark_cell_prob(emission_a_)),
          period_ns_(std::llround(config.protocol.repetition_period_ns)) {
        for (int round = 1; round <= 2; ++round)
            dark_cells_[round - 1] = dark_cell_count(config.windows(), round);
    }

    const ExperimentConfig& config() const { return config_; }
    double raw_detection_prob(Node node) const { return node == Node::a ? raw_a_ : raw_b_; }

    static bool node_bright(SpinBranch branch, Node node, int round) {
        const bool bright_first =
            node == Node::a ? branch == SpinBranch::uu || branch == SpinBranch::ud
                            : branch == SpinBranch::uu || branch == SpinBranch::du;
        return round == 1 ? bright_first : !bright_first;
    }

    // Clicks from one attempt, both rounds, in a fixed sampling order. An
    // inactive (ionized) node stops emitting photons but the excitation
    // pulses keep scattering and the detectors keep dark-counting.
    void simulate_attempt(SpinBranch branch, bool active_a, bool active_b,
                          std::int64_t comb_attempt, RandomStream& rng,
                          std::vector<ClickEvent>& clicks) const {
        clicks.clear();
        for (int round = 1; round <= 2; ++round) {
            std::int64_t cell_a = -1;
            std::int64_t cell_b = -1;
            if (active_a && node_bright(branch, Node::a, round) && rng.bernoulli(raw_a_))
                cell_a = std::llround(sample_emission_time(emission_a_, rng));
            if (active_b && node_bright(branch, Node::b, round) && rng.bernoulli(raw_b_))
                cell_b = std::llround(sample_emission_time(emission_b_, rng));
            if (cell_a >= 0 && cell_b >= 0) {
                // Two photons in one round coalesce onto a single detector
                // with probability (1 + V)/2.
                const double v =
                    mode_overlap(config_.indist, static_cast<double>(cell_b - cell_a));
                const int det_a = rng.bernoulli(0.5) ? 1 : 2;
                const int det_b = rng.bernoulli(0.5 * (1.0 + v)) ? det_a : 3 - det_a;
                clicks.push_back({comb_attempt, round, det_a, cell_a, ClickProvenance::nv_a});
                clicks.push_back({comb_attempt, round, det_b, cell_b, ClickProvenance::nv_b});
            } else if (cell_a >= 0) {
                clicks.push_back({comb_attempt, round, rng.bernoulli(0.5) ? 1 : 2, cell_a,
                                  ClickProvenance::nv_a});
            } else if (cell_b >= 0) {
                clicks.push_back({comb_attempt, round, rng.bernoulli(0.5) ? 1 : 2, cell_b,
                                  ClickProvenance::nv_b});
            }
            if (scatter_a_ > 0.0 && rng.bernoulli(scatter_a_))
                clicks.push_back({comb_attempt, round, rng.bernoulli(0.5) ? 1 : 2,
                                  std::llround(rng.uniform(0.0, config_.pulse_len_ns)),
                                  ClickProvenance::laser_scatter});
            if (scatter_b_ > 0.0 && rng.bernoulli(scatter_b_))
                clicks.push_back({comb_attempt, round, rng.bernoulli(0.5) ? 1 : 2,
                                  std::llround(rng.uniform(0.0, config_.pulse_len_ns)),
                                  ClickProvenance::laser_scatter});
            const double p_dark =
                dark_cell_prob_ * static_cast<double>(dark_cells_[round - 1]);
            for (int det = 1; det <= 2; ++det) {
                if (p_dark > 0.0 && rng.bernoulli(p_dark)) {
                    const auto cell = static_cast<std::int64_t>(
                        rng.uniform() * static_cast<double>(dark_cells_[round - 1]));
                    clicks.push_back(
                        {comb_attempt, round, det, cell, ClickProvenance::dark_count});
                }
            }
        }
        if (config_.afterpulse_prob > 0.0) {
            // The scan covers clicks appended by earlier iterations, so
            // afterpulses can themselves afterpulse.
            for (std::size_t i = 0; i < clicks.size(); ++i) {
                if (!rng.bernoulli(config_.afterpulse_prob)) continue;
                const ClickEvent parent = clicks[i];
                const std::int64_t parent_abs =
                    parent.time_ns + static_cast<std::int64_t>(parent.round - 1) * period_ns_;
                const std::int64_t abs_t =
                    std::llround(static_cast<double>(parent_abs) +
                                 rng.exponential(config_.afterpulse_decay_ns));
                if (abs_t >= 2 * period_ns_) continue;
                const int round = abs_t >= period_ns_ ? 2 : 1;
                clicks.push_back({comb_attempt, round, parent.detector,
                                  abs_t - static_cast<std::int64_t>(round - 1) * period_ns_,
                                  ClickProvenance::afterpulse});
            }
        }
    }

    struct MeasuredHerald {
        bool up_a = false;
        bool up_b = false;
        double true_state_fidelity = 0.0;
    };

    // Conditional state for the heralded pair, local error channels, then a
    // single-shot readout in the scheduled basis with per-node confusion.
    MeasuredHerald measure_herald(ClickProvenance prov1, ClickProvenance prov2,
                                  SpinBranch branch, BellSign sign, std::int64_t dtau_ns,
                                  BasisSetting basis, RandomStream& rng) const {
        const BranchContext ctx =
            is_nv(prov1) && is_nv(prov2)
                ? BranchContext::coherent_odd(config_.errors.coherence_scale())
                : branch_point_context(branch);
        const TwoQubitState heralded = conditional_heralded_state(
            prov1, prov2, ctx, static_cast<double>(dtau_ns), config_.phase, sign,
            emission_a_, emission_b_, config_.indist);
        const TwoQubitState state(apply_error_budget(heralded.matrix(), config_.errors));
        MeasuredHerald out;
        out.true_state_fidelity = fidelity_to_bell(state, sign);
        const OutcomeProbabilities probs = measurement_probabilities(
            state, node_basis(basis, Node::a), node_basis(basis, Node::b));
        const std::size_t outcome = rng.pick(probs.as_array());
        const bool true_up_a = outcome < 2;
        const bool true_up_b = outcome % 2 == 0;
        out.up_a =
            apply_readout_error(true_up_a, config_.readout.f_up_a, config_.readout.f_down_a, rng);
        out.up_b =
            apply_readout_error(true_up_b, config_.readout.f_up_b, config_.readout.f_down_b, rng);
        return out;
    }

  private:
    static const ExperimentConfig& validated(const ExperimentConfig& config) {
        config.validate();
        return config;
    }

    ExperimentConfig config_;
    EmissionModel emission_a_;
    EmissionModel emission_b_;
    double raw_a_;
    double raw_b_;
    double scatter_a_;
    double scatter_b_;
    double dark_cell_prob_;
    std::int64_t period_ns_;
    std::array<std::int64_t, 2> dark_cells_ = {0, 0};
};

namespace detail {

struct StopLimits {
    std::int64_t max_attempts = -1;
    double max_wall_s = -1.0;
    std::int64_t max_heralds = -1;

    bool reached(const RunCounters& c) const {
        return (max_attempts >= 0 && c.attempts >= max_attempts) ||
               (max_wall_s >= 0.0 && c.wall_time_s >= max_wall_s) ||
               (max_heralds >= 0 && c.heralds >= max_heralds);
    }
};

inline RunResult run_slow(const ProtocolSimulator& sim, const RunOptions& options,
                          const StopLimits& limits) {
    const ExperimentConfig& config = sim.config();
    RandomStream rng(config.seed, 0);
    BasisScheduler scheduler(config.schedule);
    RunResult result;
    result.g2.bin_width_ns = options.g2_bin_width_ns;
    result.g2.repetition_period_ns = config.protocol.repetition_period_ns;
    result.g2.domain_ns = options.g2_domain_ns;
    NodeCrState node_a{true, rng.normal(0.0, config.cr.resonance_jump_sigma)};
    NodeCrState node_b{true, rng.normal(0.0, config.cr.resonance_jump_sigma)};
    const double attempt_s = 1.0 / config.protocol.attempt_rate_hz;
    const double dead_s = config.protocol.readout_dead_time_us * 1e-6;
    const double p_ion = config.protocol.ionization_prob;
    static constexpr std::array<double, 4> branch_weights = {0.25, 0.25, 0.25, 0.25};
    std::vector<ClickEvent> clicks;
    std::vector<ClickEvent> train_clicks;
    std::int64_t train_counter = 0;
    RunCounters& c = result.counters;
    while (!limits.reached(c)) {
        const CrCheckResult cr = run_cr_check(config.cr, node_a, node_b, rng);
        ++c.cr_cycles;
        c.cr_probes += cr.probes;
        c.cr_repumps += cr.repumps;
        c.false_starts += cr.probes - 1;
        c.wall_time_s += cr.elapsed_us * 1e-6;
        train_clicks.clear();
        const std::int64_t comb_base =
            train_counter * static_cast<std::int64_t>(config.protocol.attempts_per_cr);
        ++train_counter;
        for (int t = 0; t < config.protocol.attempts_per_cr && !limits.reached(c); ++t) {
            ++c.attempts;
            c.wall_time_s += attempt_s;
            if (p_ion > 0.0) {
                if (node_a.charge_ok && rng.bernoulli(p_ion)) {
                    node_a.charge_ok = false;
                    ++c.ionization_events;
                }
                if (node_b.charge_ok && rng.bernoulli(p_ion)) {
                    node_b.charge_ok = false;
                    ++c.ionization_events;
                }
            }
            const auto branch = static_cast<SpinBranch>(rng.pick(branch_weights));
            sim.simulate_attempt(branch, node_a.charge_ok, node_b.charge_ok, comb_base + t,
                                 rng, clicks);
            if (options.collect_g2) {
                // The histogram sees only window-gated clicks; the retained
                // stream below stays raw.
                for (const ClickEvent& click : clicks)
                    if (config.windows().in_window(click.round,
                                                   static_cast<double>(click.time_ns)))
                        train_clicks.push_back(click);
            }
            if (options.retain_clicks)
                result.clicks.insert(result.clicks.end(), clicks.begin(), clicks.end());
            const auto herald = herald_classify(clicks, config.windows());
            if (!herald) continue;
            if (options.collect_g2) {
                ++c.heralds;
                continue;
            }
            c.wall_time_s += dead_s;
            HeraldRecord rec;
            rec.index = c.heralds;
            rec.attempt = c.attempts;
            rec.time_s = c.wall_time_s;
            rec.sign = herald->sign;
            rec.t1_ns = herald->t1_ns;
            rec.t2_ns = herald->t2_ns;
            rec.detector1 = herald->detector1;
            rec.detector2 = herald->detector2;
            rec.basis = scheduler.next();
            rec.prov1 = herald->prov1;
            rec.prov2 = herald->prov2;
            rec.branch = branch;
            const auto m = sim.measure_herald(herald->prov1, herald->prov2, branch,
                                              herald->sign, herald->dtau_ns, rec.basis, rng);
            rec.up_a = m.up_a;
            rec.up_b = m.up_b;
            rec.true_state_fidelity = m.true_state_fidelity;
            ++c.heralds;
            result.heralds.push_back(rec);
            break;
        }
        if (options.collect_g2)
            g2_accumulate(result.g2, train_clicks, config.protocol.attempts_per_cr);
    }
    return result;
}

// Aggregated path: heralds are drawn directly from the analytic per-attempt
// outcome table instead of click-level sampling. Attempts with an ionized
// node are treated as herald-free; background-only heralds inside those
// stretches are below every tolerance the fast path is used for.
inline RunResult run_fast(const ProtocolSimulator& sim, const RunOptions& options,
                          const StopLimits& limits) {
    const ExperimentConfig& config = sim.config();
    const AnalyticHeraldModel model = build_analytic_model(config);
    RandomStream rng(config.seed, 0);
    BasisScheduler scheduler(config.schedule);
    RunResult result;
    NodeCrState node_a{true, rng.normal(0.0, config.cr.resonance_jump_sigma)};
    NodeCrState node_b{true, rng.normal(0.0, config.cr.resonance_jump_sigma)};
    const double attempt_s = 1.0 / config.protocol.attempt_rate_hz;
    const double dead_s = config.protocol.readout_dead_time_us * 1e-6;
    const auto apc = static_cast<std::int64_t>(config.protocol.attempts_per_cr);
    constexpr auto never = std::numeric_limits<std::int64_t>::max();
    RunCounters& c = result.counters;
    while (!limits.reached(c)) {
        const CrCheckResult cr = run_cr_check(config.cr, node_a, node_b, rng);
        ++c.cr_cycles;
        c.cr_probes += cr.probes;
        c.cr_repumps += cr.repumps;
        c.false_starts += cr.probes - 1;
        c.wall_time_s += cr.elapsed_us * 1e-6;
        const std::int64_t ion_a = rng.geometric(config.protocol.ionization_prob);
        const std::int64_t ion_b = rng.geometric(config.protocol.ionization_prob);
        std::int64_t train_attempts = apc;
        if (limits.max_attempts >= 0)
            train_attempts = std::min(train_attempts, limits.max_attempts - c.attempts);
        const std::int64_t capable =
            std::min(train_attempts, std::min(ion_a, ion_b) - 1);
        const std::int64_t herald_at =
            model.p_herald > 0.0 ? rng.geometric(model.p_herald) : never;
        if (herald_at <= capable) {
            c.attempts += herald_at;
            c.wall_time_s += static_cast<double>(herald_at) * attempt_s + dead_s;
            const double u = rng.uniform();
            const auto it =
                std::lower_bound(model.draw_cdf.begin(), model.draw_cdf.end(), u);
            const std::size_t idx = std::min(
                static_cast<std::size_t>(it - model.draw_cdf.begin()),
                model.draw_table.size() - 1);
            const HeraldDrawEntry& entry = model.draw_table[idx];
            HeraldRecord rec;
            rec.index = c.heralds;
            rec.attempt = c.attempts;
            rec.time_s = c.wall_time_s;
            rec.sign = entry.sign;
            rec.t1_ns = entry.k1;
            rec.t2_ns = entry.k2;
            rec.detector1 = rng.bernoulli(0.5) ? 1 : 2;
            rec.detector2 =
                entry.sign == BellSign::plus ? rec.detector1 : 3 - rec.detector1;
            rec.basis = scheduler.next();
            rec.prov1 = entry.prov1;
            rec.prov2 = entry.prov2;
            rec.branch = entry.branch;
            const auto m =
                sim.measure_herald(entry.prov1, entry.prov2, entry.branch, entry.sign,
                                   rec.t2_ns - rec.t1_ns, rec.basis, rng);
            rec.up_a = m.up_a;
            rec.up_b = m.up_b;
            rec.true_state_fidelity = m.true_state_fidelity;
            ++c.heralds;
            result.heralds.push_back(rec);
        } else {
            c.attempts += train_attempts;
            c.wall_time_s += static_cast<double>(train_attempts) * attempt_s;
            if (ion_a <= train_attempts) {
                node_a.charge_ok = false;
                ++c.ionization_events;
            }
            if (ion_b <= train_attempts) {
                node_b.charge_ok = false;
                ++c.ionization_events;
            }
        }
    }
    return result;
}

}  // namespace detail

inline RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    options.validate();
    if (config.protocol.fast_path && (options.collect_g2 || options.retain_clicks))
        throw std::invalid_argument(
            "run_experiment: click output requires the click-level path (fast_path = false)");
    const ProtocolSimulator sim(config);
    const detail::StopLimits limits{
        options.max_attempts,
        options.max_hours < 0.0 ? -1.0 : options.max_hours * 3600.0,
        options.max_heralds};
    return config.protocol.fast_path ? detail::run_fast(sim, options, limits)
                                     : detail::run_slow(sim, options, limits);
}

}  // namespace heraldsim
