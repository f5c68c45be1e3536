#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "heraldsim/analytic.hpp"
#include "heraldsim/config.hpp"
#include "heraldsim/protocol.hpp"
#include "heraldsim/qstate.hpp"
#include "heraldsim/rng.hpp"

namespace heraldsim {

// Heralding probability of the two-round single-photon scheme with per-node
// detection efficiencies and everything else ideal.
inline double success_probability(double eta_a, double eta_b) {
    if (!(eta_a >= 0.0 && eta_a <= 1.0) || !(eta_b >= 0.0 && eta_b <= 1.0))
        throw std::invalid_argument("success_probability: efficiencies must lie in [0, 1]");
    return 0.5 * eta_a * eta_b;
}

inline int outcome_index(bool up_a, bool up_b) {
    return (up_a ? 0 : 2) + (up_b ? 0 : 1);
}

// Column-stochastic confusion matrix M[observed][true] over the four joint
// readout outcomes, built as the tensor product of the per-node confusions.
inline std::array<std::array<double, 4>, 4> readout_confusion(const ReadoutFidelity& readout) {
    readout.validate();
    const std::array<std::array<double, 2>, 2> node_a = {
        {{readout.f_up_a, 1.0 - readout.f_down_a}, {1.0 - readout.f_up_a, readout.f_down_a}}};
    const std::array<std::array<double, 2>, 2> node_b = {
        {{readout.f_up_b, 1.0 - readout.f_down_b}, {1.0 - readout.f_up_b, readout.f_down_b}}};
    std::array<std::array<double, 4>, 4> m{};
    for (int obs = 0; obs < 4; ++obs)
        for (int truth = 0; truth < 4; ++truth)
            m[obs][truth] =
                node_a[obs >> 1][truth >> 1] * node_b[obs & 1][truth & 1];
    return m;
}

// Maximum-likelihood readout correction: multiplicative fixed-point updates
// for the multinomial mixture, which keep the estimate on the probability
// simplex (a plain matrix inversion can leave it).
inline std::array<double, 4> mle_correct(const std::array<double, 4>& counts,
                                         const ReadoutFidelity& readout) {
    if (std::fabs(readout.f_up_a + readout.f_down_a - 1.0) < 1e-9 ||
        std::fabs(readout.f_up_b + readout.f_down_b - 1.0) < 1e-9)
        throw std::invalid_argument(
            "mle_correct: confusion matrix is singular (f_up + f_down = 1)");
    double total = 0.0;
    for (double n : counts) {
        if (n < 0.0 || !std::isfinite(n))
            throw std::invalid_argument("mle_correct: counts must be finite and nonnegative");
        total += n;
    }
    if (total <= 0.0) throw std::invalid_argument("mle_correct: empty counts");

    const auto m = readout_confusion(readout);
    std::array<double, 4> q = {0.25, 0.25, 0.25, 0.25};
    for (int iter = 0; iter < 200000; ++iter) {
        std::array<double, 4> predicted{};
        for (int obs = 0; obs < 4; ++obs)
            for (int truth = 0; truth < 4; ++truth)
                predicted[obs] += m[obs][truth] * q[truth];
        std::array<double, 4> next{};
        double norm = 0.0;
        for (int truth = 0; truth < 4; ++truth) {
            double factor = 0.0;
            for (int obs = 0; obs < 4; ++obs) {
                if (counts[obs] == 0.0) continue;
                if (predicted[obs] <= 0.0)
                    throw std::runtime_error(
                        "mle_correct: observed outcome impossible under the confusion model");
                factor += m[obs][truth] * counts[obs] / predicted[obs];
            }
            next[truth] = q[truth] * factor / total;
            norm += next[truth];
        }
        double delta = 0.0;
        for (int truth = 0; truth < 4; ++truth) {
            next[truth] /= norm;
            delta = std::max(delta, std::fabs(next[truth] - q[truth]));
        }
        q = next;
        if (delta < 1e-10) break;
    }
    return q;
}

namespace detail {

inline void require_simplex(const std::array<double, 4>& p, const char* what) {
    double sum = 0.0;
    for (double x : p) {
        if (x < -1e-9 || !std::isfinite(x))
            throw std::invalid_argument(std::string(what) + ": probabilities out of range");
        sum += x;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
        throw std::invalid_argument(std::string(what) + ": probabilities must sum to 1");
}

inline double odd_minus_even(const std::array<double, 4>& p) {
    return p[1] + p[2] - p[0] - p[3];
}

}  // namespace detail

// Parity contrast from the two rotated-basis outcome distributions, averaged
// with equal weight. The plus state shows even parity in {X, X} and odd in
// {-X, X}; the minus state the opposite, hence the sign pattern.
inline double contrast(const std::array<double, 4>& probs_xx,
                       const std::array<double, 4>& probs_minus_xx, BellSign sign) {
    detail::require_simplex(probs_xx, "contrast");
    detail::require_simplex(probs_minus_xx, "contrast");
    const double s = sign == BellSign::minus ? 1.0 : -1.0;
    return 0.5 * (s * detail::odd_minus_even(probs_xx) -
                  s * detail::odd_minus_even(probs_minus_xx));
}

inline double fidelity_best_estimate(const std::array<double, 4>& populations,
                                     double contrast_value) {
    return 0.5 * (populations[1] + populations[2] + contrast_value);
}

inline double fidelity_lower_bound_raw(const std::array<double, 4>& populations,
                                       double contrast_value) {
    return fidelity_best_estimate(populations, contrast_value) -
           std::sqrt(std::max(0.0, populations[0] * populations[3]));
}

// Reporting form of the bound: clamped below at zero (the raw value can go
// negative on tiny samples).
inline double fidelity_lower_bound(const std::array<double, 4>& populations,
                                   double contrast_value) {
    return std::max(0.0, fidelity_lower_bound_raw(populations, contrast_value));
}

enum class ContrastWeighting { equal, exposure };

struct CorrelationAnalysis {
    std::int64_t n_records = 0;
    std::int64_t n_zz = 0;
    std::int64_t n_xx = 0;
    std::int64_t n_minus_xx = 0;
    std::array<double, 4> populations = {0.0, 0.0, 0.0, 0.0};
    double contrast = 0.0;
    double fidelity_estimate = 0.0;
    double fidelity_lower_bound_raw = 0.0;
    double fidelity_lower_bound = 0.0;
};

namespace detail {

// Shared core for the full-sample estimate and the bootstrap replicates:
// readout-corrected populations from the computational-basis records plus the
// sign-adjusted rotated-basis contrast. The two rotated settings enter with
// equal weight by default; exposure weighting (by record counts) is the
// documented variant. A missing rotated setting falls back to the other.
inline CorrelationAnalysis correlation_from_counts(const std::array<double, 4>& zz,
                                                   const std::array<double, 4>& xx,
                                                   const std::array<double, 4>& minus_xx,
                                                   BellSign sign,
                                                   const ReadoutFidelity& readout,
                                                   ContrastWeighting weighting) {
    CorrelationAnalysis out;
    for (int i = 0; i < 4; ++i) {
        out.n_zz += static_cast<std::int64_t>(zz[i]);
        out.n_xx += static_cast<std::int64_t>(xx[i]);
        out.n_minus_xx += static_cast<std::int64_t>(minus_xx[i]);
    }
    out.n_records = out.n_zz + out.n_xx + out.n_minus_xx;
    if (out.n_zz == 0)
        throw std::runtime_error(
            "correlation analysis: no computational-basis records for this sign");
    if (out.n_xx + out.n_minus_xx == 0)
        throw std::runtime_error(
            "correlation analysis: no rotated-basis records for this sign");

    out.populations = mle_correct(zz, readout);

    const double s = sign == BellSign::minus ? 1.0 : -1.0;
    if (out.n_xx > 0 && out.n_minus_xx > 0) {
        const auto qx = mle_correct(xx, readout);
        const auto qm = mle_correct(minus_xx, readout);
        if (weighting == ContrastWeighting::equal) {
            out.contrast = contrast(qx, qm, sign);
        } else {
            const double wx = static_cast<double>(out.n_xx);
            const double wm = static_cast<double>(out.n_minus_xx);
            out.contrast = (wx * s * odd_minus_even(qx) - wm * s * odd_minus_even(qm)) /
                           (wx + wm);
        }
    } else if (out.n_xx > 0) {
        out.contrast = s * odd_minus_even(mle_correct(xx, readout));
    } else {
        out.contrast = -s * odd_minus_even(mle_correct(minus_xx, readout));
    }

    out.fidelity_estimate = fidelity_best_estimate(out.populations, out.contrast);
    out.fidelity_lower_bound_raw =
        heraldsim::fidelity_lower_bound_raw(out.populations, out.contrast);
    out.fidelity_lower_bound =
        heraldsim::fidelity_lower_bound(out.populations, out.contrast);
    return out;
}

struct OutcomeTriplet {
    std::array<double, 4> zz{};
    std::array<double, 4> xx{};
    std::array<double, 4> minus_xx{};

    void add(BasisSetting basis, int outcome) {
        switch (basis) {
            case BasisSetting::zz: ++zz[outcome]; break;
            case BasisSetting::xx: ++xx[outcome]; break;
            case BasisSetting::minus_xx: ++minus_xx[outcome]; break;
        }
    }
};

struct CompactRecord {
    BasisSetting basis;
    int outcome;
};

struct ReplicateSet {
    CorrelationAnalysis point;
    std::vector<CorrelationAnalysis> replicates;
};

inline ReplicateSet bootstrap_replicates(std::span<const HeraldRecord> records,
                                         BellSign sign, const ReadoutFidelity& readout,
                                         int replicates, std::uint64_t seed,
                                         ContrastWeighting weighting) {
    if (replicates < 10)
        throw std::invalid_argument("bootstrap: too few replicates");
    std::vector<CompactRecord> sample;
    OutcomeTriplet full;
    for (const HeraldRecord& rec : records) {
        if (rec.sign != sign) continue;
        const int outcome = outcome_index(rec.up_a, rec.up_b);
        sample.push_back({rec.basis, outcome});
        full.add(rec.basis, outcome);
    }
    ReplicateSet out;
    out.point = correlation_from_counts(full.zz, full.xx, full.minus_xx, sign, readout,
                                        weighting);
    RandomStream rng(seed, 17);
    const std::size_t n = sample.size();
    out.replicates.reserve(static_cast<std::size_t>(replicates));
    for (int b = 0; b < replicates; ++b) {
        for (int attempt = 0;; ++attempt) {
            OutcomeTriplet counts;
            for (std::size_t i = 0; i < n; ++i) {
                const auto pick = static_cast<std::size_t>(rng.uniform() *
                                                           static_cast<double>(n));
                const CompactRecord& c = sample[std::min(pick, n - 1)];
                counts.add(c.basis, c.outcome);
            }
            try {
                out.replicates.push_back(correlation_from_counts(
                    counts.zz, counts.xx, counts.minus_xx, sign, readout, weighting));
                break;
            } catch (const std::runtime_error&) {
                if (attempt >= 100)
                    throw std::runtime_error(
                        "bootstrap: resamples keep missing a basis setting");
            }
        }
    }
    return out;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

inline Interval percentile_interval(std::vector<double>& values, double level) {
    std::sort(values.begin(), values.end());
    const auto at = [&](double q) {
        const auto idx = static_cast<std::size_t>(
            std::llround(q * static_cast<double>(values.size() - 1)));
        return values[idx];
    };
    const double tail = 0.5 * (1.0 - level);
    return {at(tail), at(1.0 - tail)};
}

}  // namespace detail

using detail::Interval;

inline CorrelationAnalysis analyze_correlations(
    std::span<const HeraldRecord> records, BellSign sign, const ReadoutFidelity& readout,
    ContrastWeighting weighting = ContrastWeighting::equal) {
    detail::OutcomeTriplet counts;
    for (const HeraldRecord& rec : records) {
        if (rec.sign != sign) continue;
        counts.add(rec.basis, outcome_index(rec.up_a, rec.up_b));
    }
    return detail::correlation_from_counts(counts.zz, counts.xx, counts.minus_xx, sign,
                                           readout, weighting);
}

// Exact-moment version of the estimator's lower bound: diagonal populations
// plus the sign-adjusted XX expectation, minus the sqrt(P_uu P_dd) allowance
// for even-parity coherence. Lower-bounds the Bell-state fidelity for every
// physical state.
inline double fidelity_bound_from_moments(const TwoQubitState& state, BellSign sign) {
    const Matrix4cd& rho = state.matrix();
    const Matrix4cd xx = detail::kron(detail::pauli(1), detail::pauli(1));
    const double xx_expectation = (rho * xx).trace().real();
    const double contrast_value = (sign == BellSign::plus ? 1.0 : -1.0) * xx_expectation;
    const std::array<double, 4> populations = {rho(0, 0).real(), rho(1, 1).real(),
                                               rho(2, 2).real(), rho(3, 3).real()};
    return fidelity_lower_bound_raw(populations, contrast_value);
}

// Exact-moment best estimate, for comparing estimator output against a known
// density matrix.
inline double fidelity_estimate_from_moments(const TwoQubitState& state, BellSign sign) {
    const Matrix4cd& rho = state.matrix();
    const Matrix4cd xx = detail::kron(detail::pauli(1), detail::pauli(1));
    const double xx_expectation = (rho * xx).trace().real();
    const double contrast_value = (sign == BellSign::plus ? 1.0 : -1.0) * xx_expectation;
    const std::array<double, 4> populations = {rho(0, 0).real(), rho(1, 1).real(),
                                               rho(2, 2).real(), rho(3, 3).real()};
    return fidelity_best_estimate(populations, contrast_value);
}

struct BootstrapResult {
    double estimate = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double std_error = 0.0;
    double p_above_half = 0.0;
    int replicates = 0;
};

// Percentile bootstrap over a generic record set: the statistic is evaluated
// on resampled spans and must be total. Deterministic given the seed.
template <typename Value, typename Statistic>
BootstrapResult bootstrap_ci(std::span<const Value> items, Statistic&& statistic,
                             int replicates = 2000, std::uint64_t seed = 12345,
                             double level = 0.68) {
    if (items.size() < 2)
        throw std::invalid_argument("bootstrap_ci: need at least two records");
    if (replicates < 10) throw std::invalid_argument("bootstrap_ci: too few replicates");
    if (!(level > 0.0) || !(level < 1.0))
        throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");
    RandomStream rng(seed, 17);
    const std::size_t n = items.size();
    std::vector<Value> resample(n);
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(replicates));
    for (int b = 0; b < replicates; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto pick =
                static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
            resample[i] = items[std::min(pick, n - 1)];
        }
        stats.push_back(statistic(std::span<const Value>(resample)));
    }
    BootstrapResult out;
    out.estimate = statistic(items);
    out.replicates = replicates;
    double mass = 0.0;
    double mean = 0.0;
    for (double s : stats) {
        mean += s;
        if (s > 0.5) mass += 1.0;
    }
    mean /= static_cast<double>(stats.size());
    out.p_above_half = mass / static_cast<double>(stats.size());
    double var = 0.0;
    for (double s : stats) var += (s - mean) * (s - mean);
    out.std_error = std::sqrt(var / static_cast<double>(stats.size() - 1));
    const Interval ci = detail::percentile_interval(stats, level);
    out.ci_lo = ci.lo;
    out.ci_hi = ci.hi;
    return out;
}

// Bootstrap interval for the fidelity estimate (or the clamped lower bound),
// resampling herald records of the requested sign.
inline BootstrapResult bootstrap_fidelity_ci(
    std::span<const HeraldRecord> records, BellSign sign, const ReadoutFidelity& readout,
    int replicates = 2000, std::uint64_t seed = 12345, bool use_lower_bound = false,
    double level = 0.68, ContrastWeighting weighting = ContrastWeighting::equal) {
    if (!(level > 0.0) || !(level < 1.0))
        throw std::invalid_argument("bootstrap_fidelity_ci: level must lie in (0, 1)");
    detail::ReplicateSet set =
        detail::bootstrap_replicates(records, sign, readout, replicates, seed, weighting);
    std::vector<double> stats;
    stats.reserve(set.replicates.size());
    for (const CorrelationAnalysis& rep : set.replicates)
        stats.push_back(use_lower_bound ? rep.fidelity_lower_bound
                                        : rep.fidelity_estimate);
    BootstrapResult out;
    out.estimate =
        use_lower_bound ? set.point.fidelity_lower_bound : set.point.fidelity_estimate;
    out.replicates = replicates;
    double mass = 0.0;
    double mean = 0.0;
    for (double s : stats) {
        mean += s;
        if (s > 0.5) mass += 1.0;
    }
    mean /= static_cast<double>(stats.size());
    out.p_above_half = mass / static_cast<double>(stats.size());
    double var = 0.0;
    for (double s : stats) var += (s - mean) * (s - mean);
    out.std_error = std::sqrt(var / static_cast<double>(stats.size() - 1));
    const Interval ci = detail::percentile_interval(stats, level);
    out.ci_lo = ci.lo;
    out.ci_hi = ci.hi;
    return out;
}

struct SignReport {
    CorrelationAnalysis point;
    std::array<Interval, 4> populations_ci{};
    Interval contrast_ci;
    Interval fidelity_ci;
    Interval lower_bound_ci;
    double p_above_half = 0.0;
    int replicates = 0;
};

// Full per-sign report: point estimates with 68% percentile intervals on the
// populations, the contrast and both fidelity figures, plus the bootstrap
// mass above the separable-state ceiling F = 1/2.
inline SignReport build_sign_report(std::span<const HeraldRecord> records, BellSign sign,
                                    const ReadoutFidelity& readout, int replicates = 2000,
                                    std::uint64_t seed = 12345, double level = 0.68,
                                    ContrastWeighting weighting = ContrastWeighting::equal) {
    detail::ReplicateSet set =
        detail::bootstrap_replicates(records, sign, readout, replicates, seed, weighting);
    SignReport out;
    out.point = set.point;
    out.replicates = replicates;
    std::vector<double> scratch(set.replicates.size());
    for (int i = 0; i < 4; ++i) {
        for (std::size_t b = 0; b < set.replicates.size(); ++b)
            scratch[b] = set.replicates[b].populations[i];
        out.populations_ci[i] = detail::percentile_interval(scratch, level);
    }
    for (std::size_t b = 0; b < set.replicates.size(); ++b)
        scratch[b] = set.replicates[b].contrast;
    out.contrast_ci = detail::percentile_interval(scratch, level);
    double mass = 0.0;
    for (std::size_t b = 0; b < set.replicates.size(); ++b) {
        scratch[b] = set.replicates[b].fidelity_estimate;
        if (scratch[b] > 0.5) mass += 1.0;
    }
    out.p_above_half = mass / static_cast<double>(set.replicates.size());
    out.fidelity_ci = detail::percentile_interval(scratch, level);
    for (std::size_t b = 0; b < set.replicates.size(); ++b)
        scratch[b] = set.replicates[b].fidelity_lower_bound;
    out.lower_bound_ci = detail::percentile_interval(scratch, level);
    return out;
}

struct SweepPoint {
    double dtau_max_ns = 0.0;
    std::int64_t n_events = 0;
    bool has_estimate = false;
    double fidelity_estimate = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double interference_bound = 0.0;
};

// Re-filters the records at successively looser click-separation cuts
// (strictly |dtau| < cut) and pairs each subset's fidelity estimate with the
// model ceiling (1 + mean overlap)/2 at that cut. Points whose subset cannot
// support the estimator are reported with counts only.
inline std::vector<SweepPoint> sweep_dtau(std::span<const HeraldRecord> records,
                                          BellSign sign, const ExperimentConfig& config,
                                          std::span<const double> cuts,
                                          int bootstrap_replicates = 500,
                                          std::uint64_t seed = 12345,
                                          ContrastWeighting weighting =
                                              ContrastWeighting::equal) {
    if (cuts.empty()) throw std::invalid_argument("sweep_dtau: no cuts given");
    std::vector<SweepPoint> out;
    out.reserve(cuts.size());
    for (const double cut : cuts) {
        if (!(cut >= 0.0)) throw std::invalid_argument("sweep_dtau: cuts must be >= 0");
        SweepPoint point;
        point.dtau_max_ns = cut;
        if (cut > 0.0) {
            ExperimentConfig tightened = config;
            tightened.windows_phys.dtau_max_ns = cut;
            tightened.psi_plus_dtau_max_ns = std::min(tightened.psi_plus_dtau_max_ns, cut);
            const AnalyticHeraldModel model = build_analytic_model(tightened);
            point.interference_bound = 0.5 * (1.0 + model.mean_overlap);
        } else {
            point.interference_bound =
                0.5 * (1.0 + mode_overlap(config.indist, 0.0));
        }

        std::vector<HeraldRecord> subset;
        for (const HeraldRecord& rec : records)
            if (rec.sign == sign && std::fabs(static_cast<double>(rec.dtau_ns())) < cut)
                subset.push_back(rec);
        point.n_events = static_cast<std::int64_t>(subset.size());

        try {
            const BootstrapResult boot = bootstrap_fidelity_ci(
                subset, sign, config.readout, bootstrap_replicates, seed, false, 0.68,
                weighting);
            point.has_estimate = true;
            point.fidelity_estimate = boot.estimate;
            point.ci_lo = boot.ci_lo;
            point.ci_hi = boot.ci_hi;
        } catch (const std::runtime_error&) {
            point.has_estimate = false;
        }
        out.push_back(point);
    }
    return out;
}

struct RateSummary {
    double p_herald = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double heralds_per_hour = 0.0;
    double minutes_per_herald = 0.0;
};

// Herald probability per attempt with a Wilson 68% interval, plus wall-clock
// rates from the run counters.
inline RateSummary rate_summary(const RunCounters& counters) {
    if (counters.attempts <= 0)
        throw std::invalid_argument("rate_summary: no attempts recorded");
    const double n = static_cast<double>(counters.attempts);
    const double h = static_cast<double>(counters.heralds);
    const double p = h / n;
    const double z = 1.0;
    const double denom = 1.0 + z * z / n;
    const double center = (p + z * z / (2.0 * n)) / denom;
    const double halfwidth =
        z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
    RateSummary out;
    out.p_herald = p;
    out.ci_lo = std::max(0.0, center - halfwidth);
    out.ci_hi = std::min(1.0, center + halfwidth);
    out.heralds_per_hour =
        counters.wall_time_s > 0.0 ? h / (counters.wall_time_s / 3600.0) : 0.0;
    out.minutes_per_herald = counters.heralds > 0
                                 ? counters.wall_time_s / 60.0 / h
                                 : std::numeric_limits<double>::infinity();
    return out;
}

}  // namespace heraldsim
