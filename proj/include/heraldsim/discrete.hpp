#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "photonics.hpp"

namespace heraldsim {

// Click times are quantized to 1 ns cells at detection (round to nearest).
// Cell k collects the continuous mass on [k - 0.5, k + 0.5), with cell 0
// truncated at zero for nonnegative variables.

inline double exp_cell_mass(double mean, std::int64_t j) {
    if (!(mean > 0.0)) throw std::invalid_argument("exp_cell_mass: nonpositive mean");
    if (j < 0) return 0.0;
    const double lo = j == 0 ? 0.0 : (static_cast<double>(j) - 0.5) / mean;
    const double hi = (static_cast<double>(j) + 0.5) / mean;
    return std::exp(-lo) - std::exp(-hi);
}

inline double emission_cell_mass(const EmissionModel& model, std::int64_t k) {
    if (k < 0) return 0.0;
    return emission_time_cdf(model, static_cast<double>(k) + 0.5) -
           emission_time_cdf(model, static_cast<double>(k) - 0.5);
}

inline double scatter_cell_mass(const EmissionModel& model, std::int64_t k) {
    if (k < 0) return 0.0;
    const double p = model.pulse_len_ns;
    if (p == 0.0) return k == 0 ? 1.0 : 0.0;
    const double lo = std::max(0.0, static_cast<double>(k) - 0.5);
    const double hi = std::min(p, static_cast<double>(k) + 0.5);
    return hi > lo ? (hi - lo) / p : 0.0;
}

struct CellRange {
    std::int64_t first = 0;
    std::int64_t last = -1;

    std::int64_t count() const { return last >= first ? last - first + 1 : 0; }
    bool contains(std::int64_t k) const { return k >= first && k <= last; }
};

inline CellRange window_cell_range(double offset_ns, double len_ns) {
    CellRange r;
    r.first = static_cast<std::int64_t>(std::ceil(offset_ns - 1e-9));
    r.last = static_cast<std::int64_t>(std::floor(offset_ns + len_ns + 1e-9));
    return r;
}

inline CellRange round_cell_range(const DetectionWindows& w, int round) {
    return window_cell_range(w.window_offset_ns,
                             round == 1 ? w.round1_len_ns : w.round2_len_ns);
}

inline double emission_window_mass(const EmissionModel& model, double offset_ns,
                                   double len_ns) {
    const CellRange r = window_cell_range(offset_ns, len_ns);
    double q = 0.0;
    for (std::int64_t k = r.first; k <= r.last; ++k) q += emission_cell_mass(model, k);
    return q;
}

// The configured eta is the probability of a detected photon inside the
// standard (round-1) window; the raw per-pulse detection probability divides
// out the in-window fraction of the emission-time distribution.
inline double detection_prob_raw(const EmissionModel& model, const DetectionWindows& w) {
    model.validate();
    w.validate();
    const double q = emission_window_mass(model, w.window_offset_ns, w.round1_len_ns);
    if (!(q > 0.0))
        throw std::invalid_argument("detection_prob_raw: detection window holds no emission");
    const double raw = model.eta / q;
    if (raw > 1.0 + 1e-12)
        throw std::invalid_argument(
            "detection_prob_raw: eta exceeds the in-window emission mass");
    return std::min(raw, 1.0);
}

// Dark counts fire on the integer cells spanning a round's acceptance range
// [0, offset + window], at most one per detector and round.
inline std::int64_t dark_cell_count(const DetectionWindows& w, int round) {
    const double len = round == 1 ? w.round1_len_ns : w.round2_len_ns;
    return static_cast<std::int64_t>(std::floor(w.window_offset_ns + len + 1e-9)) + 1;
}

inline double dark_cell_prob(const EmissionModel& model) {
    return model.dark_count_rate_hz * 1e-9;
}

}  // namespace heraldsim
