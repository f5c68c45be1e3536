#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "photonics.hpp"

namespace heraldsim {

// Local error channels applied to every heralded state. The initialization
// error acts as per-node phase damping on the prepared superposition, which
// only rescales the heralded coherence; the remaining channels act on the
// heralded two-qubit state.
struct ErrorBudget {
    double init_error_prob = 0.02;
    double spin_flip_prob = 0.01;
    double dephasing_prob = 0.01;
    double mw_pi_error_prob = 0.035;

    void validate() const {
        for (double p : {init_error_prob, spin_flip_prob, dephasing_prob, mw_pi_error_prob})
            if (!(p >= 0.0 && p <= 1.0))
                throw std::invalid_argument("ErrorBudget: probability outside [0, 1]");
    }

    double coherence_scale() const {
        return (1.0 - init_error_prob) * (1.0 - init_error_prob);
    }
};

struct ProtocolTiming {
    int attempts_per_cr = 300;
    double attempt_rate_hz = 2e4;
    double repetition_period_ns = 600.0;
    double readout_dead_time_us = 100.0;
    double ionization_prob = 1.0 / 3000.0;
    bool fast_path = false;

    void validate() const {
        if (attempts_per_cr < 1)
            throw std::invalid_argument("ProtocolTiming: attempts_per_cr must be >= 1");
        if (!(attempt_rate_hz > 0.0))
            throw std::invalid_argument("ProtocolTiming: nonpositive attempt rate");
        if (!(repetition_period_ns > 0.0))
            throw std::invalid_argument("ProtocolTiming: nonpositive repetition period");
        if (!(readout_dead_time_us >= 0.0))
            throw std::invalid_argument("ProtocolTiming: negative readout dead time");
        if (!(ionization_prob >= 0.0 && ionization_prob < 1.0))
            throw std::invalid_argument("ProtocolTiming: ionization_prob outside [0, 1)");
    }
};

// Charge-resonance preparation: each probe draws Poisson counts whose mean is
// suppressed by a Lorentzian in the node's resonance offset; failed probes
// trigger a repump that redraws the offset.
struct CrCheckParams {
    int threshold_a = 45;
    int threshold_b = 20;
    double probe_mean_a = 135.0;
    double probe_mean_b = 60.0;
    double resonance_jump_sigma = 0.6;
    double probe_duration_us = 60.0;
    double repump_duration_us = 10.0;

    void validate() const {
        if (threshold_a < 0 || threshold_b < 0)
            throw std::invalid_argument("CrCheckParams: negative threshold");
        if (!(probe_mean_a >= 0.0) || !(probe_mean_b >= 0.0))
            throw std::invalid_argument("CrCheckParams: negative probe mean");
        if (!(resonance_jump_sigma >= 0.0))
            throw std::invalid_argument("CrCheckParams: negative jump sigma");
        if (!(probe_duration_us >= 0.0) || !(repump_duration_us >= 0.0))
            throw std::invalid_argument("CrCheckParams: negative duration");
    }
};

// Single-shot readout fidelities: f_up is the probability of reporting "up"
// when the spin is up, f_down of reporting "down" when it is down.
struct ReadoutFidelity {
    double f_up_a = 0.95;
    double f_down_a = 0.99;
    double f_up_b = 0.95;
    double f_down_b = 0.99;

    void validate() const {
        for (double f : {f_up_a, f_down_a, f_up_b, f_down_b})
            if (!(f >= 0.5 && f <= 1.0))
                throw std::invalid_argument("ReadoutFidelity: fidelity outside [0.5, 1]");
    }
};

struct BasisSchedule {
    double frac_zz = 1.0 / 3.0;
    double frac_xx = 1.0 / 3.0;
    double frac_minus_xx = 1.0 / 3.0;

    void validate() const {
        if (!(frac_zz >= 0.0 && frac_xx >= 0.0 && frac_minus_xx >= 0.0))
            throw std::invalid_argument("BasisSchedule: negative fraction");
        const double sum = frac_zz + frac_xx + frac_minus_xx;
        if (std::fabs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("BasisSchedule: fractions must sum to 1");
    }
};

struct ExperimentConfig {
    double lifetime_ns = 12.0;
    double pulse_len_ns = 2.0;
    double eta_a = 4e-4;
    double eta_b = 4e-4;
    double laser_scatter_fraction = 0.01;
    double dark_count_rate_hz = 25.0;
    double afterpulse_prob = 1.2e-3;
    double afterpulse_decay_ns = 300.0;
    DetectionWindows windows_phys;
    double psi_plus_round2_len_ns = 19.2;
    double psi_plus_dtau_max_ns = 12.8;
    IndistinguishabilityModel indist;
    PathPhase phase;
    ProtocolTiming protocol;
    ErrorBudget errors;
    CrCheckParams cr;
    ReadoutFidelity readout;
    BasisSchedule schedule;
    std::uint64_t seed = 12345;

    EmissionModel emission(Node node) const {
        EmissionModel m;
        m.lifetime_ns = lifetime_ns;
        m.pulse_len_ns = pulse_len_ns;
        m.eta = node == Node::a ? eta_a : eta_b;
        m.laser_scatter_fraction = laser_scatter_fraction;
        m.dark_count_rate_hz = dark_count_rate_hz;
        m.afterpulse_prob = afterpulse_prob;
        m.afterpulse_decay_ns = afterpulse_decay_ns;
        return m;
    }

    const DetectionWindows& windows() const { return windows_phys; }

    DetectionWindows psi_plus_windows() const {
        DetectionWindows w = windows_phys;
        w.round2_len_ns = psi_plus_round2_len_ns;
        w.dtau_max_ns = psi_plus_dtau_max_ns;
        return w;
    }

    void validate() const {
        emission(Node::a).validate();
        emission(Node::b).validate();
        windows_phys.validate();
        psi_plus_windows().validate();
        if (psi_plus_round2_len_ns > windows_phys.round2_len_ns)
            throw std::invalid_argument(
                "ExperimentConfig: psi_plus round-2 window exceeds the physical window");
        if (psi_plus_dtau_max_ns > windows_phys.dtau_max_ns)
            throw std::invalid_argument(
                "ExperimentConfig: psi_plus dtau cut exceeds the physical cut");
        indist.validate();
        protocol.validate();
        errors.validate();
        cr.validate();
        readout.validate();
        schedule.validate();
        const double period = protocol.repetition_period_ns;
        if (std::llround(period) != period)
            throw std::invalid_argument(
                "ExperimentConfig: repetition period must be a whole number of ns");
        const double span = windows_phys.window_offset_ns +
                            std::max(windows_phys.round1_len_ns, windows_phys.round2_len_ns);
        if (period < span)
            throw std::invalid_argument(
                "ExperimentConfig: repetition period shorter than the detection span");
    }
};

// Lossless limit: perfect collection and readout, no backgrounds, no time
// filtering. The detection window is widened to hold the entire emission
// distribution so that unit eta is consistent with its in-window meaning.
inline ExperimentConfig ideal_config() {
    ExperimentConfig c;
    c.eta_a = 1.0;
    c.eta_b = 1.0;
    c.windows_phys.window_offset_ns = 0.0;
    c.windows_phys.round1_len_ns = 400.0;
    c.windows_phys.round2_len_ns = 400.0;
    c.windows_phys.dtau_max_ns = 400.0;
    c.psi_plus_round2_len_ns = 400.0;
    c.psi_plus_dtau_max_ns = 400.0;
    c.laser_scatter_fraction = 0.0;
    c.dark_count_rate_hz = 0.0;
    c.afterpulse_prob = 0.0;
    c.indist.kind = IndistinguishabilityModel::Kind::constant;
    c.indist.v0 = 1.0;
    c.indist.detuning_sigma_hz = 0.0;
    c.phase.phi_rad = 0.0;
    c.protocol.ionization_prob = 0.0;
    c.errors = ErrorBudget{0.0, 0.0, 0.0, 0.0};
    c.cr.resonance_jump_sigma = 0.0;
    c.readout = ReadoutFidelity{1.0, 1.0, 1.0, 1.0};
    return c;
}

namespace detail {

inline std::string format_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("format_real: conversion failed");
    return std::string(buf, ptr);
}

struct ConfigKey {
    std::string name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline double parse_real(const std::string& key, const std::string& text) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" +
                                    text + "'");
    }
    if (pos != text.size())
        throw std::invalid_argument("config: trailing characters in value for '" + key + "'");
    return v;
}

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        auto real = [&k](const char* name, std::function<double&(ExperimentConfig&)> ref) {
            k.push_back(
                {name,
                 [ref](const ExperimentConfig& c) {
                     return format_real(ref(const_cast<ExperimentConfig&>(c)));
                 },
                 [ref, name](ExperimentConfig& c, const std::string& v) {
                     ref(c) = parse_real(name, v);
                 }});
        };
        auto integer = [&k](const char* name, std::function<int&(ExperimentConfig&)> ref) {
            k.push_back(
                {name,
                 [ref](const ExperimentConfig& c) {
                     return std::to_string(ref(const_cast<ExperimentConfig&>(c)));
                 },
                 [ref, name](ExperimentConfig& c, const std::string& v) {
                     const double d = parse_real(name, v);
                     const int i = static_cast<int>(d);
                     if (static_cast<double>(i) != d)
                         throw std::invalid_argument("config: key '" + std::string(name) +
                                                     "' expects an integer");
                     ref(c) = i;
                 }});
        };
        auto boolean = [&k](const char* name, std::function<bool&(ExperimentConfig&)> ref) {
            k.push_back(
                {name,
                 [ref](const ExperimentConfig& c) {
                     return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true"
                                                                              : "false");
                 },
                 [ref, name](ExperimentConfig& c, const std::string& v) {
                     if (v == "true")
                         ref(c) = true;
                     else if (v == "false")
                         ref(c) = false;
                     else
                         throw std::invalid_argument("config: key '" + std::string(name) +
                                                     "' expects true or false");
                 }});
        };

        real("emission.lifetime_ns", [](ExperimentConfig& c) -> double& { return c.lifetime_ns; });
        real("emission.pulse_len_ns", [](ExperimentConfig& c) -> double& { return c.pulse_len_ns; });
        real("emission.eta_a", [](ExperimentConfig& c) -> double& { return c.eta_a; });
        real("emission.eta_b", [](ExperimentConfig& c) -> double& { return c.eta_b; });
        real("detector.laser_scatter_fraction",
             [](ExperimentConfig& c) -> double& { return c.laser_scatter_fraction; });
        real("detector.dark_count_rate_hz",
             [](ExperimentConfig& c) -> double& { return c.dark_count_rate_hz; });
        real("detector.afterpulse_prob",
             [](ExperimentConfig& c) -> double& { return c.afterpulse_prob; });
        real("detector.afterpulse_decay_ns",
             [](ExperimentConfig& c) -> double& { return c.afterpulse_decay_ns; });
        real("windows.round1_len_ns",
             [](ExperimentConfig& c) -> double& { return c.windows_phys.round1_len_ns; });
        real("windows.round2_len_ns",
             [](ExperimentConfig& c) -> double& { return c.windows_phys.round2_len_ns; });
        real("windows.offset_ns",
             [](ExperimentConfig& c) -> double& { return c.windows_phys.window_offset_ns; });
        real("windows.dtau_max_ns",
             [](ExperimentConfig& c) -> double& { return c.windows_phys.dtau_max_ns; });
        real("windows.psi_plus_round2_len_ns",
             [](ExperimentConfig& c) -> double& { return c.psi_plus_round2_len_ns; });
        real("windows.psi_plus_dtau_max_ns",
             [](ExperimentConfig& c) -> double& { return c.psi_plus_dtau_max_ns; });
        k.push_back({"indist.kind",
                     [](const ExperimentConfig& c) {
                         return std::string(c.indist.kind ==
                                                    IndistinguishabilityModel::Kind::constant
                                                ? "constant"
                                                : "wavepacket");
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         if (v == "constant")
                             c.indist.kind = IndistinguishabilityModel::Kind::constant;
                         else if (v == "wavepacket")
                             c.indist.kind = IndistinguishabilityModel::Kind::wavepacket;
                         else
                             throw std::invalid_argument(
                                 "config: indist.kind expects constant or wavepacket");
                     }});
        real("indist.v0", [](ExperimentConfig& c) -> double& { return c.indist.v0; });
        real("indist.detuning_sigma_hz",
             [](ExperimentConfig& c) -> double& { return c.indist.detuning_sigma_hz; });
        real("phase.phi_rad", [](ExperimentConfig& c) -> double& { return c.phase.phi_rad; });
        integer("protocol.attempts_per_cr",
                [](ExperimentConfig& c) -> int& { return c.protocol.attempts_per_cr; });
        real("protocol.attempt_rate_hz",
             [](ExperimentConfig& c) -> double& { return c.protocol.attempt_rate_hz; });
        real("protocol.repetition_period_ns",
             [](ExperimentConfig& c) -> double& { return c.protocol.repetition_period_ns; });
        real("protocol.readout_dead_time_us",
             [](ExperimentConfig& c) -> double& { return c.protocol.readout_dead_time_us; });
        real("protocol.ionization_prob",
             [](ExperimentConfig& c) -> double& { return c.protocol.ionization_prob; });
        boolean("protocol.fast_path",
                [](ExperimentConfig& c) -> bool& { return c.protocol.fast_path; });
        real("errors.init_error_prob",
             [](ExperimentConfig& c) -> double& { return c.errors.init_error_prob; });
        real("errors.spin_flip_prob",
             [](ExperimentConfig& c) -> double& { return c.errors.spin_flip_prob; });
        real("errors.dephasing_prob",
             [](ExperimentConfig& c) -> double& { return c.errors.dephasing_prob; });
        real("errors.mw_pi_error_prob",
             [](ExperimentConfig& c) -> double& { return c.errors.mw_pi_error_prob; });
        integer("cr.threshold_a", [](ExperimentConfig& c) -> int& { return c.cr.threshold_a; });
        integer("cr.threshold_b", [](ExperimentConfig& c) -> int& { return c.cr.threshold_b; });
        real("cr.probe_mean_a", [](ExperimentConfig& c) -> double& { return c.cr.probe_mean_a; });
        real("cr.probe_mean_b", [](ExperimentConfig& c) -> double& { return c.cr.probe_mean_b; });
        real("cr.resonance_jump_sigma",
             [](ExperimentConfig& c) -> double& { return c.cr.resonance_jump_sigma; });
        real("cr.probe_duration_us",
             [](ExperimentConfig& c) -> double& { return c.cr.probe_duration_us; });
        real("cr.repump_duration_us",
             [](ExperimentConfig& c) -> double& { return c.cr.repump_duration_us; });
        real("readout.f_up_a", [](ExperimentConfig& c) -> double& { return c.readout.f_up_a; });
        real("readout.f_down_a",
             [](ExperimentConfig& c) -> double& { return c.readout.f_down_a; });
        real("readout.f_up_b", [](ExperimentConfig& c) -> double& { return c.readout.f_up_b; });
        real("readout.f_down_b",
             [](ExperimentConfig& c) -> double& { return c.readout.f_down_b; });
        real("schedule.frac_zz",
             [](ExperimentConfig& c) -> double& { return c.schedule.frac_zz; });
        real("schedule.frac_xx",
             [](ExperimentConfig& c) -> double& { return c.schedule.frac_xx; });
        real("schedule.frac_minus_xx",
             [](ExperimentConfig& c) -> double& { return c.schedule.frac_minus_xx; });
        k.push_back({"seed",
                     [](const ExperimentConfig& c) { return std::to_string(c.seed); },
                     [](ExperimentConfig& c, const std::string& v) {
                         try {
                             std::size_t pos = 0;
                             c.seed = std::stoull(v, &pos);
                             if (pos != v.size()) throw std::invalid_argument("");
                         } catch (const std::exception&) {
                             throw std::invalid_argument(
                                 "config: seed expects an unsigned integer");
                         }
                     }});
        return k;
    }();
    return keys;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

}  // namespace detail

// Flat "key = value" text with '#' comments. Unknown or duplicate keys are
// hard errors; keys not present keep their defaults.
inline ExperimentConfig parse_config(const std::string& text) {
    static const auto& keys = detail::config_keys();
    static const auto index = [] {
        std::unordered_map<std::string, std::size_t> m;
        for (std::size_t i = 0; i < detail::config_keys().size(); ++i)
            m[detail::config_keys()[i].name] = i;
        return m;
    }();

    ExperimentConfig config;
    std::vector<bool> seen(keys.size(), false);
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto stripped = detail::trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                        " is not of the form key = value");
        const std::string key(detail::trim(stripped.substr(0, eq)));
        const std::string value(detail::trim(stripped.substr(eq + 1)));
        const auto it = index.find(key);
        if (it == index.end())
            throw std::invalid_argument("config: unknown key '" + key + "'");
        if (seen[it->second])
            throw std::invalid_argument("config: duplicate key '" + key + "'");
        seen[it->second] = true;
        keys[it->second].set(config, value);
    }
    config.validate();
    return config;
}

// Canonical rendering: every key in registry order. parse(serialize(c))
// reproduces c exactly; the run manifest hashes these bytes.
inline std::string serialize_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& key : detail::config_keys()) {
        out += key.name;
        out += " = ";
        out += key.get(config);
        out += '\n';
    }
    return out;
}

inline std::uint64_t config_hash(const ExperimentConfig& config) {
    const std::string text = serialize_config(config);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace heraldsim
