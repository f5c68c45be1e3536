#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "heraldsim/config.hpp"
#include "heraldsim/protocol.hpp"

namespace heraldsim {

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline const char* sign_name(BellSign sign) {
    return sign == BellSign::plus ? "plus" : "minus";
}

inline BellSign parse_sign(const std::string& name) {
    if (name == "plus") return BellSign::plus;
    if (name == "minus") return BellSign::minus;
    throw std::runtime_error("event log: unknown sign '" + name + "'");
}

inline BasisSetting parse_basis_setting(const std::string& name) {
    if (name == "ZZ") return BasisSetting::zz;
    if (name == "XX") return BasisSetting::xx;
    if (name == "-XX") return BasisSetting::minus_xx;
    throw std::runtime_error("event log: unknown basis setting '" + name + "'");
}

inline const char* provenance_name(ClickProvenance p) {
    switch (p) {
        case ClickProvenance::nv_a: return "nv_a";
        case ClickProvenance::nv_b: return "nv_b";
        case ClickProvenance::laser_scatter: return "laser_scatter";
        case ClickProvenance::dark_count: return "dark_count";
        case ClickProvenance::afterpulse: return "afterpulse";
    }
    throw std::invalid_argument("provenance_name: unknown provenance");
}

inline ClickProvenance parse_provenance(const std::string& name) {
    if (name == "nv_a") return ClickProvenance::nv_a;
    if (name == "nv_b") return ClickProvenance::nv_b;
    if (name == "laser_scatter") return ClickProvenance::laser_scatter;
    if (name == "dark_count") return ClickProvenance::dark_count;
    if (name == "afterpulse") return ClickProvenance::afterpulse;
    throw std::runtime_error("event log: unknown click source '" + name + "'");
}

inline const char* branch_name(SpinBranch b) {
    switch (b) {
        case SpinBranch::uu: return "uu";
        case SpinBranch::ud: return "ud";
        case SpinBranch::du: return "du";
        case SpinBranch::dd: return "dd";
    }
    throw std::invalid_argument("branch_name: unknown branch");
}

inline SpinBranch parse_branch(const std::string& name) {
    if (name == "uu") return SpinBranch::uu;
    if (name == "ud") return SpinBranch::ud;
    if (name == "du") return SpinBranch::du;
    if (name == "dd") return SpinBranch::dd;
    throw std::runtime_error("event log: unknown spin branch '" + name + "'");
}

// In-memory form of a run log: the configuration that produced it, the
// retained clicks (interference runs), the herald records and the final
// counters. Oracle fields (click sources, branches, true fidelities) are
// present only when the log was written with them.
struct EventLog {
    std::string config_text;
    std::uint64_t config_hash = 0;
    bool oracle = false;
    std::vector<ClickEvent> clicks;
    std::vector<HeraldRecord> heralds;
    RunCounters counters;
    bool has_summary = false;

    ExperimentConfig config() const { return parse_config(config_text); }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// One JSON object per line: a header, then clicks and heralds in run order,
// then a summary. Keys are emitted sorted, so identical data produces
// identical bytes.
inline void write_event_log(std::ostream& out, const ExperimentConfig& config,
                            const RunResult& result, bool oracle) {
    using nlohmann::json;
    const std::string config_text = serialize_config(config);
    json header = {
        {"type", "header"},
        {"format", "heraldsim-log"},
        {"version", 1},
        {"config_hash", hash_hex(detail::fnv1a(config_text))},
        {"config_text", config_text},
        {"oracle", oracle},
    };
    out << header.dump() << '\n';
    for (const ClickEvent& c : result.clicks) {
        json j = {
            {"type", "click"},
            {"attempt", c.attempt},
            {"round", c.round},
            {"detector", c.detector},
            {"time_ns", c.time_ns},
        };
        if (oracle) j["src"] = provenance_name(c.provenance);
        out << j.dump() << '\n';
    }
    for (const HeraldRecord& rec : result.heralds) {
        json j = {
            {"type", "herald"},
            {"index", rec.index},
            {"attempt", rec.attempt},
            {"time_s", rec.time_s},
            {"sign", sign_name(rec.sign)},
            {"t1_ns", rec.t1_ns},
            {"t2_ns", rec.t2_ns},
            {"detector1", rec.detector1},
            {"detector2", rec.detector2},
            {"basis", to_string(rec.basis)},
            {"up_a", rec.up_a},
            {"up_b", rec.up_b},
        };
        if (oracle) {
            j["src1"] = provenance_name(rec.prov1);
            j["src2"] = provenance_name(rec.prov2);
            j["branch"] = branch_name(rec.branch);
            j["true_fidelity"] = rec.true_state_fidelity;
        }
        out << j.dump() << '\n';
    }
    const RunCounters& c = result.counters;
    json summary = {
        {"type", "summary"},
        {"attempts", c.attempts},
        {"heralds", c.heralds},
        {"cr_cycles", c.cr_cycles},
        {"cr_probes", c.cr_probes},
        {"cr_repumps", c.cr_repumps},
        {"false_starts", c.false_starts},
        {"ionization_events", c.ionization_events},
        {"wall_time_s", c.wall_time_s},
    };
    out << summary.dump() << '\n';
    if (!out) throw std::runtime_error("event log: write failed");
}

inline void write_event_log_file(const std::string& path, const ExperimentConfig& config,
                                 const RunResult& result, bool oracle) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("event log: cannot open '" + path + "' for writing");
    write_event_log(out, config, result, oracle);
    out.flush();
    if (!out) throw std::runtime_error("event log: write to '" + path + "' failed");
}

inline EventLog read_event_log(std::istream& in) {
    using nlohmann::json;
    EventLog log;
    std::string line;
    int line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                if (saw_header)
                    throw std::runtime_error("event log: repeated header");
                saw_header = true;
                if (j.at("format").get<std::string>() != "heraldsim-log")
                    throw std::runtime_error("event log: unrecognized format tag");
                if (j.at("version").get<int>() != 1)
                    throw std::runtime_error("event log: unsupported format version");
                log.config_text = j.at("config_text").get<std::string>();
                log.oracle = j.at("oracle").get<bool>();
                const std::string hash = j.at("config_hash").get<std::string>();
                log.config_hash = detail::fnv1a(log.config_text);
                if (hash != hash_hex(log.config_hash))
                    throw std::runtime_error(
                        "event log: config hash does not match config text");
                continue;
            }
            if (!saw_header)
                throw std::runtime_error("event log: first record is not a header");
            if (type == "click") {
                ClickEvent c;
                c.attempt = j.at("attempt").get<std::int64_t>();
                c.round = j.at("round").get<int>();
                c.detector = j.at("detector").get<int>();
                c.time_ns = j.at("time_ns").get<std::int64_t>();
                if (j.contains("src"))
                    c.provenance = parse_provenance(j.at("src").get<std::string>());
                log.clicks.push_back(c);
            } else if (type == "herald") {
                HeraldRecord rec;
                rec.index = j.at("index").get<std::int64_t>();
                rec.attempt = j.at("attempt").get<std::int64_t>();
                rec.time_s = j.at("time_s").get<double>();
                rec.sign = parse_sign(j.at("sign").get<std::string>());
                rec.t1_ns = j.at("t1_ns").get<std::int64_t>();
                rec.t2_ns = j.at("t2_ns").get<std::int64_t>();
                rec.detector1 = j.at("detector1").get<int>();
                rec.detector2 = j.at("detector2").get<int>();
                rec.basis = parse_basis_setting(j.at("basis").get<std::string>());
                rec.up_a = j.at("up_a").get<bool>();
                rec.up_b = j.at("up_b").get<bool>();
                if (j.contains("src1")) {
                    rec.prov1 = parse_provenance(j.at("src1").get<std::string>());
                    rec.prov2 = parse_provenance(j.at("src2").get<std::string>());
                    rec.branch = parse_branch(j.at("branch").get<std::string>());
                    rec.true_state_fidelity = j.at("true_fidelity").get<double>();
                }
                log.heralds.push_back(rec);
            } else if (type == "summary") {
                if (log.has_summary)
                    throw std::runtime_error("event log: repeated summary");
                log.has_summary = true;
                log.counters.attempts = j.at("attempts").get<std::int64_t>();
                log.counters.heralds = j.at("heralds").get<std::int64_t>();
                log.counters.cr_cycles = j.at("cr_cycles").get<std::int64_t>();
                log.counters.cr_probes = j.at("cr_probes").get<std::int64_t>();
                log.counters.cr_repumps = j.at("cr_repumps").get<std::int64_t>();
                log.counters.false_starts = j.at("false_starts").get<std::int64_t>();
                log.counters.ionization_events =
                    j.at("ionization_events").get<std::int64_t>();
                log.counters.wall_time_s = j.at("wall_time_s").get<double>();
            } else {
                throw std::runtime_error("event log: unknown record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw std::runtime_error("event log: line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
    }
    if (!saw_header) throw std::runtime_error("event log: missing header");
    if (!log.has_summary) throw std::runtime_error("event log: missing summary");
    return log;
}

inline EventLog read_event_log_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("event log: cannot open '" + path + "'");
    return read_event_log(in);
}

// Round-trip helper for the writers: a log re-serialized with its recorded
// oracle setting reproduces the original bytes.
inline void write_event_log(std::ostream& out, const EventLog& log) {
    RunResult result;
    result.counters = log.counters;
    result.heralds = log.heralds;
    result.clicks = log.clicks;
    write_event_log(out, parse_config(log.config_text), result, log.oracle);
}

}  // namespace heraldsim
