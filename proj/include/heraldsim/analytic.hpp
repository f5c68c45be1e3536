#pragma once

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "config.hpp"
#include "discrete.hpp"

namespace heraldsim {

// Joint spin branch sampled at preparation, in pre-flip labels.
enum class SpinBranch { uu, ud, du, dd };

inline const char* to_string(SpinBranch b) {
    switch (b) {
        case SpinBranch::uu: return "uu";
        case SpinBranch::ud: return "ud";
        case SpinBranch::du: return "du";
        case SpinBranch::dd: return "dd";
    }
    return "?";
}

// Basis index (uu, ud, du, dd) of the branch after the inter-round pi flips.
inline int readout_index(SpinBranch b) {
    switch (b) {
        case SpinBranch::uu: return 3;
        case SpinBranch::ud: return 2;
        case SpinBranch::du: return 1;
        case SpinBranch::dd: return 0;
    }
    return 0;
}

inline BranchContext branch_point_context(SpinBranch b) {
    switch (b) {
        case SpinBranch::uu: return BranchContext::point_uu();
        case SpinBranch::ud: return BranchContext::point_ud();
        case SpinBranch::du: return BranchContext::point_du();
        case SpinBranch::dd: return BranchContext::point_dd();
    }
    return BranchContext::point_uu();
}

inline Matrix4cd apply_error_budget(Matrix4cd rho, const ErrorBudget& errors) {
    for (Node n : {Node::a, Node::b})
        rho = detail::apply_channel(rho, ErrorChannel::bit_flip, errors.spin_flip_prob, n);
    for (Node n : {Node::a, Node::b})
        rho = detail::apply_channel(rho, ErrorChannel::dephasing, errors.dephasing_prob, n);
    for (Node n : {Node::a, Node::b})
        rho = detail::apply_channel(rho, ErrorChannel::depolarizing, errors.mw_pi_error_prob, n);
    return rho;
}

// One resolved herald outcome: branch, click provenances, sign and the two
// click cells, with its exact per-attempt probability.
struct HeraldDrawEntry {
    double prob = 0.0;
    SpinBranch branch = SpinBranch::ud;
    ClickProvenance prov1 = ClickProvenance::nv_a;
    ClickProvenance prov2 = ClickProvenance::nv_b;
    BellSign sign = BellSign::minus;
    std::int32_t k1 = 0;
    std::int32_t k2 = 0;
};

struct AnalyticHeraldModel {
    double p_herald = 0.0;
    double p_plus = 0.0;
    double p_minus = 0.0;
    double p_genuine = 0.0;
    double mean_overlap = 0.0;
    Matrix4cd rho_plus = Matrix4cd::Zero();
    Matrix4cd rho_minus = Matrix4cd::Zero();
    double fidelity_plus = 0.0;
    double fidelity_minus = 0.0;
    std::map<std::string, double> class_mass;
    std::vector<HeraldDrawEntry> draw_table;
    std::vector<double> draw_cdf;
};

namespace detail {

struct ClickSourceSpec {
    ClickProvenance prov;
    double p_in = 0.0;
    int multiplicity = 1;
    std::vector<double> dist;  // per-cell in-window mass, indexed from range.first
};

inline const char* provenance_class(ClickProvenance p) {
    switch (p) {
        case ClickProvenance::nv_a:
        case ClickProvenance::nv_b: return "photon";
        case ClickProvenance::laser_scatter: return "scatter";
        case ClickProvenance::dark_count: return "dark";
        case ClickProvenance::afterpulse: return "afterpulse";
    }
    return "?";
}

}  // namespace detail

// Exact per-attempt enumeration of every herald class: for each spin branch
// and each pair of round-1/round-2 click sources, the joint probability over
// quantized click cells of exactly one in-window click per round passing the
// click-time cut. Afterpulse parents beyond the accepted round-1 click and
// chained afterpulses are below the enumeration's resolution and omitted.
inline AnalyticHeraldModel build_analytic_model(const ExperimentConfig& config) {
    config.validate();
    const EmissionModel em_a = config.emission(Node::a);
    const EmissionModel em_b = config.emission(Node::b);
    const DetectionWindows& w = config.windows();
    const CellRange r1 = round_cell_range(w, 1);
    const CellRange r2 = round_cell_range(w, 2);
    const auto dtau_cut = static_cast<std::int64_t>(std::floor(w.dtau_max_ns + 1e-9));

    const double q1 = emission_window_mass(em_a, w.window_offset_ns, w.round1_len_ns);
    const double raw_a = detection_prob_raw(em_a, w);
    const double raw_b = detection_prob_raw(em_b, w);
    const double sigma_a = em_a.laser_scatter_fraction * raw_a;
    const double sigma_b = em_b.laser_scatter_fraction * raw_b;
    const double g = dark_cell_prob(em_a);
    const auto period = static_cast<std::int64_t>(std::llround(config.protocol.repetition_period_ns));

    auto photon_source = [&](const EmissionModel& em, ClickProvenance prov,
                             const CellRange& r) {
        detail::ClickSourceSpec s;
        s.prov = prov;
        s.multiplicity = 1;
        s.dist.resize(r.count());
        for (std::int64_t k = r.first; k <= r.last; ++k) {
            s.dist[k - r.first] = em.eta * emission_cell_mass(em, k) / q1;
            s.p_in += s.dist[k - r.first];
        }
        return s;
    };
    auto scatter_source = [&](const EmissionModel& em, double sigma, const CellRange& r) {
        detail::ClickSourceSpec s;
        s.prov = ClickProvenance::laser_scatter;
        s.multiplicity = 1;
        s.dist.resize(r.count());
        for (std::int64_t k = r.first; k <= r.last; ++k) {
            s.dist[k - r.first] = sigma * scatter_cell_mass(em, k);
            s.p_in += s.dist[k - r.first];
        }
        return s;
    };
    auto dark_source = [&](const CellRange& r) {
        detail::ClickSourceSpec s;
        s.prov = ClickProvenance::dark_count;
        s.multiplicity = 2;
        s.dist.assign(r.count(), g);
        s.p_in = g * static_cast<double>(r.count());
        return s;
    };

    auto round_sources = [&](const CellRange& r, bool bright_a, bool bright_b) {
        std::vector<detail::ClickSourceSpec> out;
        if (bright_a) out.push_back(photon_source(em_a, ClickProvenance::nv_a, r));
        if (bright_b) out.push_back(photon_source(em_b, ClickProvenance::nv_b, r));
        out.push_back(dark_source(r));
        out.push_back(scatter_source(em_a, sigma_a, r));
        out.push_back(scatter_source(em_b, sigma_b, r));
        return out;
    };
    auto veto_product = [](const std::vector<detail::ClickSourceSpec>& sources) {
        double v = 1.0;
        for (const auto& s : sources)
            for (int m = 0; m < s.multiplicity; ++m) v *= 1.0 - s.p_in;
        return v;
    };

    // Afterpulse arrival masses in the round-2 window per round-1 parent cell.
    std::vector<std::vector<double>> ap_mass(r1.count(),
                                             std::vector<double>(r2.count(), 0.0));
    std::vector<double> ap_in(r1.count(), 0.0);
    for (std::int64_t k1 = r1.first; k1 <= r1.last; ++k1) {
        for (std::int64_t k2 = r2.first; k2 <= r2.last; ++k2) {
            const double m = em_a.afterpulse_prob *
                             exp_cell_mass(em_a.afterpulse_decay_ns, period + k2 - k1);
            ap_mass[k1 - r1.first][k2 - r2.first] = m;
            ap_in[k1 - r1.first] += m;
        }
    }

    AnalyticHeraldModel model;
    Eigen::Vector4d diag_plus = Eigen::Vector4d::Zero();
    Eigen::Vector4d diag_minus = Eigen::Vector4d::Zero();
    double cross_plus = 0.0;
    double cross_minus = 0.0;
    double overlap_num = 0.0;
    const double coh_scale = config.errors.coherence_scale();

    const bool bright1[4][2] = {{true, true}, {true, false}, {false, true}, {false, false}};
    for (int bi = 0; bi < 4; ++bi) {
        const auto branch = static_cast<SpinBranch>(bi);
        const bool a1 = bright1[bi][0];
        const bool b1 = bright1[bi][1];
        const auto sources1 = round_sources(r1, a1, b1);
        const auto sources2 = round_sources(r2, !a1, !b1);
        const double veto1 = veto_product(sources1);
        const double veto2_base = veto_product(sources2);

        auto add_entry = [&](double prob, ClickProvenance prov1, ClickProvenance prov2,
                             BellSign sign, std::int64_t k1, std::int64_t k2) {
            if (!(prob > 0.0)) return;
            HeraldDrawEntry e;
            e.prob = prob;
            e.branch = branch;
            e.prov1 = prov1;
            e.prov2 = prov2;
            e.sign = sign;
            e.k1 = static_cast<std::int32_t>(k1);
            e.k2 = static_cast<std::int32_t>(k2);
            model.draw_table.push_back(e);
            model.class_mass[std::string(to_string(branch)) + ":" +
                             detail::provenance_class(prov1) + "+" +
                             detail::provenance_class(prov2)] += prob;

            const bool genuine = is_nv(prov1) && is_nv(prov2);
            auto& diag = sign == BellSign::plus ? diag_plus : diag_minus;
            auto& cross = sign == BellSign::plus ? cross_plus : cross_minus;
            if (genuine) {
                diag[1] += 0.5 * prob;
                diag[2] += 0.5 * prob;
                const double v =
                    mode_overlap(config.indist, static_cast<double>(k2 - k1)) * coh_scale;
                cross += (sign == BellSign::plus ? 1.0 : -1.0) * 0.5 * prob * v;
                model.p_genuine += prob;
                overlap_num += prob * mode_overlap(config.indist, static_cast<double>(k2 - k1));
            } else {
                diag[readout_index(branch)] += prob;
            }
        };

        for (const auto& src1 : sources1) {
            if (!(src1.p_in > 0.0)) continue;
            for (std::int64_t k1 = r1.first; k1 <= r1.last; ++k1) {
                const double d1 = src1.dist[k1 - r1.first];
                if (!(d1 > 0.0)) continue;
                const double m1 =
                    0.25 * src1.multiplicity * d1 * veto1 / (1.0 - src1.p_in);
                const double ap_veto = 1.0 - ap_in[k1 - r1.first];

                for (const auto& src2 : sources2) {
                    if (!(src2.p_in > 0.0)) continue;
                    for (std::int64_t k2 = r2.first; k2 <= r2.last; ++k2) {
                        if (std::llabs(k2 - k1) > dtau_cut) continue;
                        const double d2 = src2.dist[k2 - r2.first];
                        if (!(d2 > 0.0)) continue;
                        const double m2 = src2.multiplicity * d2 * veto2_base * ap_veto /
                                          (1.0 - src2.p_in);
                        const double pair = m1 * m2;
                        add_entry(0.5 * pair, src1.prov, src2.prov, BellSign::plus, k1, k2);
                        add_entry(0.5 * pair, src1.prov, src2.prov, BellSign::minus, k1, k2);
                    }
                }

                // The accepted round-1 click's own afterpulse fires on the
                // same detector, so it always heralds the plus sign.
                for (std::int64_t k2 = r2.first; k2 <= r2.last; ++k2) {
                    if (std::llabs(k2 - k1) > dtau_cut) continue;
                    const double m2 = ap_mass[k1 - r1.first][k2 - r2.first] * veto2_base;
                    add_entry(m1 * m2, src1.prov, ClickProvenance::afterpulse,
                              BellSign::plus, k1, k2);
                }
            }
        }
    }

    for (const auto& e : model.draw_table) {
        model.p_herald += e.prob;
        (e.sign == BellSign::plus ? model.p_plus : model.p_minus) += e.prob;
    }
    model.mean_overlap = model.p_genuine > 0.0 ? overlap_num / model.p_genuine : 0.0;

    model.draw_cdf.reserve(model.draw_table.size());
    double acc = 0.0;
    for (const auto& e : model.draw_table) {
        acc += e.prob;
        model.draw_cdf.push_back(acc / model.p_herald);
    }
    if (!model.draw_cdf.empty()) model.draw_cdf.back() = 1.0;

    auto finalize = [&](const Eigen::Vector4d& diag, double cross, double p, BellSign sign,
                        Matrix4cd& rho_out, double& fidelity_out) {
        if (!(p > 0.0)) {
            rho_out = Matrix4cd::Zero();
            fidelity_out = 0.0;
            return;
        }
        Matrix4cd rho = Matrix4cd::Zero();
        for (int i = 0; i < 4; ++i) rho(i, i) = diag[i] / p;
        rho(1, 2) = cross / p;
        rho(2, 1) = cross / p;
        rho = apply_error_budget(rho, config.errors);
        const TwoQubitState state(rho);
        rho_out = state.matrix();
        fidelity_out = fidelity_to_bell(state, sign);
    };
    finalize(diag_plus, cross_plus, model.p_plus, BellSign::plus, model.rho_plus,
             model.fidelity_plus);
    finalize(diag_minus, cross_minus, model.p_minus, BellSign::minus, model.rho_minus,
             model.fidelity_minus);
    return model;
}

}  // namespace heraldsim
