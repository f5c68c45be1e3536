#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace heraldsim {

using complexd = std::complex<double>;
using Matrix4cd = Eigen::Matrix4cd;
using Matrix2cd = Eigen::Matrix2cd;

// Two-qubit computational basis order: uu, ud, du, dd.
// "u" is the m_s = 0 sublevel of the corresponding node (A first, B second).
enum class BellSign { plus, minus };
enum class MeasurementBasis { z, x, minus_x };
enum class Node { a, b };
enum class ErrorChannel { bit_flip, dephasing, depolarizing };

inline const char* to_string(BellSign s) { return s == BellSign::plus ? "plus" : "minus"; }

struct OutcomeProbabilities {
    double p_uu = 0.0;
    double p_ud = 0.0;
    double p_du = 0.0;
    double p_dd = 0.0;

    double sum() const { return p_uu + p_ud + p_du + p_dd; }
    double odd() const { return p_ud + p_du; }
    double even() const { return p_uu + p_dd; }
    std::array<double, 4> as_array() const { return {p_uu, p_ud, p_du, p_dd}; }
};

namespace tol {
inline constexpr double hermiticity = 1e-12;
inline constexpr double trace = 1e-12;
inline constexpr double positivity = -1e-10;
inline constexpr double fidelity_trace = 1e-9;
inline constexpr double unit_axis = 1e-9;
}  // namespace tol

namespace detail {

inline Matrix2cd pauli(int i) {
    Matrix2cd m;
    const complexd I(0.0, 1.0);
    switch (i) {
        case 0: m << 1, 0, 0, 1; break;
        case 1: m << 0, 1, 1, 0; break;
        case 2: m << 0, -I, I, 0; break;
        default: m << 1, 0, 0, -1; break;
    }
    return m;
}

inline Matrix4cd kron(const Matrix2cd& a, const Matrix2cd& b) {
    Matrix4cd out;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
    return out;
}

inline Matrix4cd embed(const Matrix2cd& op, Node node) {
    return node == Node::a ? kron(op, pauli(0)) : kron(pauli(0), op);
}

// Raw channel action on an arbitrary matrix; linear, no state validation.
inline Matrix4cd apply_channel(const Matrix4cd& rho, ErrorChannel channel, double p, Node node) {
    auto conj = [&](const Matrix2cd& k) {
        const Matrix4cd kk = embed(k, node);
        return Matrix4cd(kk * rho * kk.adjoint());
    };
    switch (channel) {
        case ErrorChannel::bit_flip:
            return (1.0 - p) * rho + p * conj(pauli(1));
        case ErrorChannel::dephasing:
            // p = 1 is complete dephasing: node coherences scale by (1 - p).
            return (1.0 - 0.5 * p) * rho + 0.5 * p * conj(pauli(3));
        case ErrorChannel::depolarizing:
            // p is the full-replacement probability: rho -> (1-p) rho + p I/2.
            return (1.0 - 0.75 * p) * rho +
                   0.25 * p * (conj(pauli(1)) + conj(pauli(2)) + conj(pauli(3)));
    }
    throw std::logic_error("apply_channel: unknown channel");
}

inline Matrix2cd rotation(const std::array<double, 3>& axis, double angle) {
    const complexd I(0.0, 1.0);
    const double c = std::cos(0.5 * angle);
    const double s = std::sin(0.5 * angle);
    return c * pauli(0) -
           I * s * (axis[0] * pauli(1) + axis[1] * pauli(2) + axis[2] * pauli(3));
}

inline Matrix2cd basis_rotation(MeasurementBasis basis) {
    switch (basis) {
        case MeasurementBasis::z: return pauli(0);
        case MeasurementBasis::x: return rotation({0.0, 1.0, 0.0}, M_PI / 2.0);
        case MeasurementBasis::minus_x: return rotation({0.0, 1.0, 0.0}, -M_PI / 2.0);
    }
    throw std::logic_error("basis_rotation: unknown basis");
}

}  // namespace detail

// Density matrix of the two-node spin state; valid states are Hermitian,
// unit-trace and positive semidefinite within the tolerances above.
class TwoQubitState {
  public:
    TwoQubitState() : rho_(Matrix4cd::Zero()) { rho_(0, 0) = 1.0; }

    explicit TwoQubitState(const Matrix4cd& rho) : rho_(rho) { validate(); }

    const Matrix4cd& matrix() const { return rho_; }

    void validate() const {
        if ((rho_ - rho_.adjoint()).cwiseAbs().maxCoeff() > tol::hermiticity)
            throw std::invalid_argument("TwoQubitState: matrix is not Hermitian");
        if (std::abs(rho_.trace().real() - 1.0) > tol::trace ||
            std::abs(rho_.trace().imag()) > tol::trace)
            throw std::invalid_argument("TwoQubitState: trace differs from one");
        Eigen::SelfAdjointEigenSolver<Matrix4cd> es(rho_, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < tol::positivity)
            throw std::invalid_argument("TwoQubitState: negative eigenvalue");
    }

  private:
    Matrix4cd rho_;
};

inline Eigen::Vector4cd bell_vector(BellSign sign) {
    Eigen::Vector4cd v = Eigen::Vector4cd::Zero();
    const double s = sign == BellSign::plus ? 1.0 : -1.0;
    v(1) = 1.0 / std::sqrt(2.0);
    v(2) = s / std::sqrt(2.0);
    return v;
}

inline TwoQubitState bell_state(BellSign sign) {
    const Eigen::Vector4cd v = bell_vector(sign);
    return TwoQubitState(v * v.adjoint());
}

inline double fidelity_to_bell(const TwoQubitState& state, BellSign sign) {
    const double tr_err = std::abs(state.matrix().trace().real() - 1.0) +
                          std::abs(state.matrix().trace().imag());
    if (tr_err > tol::fidelity_trace)
        throw std::invalid_argument("fidelity_to_bell: trace deviates beyond tolerance");
    const Eigen::Vector4cd v = bell_vector(sign);
    return (v.adjoint() * state.matrix() * v)(0, 0).real();
}

inline TwoQubitState apply_local_unitary(const TwoQubitState& state, Node node,
                                         const std::array<double, 3>& axis, double angle) {
    const double norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (std::abs(norm - 1.0) > tol::unit_axis)
        throw std::invalid_argument("apply_local_unitary: axis is not unit length");
    const Matrix4cd u = detail::embed(detail::rotation(axis, angle), node);
    return TwoQubitState(u * state.matrix() * u.adjoint());
}

inline TwoQubitState apply_error_channel(const TwoQubitState& state, ErrorChannel channel,
                                         double p, Node node) {
    if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("apply_error_channel: probability outside [0, 1]");
    return TwoQubitState(detail::apply_channel(state.matrix(), channel, p, node));
}

inline OutcomeProbabilities measurement_probabilities(const TwoQubitState& state,
                                                      MeasurementBasis basis_a,
                                                      MeasurementBasis basis_b) {
    const Matrix4cd u =
        detail::kron(detail::basis_rotation(basis_a), detail::basis_rotation(basis_b));
    const Matrix4cd rotated = u * state.matrix() * u.adjoint();
    OutcomeProbabilities p;
    p.p_uu = rotated(0, 0).real();
    p.p_ud = rotated(1, 1).real();
    p.p_du = rotated(2, 2).real();
    p.p_dd = rotated(3, 3).real();
    return p;
}

// Envelope of two-spin correlations under dynamical decoupling:
// A * exp(-(t/T)^3) + 1/2, decaying toward the fully mixed value.
inline double coherence_envelope(double t, double t_coh, double amplitude) {
    if (!(t_coh > 0.0))
        throw std::invalid_argument("coherence_envelope: nonpositive coherence time");
    if (!(t >= 0.0))
        throw std::invalid_argument("coherence_envelope: negative time");
    const double x = t / t_coh;
    return amplitude * std::exp(-x * x * x) + 0.5;
}

}  // namespace heraldsim
