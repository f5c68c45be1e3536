#pragma once

#include <heraldsim/qstate.hpp>
#include <heraldsim/rng.hpp>

namespace heraldsim::testing {

// Ginibre-ensemble density matrix: G G^dag normalized to unit trace.
inline TwoQubitState random_state(RandomStream& rng) {
    Matrix4cd g;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) g(i, j) = complexd(rng.normal(), rng.normal());
    Matrix4cd rho = g * g.adjoint();
    rho /= rho.trace();
    // Hermitize away the last-ulp asymmetry from the matrix product.
    rho = 0.5 * (rho + Matrix4cd(rho.adjoint()));
    return TwoQubitState(rho);
}

inline std::array<double, 3> random_axis(RandomStream& rng) {
    std::array<double, 3> v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace heraldsim::testing
