#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ocs/model.hpp"

namespace ocs {

// Scalar shells: V_n = (v_n), Φ_n = Υ_n = 1.
Shell scalar_shell(long n, double v, double a);
OneChannelOperator jacobi(const std::vector<double>& v, const std::vector<double>& a,
                          Geometry g = Geometry::half, long first = 1);
// Zero potential, a_n = -1 (off-diagonal entries +1).
OneChannelOperator free_jacobi(long N);
OneChannelOperator free_jacobi_full(long lo, long hi);

struct RandomShellOptions {
    int s_min = 1, s_max = 5;
    std::optional<double> a;     // fixed coupling, otherwise a in [-2, -0.5]
    bool real = false;           // real symmetric V and real modes
    double v_scale = 1.0;
};

// Pure function of (seed, n).
Shell random_shell(std::uint64_t seed, long n, const RandomShellOptions& o = {});
OneChannelOperator random_operator(std::uint64_t seed, long N, const RandomShellOptions& o = {});

// The given cell repeated: shell n is cell[(n - 1) mod size].
OneChannelOperator periodic(const std::vector<Shell>& cell, long N);

}  // namespace ocs
