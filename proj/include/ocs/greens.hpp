#pragma once

#include <string>
#include <vector>

#include "ocs/transfer.hpp"

namespace ocs {

enum class MMethod { dense, transfer };
std::string to_string(MMethod m);

struct MFunctionSample {
    cplx z;
    long N = 0;
    cplx c = 0;
    cplx value = 0;        // <Υ_1, (H_{N,c} - z)^{-1} Υ_1>
    cplx value_tilde = 0;  // same with Φ_1
    MMethod method = MMethod::transfer;
};

// Largest dense dimension the dense routes accept.
inline constexpr long kDenseCap = 4000;

MFunctionSample m_function(const OneChannelOperator& op, long N, cplx c, cplx z,
                           MMethod method = MMethod::transfer);

// Solution with a_{N+1}x_{N+1} = c x~_N, scaled so that a_1 x~_0 = 1; its
// value a_1 x_1 / a_1^2 is m_{N,c}(z).
SolutionPath boundary_solution(const OneChannelOperator& op, long N, cplx c, cplx z);

// P_m^*(H_{N,c} - z)^{-1} P_n for real c from the special solutions.
CMat resolvent_block(const OneChannelOperator& op, long N, double c, cplx z, long m, long n);
CMat resolvent_block_dense(const OneChannelOperator& op, long N, cplx c, cplx z, long m, long n);

enum class Mode { upsilon, phi };

// <X_m, (H_{N,c} - z)^{-1} Y_n> for X, Y in {Υ, Φ}, m != n, from the scalar
// components of the special solutions; falls back to the block for m = n.
cplx resolvent_overlap(const OneChannelOperator& op, long N, double c, cplx z, long m, Mode left,
                       long n, Mode right);

struct WeylCircle {
    cplx z;
    long n = 0;
    cplx center = 0;
    double radius = 0;
    double radius_sum = 0;  // the same radius from Σ ‖Ψ^u_k‖²
    cplx spectral_average = 0;  // Möbius image of c = i
};

// Circles for n = 1..n_max in one pass.
std::vector<WeylCircle> weyl_sequence(const OneChannelOperator& op, cplx z, long n_max);
WeylCircle weyl_radius(const OneChannelOperator& op, cplx z, long n);

struct LimitPointDiagnostic {
    std::vector<WeylCircle> circles;
    std::string verdict;  // limit-point-like, limit-circle-like, inconclusive
};

LimitPointDiagnostic limit_point_diagnostic(const OneChannelOperator& op, cplx z, long n_max);

}  // namespace ocs
