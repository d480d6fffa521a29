#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ocs/greens.hpp"

namespace ocs {

struct PointMass {
    double lambda = 0;
    double weight = 0;
    long shell_l = 0, shell_m = 0;  // support [shell_l, shell_m]
    std::string case_tag;
};

struct SpectralEstimate {
    std::vector<double> grid;
    std::vector<double> density;
    std::vector<bool> masked;
    std::vector<double> oscillation;  // windowed variance over mean
    std::vector<PointMass> point_masses;
    long window_lo = 0, window_hi = 0;
    std::string provenance;  // transfer_halfline, transfer_fullline, eigen_histogram
};

// Trapezoid mass of the density on [a, b] (masked points interpolated) plus
// the point masses inside [a, b].
double interval_mass(const SpectralEstimate& e, double a, double b);
// Same from -infinity.
double cdf(const SpectralEstimate& e, double x);

struct HalflineOptions {
    long n_lo = 0, n_hi = 0;  // Cesàro window; n_lo = 0 means n_hi / 2
    bool point_masses = true;
    int threads = 1;
};

// Density of the spectral measure of Υ_1 for the half-line operator,
// π^{-1} a_1^{-2} ‖T_{λ,0,n}(1,0)‖^{-2} averaged over the window.  Point
// masses are weights |Υ_1^*Ψ_1|^2 / ‖Ψ‖^2 of the compactly supported
// eigenfunctions reaching shell 1.
SpectralEstimate halfline_density(const OneChannelOperator& op, const std::vector<double>& grid,
                                  const HalflineOptions& o);

struct FulllineOptions {
    long m_lo = 0, m_hi = 0, n_lo = 0, n_hi = 0;  // windows to the left and right of 0
    int theta_nodes = 64;
    int threads = 1;
};

// Density of a_1^2 μ_{Υ_1} + μ_{Φ_0} through the θ-average of the product of
// inverse squared norms; the windows are averaged independently.
SpectralEstimate fullline_density(const OneChannelOperator& op, const std::vector<double>& grid,
                                  const FulllineOptions& o);

// Masses Σ_k |<w_k, ψ_j>|^2 at the eigenvalues of the dense matrix.
SpectralEstimate eigen_histogram(const DenseTruncation& t, const std::vector<CVec>& weights);
SpectralEstimate eigen_histogram(const OneChannelOperator& op, long N, double c,
                                 const CVec& weight);
// Weight vector P_n x embedded into the truncation.
CVec shell_vector(const DenseTruncation& t, long n, const CVec& x);

struct AcCriterion {
    std::vector<long> n_list;
    std::vector<double> integrals;      // ∫ ‖T_{λ,0,n}‖^p dλ, may be inf
    std::vector<double> log_integrals;  // logs of the same
    double liminf_proxy = 0;
    std::string verdict;  // bounded-like, growing
    long masked = 0;
};

// Midpoint quadrature with `nodes` points; singular energies are skipped.
AcCriterion ac_criterion(const OneChannelOperator& op, double p, double a, double b,
                         const std::vector<long>& n_list, int nodes = 400, double factor = 2.0);

// Same for any sequence of single-shell transfer matrices.
using ShellTransfer = std::function<TransferMatrix(long n, double lambda)>;
AcCriterion ac_criterion(const ShellTransfer& shell_transfer, double p, double a, double b,
                         const std::vector<long>& n_list, int nodes = 400, double factor = 2.0);

struct FiniteEigenfunction {
    double lambda = 0;
    long l = 0, m = 0;  // support [l, m + 1]
    BlockVector psi;
    int case_left = 0, case_right = 0;  // local boundary cases, 0 for the wall
    double cross = 0;
    double residual = 0;  // ‖HΨ - λΨ‖ / ‖Ψ‖ on the window [l - 1, m + 2]
    bool dirichlet = false;  // anchored at the left wall (support from shell 1)
};

// Eigenfunction supported on shells l..m+1 (λ exceptional at both ends).
FiniteEigenfunction finite_eigenfunction(const OneChannelOperator& op, double lambda, long l,
                                         long m);
// Eigenfunction of the half-line operator supported on shells 1..m+1.
FiniteEigenfunction wall_eigenfunction(const OneChannelOperator& op, double lambda, long m);

// Real exceptional energies of shells lo..hi inside [e_lo, e_hi].
std::vector<double> singular_energies(const OneChannelOperator& op, long lo, long hi,
                                      double e_lo, double e_hi);

// All eigenfunctions between consecutive exceptional shells for the given
// candidate energies (or the singular energies of lo..hi).
std::vector<FiniteEigenfunction> finite_eigenfunctions(
    const OneChannelOperator& op, long lo, long hi,
    std::optional<std::vector<double>> candidates = std::nullopt);

}  // namespace ocs
