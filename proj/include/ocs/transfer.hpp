#pragma once

#include <limits>
#include <string>
#include <vector>

#include "ocs/model.hpp"

namespace ocs {

struct GMatrix {
    cplx alpha, beta, gamma, delta;
    cplx z;
    long n = 0;
};

// (Υ*, Φ*)(V - z)^{-1}(Υ, Φ).  Throws ZTooCloseToSpectrum inside the guard.
GMatrix g_matrix(const Shell& s, cplx z, double guard = kGuard);

// True matrix is exp(log_scale) * entries.
struct TransferMatrix {
    Mat2 entries = Mat2::Identity();
    double log_scale = 0;
    cplx z = 0;
    long from = 0, to = 0;  // T_{z,from,to}; a single shell n has from = n-1, to = n

    Mat2 value() const { return std::exp(log_scale) * entries; }
    cplx det() const { return std::exp(2 * log_scale) * entries.determinant(); }
    double log_norm() const;  // log of the spectral norm
    TransferMatrix inverse() const;
    void normalize();
};

// later * earlier, renormalized.
TransferMatrix compose(const TransferMatrix& later, const TransferMatrix& earlier);

// T_{z,n}.  Near a removable pole the value is the holomorphic extension;
// inside the guard of a β-zero or a quotient eigenvalue it throws
// ChannelSingular.
TransferMatrix transfer_matrix(const Shell& s, cplx z, double guard = kGuard);

// T_{z,l,m} = T_{z,m} ... T_{z,l+1}; for l > m the inverse of T_{z,m,l}.
TransferMatrix transfer_product(const OneChannelOperator& op, cplx z, long l, long m);

// (a_{n+1} x_{n+1}, x~_n) at position n, stored as exp(log_scale) * vec.
struct TransferState {
    Vec2 vec = Vec2::Zero();
    double log_scale = 0;
    long n = 0;

    Vec2 value() const { return std::exp(log_scale) * vec; }
};

struct SolutionPath {
    long first = 0;
    std::vector<TransferState> states;

    long last() const { return first + static_cast<long>(states.size()) - 1; }
    const TransferState& at(long n) const { return states.at(static_cast<size_t>(n - first)); }
};

// Evolve a state shell by shell up to (or down to) position `to`.
SolutionPath propagate(const OneChannelOperator& op, cplx z, const TransferState& start, long to);

// Start states of the special solutions u (u_1 = 1, u~_0 = 0) and
// w (w_1 = 0, a_1 w~_0 = 1) at position 0.
TransferState u_start(const OneChannelOperator& op);
TransferState w_start(const OneChannelOperator& op);

enum class SingularKind { beta_zero, gamma_zero, quotient_spectrum };
std::string to_string(SingularKind k);

struct SingularPoint {
    cplx z;
    SingularKind kind;
    bool ill_conditioned = false;
};

struct SearchBox {
    double re_lo = -std::numeric_limits<double>::infinity();
    double re_hi = std::numeric_limits<double>::infinity();
    double im_lo = -std::numeric_limits<double>::infinity();
    double im_hi = std::numeric_limits<double>::infinity();
    bool contains(cplx z) const
    {
        return z.real() >= re_lo && z.real() <= re_hi && z.imag() >= im_lo && z.imag() <= im_hi;
    }
};

struct SingularSet {
    long n = 0;
    std::vector<SingularPoint> points;
    double guard = kGuard;
    bool broken = false;  // β vanishes identically
};

SingularSet singular_set(const Shell& s, const SearchBox& box = {});

// Values of β and γ that stay finite across removable poles.
cplx beta_value(const Shell& s, cplx z);
cplx gamma_value(const Shell& s, cplx z);

// Membership of z in A_n up to tol.
bool in_singular_set(const Shell& s, cplx z, double tol = 1e-8);

// Richardson limit of T_{λ+iε,n}, ε in {h, h/2, h/4}.
TransferMatrix holomorphic_extension(const Shell& s, double lambda, double h = 1e-4);

struct BoundaryVectors {
    Vec2 x_minus, x_plus;
    bool alpha_infinite = false, delta_infinite = false;
    int boundary_case = 1;  // 1..4 as in the local boundary classification
};

BoundaryVectors boundary_vectors(const Shell& s, double lambda, double tol = 1e-8);

// Ψ^x_{z,n} = a_{n+1}x_{n+1}(V-z)^{-1}Φ_n + a_n x~_{n-1}(V-z)^{-1}Υ_n from
// the unscaled states at n-1 and n.
CVec solution_vector(const Shell& s, cplx z, const Vec2& prev, const Vec2& cur);

// Same from scaled states; the result is exp(*log_scale) * returned vector.
CVec solution_vector(const Shell& s, cplx z, const TransferState& prev, const TransferState& cur,
                     double* log_scale);

}  // namespace ocs
