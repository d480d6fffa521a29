#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ocs/types.hpp"

namespace ocs {

// One eigenvalue cluster of V with the quadratic forms of the channel
// vectors on its eigenspace P: A = Υ*PΥ, B = Υ*PΦ, D = Φ*PΦ.
struct EigenGroup {
    double mu = 0;
    double A = 0;
    cplx B = 0;
    double D = 0;
    int multiplicity = 0;
    bool in_w = false;      // eigenspace meets the cyclic space of Υ
    bool in_wt = false;     // ... of Φ
    bool colinear = false;  // PΥ and PΦ are parallel and both nonzero

    // Simple eigenvalue of V restricted to W+W~ whose eigenvector lies in
    // both cyclic spaces; the transfer matrix extends across it.
    bool removable() const { return in_w && in_wt && colinear; }
    bool relevant() const { return in_w || in_wt; }
};

class Shell {
public:
    Shell(long n, CMat V, double a, CVec phi, CVec upsilon);

    long index() const { return d_->n; }
    int size() const { return static_cast<int>(d_->V.rows()); }
    const CMat& V() const { return d_->V; }
    double a() const { return d_->a; }
    const CVec& phi() const { return d_->phi; }
    const CVec& upsilon() const { return d_->upsilon; }

    const RVec& eigenvalues() const { return d_->evals; }
    const CMat& eigenvectors() const { return d_->evecs; }
    // Coordinates of Υ and Φ in the eigenbasis.
    const CVec& upsilon_coef() const { return d_->ups_coef; }
    const CVec& phi_coef() const { return d_->phi_coef; }
    const std::vector<EigenGroup>& groups() const { return d_->groups; }
    double spectral_radius() const { return d_->vnorm; }

    // (V - z)^{-1} v through the eigendecomposition.
    CVec resolve(cplx z, const CVec& v) const;

    Shell with_index(long n) const;

private:
    struct Data {
        long n;
        CMat V;
        double a;
        CVec phi, upsilon;
        RVec evals;
        CMat evecs;
        CVec ups_coef, phi_coef;
        std::vector<EigenGroup> groups;
        double vnorm;
    };
    explicit Shell(std::shared_ptr<const Data> d) : d_(std::move(d)) {}
    std::shared_ptr<const Data> d_;
};

enum class Geometry { half, full };

using ShellGenerator = std::function<Shell(long n)>;

class OneChannelOperator {
public:
    OneChannelOperator() = default;
    // shells[k] must carry index first + k.  Half-line requires first = 1.
    OneChannelOperator(std::vector<Shell> shells, Geometry g = Geometry::half, long first = 1);

    static OneChannelOperator generate(const ShellGenerator& gen, long first, long last,
                                       Geometry g = Geometry::half);

    Geometry geometry() const { return geometry_; }
    long first() const { return first_; }
    long last() const { return first_ + static_cast<long>(shells_.size()) - 1; }
    long count() const { return static_cast<long>(shells_.size()); }
    bool has(long n) const { return n >= first() && n <= last(); }
    const Shell& shell(long n) const;

private:
    std::vector<Shell> shells_;
    Geometry geometry_ = Geometry::half;
    long first_ = 1;
};

struct DenseTruncation {
    long first = 1, last = 0;
    cplx c = 0;
    CMat H;
    std::vector<Eigen::Index> offsets;  // offsets[k] for shell first + k
    bool hermitian = true;

    Eigen::Index offset(long n) const { return offsets.at(static_cast<size_t>(n - first)); }
    Eigen::Index dim() const { return H.rows(); }
};

// Shells 1..N with -c Φ_N Φ_N^* on the last block and, if given,
// -b a_1^2 Υ_1 Υ_1^* on the first.
DenseTruncation assemble_dense(const OneChannelOperator& op, long N, cplx c = 0,
                               std::optional<double> b = std::nullopt);
// Shells lo..hi with Dirichlet ends (for full-line windows).
DenseTruncation assemble_window(const OneChannelOperator& op, long lo, long hi, cplx c = 0);

struct BlockVector {
    long first = 1;
    std::vector<CVec> blocks;

    long last() const { return first + static_cast<long>(blocks.size()) - 1; }
    const CVec& at(long n) const { return blocks.at(static_cast<size_t>(n - first)); }
    CVec& at(long n) { return blocks.at(static_cast<size_t>(n - first)); }
    double norm() const;
    CVec flatten() const;
};

BlockVector zero_blocks(const OneChannelOperator& op, long lo, long hi);
BlockVector unflatten(const OneChannelOperator& op, long lo, const CVec& v);

// Blockwise action of the operator on a vector supported on the given
// shells; anything outside the block range is taken to be zero.
BlockVector apply_operator(const OneChannelOperator& op, const BlockVector& psi);

struct SelfAdjointness {
    double sum_plus = 0, sum_minus = 0;
    double slope_plus = 0, slope_minus = 0;
    bool met_plus = false, met_minus = false;
    bool met = false;
    std::string verdict;
};

// Partial sums of 1/|a_n|.  The verdict is advisory.
SelfAdjointness check_self_adjointness(const OneChannelOperator& op, long n_max,
                                       double threshold = 1.0, double min_slope = 0.5);

// Orthonormal basis of span{v, Vv, V^2 v, ...}.
CMat cyclic_subspace(const CMat& V, const CVec& v, double tol = kRankTol);

struct CyclicSubspaces {
    CMat W, Wt, Vspan;
    double tol = kRankTol;
};
CyclicSubspaces cyclic_subspaces(const Shell& s, double tol = kRankTol);

// True when Φ is orthogonal to the cyclic space of Υ, i.e. β vanishes
// identically and the operator splits at this shell.
bool channel_broken(const Shell& s, double tol = kRankTol);

struct RankOneFactor {
    double a = -1;
    CVec upsilon, phi;
    double ratio = 0;  // second / first singular value
};

// D = -a Υ Φ^*, with a < 0 and the largest entry of Φ real positive.
RankOneFactor factor_rank_one(const CMat& D, double tol = kRankTol);

}  // namespace ocs
