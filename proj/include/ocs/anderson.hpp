#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ocs/model.hpp"
#include "ocs/rng.hpp"
#include "ocs/transfer.hpp"

namespace ocs {

struct DisorderSpec {
    enum class Kind { discrete, uniform, quadrature };
    Kind kind = Kind::discrete;
    std::vector<double> points, weights;  // atoms, or quadrature nodes
    double lo = 0, hi = 0;                // support hull

    static DisorderSpec delta(double x);
    static DisorderSpec two_point(double x, double y, double p = 0.5);
    static DisorderSpec discrete(std::vector<double> points, std::vector<double> weights);
    static DisorderSpec uniform(double lo, double hi);
    static DisorderSpec quadrature(std::vector<double> nodes, std::vector<double> weights);

    void validate() const;
    bool has_atoms() const { return kind != Kind::uniform; }
    bool is_point_mass() const { return has_atoms() && hi == lo; }
    double draw(CounterRng& rng) const;
    double expect(const std::function<double(double)>& f) const;
    double expect2(const std::function<double(double, double)>& f) const;
};

// (∫ (x - λ)^{-1} dν)^{-1}; SupportViolation for λ in the hull.
double harmonic_mean(const DisorderSpec& nu, double lambda);

// Growth law n -> size, e.g. r_n or s_n.
using SizeLaw = std::function<long(long)>;

struct StretchedAntitreeSpec {
    SizeLaw s;
    DisorderSpec disorder;
};

struct PartialAntitreeSpec {
    int k1 = 1, k2 = 0, k3 = 1;
    RMat O;       // orthogonal k x k
    RVec a_diag;  // diagonal of 𝐚
    SizeLaw r;    // r_m for the m-th sphere, m = 3n-2, 3n-1, 3n in shell n
    DisorderSpec disorder;

    int k() const { return k1 + k2 + k3; }
    RMat coupling() const { return O * a_diag.asDiagonal() * O.transpose(); }
    RVec upsilon() const;
    RVec phi() const;
    long class_size(long n, int cls) const;  // vertices per pattern class of shell n
    long shell_size(long n) const;
    void validate(long n_max = 0) const;
};

// Pattern with k = (2,2,2) and coupling [[0,I,0],[I,0,I],[0,I,0]].
PartialAntitreeSpec hat_pattern(DisorderSpec nu, SizeLaw r);
// O and 𝐚 from the eigendecomposition of a symmetric coupling.
PartialAntitreeSpec partial_from_coupling(int k1, int k2, int k3, const RMat& coupling,
                                          DisorderSpec nu, SizeLaw r);

struct LimitTransfer {
    double lambda = 0;
    Eigen::Matrix2d T = Eigen::Matrix2d::Identity();
    double trace = 0;
    bool elliptic = false;
    std::string source;  // stretched, partial
    double alpha = 0, beta = 0, delta = 0;  // shell data (γ = β)
};

// Single-shell transfer matrix from real shell data with a = -1, γ = β.
Eigen::Matrix2d shell_transfer(double alpha, double beta, double delta);

enum class Domain { outside, inner, outer };  // I_±: |λ - x| < 1 or > 1 on the hull
Domain stretched_domain(const DisorderSpec& nu, double lambda);

LimitTransfer limit_transfer_stretched(const DisorderSpec& nu, double lambda);

struct I0Options {
    int interior = 100;
    double margin = 1e-6;
    std::uint64_t seed = 0x10;
};
// Smallest of σ_min(D - λ + M) and |Υ^*(D - λ + M)^{-1}Φ| over the test
// diagonals; the minimizing diagonal is written to witness.
double i0_margin(const PartialAntitreeSpec& p, double lambda, const I0Options& o = {},
                 std::vector<double>* witness = nullptr);
LimitTransfer limit_transfer_partial(const PartialAntitreeSpec& p, double lambda,
                                     const I0Options& o = {});

struct IntervalSet {
    std::vector<double> grid;
    std::vector<bool> mask;
    std::vector<std::pair<double, double>> intervals;
    std::vector<double> excluded_points;  // isolated points removed from a run
};

// Runs of {λ : limit transfer defined and |trace| < 2}.
IntervalSet interval_S(const DisorderSpec& nu, const std::vector<double>& grid);
IntervalSet interval_A(const PartialAntitreeSpec& p, const std::vector<double>& grid,
                       const I0Options& o = {});

struct ShellSample {
    double alpha = 0, beta = 0, delta = 0;
    Eigen::Matrix2d T = Eigen::Matrix2d::Identity();
    long n = 0, size = 0;
};

struct StretchedDraw {
    std::vector<double> omega, omega_prime;  // pair j couples omega[j] and omega_prime[j]
};

StretchedDraw draw_stretched(const DisorderSpec& nu, long s, CounterRng& rng);
ShellSample stretched_sample(const StretchedDraw& d, double lambda);
// Dense shell V = [[diag ω, I], [I, diag ω']] with uniform Υ on ω, Φ on ω'.
Shell stretched_shell(const StretchedDraw& d, long n);

// Pair-type counts of one shell for discrete ν (atoms i, j at index i*m + j).
struct StretchedCounts {
    std::vector<double> atoms;
    std::vector<long> counts;
    long s = 0;
};
StretchedCounts draw_stretched_counts(const DisorderSpec& nu, long s, CounterRng& rng);
ShellSample stretched_sample(const StretchedCounts& c, double lambda);

enum class SampleMode { explicit_draws, counts };
ShellSample sample_shell_stretched(const StretchedAntitreeSpec& spec, long n, double lambda,
                                   CounterRng& rng, SampleMode mode = SampleMode::explicit_draws);

// Potentials per vertex of shell n, ordered by pattern class.
std::vector<double> draw_partial(const PartialAntitreeSpec& p, long n, CounterRng& rng);
ShellSample partial_sample(const PartialAntitreeSpec& p, long n, const std::vector<double>& omega,
                           double lambda);
Shell partial_shell(const PartialAntitreeSpec& p, long n, const std::vector<double>& omega);
ShellSample sample_shell_partial(const PartialAntitreeSpec& p, long n, double lambda,
                                 CounterRng& rng);

// Random operators with a = -1 everywhere, shells 1..N.
OneChannelOperator stretched_operator(const StretchedAntitreeSpec& spec, long N, std::uint64_t seed);
OneChannelOperator partial_operator(const PartialAntitreeSpec& p, long N, std::uint64_t seed);

struct WellBalancedReport {
    std::vector<double> sizes;
    std::vector<std::vector<double>> moments;   // [k-1][size] E|X_n - X|^k
    std::vector<std::vector<double>> stderrs;   // same layout
    std::vector<double> mean_dev, mean_dev_err; // |E X_n - X| and its standard error
    std::vector<double> slopes;                 // d log moment / d log size, per k
    double mean_slope = 0;
    bool mean_statistically_zero = false;
    bool deterministic = false;
    bool pass = false;
};

// sampler(size, rng) draws X_n; slopes are fitted against log(size) and
// compared with -k/2 (±0.15) and -1 (±0.3).
WellBalancedReport well_balanced_check(const std::function<double(long, CounterRng&)>& sampler,
                                       double limit, const std::vector<long>& sizes, int K,
                                       long trials, std::uint64_t seed, int threads = 1);

struct EllipticConjugation {
    Eigen::Matrix2d B;
    double f = 1;
    double angle = 0;
};

// Real T with det 1 (after removing a common phase) and |trace| < 2.
EllipticConjugation elliptic_conjugation(const Eigen::Matrix2d& T);
EllipticConjugation elliptic_conjugation(const Mat2& T);

struct MomentBoundReport {
    Eigen::Matrix2d T;
    std::string noise;
    double C = 0;
    double f = 1;
    double bound = 0;
    std::vector<long> n_eval;
    std::vector<double> estimates, stderrs;
    double max_estimate = 0;
    bool pass = false;
};

// noise(n, rng) draws W_n.  C is estimated from the same trials.
MomentBoundReport moment_bound_check(const Eigen::Matrix2d& T,
                                     const std::function<Eigen::Matrix2d(long, CounterRng&)>& noise,
                                     std::string noise_description, long n_max, long trials,
                                     std::uint64_t seed, int threads = 1);

// Log-spaced integers in [1, n_max], always containing 1 and n_max.
std::vector<long> log_spaced(long n_max, int per_decade = 8);

}  // namespace ocs
