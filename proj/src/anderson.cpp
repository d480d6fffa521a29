#include "ocs/anderson.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>

#include "ocs/errors.hpp"
#include "ocs/parallel.hpp"

namespace ocs {

namespace {

constexpr double kQuadTol = 1e-10;
constexpr double kBlowup = 1e-6;
// A margin minimum below this inside a cell is an excluded point.
constexpr double kTouch = 1e-7;

double gk(const std::function<double(double)>& f, double a, double b)
{
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, kQuadTol);
}

double norm2(const Eigen::Matrix2d& M)
{
    const double a = M.squaredNorm();
    const double d = M.determinant();
    return std::sqrt(0.5 * (a + std::sqrt(std::max(0.0, a * a - 4 * d * d))));
}

std::string fmt(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

}  // namespace

DisorderSpec DisorderSpec::delta(double x)
{
    return discrete({x}, {1.0});
}

DisorderSpec DisorderSpec::two_point(double x, double y, double p)
{
    return discrete({x, y}, {p, 1 - p});
}

DisorderSpec DisorderSpec::discrete(std::vector<double> points, std::vector<double> weights)
{
    DisorderSpec d;
    d.kind = Kind::discrete;
    d.points = std::move(points);
    d.weights = std::move(weights);
    if (!d.points.empty()) {
        d.lo = *std::min_element(d.points.begin(), d.points.end());
        d.hi = *std::max_element(d.points.begin(), d.points.end());
    }
    d.validate();
    return d;
}

DisorderSpec DisorderSpec::uniform(double lo, double hi)
{
    DisorderSpec d;
    d.kind = Kind::uniform;
    d.lo = lo;
    d.hi = hi;
    d.validate();
    return d;
}

DisorderSpec DisorderSpec::quadrature(std::vector<double> nodes, std::vector<double> weights)
{
    DisorderSpec d = discrete(std::move(nodes), std::move(weights));
    d.kind = Kind::quadrature;
    return d;
}

void DisorderSpec::validate() const
{
    if (kind == Kind::uniform) {
        if (!(std::isfinite(lo) && std::isfinite(hi) && lo <= hi))
            throw ValidationError("uniform disorder needs finite lo <= hi");
        return;
    }
    if (points.empty() || points.size() != weights.size())
        throw ValidationError("disorder points and weights must be nonempty and of equal length");
    double sum = 0;
    for (size_t i = 0; i < points.size(); ++i) {
        if (!std::isfinite(points[i]) || !(weights[i] >= 0))
            throw ValidationError("disorder atoms must be finite with nonnegative weights");
        if (points[i] < lo || points[i] > hi)
            throw ValidationError("disorder atom outside the support hull");
        sum += weights[i];
    }
    if (std::abs(sum - 1) > 1e-12)
        throw ValidationError("disorder weights must sum to 1");
}

double DisorderSpec::draw(CounterRng& rng) const
{
    const double u = rng.uniform();
    if (kind == Kind::uniform)
        return lo + (hi - lo) * u;
    double acc = 0;
    for (size_t i = 0; i + 1 < points.size(); ++i) {
        acc += weights[i];
        if (u < acc)
            return points[i];
    }
    return points.back();
}

double DisorderSpec::expect(const std::function<double(double)>& f) const
{
    if (kind != Kind::uniform) {
        double s = 0;
        for (size_t i = 0; i < points.size(); ++i)
            if (weights[i] > 0)
                s += weights[i] * f(points[i]);
        return s;
    }
    if (hi == lo)
        return f(lo);
    return gk(f, lo, hi) / (hi - lo);
}

double DisorderSpec::expect2(const std::function<double(double, double)>& f) const
{
    return expect([&](double x) { return expect([&](double y) { return f(x, y); }); });
}

double harmonic_mean(const DisorderSpec& nu, double lambda)
{
    if (lambda >= nu.lo && lambda <= nu.hi)
        throw SupportViolation("energy " + fmt(lambda) + " inside the disorder hull");
    return 1.0 / nu.expect([lambda](double x) { return 1.0 / (x - lambda); });
}

RVec PartialAntitreeSpec::upsilon() const
{
    RVec v = RVec::Zero(k());
    v.head(k1).setConstant(1.0 / std::sqrt(double(k1)));
    return v;
}

RVec PartialAntitreeSpec::phi() const
{
    RVec v = RVec::Zero(k());
    v.tail(k3).setConstant(1.0 / std::sqrt(double(k3)));
    return v;
}

long PartialAntitreeSpec::class_size(long n, int cls) const
{
    if (cls < k1)
        return r(3 * n - 2) / k1;
    if (cls < k1 + k2)
        return r(3 * n - 1) / k2;
    return r(3 * n) / k3;
}

long PartialAntitreeSpec::shell_size(long n) const
{
    return r(3 * n - 2) + (k2 > 0 ? r(3 * n - 1) : 0) + r(3 * n);
}

void PartialAntitreeSpec::validate(long n_max) const
{
    if (k1 < 1 || k3 < 1 || k2 < 0)
        throw ValidationError("pattern needs k1, k3 >= 1 and k2 >= 0");
    if (O.rows() != k() || O.cols() != k() || a_diag.size() != k())
        throw ValidationError("pattern matrices must be k x k");
    if ((O.transpose() * O - RMat::Identity(k(), k())).cwiseAbs().maxCoeff() > 1e-12)
        throw ValidationError("pattern matrix O is not orthogonal");
    if (!r)
        throw ValidationError("pattern needs a size law");
    disorder.validate();
    for (long n = 1; n <= n_max; ++n) {
        const long a = r(3 * n - 2), b = r(3 * n - 1), c = r(3 * n);
        if (a < k1 || c < k3 || a % k1 || c % k3)
            throw ValidationError("sphere sizes of shell " + std::to_string(n) +
                                  " not divisible by the pattern");
        if (k2 == 0 ? b != 0 : (b < k2 || b % k2))
            throw ValidationError("middle sphere of shell " + std::to_string(n) +
                                  " does not match k2");
    }
}

PartialAntitreeSpec partial_from_coupling(int k1, int k2, int k3, const RMat& coupling,
                                          DisorderSpec nu, SizeLaw r)
{
    if (coupling.rows() != k1 + k2 + k3 || coupling.cols() != coupling.rows() ||
        (coupling - coupling.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw ValidationError("coupling must be symmetric k x k");
    Eigen::SelfAdjointEigenSolver<RMat> es(coupling);
    PartialAntitreeSpec p;
    p.k1 = k1;
    p.k2 = k2;
    p.k3 = k3;
    p.O = es.eigenvectors();
    p.a_diag = es.eigenvalues();
    p.r = std::move(r);
    p.disorder = std::move(nu);
    return p;
}

PartialAntitreeSpec hat_pattern(DisorderSpec nu, SizeLaw r)
{
    RMat M = RMat::Zero(6, 6);
    M.block(0, 2, 2, 2).setIdentity();
    M.block(2, 0, 2, 2).setIdentity();
    M.block(2, 4, 2, 2).setIdentity();
    M.block(4, 2, 2, 2).setIdentity();
    return partial_from_coupling(2, 2, 2, M, std::move(nu), std::move(r));
}

Eigen::Matrix2d shell_transfer(double alpha, double beta, double delta)
{
    if (!(std::abs(beta) > 0) || !std::isfinite(beta))
        throw ChannelSingular("shell coupling β vanishes", 0);
    Eigen::Matrix2d T;
    T << -1 / beta, alpha / beta, -delta / beta, -beta + delta * alpha / beta;
    return T;
}

namespace {

LimitTransfer make_limit(double lambda, double alpha, double beta, double delta, std::string src)
{
    LimitTransfer L;
    L.lambda = lambda;
    L.alpha = alpha;
    L.beta = beta;
    L.delta = delta;
    L.T = shell_transfer(alpha, beta, delta);
    L.trace = L.T.trace();
    L.elliptic = std::abs(L.trace) < 2;
    L.source = std::move(src);
    return L;
}

// Distance of λ to the complement of I_-, I_+ (negative outside).
double stretched_domain_margin(const DisorderSpec& nu, double lambda)
{
    const double inner = std::min(lambda - (nu.hi - 1), (nu.lo + 1) - lambda);
    const double outer = std::max((nu.lo - 1) - lambda, lambda - (nu.hi + 1));
    return std::max(inner, outer);
}

}  // namespace

Domain stretched_domain(const DisorderSpec& nu, double lambda)
{
    if (lambda > nu.hi - 1 && lambda < nu.lo + 1)
        return Domain::inner;
    if (lambda < nu.lo - 1 || lambda > nu.hi + 1)
        return Domain::outer;
    return Domain::outside;
}

LimitTransfer limit_transfer_stretched(const DisorderSpec& nu, double lambda)
{
    if (stretched_domain(nu, lambda) == Domain::outside)
        throw DomainViolation("energy " + fmt(lambda) + " outside I_- and I_+");
    auto den = [lambda](double x, double y) { return (x - lambda) * (y - lambda) - 1; };
    const double alpha = nu.expect2([&](double x, double y) { return (y - lambda) / den(x, y); });
    const double delta = nu.expect2([&](double x, double y) { return (x - lambda) / den(x, y); });
    const double beta = -nu.expect2([&](double x, double y) { return 1.0 / den(x, y); });
    return make_limit(lambda, alpha, beta, delta, "stretched");
}

double i0_margin(const PartialAntitreeSpec& p, double lambda, const I0Options& o,
                 std::vector<double>* witness)
{
    const int k = p.k();
    const double lo = p.disorder.lo, hi = p.disorder.hi;
    const double hull = std::max(lo - lambda, lambda - hi);
    if (witness)
        witness->assign(static_cast<size_t>(k), lambda);
    if (hull <= 0)
        return hull;
    const RMat M = p.coupling();
    const RVec ups = p.upsilon(), phi = p.phi();
    double best = std::numeric_limits<double>::infinity();
    auto test = [&](const RVec& d) {
        RMat A = M;
        A.diagonal() += (d.array() - lambda).matrix();
        Eigen::SelfAdjointEigenSolver<RMat> es(A);
        const double smin = es.eigenvalues().cwiseAbs().minCoeff();
        double m = smin;
        if (smin > 0) {
            const RVec x = es.eigenvectors() *
                           (es.eigenvalues().cwiseInverse().asDiagonal() *
                            (es.eigenvectors().transpose() * phi));
            m = std::min(m, std::abs(ups.dot(x)));
        }
        if (m < best) {
            best = m;
            if (witness)
                witness->assign(d.data(), d.data() + k);
        }
    };
    if (hi == lo) {
        test(RVec::Constant(k, lo));
        return std::min(best, hull);
    }
    CounterRng rng(derive_seed(o.seed, {0x10}));
    if (k <= 12) {
        for (long mask = 0; mask < (1L << k); ++mask) {
            RVec d(k);
            for (int i = 0; i < k; ++i)
                d(i) = (mask >> i) & 1 ? hi : lo;
            test(d);
        }
    } else {
        for (int t = 0; t < 4096; ++t) {
            RVec d(k);
            for (int i = 0; i < k; ++i)
                d(i) = rng() & 1 ? hi : lo;
            test(d);
        }
    }
    for (int t = 0; t < o.interior; ++t) {
        RVec d(k);
        for (int i = 0; i < k; ++i)
            d(i) = lo + (hi - lo) * rng.uniform();
        test(d);
    }
    return std::min(best, hull);
}

LimitTransfer limit_transfer_partial(const PartialAntitreeSpec& p, double lambda, const I0Options& o)
{
    std::vector<double> witness;
    const double m = i0_margin(p, lambda, o, &witness);
    if (m < o.margin)
        throw I0Violation("energy " + fmt(lambda) + " outside I_0 (margin " + fmt(m) + ")",
                          std::move(witness));
    const double h = harmonic_mean(p.disorder, lambda);
    RMat A = p.coupling();
    A.diagonal().array() += h;
    Eigen::FullPivLU<RMat> lu(A);
    if (!lu.isInvertible())
        throw DenominatorBlowup("h + coupling is singular at " + fmt(lambda));
    const RVec ups = p.upsilon(), phi = p.phi();
    const RVec ku = lu.solve(ups), kp = lu.solve(phi);
    return make_limit(lambda, ups.dot(ku), ups.dot(kp), phi.dot(kp), "partial");
}

namespace {

// Membership margin: min(2 - |trace|, domain margin), -1 where undefined.
struct Membership {
    std::function<LimitTransfer(double)> limit;
    std::function<double(double)> domain;
    double domain_floor = 0;  // domain margin must exceed this

    bool inside(double x) const
    {
        try {
            if (!(domain(x) > domain_floor))
                return false;
            return limit(x).elliptic;
        } catch (const NumericalError&) {
            return false;
        }
    }
    double trace_margin(double x) const
    {
        try {
            return 2 - std::abs(limit(x).trace);
        } catch (const NumericalError&) {
            return -1;
        }
    }
};

IntervalSet find_intervals(const Membership& mem, const std::vector<double>& grid)
{
    for (size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]))
            throw ValidationError("energy grid must be strictly increasing");
    IntervalSet out;
    out.grid = grid;
    out.mask.resize(grid.size());
    for (size_t i = 0; i < grid.size(); ++i)
        out.mask[i] = mem.inside(grid[i]);
    auto edge = [&](double in, double outp) {
        for (int it = 0; it < 200 && std::abs(in - outp) > 1e-13 * (1 + std::abs(in)); ++it) {
            const double mid = 0.5 * (in + outp);
            (mem.inside(mid) ? in : outp) = mid;
        }
        return 0.5 * (in + outp);
    };
    const int bits = std::numeric_limits<double>::digits / 2;
    size_t i = 0;
    while (i < grid.size()) {
        if (!out.mask[i]) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j + 1 < grid.size() && out.mask[j + 1])
            ++j;
        double left = i > 0 ? edge(grid[i], grid[i - 1]) : grid[i];
        for (size_t c = i; c < j; ++c) {
            const double a = grid[c], b = grid[c + 1];
            auto g = [&](double x) {
                return std::min(mem.trace_margin(x), mem.domain(x) - mem.domain_floor);
            };
            std::uintmax_t iters = 200;
            const auto r = boost::math::tools::brent_find_minima(g, a, b, bits, iters);
            const double x = r.first;
            if (x > a && x < b && r.second < kTouch) {
                out.excluded_points.push_back(x);
                out.intervals.emplace_back(left, x);
                left = x;
            }
        }
        const double right = j + 1 < grid.size() ? edge(grid[j], grid[j + 1]) : grid[j];
        out.intervals.emplace_back(left, right);
        i = j + 1;
    }
    return out;
}

}  // namespace

IntervalSet interval_S(const DisorderSpec& nu, const std::vector<double>& grid)
{
    Membership m;
    m.limit = [&nu](double x) { return limit_transfer_stretched(nu, x); };
    m.domain = [&nu](double x) { return stretched_domain_margin(nu, x); };
    m.domain_floor = 0;
    return find_intervals(m, grid);
}

IntervalSet interval_A(const PartialAntitreeSpec& p, const std::vector<double>& grid, const I0Options& o)
{
    Membership m;
    I0Options fast = o;
    m.limit = [&p, fast](double x) { return limit_transfer_partial(p, x, fast); };
    m.domain = [&p, fast](double x) { return i0_margin(p, x, fast); };
    m.domain_floor = o.margin;
    return find_intervals(m, grid);
}

StretchedDraw draw_stretched(const DisorderSpec& nu, long s, CounterRng& rng)
{
    if (s < 1)
        throw ValidationError("stretched shell size must be >= 1");
    StretchedDraw d;
    d.omega.resize(static_cast<size_t>(s));
    d.omega_prime.resize(static_cast<size_t>(s));
    for (long j = 0; j < s; ++j) {
        d.omega[static_cast<size_t>(j)] = nu.draw(rng);
        d.omega_prime[static_cast<size_t>(j)] = nu.draw(rng);
    }
    return d;
}

ShellSample stretched_sample(const StretchedDraw& d, double lambda)
{
    const size_t s = d.omega.size();
    double a = 0, b = 0, c = 0;
    for (size_t j = 0; j < s; ++j) {
        const double p = d.omega[j] - lambda, q = d.omega_prime[j] - lambda;
        const double den = p * q - 1;
        if (std::abs(den) < kBlowup)
            throw DenominatorBlowup("pair denominator below 1e-6 at " + fmt(lambda));
        a += q / den;
        b += 1 / den;
        c += p / den;
    }
    ShellSample r;
    r.size = static_cast<long>(s);
    r.alpha = a / double(s);
    r.beta = -b / double(s);
    r.delta = c / double(s);
    r.T = shell_transfer(r.alpha, r.beta, r.delta);
    return r;
}

Shell stretched_shell(const StretchedDraw& d, long n)
{
    const Eigen::Index s = static_cast<Eigen::Index>(d.omega.size());
    CMat V = CMat::Zero(2 * s, 2 * s);
    CVec ups = CVec::Zero(2 * s), phi = CVec::Zero(2 * s);
    for (Eigen::Index j = 0; j < s; ++j) {
        V(j, j) = d.omega[static_cast<size_t>(j)];
        V(s + j, s + j) = d.omega_prime[static_cast<size_t>(j)];
        V(j, s + j) = V(s + j, j) = 1;
        ups(j) = phi(s + j) = 1 / std::sqrt(double(s));
    }
    return Shell(n, std::move(V), -1.0, std::move(phi), std::move(ups));
}

StretchedCounts draw_stretched_counts(const DisorderSpec& nu, long s, CounterRng& rng)
{
    if (!nu.has_atoms())
        throw ValidationError("pair counts need an atomic disorder");
    if (s < 1)
        throw ValidationError("stretched shell size must be >= 1");
    StretchedCounts c;
    c.atoms = nu.points;
    c.s = s;
    const size_t m = nu.points.size();
    c.counts.assign(m * m, 0);
    long left = s;
    double mass = 1;
    for (size_t k = 0; k < m * m && left > 0; ++k) {
        const double p = nu.weights[k / m] * nu.weights[k % m];
        if (k + 1 == m * m || p >= mass) {
            c.counts[k] = left;
            break;
        }
        std::binomial_distribution<long> bin(left, std::clamp(p / mass, 0.0, 1.0));
        c.counts[k] = bin(rng);
        left -= c.counts[k];
        mass -= p;
    }
    return c;
}

ShellSample stretched_sample(const StretchedCounts& c, double lambda)
{
    const size_t m = c.atoms.size();
    double a = 0, b = 0, d = 0;
    for (size_t k = 0; k < m * m; ++k) {
        if (c.counts[k] == 0)
            continue;
        const double p = c.atoms[k / m] - lambda, q = c.atoms[k % m] - lambda;
        const double den = p * q - 1;
        if (std::abs(den) < kBlowup)
            throw DenominatorBlowup("pair denominator below 1e-6 at " + fmt(lambda));
        const double w = double(c.counts[k]);
        a += w * q / den;
        b += w / den;
        d += w * p / den;
    }
    ShellSample r;
    r.size = c.s;
    r.alpha = a / double(c.s);
    r.beta = -b / double(c.s);
    r.delta = d / double(c.s);
    r.T = shell_transfer(r.alpha, r.beta, r.delta);
    return r;
}

ShellSample sample_shell_stretched(const StretchedAntitreeSpec& spec, long n, double lambda,
                                   CounterRng& rng, SampleMode mode)
{
    if (stretched_domain(spec.disorder, lambda) == Domain::outside)
        throw DomainViolation("energy " + fmt(lambda) + " outside I_- and I_+");
    const long s = spec.s(n);
    ShellSample r = mode == SampleMode::counts
                        ? stretched_sample(draw_stretched_counts(spec.disorder, s, rng), lambda)
                        : stretched_sample(draw_stretched(spec.disorder, s, rng), lambda);
    r.n = n;
    return r;
}

std::vector<double> draw_partial(const PartialAntitreeSpec& p, long n, CounterRng& rng)
{
    std::vector<double> w(static_cast<size_t>(p.shell_size(n)));
    for (auto& x : w)
        x = p.disorder.draw(rng);
    return w;
}

namespace {

// Normalized class indicators as columns.
RMat class_embedding(const PartialAntitreeSpec& p, long n)
{
    const long total = p.shell_size(n);
    RMat E = RMat::Zero(total, p.k());
    long off = 0;
    for (int c = 0; c < p.k(); ++c) {
        const long m = p.class_size(n, c);
        E.block(off, c, m, 1).setConstant(1 / std::sqrt(double(m)));
        off += m;
    }
    return E;
}

}  // namespace

ShellSample partial_sample(const PartialAntitreeSpec& p, long n, const std::vector<double>& omega,
                           double lambda)
{
    if (static_cast<long>(omega.size()) != p.shell_size(n))
        throw ValidationError("potential count does not match the shell");
    RMat A = p.coupling();
    size_t off = 0;
    for (int c = 0; c < p.k(); ++c) {
        const long m = p.class_size(n, c);
        double mean = 0;
        for (long i = 0; i < m; ++i, ++off) {
            const double d = omega[off] - lambda;
            if (std::abs(d) < 1e-12)
                throw DenominatorBlowup("potential equals the energy " + fmt(lambda));
            mean += 1 / d;
        }
        mean /= double(m);
        if (mean == 0)
            throw DenominatorBlowup("class harmonic mean diverges at " + fmt(lambda));
        A(c, c) += 1 / mean;
    }
    Eigen::FullPivLU<RMat> lu(A);
    if (!lu.isInvertible())
        throw DenominatorBlowup("k x k system singular at " + fmt(lambda));
    const RVec ups = p.upsilon(), phi = p.phi();
    const RVec ku = lu.solve(ups), kp = lu.solve(phi);
    ShellSample r;
    r.n = n;
    r.size = p.shell_size(n);
    r.alpha = ups.dot(ku);
    r.beta = ups.dot(kp);
    r.delta = phi.dot(kp);
    r.T = shell_transfer(r.alpha, r.beta, r.delta);
    return r;
}

Shell partial_shell(const PartialAntitreeSpec& p, long n, const std::vector<double>& omega)
{
    if (static_cast<long>(omega.size()) != p.shell_size(n))
        throw ValidationError("potential count does not match the shell");
    const RMat E = class_embedding(p, n);
    RMat V = E * p.coupling() * E.transpose();
    for (size_t i = 0; i < omega.size(); ++i)
        V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += omega[i];
    CVec phi = (E * p.phi()).cast<cplx>(), ups = (E * p.upsilon()).cast<cplx>();
    return Shell(n, V.cast<cplx>(), -1.0, std::move(phi), std::move(ups));
}

ShellSample sample_shell_partial(const PartialAntitreeSpec& p, long n, double lambda, CounterRng& rng)
{
    return partial_sample(p, n, draw_partial(p, n, rng), lambda);
}

OneChannelOperator stretched_operator(const StretchedAntitreeSpec& spec, long N, std::uint64_t seed)
{
    return OneChannelOperator::generate(
        [&](long n) {
            CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
            return stretched_shell(draw_stretched(spec.disorder, spec.s(n), rng), n);
        },
        1, N);
}

OneChannelOperator partial_operator(const PartialAntitreeSpec& p, long N, std::uint64_t seed)
{
    p.validate(N);
    return OneChannelOperator::generate(
        [&](long n) {
            CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
            return partial_shell(p, n, draw_partial(p, n, rng));
        },
        1, N);
}

namespace {

double fit_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxx > 0 ? sxy / sxx : 0;
}

}  // namespace

WellBalancedReport well_balanced_check(const std::function<double(long, CounterRng&)>& sampler,
                                       double limit, const std::vector<long>& sizes, int K,
                                       long trials, std::uint64_t seed, int threads)
{
    if (sizes.size() < 2 || K < 1 || trials < 2)
        throw ValidationError("well-balanced check needs two sizes, K >= 1 and two trials");
    const int P = 4 * K;  // powers of |d| accumulated, for moments up to 2K and their variances
    constexpr long kChunks = 64;
    WellBalancedReport rep;
    rep.moments.assign(static_cast<size_t>(2 * K), {});
    rep.stderrs.assign(static_cast<size_t>(2 * K), {});
    const double T = double(trials);
    bool all_zero = true;
    for (size_t si = 0; si < sizes.size(); ++si) {
        // per chunk: Σ d, Σ d², Σ |d|^1..|d|^P
        std::vector<std::vector<double>> acc(kChunks, std::vector<double>(static_cast<size_t>(P + 2), 0));
        parallel_for(kChunks, threads, [&](long c) {
            auto& a = acc[static_cast<size_t>(c)];
            for (long t = c; t < trials; t += kChunks) {
                CounterRng rng(derive_seed(seed, {si, static_cast<std::uint64_t>(t)}));
                const double d = sampler(sizes[si], rng) - limit;
                a[0] += d;
                a[1] += d * d;
                double pw = 1;
                for (int k = 1; k <= P; ++k) {
                    pw *= std::abs(d);
                    a[static_cast<size_t>(k + 1)] += pw;
                }
            }
        });
        std::vector<double> tot(static_cast<size_t>(P + 2), 0);
        for (const auto& a : acc)
            for (size_t q = 0; q < tot.size(); ++q)
                tot[q] += a[q];
        rep.sizes.push_back(double(sizes[si]));
        const double mean = tot[0] / T;
        rep.mean_dev.push_back(std::abs(mean));
        rep.mean_dev_err.push_back(std::sqrt(std::max(0.0, tot[1] / T - mean * mean) / T));
        for (int k = 1; k <= 2 * K; ++k) {
            const double m = tot[static_cast<size_t>(k + 1)] / T;
            const double m2 = tot[static_cast<size_t>(2 * k + 1)] / T;
            rep.moments[static_cast<size_t>(k - 1)].push_back(m);
            rep.stderrs[static_cast<size_t>(k - 1)].push_back(std::sqrt(std::max(0.0, m2 - m * m) / T));
            if (m > 0)
                all_zero = false;
        }
    }
    if (all_zero) {
        rep.deterministic = true;
        rep.mean_statistically_zero = true;
        rep.slopes.assign(static_cast<size_t>(2 * K), 0);
        rep.pass = true;
        return rep;
    }
    std::vector<double> lx;
    for (double s : rep.sizes)
        lx.push_back(std::log(s));
    rep.pass = true;
    for (int k = 1; k <= 2 * K; ++k) {
        std::vector<double> ly;
        for (double m : rep.moments[static_cast<size_t>(k - 1)])
            ly.push_back(std::log(m));
        const double sl = fit_slope(lx, ly);
        rep.slopes.push_back(sl);
        if (!(std::abs(sl + 0.5 * k) <= 0.15))
            rep.pass = false;
    }
    rep.mean_statistically_zero = true;
    bool positive = true;
    for (size_t i = 0; i < rep.sizes.size(); ++i) {
        if (rep.mean_dev[i] > 3 * rep.mean_dev_err[i])
            rep.mean_statistically_zero = false;
        if (!(rep.mean_dev[i] > 0))
            positive = false;
    }
    if (positive) {
        std::vector<double> ly;
        for (double m : rep.mean_dev)
            ly.push_back(std::log(m));
        rep.mean_slope = fit_slope(lx, ly);
    }
    if (!rep.mean_statistically_zero && !(positive && std::abs(rep.mean_slope + 1) <= 0.3))
        rep.pass = false;
    return rep;
}

EllipticConjugation elliptic_conjugation(const Eigen::Matrix2d& T)
{
    if (!T.allFinite())
        throw NotElliptic("matrix is not finite");
    const double scale = std::max(1.0, T.cwiseAbs().maxCoeff());
    if (std::abs(T.determinant() - 1) > 1e-8 * scale * scale)
        throw NotElliptic("determinant is not 1");
    const double tr = T.trace();
    if (!(std::abs(tr) < 2))
        throw NotElliptic("|trace| = " + fmt(std::abs(tr)) + " is not below 2");
    const double theta = std::acos(tr / 2);
    const cplx e = std::polar(1.0, theta);
    Vec2 v;
    if (std::abs(T(0, 1)) >= std::abs(T(1, 0)))
        v << T(0, 1), e - T(0, 0);
    else
        v << e - T(1, 1), T(1, 0);
    Eigen::Matrix2d B;
    B.col(0) = v.real();
    B.col(1) = v.imag();
    if (B.determinant() < 0)
        B.col(1) = -B.col(1);
    B /= std::sqrt(std::abs(B.determinant()));
    if (B(0, 0) < 0 || (B(0, 0) == 0 && B(1, 0) < 0))
        B = -B;
    const Eigen::Matrix2d U = B.inverse() * T * B;
    if ((U.transpose() * U - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw NumericalError("conjugation did not produce a rotation");
    EllipticConjugation r;
    r.B = B;
    r.f = norm2(B) * norm2(B.inverse());
    r.angle = std::atan2(U(0, 1), U(0, 0));
    return r;
}

EllipticConjugation elliptic_conjugation(const Mat2& T)
{
    const cplx d = T.determinant();
    if (!(std::abs(d) > 0))
        throw NotElliptic("determinant vanishes");
    const cplx phase = std::polar(1.0, 0.5 * std::arg(d));
    const Mat2 S = T / (std::sqrt(std::abs(d)) * phase);
    if (S.imag().cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff()))
        throw NotElliptic("matrix is not real up to a common phase");
    return elliptic_conjugation(Eigen::Matrix2d(S.real()));
}

std::vector<long> log_spaced(long n_max, int per_decade)
{
    std::vector<long> out{1};
    const double step = std::pow(10.0, 1.0 / per_decade);
    for (double x = step; x < double(n_max); x *= step) {
        const long v = std::lround(x);
        if (v > out.back() && v < n_max)
            out.push_back(v);
    }
    if (n_max > 1)
        out.push_back(n_max);
    return out;
}

MomentBoundReport moment_bound_check(const Eigen::Matrix2d& T,
                                     const std::function<Eigen::Matrix2d(long, CounterRng&)>& noise,
                                     std::string noise_description, long n_max, long trials,
                                     std::uint64_t seed, int threads)
{
    if (n_max < 1 || trials < 2)
        throw ValidationError("moment bound needs n_max >= 1 and two trials");
    MomentBoundReport rep;
    rep.T = T;
    rep.noise = std::move(noise_description);
    const EllipticConjugation ec = elliptic_conjugation(T);
    rep.f = ec.f;
    rep.n_eval = log_spaced(n_max);
    const size_t E = rep.n_eval.size(), N = static_cast<size_t>(n_max);
    struct Acc {
        std::vector<Eigen::Matrix2d> wsum;
        std::vector<double> wpow;
        std::vector<double> s1, s2;
    };
    constexpr long kChunks = 64;
    std::vector<Acc> acc(kChunks);
    parallel_for(kChunks, threads, [&](long c) {
        Acc& a = acc[static_cast<size_t>(c)];
        a.wsum.assign(N, Eigen::Matrix2d::Zero());
        a.wpow.assign(N, 0);
        a.s1.assign(E, 0);
        a.s2.assign(E, 0);
        for (long t = c; t < trials; t += kChunks) {
            CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(t)}));
            Eigen::Matrix2d P = Eigen::Matrix2d::Identity();
            double logs = 0;
            size_t j = 0;
            for (long n = 1; n <= n_max; ++n) {
                const Eigen::Matrix2d W = noise(n, rng);
                const double w = norm2(W);
                a.wsum[static_cast<size_t>(n - 1)] += W;
                a.wpow[static_cast<size_t>(n - 1)] += w * w + w * w * w * w;
                P = (T + W) * P;
                const double s = P.cwiseAbs().maxCoeff();
                if (s > 1e100 || (s < 1e-100 && s > 0)) {
                    P /= s;
                    logs += std::log(s);
                }
                if (j < E && rep.n_eval[j] == n) {
                    const double v = std::exp(4 * (logs + std::log(norm2(P))));
                    a.s1[j] += v;
                    a.s2[j] += v * v;
                    ++j;
                }
            }
        }
    });
    const double Tn = double(trials);
    std::vector<Eigen::Matrix2d> wsum(N, Eigen::Matrix2d::Zero());
    std::vector<double> wpow(N, 0), s1(E, 0), s2(E, 0);
    for (const Acc& a : acc) {
        for (size_t n = 0; n < N; ++n) {
            wsum[n] += a.wsum[n];
            wpow[n] += a.wpow[n];
        }
        for (size_t j = 0; j < E; ++j) {
            s1[j] += a.s1[j];
            s2[j] += a.s2[j];
        }
    }
    for (size_t n = 0; n < N; ++n)
        rep.C += norm2(wsum[n] / Tn) + wpow[n] / Tn;
    rep.bound = std::pow(2 * rep.f, 4) * std::exp(8 * rep.f * rep.C);
    rep.pass = true;
    for (size_t j = 0; j < E; ++j) {
        const double m = s1[j] / Tn;
        const double se = std::sqrt(std::max(0.0, s2[j] / Tn - m * m) / Tn);
        rep.estimates.push_back(m);
        rep.stderrs.push_back(se);
        rep.max_estimate = std::max(rep.max_estimate, m);
        if (!(m + 3 * se < rep.bound))
            rep.pass = false;
    }
    return rep;
}

}  // namespace ocs
