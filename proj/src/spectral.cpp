#include "ocs/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ocs/errors.hpp"
#include "ocs/parallel.hpp"

namespace ocs {

namespace {

std::vector<double> filled_density(const SpectralEstimate& e)
{
    std::vector<double> d = e.density;
    const size_t n = d.size();
    for (size_t i = 0; i < n; ++i) {
        if (e.masked.empty() || !e.masked[i])
            continue;
        long lo = static_cast<long>(i) - 1, hi = static_cast<long>(i) + 1;
        while (lo >= 0 && e.masked[static_cast<size_t>(lo)])
            --lo;
        while (hi < static_cast<long>(n) && e.masked[static_cast<size_t>(hi)])
            ++hi;
        if (lo < 0 && hi >= static_cast<long>(n))
            d[i] = 0;
        else if (lo < 0)
            d[i] = e.density[static_cast<size_t>(hi)];
        else if (hi >= static_cast<long>(n))
            d[i] = e.density[static_cast<size_t>(lo)];
        else {
            const double xl = e.grid[static_cast<size_t>(lo)], xh = e.grid[static_cast<size_t>(hi)];
            const double t = (e.grid[i] - xl) / (xh - xl);
            d[i] = (1 - t) * e.density[static_cast<size_t>(lo)] + t * e.density[static_cast<size_t>(hi)];
        }
    }
    return d;
}

double log_add(double x, double y)
{
    if (x == -std::numeric_limits<double>::infinity())
        return y;
    if (y == -std::numeric_limits<double>::infinity())
        return x;
    const double hi = std::max(x, y);
    return hi + std::log(std::exp(x - hi) + std::exp(y - hi));
}

double cross_ratio(const Vec2& s, const Vec2& x)
{
    const double den = s.norm() * x.norm();
    if (den == 0)
        return std::numeric_limits<double>::infinity();
    return std::abs(s(0) * x(1) - s(1) * x(0)) / den;
}

// Min-norm block from the shell equation and the two channel values.
CVec block_from_states(const Shell& s, double lambda, const Vec2& prev, const Vec2& cur)
{
    const int k = s.size();
    CMat A(k + 2, k);
    A.topRows(k) = s.V() - lambda * CMat::Identity(k, k);
    A.row(k) = s.upsilon().adjoint();
    A.row(k + 1) = s.phi().adjoint();
    CVec rhs(k + 2);
    rhs.head(k) = cur(0) * s.phi() + s.a() * prev(1) * s.upsilon();
    rhs(k) = prev(0) / s.a();
    rhs(k + 1) = cur(1);
    Eigen::CompleteOrthogonalDecomposition<CMat> cod(A);
    cod.setThreshold(1e-12);
    return cod.solve(rhs);
}

double window_residual(const OneChannelOperator& op, const BlockVector& psi, double lambda)
{
    const long lo = std::max(op.first(), psi.first - 1);
    const long hi = std::min(op.last(), psi.last() + 1);
    auto t = assemble_window(op, lo, hi);
    CVec v = CVec::Zero(t.dim());
    for (long n = psi.first; n <= psi.last(); ++n)
        v.segment(t.offset(n), psi.at(n).size()) = psi.at(n);
    return (t.H * v - lambda * v).norm() / v.norm();
}

// Builds the blocks l..m+1 from the states at positions l-1..m+1.
FiniteEigenfunction assemble(const OneChannelOperator& op, double lambda, long l, long m,
                             std::vector<Vec2> states)
{
    FiniteEigenfunction f;
    f.lambda = lambda;
    f.l = l;
    f.m = m;
    f.psi.first = l;
    for (long n = l; n <= m + 1; ++n) {
        const size_t k = static_cast<size_t>(n - l);
        f.psi.blocks.push_back(block_from_states(op.shell(n), lambda, states[k], states[k + 1]));
    }
    const double nrm = f.psi.norm();
    for (auto& b : f.psi.blocks)
        b /= nrm;
    f.residual = window_residual(op, f.psi, lambda);
    return f;
}

// States l..m from a propagated path as unscaled vectors sharing one scale.
std::vector<Vec2> unscaled(const SolutionPath& p)
{
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& s : p.states)
        top = std::max(top, s.log_scale);
    std::vector<Vec2> out;
    for (const auto& s : p.states)
        out.push_back(std::exp(s.log_scale - top) * s.vec);
    return out;
}

}  // namespace

double interval_mass(const SpectralEstimate& e, double a, double b)
{
    double mass = 0;
    if (e.grid.size() >= 2) {
        const auto d = filled_density(e);
        for (size_t i = 0; i + 1 < e.grid.size(); ++i) {
            const double x0 = e.grid[i], x1 = e.grid[i + 1];
            const double lo = std::max(a, x0), hi = std::min(b, x1);
            if (hi <= lo)
                continue;
            auto at = [&](double x) { return d[i] + (d[i + 1] - d[i]) * (x - x0) / (x1 - x0); };
            mass += 0.5 * (at(lo) + at(hi)) * (hi - lo);
        }
    }
    for (const auto& p : e.point_masses)
        if (p.lambda >= a && p.lambda <= b)
            mass += p.weight;
    return mass;
}

double cdf(const SpectralEstimate& e, double x)
{
    return interval_mass(e, -std::numeric_limits<double>::infinity(), x);
}

SpectralEstimate halfline_density(const OneChannelOperator& op, const std::vector<double>& grid,
                                  const HalflineOptions& o)
{
    if (op.geometry() != Geometry::half)
        throw ValidationError("half-line density needs a half-line operator");
    if (o.n_hi < 1 || !op.has(o.n_hi))
        throw ValidationError("window end outside the operator");
    SpectralEstimate e;
    e.provenance = "transfer_halfline";
    e.grid = grid;
    e.window_hi = o.n_hi;
    e.window_lo = o.n_lo > 0 ? o.n_lo : std::max(1L, o.n_hi / 2);
    if (e.window_lo > e.window_hi)
        throw ValidationError("empty Cesàro window");
    const size_t G = grid.size();
    e.density.assign(G, 0.0);
    e.oscillation.assign(G, 0.0);
    std::vector<char> masked(G, 0);
    const TransferState start = u_start(op);
    parallel_for(static_cast<long>(G), o.threads, [&](long i) {
        const double lambda = grid[static_cast<size_t>(i)];
        try {
            const SolutionPath p = propagate(op, lambda, start, e.window_hi);
            double sum = 0, sq = 0;
            const long cnt = e.window_hi - e.window_lo + 1;
            for (long n = e.window_lo; n <= e.window_hi; ++n) {
                const auto& s = p.at(n);
                const double v = std::exp(-2 * s.log_scale) / (kPi * s.vec.squaredNorm());
                sum += v;
                sq += v * v;
            }
            const double mean = sum / cnt;
            e.density[static_cast<size_t>(i)] = mean;
            e.oscillation[static_cast<size_t>(i)] = mean > 0 ? (sq / cnt - mean * mean) / mean : 0;
        } catch (const NumericalError&) {
            masked[static_cast<size_t>(i)] = 1;
        }
    });
    e.masked.assign(masked.begin(), masked.end());
    if (o.point_masses && !grid.empty()) {
        const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
        for (double lambda : singular_energies(op, 1, e.window_hi, *lo, *hi)) {
            long k = 1;
            while (k <= e.window_hi && !in_singular_set(op.shell(k), lambda))
                ++k;
            if (k > e.window_hi)
                continue;
            try {
                auto f = wall_eigenfunction(op, lambda, k - 1);
                if (f.residual > 1e-8)
                    continue;
                const cplx x1 = op.shell(1).upsilon().dot(f.psi.at(1));
                PointMass pm{lambda, std::norm(x1), 1, k, "wall/" + std::to_string(f.case_right)};
                e.point_masses.push_back(pm);
            } catch (const NumericalError&) {
            }
        }
    }
    return e;
}

SpectralEstimate fullline_density(const OneChannelOperator& op, const std::vector<double>& grid,
                                  const FulllineOptions& o)
{
    if (op.geometry() != Geometry::full)
        throw ValidationError("full-line density needs a full-line operator");
    const long m_lo = o.m_lo > 0 ? o.m_lo : std::max(1L, o.m_hi / 2);
    const long n_lo = o.n_lo > 0 ? o.n_lo : std::max(1L, o.n_hi / 2);
    if (o.m_hi < m_lo || o.n_hi < n_lo || !op.has(1 - o.m_hi) || !op.has(o.n_hi))
        throw ValidationError("full-line windows outside the operator");
    if (o.theta_nodes < 1)
        throw ValidationError("theta_nodes must be positive");
    SpectralEstimate e;
    e.provenance = "transfer_fullline";
    e.grid = grid;
    e.window_lo = n_lo;
    e.window_hi = o.n_hi;
    const size_t G = grid.size();
    e.density.assign(G, 0.0);
    e.oscillation.assign(G, 0.0);
    std::vector<char> masked(G, 0);
    const int K = o.theta_nodes;
    std::vector<Vec2> dirs;
    for (int k = 0; k < K; ++k) {
        const double th = kPi * (k + 0.5) / K;
        dirs.emplace_back(std::cos(th), std::sin(th));
    }
    // window average of ‖P e_θ‖^{-2} along a product sequence
    auto average = [&](auto&& step, long lo, long hi) {
        std::vector<double> acc(static_cast<size_t>(K), 0.0);
        TransferMatrix P;
        for (long n = 1; n <= hi; ++n) {
            P = step(n, P);
            if (n < lo)
                continue;
            for (int k = 0; k < K; ++k)
                acc[static_cast<size_t>(k)] +=
                    std::exp(-2 * P.log_scale) / (P.entries * dirs[static_cast<size_t>(k)]).squaredNorm();
        }
        for (auto& a : acc)
            a /= static_cast<double>(hi - lo + 1);
        return acc;
    };
    parallel_for(static_cast<long>(G), o.threads, [&](long i) {
        const double lambda = grid[static_cast<size_t>(i)];
        try {
            auto fwd = average(
                [&](long n, const TransferMatrix& P) {
                    return compose(transfer_matrix(op.shell(n), lambda), P);
                },
                n_lo, o.n_hi);
            // T_{0,-m} = T_{-m+1}^{-1} T_{0,-(m-1)}
            auto bwd = average(
                [&](long m, const TransferMatrix& P) {
                    return compose(transfer_matrix(op.shell(1 - m), lambda).inverse(), P);
                },
                m_lo, o.m_hi);
            double s = 0;
            for (int k = 0; k < K; ++k)
                s += fwd[static_cast<size_t>(k)] * bwd[static_cast<size_t>(k)];
            e.density[static_cast<size_t>(i)] = s / (kPi * K);
        } catch (const NumericalError&) {
            masked[static_cast<size_t>(i)] = 1;
        }
    });
    e.masked.assign(masked.begin(), masked.end());
    return e;
}

CVec shell_vector(const DenseTruncation& t, long n, const CVec& x)
{
    CVec v = CVec::Zero(t.dim());
    v.segment(t.offset(n), x.size()) = x;
    return v;
}

SpectralEstimate eigen_histogram(const DenseTruncation& t, const std::vector<CVec>& weights)
{
    if (!t.hermitian)
        throw ValidationError("eigen histogram needs a Hermitian truncation");
    if (t.dim() > kDenseCap)
        throw ValidationError("dense dimension exceeds cap");
    Eigen::SelfAdjointEigenSolver<CMat> es(t.H);
    if (es.info() != Eigen::Success)
        throw NumericalError("dense eigensolver failed");
    SpectralEstimate e;
    e.provenance = "eigen_histogram";
    e.window_lo = t.first;
    e.window_hi = t.last;
    const auto& ev = es.eigenvalues();
    const CMat& U = es.eigenvectors();
    for (Eigen::Index j = 0; j < ev.size(); ++j) {
        double w = 0;
        for (const auto& x : weights)
            w += std::norm(U.col(j).dot(x));
        e.point_masses.push_back({ev(j), w, t.first, t.last, "eigen"});
    }
    return e;
}

SpectralEstimate eigen_histogram(const OneChannelOperator& op, long N, double c, const CVec& weight)
{
    auto t = assemble_dense(op, N, c);
    return eigen_histogram(t, {weight});
}

AcCriterion ac_criterion(const OneChannelOperator& op, double p, double a, double b,
                         const std::vector<long>& n_list, int nodes, double factor)
{
    if (!n_list.empty() && !op.has(*std::max_element(n_list.begin(), n_list.end())))
        throw ValidationError("n list outside the operator");
    return ac_criterion([&op](long n, double lambda) { return transfer_matrix(op.shell(n), lambda); },
                        p, a, b, n_list, nodes, factor);
}

AcCriterion ac_criterion(const ShellTransfer& shell_transfer, double p, double a, double b,
                         const std::vector<long>& n_list, int nodes, double factor)
{
    if (!(p > 2))
        throw ValidationError("the integral criterion needs p > 2");
    if (!(b > a) || nodes < 1 || n_list.empty())
        throw ValidationError("bad interval, node count or n list");
    std::vector<long> ns = n_list;
    std::sort(ns.begin(), ns.end());
    if (ns.front() < 1)
        throw ValidationError("n list outside the operator");
    AcCriterion r;
    r.n_list = ns;
    const double h = (b - a) / nodes;
    const double ninf = -std::numeric_limits<double>::infinity();
    r.log_integrals.assign(ns.size(), ninf);
    for (int k = 0; k < nodes; ++k) {
        const double lambda = a + (k + 0.5) * h;
        try {
            TransferMatrix P;
            size_t j = 0;
            std::vector<double> logs;
            for (long n = 1; n <= ns.back(); ++n) {
                P = compose(shell_transfer(n, lambda), P);
                while (j < ns.size() && ns[j] == n) {
                    logs.push_back(p * P.log_norm());
                    ++j;
                }
            }
            for (size_t q = 0; q < ns.size(); ++q)
                r.log_integrals[q] = log_add(r.log_integrals[q], logs[q]);
        } catch (const NumericalError&) {
            ++r.masked;
        }
    }
    for (auto& l : r.log_integrals) {
        l += std::log(h);
        r.integrals.push_back(std::exp(l));
    }
    const long cut = ns.back() / 10;
    double head = std::numeric_limits<double>::infinity();
    double tail = std::numeric_limits<double>::infinity();
    for (size_t q = 0; q < ns.size(); ++q) {
        if (ns[q] < cut)
            head = std::min(head, r.log_integrals[q]);
        else
            tail = std::min(tail, r.log_integrals[q]);
    }
    if (!std::isfinite(head))
        head = r.log_integrals.front();
    r.liminf_proxy = std::exp(tail);
    r.verdict = tail <= head + std::log(factor) ? "bounded-like" : "growing";
    return r;
}

FiniteEigenfunction finite_eigenfunction(const OneChannelOperator& op, double lambda, long l, long m)
{
    if (l > m || !op.has(l) || !op.has(m + 1))
        throw ValidationError("eigenfunction shells outside the operator");
    const BoundaryVectors left = boundary_vectors(op.shell(l), lambda);
    const BoundaryVectors right = boundary_vectors(op.shell(m + 1), lambda);
    TransferState s;
    s.vec = left.x_plus;
    s.n = l;
    const SolutionPath path = propagate(op, lambda, s, m);
    const double cross = cross_ratio(path.at(m).vec, right.x_minus);
    if (!(cross < 1e-8))
        throw ColinearityFailed(cross, l, m);
    std::vector<Vec2> states{Vec2::Zero()};
    for (const auto& v : unscaled(path))
        states.push_back(v);
    states.push_back(Vec2::Zero());
    auto f = assemble(op, lambda, l, m, states);
    f.case_left = left.boundary_case;
    f.case_right = right.boundary_case;
    f.cross = cross;
    return f;
}

FiniteEigenfunction wall_eigenfunction(const OneChannelOperator& op, double lambda, long m)
{
    if (op.geometry() != Geometry::half)
        throw ValidationError("the wall construction needs a half-line operator");
    if (m < 0 || !op.has(m + 1))
        throw ValidationError("eigenfunction shells outside the operator");
    const BoundaryVectors right = boundary_vectors(op.shell(m + 1), lambda);
    const SolutionPath path = propagate(op, lambda, u_start(op), m);
    const double cross = cross_ratio(path.at(m).vec, right.x_minus);
    if (!(cross < 1e-8))
        throw ColinearityFailed(cross, 1, m);
    std::vector<Vec2> states = unscaled(path);
    states.push_back(Vec2::Zero());
    auto f = assemble(op, lambda, 1, m, states);
    f.case_right = right.boundary_case;
    f.cross = cross;
    f.dirichlet = true;
    return f;
}

std::vector<double> singular_energies(const OneChannelOperator& op, long lo, long hi, double e_lo,
                                      double e_hi)
{
    SearchBox box;
    box.re_lo = e_lo;
    box.re_hi = e_hi;
    box.im_lo = -1e-8;
    box.im_hi = 1e-8;
    std::vector<double> out;
    for (long n = std::max(lo, op.first()); n <= std::min(hi, op.last()); ++n)
        for (const auto& p : singular_set(op.shell(n), box).points)
            out.push_back(p.z.real());
    std::sort(out.begin(), out.end());
    std::vector<double> uniq;
    for (double x : out)
        if (uniq.empty() || std::abs(x - uniq.back()) > 1e-10 * std::max(1.0, std::abs(x)))
            uniq.push_back(x);
    return uniq;
}

std::vector<FiniteEigenfunction> finite_eigenfunctions(const OneChannelOperator& op, long lo, long hi,
                                                       std::optional<std::vector<double>> candidates)
{
    lo = std::max(lo, op.first());
    hi = std::min(hi, op.last());
    const std::vector<double> energies =
        candidates ? *candidates
                   : singular_energies(op, lo, hi, -std::numeric_limits<double>::infinity(),
                                       std::numeric_limits<double>::infinity());
    std::vector<FiniteEigenfunction> out;
    for (double lambda : energies) {
        std::vector<long> sing;
        for (long n = lo; n <= hi; ++n)
            if (in_singular_set(op.shell(n), lambda))
                sing.push_back(n);
        if (sing.empty())
            continue;
        auto keep = [&](FiniteEigenfunction&& f) {
            if (f.residual <= 1e-8)
                out.push_back(std::move(f));
        };
        if (op.geometry() == Geometry::half && lo == 1) {
            try {
                keep(wall_eigenfunction(op, lambda, sing.front() - 1));
            } catch (const NumericalError&) {
            }
        }
        for (size_t k = 0; k + 1 < sing.size(); ++k) {
            try {
                keep(finite_eigenfunction(op, lambda, sing[k], sing[k + 1] - 1));
            } catch (const NumericalError&) {
            }
        }
    }
    return out;
}

}  // namespace ocs
