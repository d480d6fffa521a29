#include "ocs/model.hpp"

#include <algorithm>
#include <cmath>

#include "ocs/errors.hpp"

namespace ocs {

namespace {

void require(bool ok, const std::string& msg)
{
    if (!ok)
        throw ValidationError(msg);
}

std::vector<EigenGroup> group_eigenvalues(const RVec& ev, const CVec& uc, const CVec& pc,
                                          double scale)
{
    std::vector<EigenGroup> out;
    const double merge = kRankTol * scale;
    const double present = kRankTol * kRankTol;
    Eigen::Index j = 0;
    while (j < ev.size()) {
        EigenGroup g;
        double sum = 0;
        Eigen::Index k = j;
        while (k < ev.size() && ev(k) - ev(j) <= merge) {
            g.A += std::norm(uc(k));
            g.D += std::norm(pc(k));
            g.B += std::conj(uc(k)) * pc(k);
            sum += ev(k);
            ++k;
        }
        g.multiplicity = static_cast<int>(k - j);
        g.mu = sum / g.multiplicity;
        g.in_w = g.A > present;
        g.in_wt = g.D > present;
        g.colinear = g.in_w && g.in_wt && std::norm(g.B) >= g.A * g.D * (1 - 1e-8);
        out.push_back(g);
        j = k;
    }
    return out;
}

}  // namespace

Shell::Shell(long n, CMat V, double a, CVec phi, CVec upsilon)
{
    const auto s = V.rows();
    require(s >= 1 && V.cols() == s, "shell " + std::to_string(n) + ": V must be square");
    require(phi.size() == s && upsilon.size() == s,
            "shell " + std::to_string(n) + ": mode vectors must have length s_n");
    require(a != 0 && std::isfinite(a), "shell " + std::to_string(n) + ": a must be nonzero");
    require(std::abs(phi.norm() - 1) <= 1e-12 && std::abs(upsilon.norm() - 1) <= 1e-12,
            "shell " + std::to_string(n) + ": mode vectors must be unit");
    const double herm = (V - V.adjoint()).cwiseAbs().maxCoeff();
    require(herm <= 1e-12 * std::max(1.0, V.cwiseAbs().maxCoeff()),
            "shell " + std::to_string(n) + ": V must be Hermitian");

    auto d = std::make_shared<Data>();
    d->n = n;
    d->V = (V + V.adjoint()) / 2.0;
    d->a = a;
    d->phi = std::move(phi);
    d->upsilon = std::move(upsilon);
    Eigen::SelfAdjointEigenSolver<CMat> es(d->V);
    if (es.info() != Eigen::Success)
        throw NumericalError("eigensolver failed on shell " + std::to_string(n));
    d->evals = es.eigenvalues();
    d->evecs = es.eigenvectors();
    d->ups_coef = d->evecs.adjoint() * d->upsilon;
    d->phi_coef = d->evecs.adjoint() * d->phi;
    d->vnorm = std::max(1.0, d->evals.cwiseAbs().maxCoeff());
    d->groups = group_eigenvalues(d->evals, d->ups_coef, d->phi_coef, d->vnorm);
    d_ = std::move(d);
}

CVec Shell::resolve(cplx z, const CVec& v) const
{
    CVec c = d_->evecs.adjoint() * v;
    for (Eigen::Index j = 0; j < c.size(); ++j)
        c(j) /= (d_->evals(j) - z);
    return d_->evecs * c;
}

Shell Shell::with_index(long n) const
{
    auto d = std::make_shared<Data>(*d_);
    d->n = n;
    return Shell(std::shared_ptr<const Data>(std::move(d)));
}

OneChannelOperator::OneChannelOperator(std::vector<Shell> shells, Geometry g, long first)
    : shells_(std::move(shells)), geometry_(g), first_(first)
{
    require(!shells_.empty(), "operator needs at least one shell");
    require(g == Geometry::full || first == 1, "half-line operators start at shell 1");
    require(g == Geometry::half || first <= 1, "full-line operators must contain shell 1");
    for (size_t k = 0; k < shells_.size(); ++k)
        require(shells_[k].index() == first + static_cast<long>(k),
                "shell indices must be consecutive");
}

OneChannelOperator OneChannelOperator::generate(const ShellGenerator& gen, long first, long last,
                                                Geometry g)
{
    std::vector<Shell> s;
    s.reserve(static_cast<size_t>(last - first + 1));
    for (long n = first; n <= last; ++n)
        s.push_back(gen(n));
    return OneChannelOperator(std::move(s), g, first);
}

const Shell& OneChannelOperator::shell(long n) const
{
    if (!has(n))
        throw ValidationError("shell " + std::to_string(n) + " not materialized");
    return shells_[static_cast<size_t>(n - first_)];
}

DenseTruncation assemble_window(const OneChannelOperator& op, long lo, long hi, cplx c)
{
    require(lo <= hi && op.has(lo) && op.has(hi), "truncation window outside materialized shells");
    DenseTruncation t;
    t.first = lo;
    t.last = hi;
    t.c = c;
    Eigen::Index dim = 0;
    for (long n = lo; n <= hi; ++n) {
        t.offsets.push_back(dim);
        dim += op.shell(n).size();
    }
    t.H = CMat::Zero(dim, dim);
    for (long n = lo; n <= hi; ++n) {
        const Shell& s = op.shell(n);
        const auto o = t.offset(n);
        t.H.block(o, o, s.size(), s.size()) = s.V();
        if (n > lo) {
            const Shell& p = op.shell(n - 1);
            CMat D = -s.a() * s.upsilon() * p.phi().adjoint();
            t.H.block(o, t.offset(n - 1), s.size(), p.size()) = D;
            t.H.block(t.offset(n - 1), o, p.size(), s.size()) = D.adjoint();
        }
    }
    if (c != 0.0) {
        const Shell& s = op.shell(hi);
        const auto o = t.offset(hi);
        t.H.block(o, o, s.size(), s.size()) -= c * s.phi() * s.phi().adjoint();
    }
    t.hermitian = c.imag() == 0;
    return t;
}

DenseTruncation assemble_dense(const OneChannelOperator& op, long N, cplx c, std::optional<double> b)
{
    DenseTruncation t = assemble_window(op, 1, N, c);
    if (b) {
        const Shell& s = op.shell(1);
        t.H.topLeftCorner(s.size(), s.size()) -= *b * s.a() * s.a() * s.upsilon() * s.upsilon().adjoint();
    }
    return t;
}

double BlockVector::norm() const
{
    double s = 0;
    for (const auto& b : blocks)
        s += b.squaredNorm();
    return std::sqrt(s);
}

CVec BlockVector::flatten() const
{
    Eigen::Index dim = 0;
    for (const auto& b : blocks)
        dim += b.size();
    CVec out(dim);
    Eigen::Index o = 0;
    for (const auto& b : blocks) {
        out.segment(o, b.size()) = b;
        o += b.size();
    }
    return out;
}

BlockVector zero_blocks(const OneChannelOperator& op, long lo, long hi)
{
    BlockVector v;
    v.first = lo;
    for (long n = lo; n <= hi; ++n)
        v.blocks.push_back(CVec::Zero(op.shell(n).size()));
    return v;
}

BlockVector unflatten(const OneChannelOperator& op, long lo, const CVec& v)
{
    BlockVector out;
    out.first = lo;
    Eigen::Index o = 0;
    for (long n = lo; o < v.size(); ++n) {
        const int s = op.shell(n).size();
        require(o + s <= v.size(), "vector length does not match shell sizes");
        out.blocks.push_back(v.segment(o, s));
        o += s;
    }
    return out;
}

BlockVector apply_operator(const OneChannelOperator& op, const BlockVector& psi)
{
    BlockVector out;
    out.first = psi.first;
    for (long n = psi.first; n <= psi.last(); ++n) {
        const Shell& s = op.shell(n);
        require(psi.at(n).size() == s.size(), "block size mismatch at shell " + std::to_string(n));
        CVec r = s.V() * psi.at(n);
        if (n + 1 <= psi.last()) {
            const Shell& nx = op.shell(n + 1);
            r -= nx.a() * s.phi() * nx.upsilon().dot(psi.at(n + 1));
        }
        if (n - 1 >= psi.first) {
            const Shell& pv = op.shell(n - 1);
            r -= s.a() * s.upsilon() * pv.phi().dot(psi.at(n - 1));
        }
        out.blocks.push_back(std::move(r));
    }
    return out;
}

SelfAdjointness check_self_adjointness(const OneChannelOperator& op, long n_max, double threshold,
                                       double min_slope)
{
    SelfAdjointness r;
    // Partial sums S(n) and the slope of S against log n over the last decade.
    auto side = [&](int dir, double& sum, double& slope, bool& met) {
        std::vector<double> partial;
        for (long k = 2; k <= n_max; ++k) {
            long n = dir > 0 ? k : 2 - k;  // n = 2,3,... or 0,-1,...
            if (!op.has(n))
                break;
            sum += 1.0 / std::abs(op.shell(n).a());
            partial.push_back(sum);
        }
        const long len = static_cast<long>(partial.size());
        if (len >= 10) {
            const long k0 = std::max<long>(1, len / 10);
            slope = (partial[len - 1] - partial[k0 - 1]) / std::log(double(len + 1) / double(k0 + 1));
        }
        met = len > 0 && sum >= threshold && slope >= min_slope;
    };
    side(+1, r.sum_plus, r.slope_plus, r.met_plus);
    if (op.geometry() == Geometry::full) {
        side(-1, r.sum_minus, r.slope_minus, r.met_minus);
        r.met = r.met_plus && r.met_minus;
    } else {
        r.met = r.met_plus;
    }
    r.verdict = r.met ? "sufficient-condition-met" : "not-met";
    return r;
}

CMat cyclic_subspace(const CMat& V, const CVec& v, double tol)
{
    const double scale = std::max(1.0, V.cwiseAbs().maxCoeff() * std::sqrt(double(V.rows())));
    const auto s = V.rows();
    CMat Q(s, 0);
    CVec q = v / v.norm();
    for (Eigen::Index k = 0; k < s; ++k) {
        Q.conservativeResize(Eigen::NoChange, k + 1);
        Q.col(k) = q;
        CVec w = V * q;
        for (int pass = 0; pass < 2; ++pass)
            w -= Q * (Q.adjoint() * w);
        const double nw = w.norm();
        if (nw <= tol * scale)
            break;
        q = w / nw;
    }
    return Q;
}

namespace {

CMat orthonormal_span(const CMat& A, double tol)
{
    Eigen::JacobiSVD<CMat> svd(A, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    Eigen::Index r = 0;
    while (r < sv.size() && sv(r) > tol * std::max(1.0, sv(0)))
        ++r;
    return svd.matrixU().leftCols(r);
}

}  // namespace

CyclicSubspaces cyclic_subspaces(const Shell& s, double tol)
{
    CyclicSubspaces c;
    c.tol = tol;
    c.W = cyclic_subspace(s.V(), s.upsilon(), tol);
    c.Wt = cyclic_subspace(s.V(), s.phi(), tol);
    CMat both(s.size(), c.W.cols() + c.Wt.cols());
    both << c.W, c.Wt;
    c.Vspan = orthonormal_span(both, std::sqrt(tol));
    return c;
}

bool channel_broken(const Shell& s, double tol)
{
    CMat W = cyclic_subspace(s.V(), s.upsilon(), tol);
    return (W.adjoint() * s.phi()).norm() <= std::sqrt(tol);
}

RankOneFactor factor_rank_one(const CMat& D, double tol)
{
    Eigen::JacobiSVD<CMat> svd(D, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0)
        throw ValidationError("coupling block is zero");
    RankOneFactor f;
    f.ratio = sv.size() > 1 ? sv(1) / sv(0) : 0.0;
    if (f.ratio > tol)
        throw NotOneChannel(f.ratio);
    CVec u = svd.matrixU().col(0);
    CVec v = svd.matrixV().col(0);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    const cplx ph = std::polar(1.0, -std::arg(v(imax)));
    f.phi = v * ph;
    f.phi(imax) = std::abs(f.phi(imax));
    f.upsilon = u * ph;
    f.a = -sv(0);
    return f;
}

}  // namespace ocs
