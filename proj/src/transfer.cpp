#include "ocs/transfer.hpp"

#include <algorithm>
#include <cmath>

#include "ocs/errors.hpp"

namespace ocs {

namespace {

// Channel data with the nearest relevant eigenvalue cluster split off:
// α = (A + d α^) / d with d = μ - z, and likewise for β, γ, δ.
struct Split {
    const EigenGroup* g = nullptr;
    cplx d = 0;
    cplx ah = 0, bh = 0, gh = 0, dh = 0;
};

Split split(const Shell& s, cplx z)
{
    Split sp;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : s.groups()) {
        if (!g.relevant())
            continue;
        const double dist = std::abs(g.mu - z);
        if (dist < best) {
            best = dist;
            sp.g = &g;
        }
    }
    sp.d = sp.g->mu - z;
    for (const auto& g : s.groups()) {
        if (!g.relevant() || &g == sp.g)
            continue;
        const cplx inv = 1.0 / (g.mu - z);
        sp.ah += g.A * inv;
        sp.bh += g.B * inv;
        sp.gh += std::conj(g.B) * inv;
        sp.dh += g.D * inv;
    }
    return sp;
}

cplx scaled_beta(const Split& sp) { return sp.g->B + sp.d * sp.bh; }
cplx scaled_gamma(const Split& sp) { return std::conj(sp.g->B) + sp.d * sp.gh; }

// Raw entries of T_{z,n}, finite across a removable pole.
Mat2 raw_transfer(const Shell& s, const Split& sp)
{
    const EigenGroup& g = *sp.g;
    const double a = s.a();
    const cplx d = sp.d;
    const cplx bd = scaled_beta(sp);
    const cplx ad = g.A + d * sp.ah;
    const cplx dd = g.D + d * sp.dh;
    cplx num = std::conj(g.B) * sp.bh + g.B * sp.gh - g.D * sp.ah - g.A * sp.dh +
               d * (sp.gh * sp.bh - sp.dh * sp.ah);
    if (!g.removable())
        num += (std::norm(g.B) - g.D * g.A) / d;
    Mat2 T;
    T(0, 0) = d / (a * bd);
    T(0, 1) = -a * ad / bd;
    T(1, 0) = dd / (a * bd);
    T(1, 1) = a * num / bd;
    return T;
}

double max_abs(const Mat2& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

GMatrix g_matrix(const Shell& s, cplx z, double guard)
{
    GMatrix gm;
    gm.z = z;
    gm.n = s.index();
    for (const auto& g : s.groups()) {
        if (!g.relevant())
            continue;
        const cplx d = g.mu - z;
        if (std::abs(d) < guard)
            throw ZTooCloseToSpectrum(g.mu, s.index());
        gm.alpha += g.A / d;
        gm.beta += g.B / d;
        gm.gamma += std::conj(g.B) / d;
        gm.delta += g.D / d;
    }
    return gm;
}

double TransferMatrix::log_norm() const
{
    const double f = entries.squaredNorm();
    const double dt = std::abs(entries.determinant());
    const double s2 = 0.5 * (f + std::sqrt(std::max(0.0, f * f - 4 * dt * dt)));
    return log_scale + 0.5 * std::log(s2);
}

void TransferMatrix::normalize()
{
    const double m = max_abs(entries);
    if (m > 0 && std::isfinite(m)) {
        entries /= m;
        log_scale += std::log(m);
    }
}

TransferMatrix TransferMatrix::inverse() const
{
    const cplx det = entries.determinant();
    if (std::abs(det) <= 1e-14 * entries.squaredNorm())
        throw ChannelSingular("gamma_zero", to);
    TransferMatrix r;
    r.entries << entries(1, 1), -entries(0, 1), -entries(1, 0), entries(0, 0);
    r.entries /= det;
    r.log_scale = -log_scale;
    r.z = z;
    r.from = to;
    r.to = from;
    r.normalize();
    return r;
}

TransferMatrix compose(const TransferMatrix& later, const TransferMatrix& earlier)
{
    TransferMatrix r;
    r.entries = later.entries * earlier.entries;
    r.log_scale = later.log_scale + earlier.log_scale;
    r.z = later.z;
    r.from = earlier.from;
    r.to = later.to;
    r.normalize();
    return r;
}

TransferMatrix transfer_matrix(const Shell& s, cplx z, double guard)
{
    const Split sp = split(s, z);
    if (std::abs(sp.d) < guard) {
        if (sp.g->removable())
            return holomorphic_extension(s, z.real());
        throw ChannelSingular("quotient_spectrum", s.index());
    }
    if (std::abs(scaled_beta(sp) / sp.d) < guard)
        throw ChannelSingular("beta_zero", s.index());
    TransferMatrix t;
    t.entries = raw_transfer(s, sp);
    t.z = z;
    t.from = s.index() - 1;
    t.to = s.index();
    t.normalize();
    return t;
}

TransferMatrix transfer_product(const OneChannelOperator& op, cplx z, long l, long m)
{
    if (l > m)
        return transfer_product(op, z, m, l).inverse();
    TransferMatrix p;
    p.z = z;
    p.from = l;
    p.to = l;
    for (long k = l + 1; k <= m; ++k) {
        TransferMatrix t;
        try {
            t = transfer_matrix(op.shell(k), z);
        } catch (const ChannelSingular& e) {
            throw ChannelSingular(e.kind, k);
        }
        p = compose(t, p);
    }
    return p;
}

namespace {

void renormalize(TransferState& st)
{
    const double m = st.vec.cwiseAbs().maxCoeff();
    if (m > 0 && std::isfinite(m)) {
        st.vec /= m;
        st.log_scale += std::log(m);
    }
}

}  // namespace

SolutionPath propagate(const OneChannelOperator& op, cplx z, const TransferState& start, long to)
{
    SolutionPath path;
    TransferState cur = start;
    renormalize(cur);
    if (to >= start.n) {
        path.first = start.n;
        path.states.push_back(cur);
        for (long k = start.n + 1; k <= to; ++k) {
            const TransferMatrix t = transfer_matrix(op.shell(k), z);
            cur.vec = t.entries * cur.vec;
            cur.log_scale += t.log_scale;
            cur.n = k;
            renormalize(cur);
            path.states.push_back(cur);
        }
    } else {
        std::vector<TransferState> rev{cur};
        for (long k = start.n; k > to; --k) {
            TransferMatrix t = transfer_matrix(op.shell(k), z);
            t = t.inverse();
            cur.vec = t.entries * cur.vec;
            cur.log_scale += t.log_scale;
            cur.n = k - 1;
            renormalize(cur);
            rev.push_back(cur);
        }
        path.first = to;
        path.states.assign(rev.rbegin(), rev.rend());
    }
    return path;
}

TransferState u_start(const OneChannelOperator& op)
{
    TransferState s;
    s.vec << op.shell(1).a(), 0;
    s.n = 0;
    return s;
}

TransferState w_start(const OneChannelOperator& op)
{
    TransferState s;
    s.vec << 0, 1.0 / op.shell(1).a();
    s.n = 0;
    return s;
}

std::string to_string(SingularKind k)
{
    switch (k) {
    case SingularKind::beta_zero: return "beta_zero";
    case SingularKind::gamma_zero: return "gamma_zero";
    case SingularKind::quotient_spectrum: return "quotient_spectrum";
    }
    return "?";
}

cplx beta_value(const Shell& s, cplx z)
{
    const Split sp = split(s, z);
    return scaled_beta(sp) / sp.d;
}

cplx gamma_value(const Shell& s, cplx z)
{
    const Split sp = split(s, z);
    return scaled_gamma(sp) / sp.d;
}

bool in_singular_set(const Shell& s, cplx z, double tol)
{
    const Split sp = split(s, z);
    if (std::abs(sp.d) < tol && !sp.g->removable())
        return true;
    if (std::abs(sp.d) == 0)
        return std::abs(sp.g->B) < tol;
    return std::abs(scaled_beta(sp) / sp.d) < tol || std::abs(scaled_gamma(sp) / sp.d) < tol;
}

namespace {

// Zeros of Σ c_i / (μ_i - z) as finite eigenvalues of the arrowhead pencil
// [[diag μ, 1], [c^T, 0]] - z diag(1, ..., 1, 0), via a shift-invert.
std::vector<SingularPoint> rational_zeros(const std::vector<double>& mu, const std::vector<cplx>& c,
                                          SingularKind kind, const Shell& s)
{
    std::vector<SingularPoint> out;
    const int K = static_cast<int>(mu.size());
    if (K < 2)
        return out;
    CMat A = CMat::Zero(K + 1, K + 1);
    CMat B = CMat::Zero(K + 1, K + 1);
    double lo = mu[0], hi = mu[0], mean = 0;
    for (int i = 0; i < K; ++i) {
        A(i, i) = mu[i];
        A(i, K) = 1;
        A(K, i) = c[i];
        B(i, i) = 1;
        lo = std::min(lo, mu[i]);
        hi = std::max(hi, mu[i]);
        mean += mu[i] / K;
    }
    const cplx sigma(mean, 1.0 + (hi - lo));
    CMat shifted = A - sigma * B;
    Eigen::JacobiSVD<CMat> svd(shifted);
    const auto& sv = svd.singularValues();
    const double cond = sv(0) / sv(sv.size() - 1);
    CMat M = shifted.fullPivLu().solve(B);
    Eigen::ComplexEigenSolver<CMat> es(M, false);
    std::vector<cplx> theta(es.eigenvalues().data(), es.eigenvalues().data() + K + 1);
    std::sort(theta.begin(), theta.end(), [](cplx x, cplx y) { return std::abs(x) > std::abs(y); });
    const double tmax = std::abs(theta[0]);
    for (int k = 0; k < K - 1; ++k) {
        if (std::abs(theta[k]) <= 1e-13 * tmax)
            break;
        // a numerator of lower degree leaves a Jordan block at infinity
        const double far = 1e6 * (1 + std::abs(sigma) + (hi - lo));
        if (std::abs(theta[k]) * far < 1)
            break;
        cplx z = sigma + 1.0 / theta[k];
        for (int it = 0; it < 50; ++it) {
            cplx f = 0, fp = 0;
            for (int i = 0; i < K; ++i) {
                const cplx inv = 1.0 / (mu[i] - z);
                f += c[i] * inv;
                fp += c[i] * inv * inv;
            }
            if (fp == 0.0)
                break;
            const cplx step = f / fp;
            z -= step;
            if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(z)))
                break;
        }
        if (!std::isfinite(std::abs(z)) || std::abs(z - sigma) > far)
            continue;
        SingularPoint p{z, kind, cond > 1e12};
        const cplx val = kind == SingularKind::beta_zero ? beta_value(s, z) : gamma_value(s, z);
        if (!(std::abs(val) <= 1e-8))
            p.ill_conditioned = true;
        out.push_back(p);
    }
    return out;
}

}  // namespace

SingularSet singular_set(const Shell& s, const SearchBox& box)
{
    SingularSet set;
    set.n = s.index();
    std::vector<double> mu;
    std::vector<cplx> cb, cg;
    for (const auto& g : s.groups()) {
        if (!g.relevant())
            continue;
        if (!g.removable())
            set.points.push_back({cplx(g.mu, 0), SingularKind::quotient_spectrum, false});
        if (std::abs(g.B) > 1e-14) {
            mu.push_back(g.mu);
            cb.push_back(g.B);
            cg.push_back(std::conj(g.B));
        }
    }
    set.broken = mu.empty();
    for (auto kind : {SingularKind::beta_zero, SingularKind::gamma_zero})
        for (auto& p : rational_zeros(mu, kind == SingularKind::beta_zero ? cb : cg, kind, s))
            set.points.push_back(p);
    std::vector<SingularPoint> kept;
    for (auto& p : set.points)
        if (box.contains(p.z))
            kept.push_back(p);
    set.points = std::move(kept);
    return set;
}

TransferMatrix holomorphic_extension(const Shell& s, double lambda, double h)
{
    auto at = [&](double eps) { return raw_transfer(s, split(s, cplx(lambda, eps))); };
    const Mat2 t1 = at(h), t2 = at(h / 2), t3 = at(h / 4);
    const Mat2 r1a = 2.0 * t2 - t1;
    const Mat2 r1b = 2.0 * t3 - t2;
    const Mat2 r2 = (4.0 * r1b - r1a) / 3.0;
    const double scale = std::max(1.0, max_abs(r2));
    if (!r2.allFinite() || max_abs(r2 - r1b) > 1e-6 * scale)
        throw ExtensionDiverged("extrapolants of T near " + std::to_string(lambda) + " disagree");
    if (std::abs(r2(0, 0)) > 1e-6 * scale)
        throw ExtensionDiverged("upper-left entry of the extension does not vanish at " +
                                std::to_string(lambda));
    TransferMatrix t;
    t.entries = r2;
    t.entries(0, 0) = 0;
    t.z = lambda;
    t.from = s.index() - 1;
    t.to = s.index();
    t.normalize();
    return t;
}

BoundaryVectors boundary_vectors(const Shell& s, double lambda, double tol)
{
    if (!in_singular_set(s, lambda, tol))
        throw NotSingularHere("energy " + std::to_string(lambda) + " is not exceptional for shell " +
                              std::to_string(s.index()));
    BoundaryVectors b;
    double alpha = 0, delta = 0;
    for (const auto& g : s.groups()) {
        const double d = g.mu - lambda;
        if (g.in_w) {
            if (std::abs(d) < tol)
                b.alpha_infinite = true;
            else
                alpha += g.A / d;
        }
        if (g.in_wt) {
            if (std::abs(d) < tol)
                b.delta_infinite = true;
            else
                delta += g.D / d;
        }
    }
    const double a = s.a();
    if (b.alpha_infinite)
        b.x_minus << 1, 0;
    else
        b.x_minus << a * a * alpha, 1;
    if (b.delta_infinite)
        b.x_plus << 0, 1;
    else
        b.x_plus << 1, delta;
    if (!b.alpha_infinite && !b.delta_infinite)
        b.boundary_case = 1;
    else if (b.alpha_infinite && b.delta_infinite)
        b.boundary_case = 2;
    else if (b.alpha_infinite)
        b.boundary_case = 3;
    else
        b.boundary_case = 4;
    return b;
}

CVec solution_vector(const Shell& s, cplx z, const Vec2& prev, const Vec2& cur)
{
    return s.resolve(z, cur(0) * s.phi() + s.a() * prev(1) * s.upsilon());
}

CVec solution_vector(const Shell& s, cplx z, const TransferState& prev, const TransferState& cur,
                     double* log_scale)
{
    const Vec2 p = std::exp(prev.log_scale - cur.log_scale) * prev.vec;
    *log_scale = cur.log_scale;
    return solution_vector(s, z, p, cur.vec);
}

}  // namespace ocs
