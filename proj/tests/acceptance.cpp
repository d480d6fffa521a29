// Acceptance checks 1-9, one PASS/FAIL line each.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

#include "oracles.hpp"
#include "ocs/anderson.hpp"
#include "ocs/errors.hpp"
#include "ocs/greens.hpp"
#include "ocs/models.hpp"
#include "ocs/spectral.hpp"
#include "ocs/transfer.hpp"

using namespace ocs;

namespace {

int threads()
{
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            if (pass)
                detail << " first failure: " << what << ";";
            pass = false;
        }
    }
};

double block_err(const CMat& a, const CMat& b)
{
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

// Resolvent blocks and scalar overlaps against dense inversion.
void green_oracle(Outcome& o)
{
    std::mt19937_64 g(101);
    std::uniform_real_distribution<double> re(-2.5, 2.5), im(0.1, 2), cc(-1, 1);
    std::uniform_int_distribution<long> N_of(2, 12);
    double worst = 0;
    long checks = 0;
    for (std::uint64_t k = 0; k < 50; ++k) {
        RandomShellOptions ro;
        ro.s_max = 5;
        const long N = N_of(g);
        const auto op = random_operator(1000 + k, N, ro);
        const cplx z(re(g), im(g));
        const double c = k % 2 ? cc(g) : 0.0;
        const CMat R = oracle::dense_resolvent(assemble_dense(op, N, c).H, z);
        const auto t = assemble_dense(op, N, c);
        for (long m = 1; m <= N; ++m)
            for (long n = 1; n <= N; ++n) {
                const CMat ref =
                    R.block(t.offset(m), t.offset(n), op.shell(m).size(), op.shell(n).size());
                const double e = block_err(resolvent_block(op, N, c, z, m, n), ref);
                worst = std::max(worst, e);
                ++checks;
                for (auto l : {Mode::upsilon, Mode::phi})
                    for (auto r : {Mode::upsilon, Mode::phi}) {
                        const CVec& x = l == Mode::phi ? op.shell(m).phi() : op.shell(m).upsilon();
                        const CVec& y = r == Mode::phi ? op.shell(n).phi() : op.shell(n).upsilon();
                        const cplx want = x.dot(ref * y);
                        const double eo = oracle::rel(resolvent_overlap(op, N, c, z, m, l, n, r), want);
                        worst = std::max(worst, eo);
                        ++checks;
                    }
            }
    }
    o.require(worst <= 1e-8, "relative error above 1e-8");
    o.detail << " 50 operators, " << checks << " comparisons, max rel error " << worst;
}

double phase_spread(const Mat2& T)
{
    cplx ref = 0;
    for (int i = 0; i < 4; ++i)
        if (std::abs(T(i)) > std::abs(ref))
            ref = T(i);
    double worst = 0;
    for (int i = 0; i < 4; ++i)
        if (std::abs(T(i)) > 1e-12 * std::abs(ref))
            worst = std::max(worst, std::abs((T(i) / ref).imag()) / std::abs(T(i) / ref));
    return worst;
}

// Determinant, conjugate-solution ratio, window balance and real phase.
void identities(Outcome& o)
{
    std::mt19937_64 g(202);
    std::uniform_real_distribution<double> re(-2, 2), im(0.1, 2);
    double e_det = 0, e_ratio = 0, e_wr = 0, e_sum = 0, e_phase = 0;
    int n_det = 0, n_ratio = 0, n_sum = 0, n_phase = 0;
    for (std::uint64_t k = 0; n_det < 100; ++k) {
        const Shell s = random_shell(2000 + k, 1 + long(k));
        const cplx z(re(g), im(g));
        const auto d = oracle::dense_g(s.V(), s.upsilon(), s.phi(), z);
        e_det = std::max(e_det, oracle::rel(transfer_matrix(s, z).det(), d.gamma / d.beta));
        ++n_det;
    }
    for (std::uint64_t k = 0; n_ratio < 100; ++k) {
        const long N = 10;
        const auto op = random_operator(3000 + k, N);
        const cplx z(re(g), im(g));
        const auto uz = propagate(op, z, u_start(op), N);
        const auto ub = propagate(op, std::conj(z), u_start(op), N);
        const auto wz = propagate(op, z, w_start(op), N);
        // det T_{0,n} as the product of shell determinants; the entries of
        // the product itself lose |T|^2 eps to cancellation
        cplx det = 1;
        for (long n = 0; n < N && n_ratio < 100; ++n) {
            if (n > 0)
                det *= transfer_matrix(op.shell(n), z).det();
            if (n % 3)
                continue;
            ++n_ratio;
            const double a = op.shell(n + 1).a();
            const cplx u_next = uz.at(n).value()(0) / a;
            const cplx ub_next = std::conj(ub.at(n).value()(0) / a);
            e_ratio = std::max(e_ratio, oracle::rel(u_next / ub_next, det));
            // a difference of two terms of size |T|^2, measured against them
            const cplx w_next = wz.at(n).value()(0) / a;
            const cplx t1 = a * ub_next * wz.at(n).value()(1), t2 = a * w_next * std::conj(ub.at(n).value()(1));
            e_wr = std::max(e_wr, std::abs(t1 - t2 - 1.0) / std::max({1.0, std::abs(t1), std::abs(t2)}));
        }
    }
    for (std::uint64_t k = 0; n_sum < 100; ++k, ++n_sum) {
        const auto op = random_operator(4000 + k, 12);
        const cplx z(re(g), im(g));
        TransferState st;
        st.vec = Vec2(cplx(re(g), re(g)), cplx(re(g), re(g)));
        st.n = 1;
        const auto path = propagate(op, z, st, 12);
        const long m = 2 + long(k % 4), n = m + 2 + long(k % 6);
        double sum = 0;
        for (long j = m; j <= n; ++j)
            sum += solution_vector(op.shell(j), z, path.at(j - 1).value(), path.at(j).value()).squaredNorm();
        const Vec2 hi = path.at(n).value(), lo = path.at(m - 1).value();
        const double rhs = (std::conj(hi(0)) * hi(1) - std::conj(lo(0)) * lo(1)).imag();
        e_sum = std::max(e_sum, std::abs(z.imag() * sum - rhs) / std::abs(rhs));
    }
    for (std::uint64_t k = 0; n_phase < 100; ++k) {
        const Shell s = random_shell(5000 + k, 1 + long(k));
        try {
            e_phase = std::max(e_phase, phase_spread(transfer_matrix(s, re(g)).entries));
            ++n_phase;
        } catch (const ChannelSingular&) {
        }
    }
    o.require(e_det <= 1e-9, "determinant");
    o.require(e_ratio <= 1e-9, "conjugate-solution ratio");
    o.require(e_wr <= 1e-9, "mixed Wronskian");
    o.require(e_sum <= 1e-9, "window balance");
    o.require(e_phase <= 1e-9, "real common phase");
    o.detail << " det " << e_det << ", ratio " << e_ratio << ", wronskian " << e_wr << ", balance " << e_sum
             << ", phase " << e_phase << " (100 samples each)";
}

void jacobi_reduction(Outcome& o)
{
    const auto op = free_jacobi(400);
    const cplx want(0, (std::sqrt(5.0) - 1) / 2);
    const double e = std::abs(m_function(op, 200, 0.0, cplx(0, 1), MMethod::transfer).value - want);
    std::vector<double> grid;
    for (int i = 0; i <= 500; ++i)
        grid.push_back(-2.5 + 5.0 * i / 500);
    HalflineOptions ho;
    ho.n_lo = 200;
    ho.n_hi = 400;
    ho.threads = threads();
    const double mass = interval_mass(halfline_density(op, grid, ho), -1, 1);
    const double rel = std::abs(mass - 0.6090) / 0.6090;
    o.require(e <= 1e-6, "m(i) at N = 200");
    o.require(rel <= 0.02, "mass of [-1, 1]");
    o.detail << " |m_200(i) - i(sqrt5-1)/2| = " << e << ", mass[-1,1] = " << mass << " (rel " << rel << ")";
}

void weyl_diagnostics(Outcome& o)
{
    const cplx z(0, 1);
    double sym = 0;
    int bad_nest = 0;
    for (std::uint64_t k = 0; k < 20; ++k) {
        const auto op = random_operator(6000 + k, 30);
        const auto up = weyl_sequence(op, z, 30);
        const auto dn = weyl_sequence(op, std::conj(z), 30);
        for (size_t n = 0; n < up.size(); ++n) {
            sym = std::max(sym, std::abs(up[n].radius - dn[n].radius) / up[n].radius);
            if (n > 0 && !(up[n].radius < up[n - 1].radius &&
                           std::abs(up[n].center - up[n - 1].center) + up[n].radius <=
                               up[n - 1].radius * (1 + 1e-9) + 1e-12 * (1 + std::abs(up[n].center))))
                ++bad_nest;
        }
    }
    o.require(bad_nest == 0, "radii decrease and circles nest");
    o.require(sym <= 1e-9, "radius symmetry in z");
    std::ostringstream lp;
    std::vector<OneChannelOperator> unit = {free_jacobi(200)};
    for (std::uint64_t k = 0; k < 3; ++k) {
        RandomShellOptions ro;
        ro.a = -1;
        unit.push_back(random_operator(7000 + k, 200, ro));
    }
    for (const auto& op : unit) {
        const auto d = limit_point_diagnostic(op, z, 200);
        const double r = d.circles.back().radius;
        o.require(r < 1e-8 && d.verdict == "limit-point-like", "a_n = -1 limit point");
        lp << " " << r;
    }
    o.detail << " 20 random models nest (" << bad_nest << " violations), symmetry " << sym
             << ", a_n = -1 radii at 200:" << lp.str();
}

void antitree_limits(Outcome& o)
{
    const auto d0 = DisorderSpec::delta(0);
    double e = 0;
    for (int i = 0; i <= 400; ++i) {
        const double l = -3 + 6.0 * i / 400;
        if (stretched_domain(d0, l) == Domain::outside)
            continue;
        e = std::max(e, std::abs(limit_transfer_stretched(d0, l).trace - (l * l - 2)));
    }
    std::vector<double> grid;
    for (int i = 0; i < 1000; ++i)
        grid.push_back(-2.5 + 5.0 * i / 999);
    const IntervalSet I = interval_A(hat_pattern(d0, nullptr), grid);
    const double r2 = std::sqrt(2.0);
    const std::vector<double> want = {-2, -r2, -r2, -1, -1, 0, 0, 1, 1, r2, r2, 2};
    double ee = I.intervals.size() * 2 == want.size() ? 0 : INFINITY;
    for (size_t i = 0; std::isfinite(ee) && i < I.intervals.size(); ++i) {
        ee = std::max(ee, std::abs(I.intervals[i].first - want[2 * i]));
        ee = std::max(ee, std::abs(I.intervals[i].second - want[2 * i + 1]));
    }
    o.require(e <= 1e-12, "stretched trace");
    o.require(ee <= 1e-6, "hat intervals");
    o.detail << " trace error " << e << ", " << I.intervals.size() << " hat intervals, endpoint error " << ee;
}

void sampler_oracle(Outcome& o)
{
    std::mt19937_64 g(909);
    std::uniform_real_distribution<double> lam(-2.5, 2.5);
    const auto nu = DisorderSpec::uniform(-0.25, 0.35);
    double es = 0, ep = 0;
    int ns = 0, np = 0;
    for (std::uint64_t t = 0; ns < 200; ++t) {
        CounterRng rng(derive_seed(31, {t}));
        const StretchedDraw d = draw_stretched(nu, 1 + long(t % 8), rng);
        const double l = lam(g);
        if (stretched_domain(nu, l) == Domain::outside)
            continue;
        const ShellSample s = stretched_sample(d, l);
        const Shell sh = stretched_shell(d, 1);
        const auto r = oracle::dense_g(sh.V(), sh.upsilon(), sh.phi(), l);
        for (double x : {oracle::rel(s.alpha, r.alpha), oracle::rel(s.beta, r.beta), oracle::rel(s.beta, r.gamma),
                         oracle::rel(s.delta, r.delta)})
            es = std::max(es, x);
        ++ns;
    }
    // Σr per shell up to 24 with a random orthogonal coupling
    std::mt19937_64 h(4);
    std::normal_distribution<double> gauss;
    RMat A(5, 5);
    for (int i = 0; i < 25; ++i)
        A.data()[i] = gauss(h);
    PartialAntitreeSpec p;
    p.k1 = 1;
    p.k2 = 2;
    p.k3 = 2;
    p.O = Eigen::HouseholderQR<RMat>(A).householderQ() * RMat::Identity(5, 5);
    p.a_diag = RVec::Random(5);
    p.r = [](long m) { return m % 3 == 1 ? 4L : 2L * (1 + m % 5); };
    p.disorder = DisorderSpec::two_point(-0.5, 0.4);
    p.validate(8);
    const PartialAntitreeSpec hat = hat_pattern(nu, [](long m) { return 2 * (1 + m % 4); });
    hat.validate(8);
    for (std::uint64_t t = 0; np < 200; ++t) {
        const PartialAntitreeSpec& q = t % 2 ? p : hat;
        const long n = 1 + long(t % 8);
        if (q.shell_size(n) > 24)
            continue;
        CounterRng rng(derive_seed(32, {t}));
        const auto w = draw_partial(q, n, rng);
        const Shell sh = partial_shell(q, n, w);
        double l = lam(g);
        if (std::abs(l) < 0.3)
            l += 0.6;
        ShellSample s;
        try {
            s = partial_sample(q, n, w, l);
        } catch (const NumericalError&) {
            continue;
        }
        const auto r = oracle::dense_g(sh.V(), sh.upsilon(), sh.phi(), l);
        for (double x : {oracle::rel(s.alpha, r.alpha), oracle::rel(s.beta, r.beta), oracle::rel(s.delta, r.delta)})
            ep = std::max(ep, x);
        ++np;
    }
    o.require(es <= 1e-10, "stretched");
    o.require(ep <= 1e-10, "partial");
    o.detail << " stretched " << ns << " draws max rel " << es << ", partial " << np << " draws max rel " << ep;
}

void convergence_rates(Outcome& o)
{
    const auto nu = DisorderSpec::two_point(-0.2, 0.2);
    std::vector<double> grid;
    for (int i = 0; i < 2000; ++i)
        grid.push_back(-2.5 + 5.0 * i / 1999);
    const IntervalSet I = interval_S(nu, grid);
    std::vector<double> energies;
    for (size_t i = 0; i < I.intervals.size() && energies.size() < 3; ++i)
        energies.push_back(0.5 * (I.intervals[i].first + I.intervals[i].second));
    o.require(energies.size() == 3, "three energies inside the elliptic set");
    for (size_t e = 0; e < energies.size(); ++e) {
        const double l = energies[e];
        const LimitTransfer L = limit_transfer_stretched(nu, l);
        auto sampler = [&](long size, CounterRng& rng) {
            return stretched_sample(draw_stretched(nu, size, rng), l).beta;
        };
        const WellBalancedReport r =
            well_balanced_check(sampler, L.beta, {100, 1000, 10000}, 2, 10000, derive_seed(77, {e}), threads());
        const double s2 = r.slopes[1], s4 = r.slopes[3];
        o.require(std::abs(s2 + 1) <= 0.15 && std::abs(s4 + 2) <= 0.15, "slope at " + std::to_string(l));
        o.detail << " lambda " << l << ": k=2 " << s2 << ", k=4 " << s4 << ";";
    }
}

ShellTransfer counts_realization(const DisorderSpec& nu, long n_max, std::uint64_t seed)
{
    std::vector<StretchedCounts> counts;
    for (long n = 1; n <= n_max; ++n) {
        CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
        counts.push_back(draw_stretched_counts(nu, n * n * n, rng));
    }
    return [counts](long n, double lambda) {
        TransferMatrix t;
        t.entries = stretched_sample(counts.at(static_cast<size_t>(n - 1)), lambda).T.cast<cplx>();
        t.z = lambda;
        t.from = n - 1;
        t.to = n;
        return t;
    };
}

void moment_bound(Outcome& o)
{
    const auto nu = DisorderSpec::two_point(-0.2, 0.2);
    const double l = 0.5;
    const LimitTransfer L = limit_transfer_stretched(nu, l);
    o.require(L.elliptic, "elliptic limit");
    auto noise = [&](long n, CounterRng& rng) {
        return (stretched_sample(draw_stretched_counts(nu, n * n * n, rng), l).T - L.T).eval();
    };
    const MomentBoundReport r = moment_bound_check(L.T, noise, "stretched, s_n = n^3", 300, 10000, 88, threads());
    o.require(r.pass, "fourth moment below the bound");
    const std::vector<long> ns = log_spaced(300);
    const AcCriterion ac = ac_criterion(counts_realization(nu, 300, 99), 4, 0.4, 0.6, ns, 200);
    o.require(ac.verdict == "bounded-like", "integrals bounded");
    o.detail << " |tr T| " << std::abs(L.trace) << ", max E|T|^4 " << r.max_estimate << " (+3se) vs bound "
             << r.bound << "; integrals over [0.4, 0.6]: I_10 " << ac.integrals[std::min<size_t>(ac.integrals.size() - 1, 9)]
             << ", I_300 " << ac.integrals.back() << ", verdict " << ac.verdict;
}

OneChannelOperator matched_instance()
{
    CMat V2 = CMat::Zero(2, 2), V4 = CMat::Zero(3, 3);
    V2(0, 0) = 1;
    V2(1, 1) = -1;
    V4.diagonal() << 1, 2, -1;
    CVec e(2), u(3), p(3);
    e << 1, 1;
    u << 1, 1, 1;
    p << 1, 0, 1;
    std::vector<Shell> s;
    s.push_back(scalar_shell(1, 0.3, -1));
    s.push_back(Shell(2, V2, -1, e.normalized(), e.normalized()));
    s.push_back(scalar_shell(3, 1.0 / 6, -1));
    s.push_back(Shell(4, V4, -1, p.normalized(), u.normalized()));
    s.push_back(scalar_shell(5, -0.4, -1));
    return OneChannelOperator(s);
}

void compact_eigenfunctions(Outcome& o)
{
    const auto op = matched_instance();
    const auto efs = finite_eigenfunctions(op, 1, 5);
    o.require(efs.size() == 1, "exactly one eigenfunction");
    if (efs.empty())
        return;
    const auto& f = efs.front();
    o.require(f.residual <= 1e-9, "residual");
    const auto t = assemble_dense(op, 5);
    Eigen::SelfAdjointEigenSolver<CMat> es(t.H);
    long mult = 0;
    double overlap = 0;
    CVec v = CVec::Zero(t.dim());
    for (long n = f.psi.first; n <= f.psi.last(); ++n)
        v.segment(t.offset(n), f.psi.at(n).size()) = f.psi.at(n);
    v.normalize();
    for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j)
        if (std::abs(es.eigenvalues()(j) - f.lambda) < 1e-9) {
            ++mult;
            overlap += std::norm(es.eigenvectors().col(j).dot(v));
        }
    o.require(mult == 1, "dense multiplicity");
    o.require(std::abs(overlap - 1) < 1e-9, "dense eigenvector");
    o.detail << " lambda " << f.lambda << " on shells " << f.l << ".." << f.m + 1 << ", residual " << f.residual
             << ", dense multiplicity " << mult << ", overlap " << overlap;
}

}  // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> checks = {
        {"resolvent oracle", green_oracle},
        {"transfer identities", identities},
        {"free Jacobi reduction", jacobi_reduction},
        {"Weyl diagnostics", weyl_diagnostics},
        {"antitree limit formulas", antitree_limits},
        {"shell sampler oracle", sampler_oracle},
        {"convergence rates", convergence_rates},
        {"moment bound", moment_bound},
        {"compactly supported eigenfunctions", compact_eigenfunctions},
    };
    int failed = 0;
    for (size_t i = 0; i < checks.size(); ++i) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            checks[i].second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " exception: " << e.what();
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %zu %s: %s (%.1f s)%s\n", i + 1, checks[i].first, o.pass ? "PASS" : "FAIL", dt,
                    o.detail.str().c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
