#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "ocs/errors.hpp"
#include "ocs/models.hpp"
#include "ocs/spectral.hpp"

using namespace ocs;

namespace {

// CDF of the density sqrt(4 - x^2) / (2π) on [-2, 2]
double semicircle_cdf(double x)
{
    return 0.5 + x * std::sqrt(4 - x * x) / (4 * kPi) + std::asin(x / 2) / kPi;
}

std::vector<double> linspace(double a, double b, int n)
{
    std::vector<double> g(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        g[static_cast<size_t>(i)] = a + (b - a) * i / (n - 1);
    return g;
}

Shell pm_shell(long n)
{
    CMat V = CMat::Zero(2, 2);
    V(0, 0) = 1;
    V(1, 1) = -1;
    CVec e(2);
    e << 1, 1;
    e /= std::sqrt(2.0);
    return Shell(n, V, -1, e, e);
}

// Free chain with the two-site shell inserted at position `at`.
OneChannelOperator inserted_chain(long N, long at)
{
    std::vector<Shell> shells;
    for (long n = 1; n <= N; ++n)
        shells.push_back(n == at ? pm_shell(n) : scalar_shell(n, 0.0, -1));
    return OneChannelOperator(shells);
}

// Five shells with an eigenfunction at λ = 0 on shells 2..4.
OneChannelOperator matched_five(double v3 = 1.0 / 6)
{
    std::vector<Shell> s;
    s.push_back(random_shell(3, 1, {2, 3, -1.0, true}));
    s.push_back(pm_shell(2));
    s.push_back(scalar_shell(3, v3, -1));
    CMat V = CMat::Zero(3, 3);
    V(0, 0) = 1;
    V(1, 1) = 2;
    V(2, 2) = -1;
    CVec u(3), p(3);
    u << 1, 1, 1;
    p << 1, 0, 1;
    s.push_back(Shell(4, V, -1, p.normalized(), u.normalized()));
    s.push_back(random_shell(3, 5, {2, 3, -1.0, true}));
    return OneChannelOperator(s);
}

}  // namespace

TEST_CASE("eigen histogram masses")
{
    auto one = jacobi({0.7}, {-1});
    auto h = eigen_histogram(one, 1, 0.0, CVec::Ones(1));
    REQUIRE(h.point_masses.size() == 1);
    CHECK(h.point_masses[0].lambda == doctest::Approx(0.7));
    CHECK(h.point_masses[0].weight == doctest::Approx(1.0));

    auto op = random_operator(6, 6);
    auto t = assemble_dense(op, 6, 0.3);
    std::mt19937_64 rng(6);
    auto e = eigen_histogram(t, {oracle::random_unit(static_cast<int>(t.dim()), rng)});
    CHECK(std::abs(interval_mass(e, -1e9, 1e9) - 1.0) < 1e-10);

    auto chain = free_jacobi(800);
    auto f = eigen_histogram(chain, 800, 0.0, shell_vector(assemble_dense(chain, 1), 1, CVec::Ones(1)));
    double worst = 0;
    for (double x : linspace(-1.8, 1.8, 181))
        worst = std::max(worst, std::abs(cdf(f, x) - semicircle_cdf(x)));
    CHECK(worst < 0.01);
}

TEST_CASE("half-line density of the free chain")
{
    auto chain = free_jacobi(400);
    HalflineOptions o;
    o.n_lo = 200;
    o.n_hi = 400;
    o.threads = 2;
    auto e = halfline_density(chain, linspace(-1, 1, 401), o);
    const double exact = std::sqrt(3.0) / (2 * kPi) + 1.0 / 3;
    CHECK(exact == doctest::Approx(0.6090).epsilon(1e-4));
    CHECK(std::abs(interval_mass(e, -1, 1) - exact) < 0.02 * exact);
    for (double d : e.density)
        CHECK(d >= 0);

    auto out = halfline_density(chain, {2.5, 3.0}, o);
    CHECK(out.density[0] < 1e-30);
    CHECK(out.point_masses.empty());
}

TEST_CASE("point mass from an inserted shell")
{
    auto op = inserted_chain(400, 2);
    HalflineOptions o;
    o.n_lo = 200;
    o.n_hi = 400;
    auto grid = linspace(-1.5, 1.5, 601);
    auto e = halfline_density(op, grid, o);
    REQUIRE(e.point_masses.size() == 1);
    CHECK(std::abs(e.point_masses[0].lambda) < 1e-12);
    CHECK(e.point_masses[0].weight == doctest::Approx(0.5).epsilon(1e-10));

    // dense oracle at the same energy
    auto t = assemble_dense(op, 400);
    auto h = eigen_histogram(t, {shell_vector(t, 1, CVec::Ones(1))});
    CHECK(interval_mass(h, -1e-9, 1e-9) == doctest::Approx(0.5).epsilon(1e-8));

    // coarse interval partition
    auto cuts = linspace(-1.5, 1.4, 11);
    for (size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double a = cuts[k], b = cuts[k + 1];
        CHECK(std::abs(interval_mass(e, a, b) - interval_mass(h, a, b)) < 0.02);
    }

    auto f = wall_eigenfunction(op, 0.0, 1);
    CHECK(f.residual < 1e-12);
    CHECK(f.psi.first == 1);
    CHECK(f.psi.last() == 2);
}

TEST_CASE("full-line density of the free chain")
{
    auto chain = free_jacobi_full(-400, 400);
    FulllineOptions o;
    o.m_lo = o.n_lo = 200;
    o.m_hi = o.n_hi = 400;
    o.threads = 2;
    auto grid = linspace(-1, 1, 201);
    auto e = fullline_density(chain, grid, o);
    // a_1^2 μ_{δ_1} + μ_{δ_0} has density 2 / (π sqrt(4 - λ^2))
    CHECK(std::abs(interval_mass(e, -1, 1) - 2.0 / 3) < 0.03 * 2.0 / 3);
    for (size_t i = 0; i < grid.size(); ++i)
        CHECK(std::abs(e.density[i] - e.density[grid.size() - 1 - i]) <= 1e-9 * e.density[i]);

    FulllineOptions fine = o;
    fine.theta_nodes = 128;
    auto e2 = fullline_density(chain, {-0.7, 0.1, 0.9}, fine);
    auto e1 = fullline_density(chain, {-0.7, 0.1, 0.9}, o);
    for (size_t i = 0; i < 3; ++i)
        CHECK(std::abs(e2.density[i] - e1.density[i]) < 1e-3 * e2.density[i]);

    // dense oracle on a window with Dirichlet ends
    auto t = assemble_window(chain, -399, 400);
    auto h = eigen_histogram(t, {shell_vector(t, 1, -CVec::Ones(1)), shell_vector(t, 0, CVec::Ones(1))});
    CHECK(std::abs(interval_mass(e, -1, 1) - interval_mass(h, -1, 1)) < 0.03 * 2.0 / 3);
}

TEST_CASE("integral criterion")
{
    auto chain = free_jacobi(1000);
    std::vector<long> ns;
    for (long n = 10; n <= 1000; n += 10)
        ns.push_back(n);
    auto in = ac_criterion(chain, 4, -1, 1, ns, 200);
    CHECK(in.verdict == "bounded-like");
    for (double v : in.integrals)
        CHECK(v < 100);
    auto out = ac_criterion(chain, 4, 2.5, 3, ns, 50);
    CHECK(out.verdict == "growing");
    CHECK(out.log_integrals.back() > 100);
    CHECK_THROWS_AS(ac_criterion(chain, 2, -1, 1, ns), ValidationError);
}

TEST_CASE("compactly supported eigenfunction between matched shells")
{
    auto op = matched_five();
    auto f = finite_eigenfunction(op, 0.0, 2, 3);
    CHECK(f.residual < 1e-9);
    CHECK(f.psi.first == 2);
    CHECK(f.psi.last() == 4);
    CHECK(f.case_left == 1);
    CHECK(f.case_right == 1);
    // dense oracle: Ψ lies in the kernel of the full five-shell matrix
    auto t = assemble_dense(op, 5);
    CVec v = CVec::Zero(t.dim());
    for (long n = 2; n <= 4; ++n)
        v.segment(t.offset(n), f.psi.at(n).size()) = f.psi.at(n);
    Eigen::SelfAdjointEigenSolver<CMat> es(t.H);
    double in_kernel = 0;
    for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j)
        if (std::abs(es.eigenvalues()(j)) < 1e-9)
            in_kernel += std::norm(es.eigenvectors().col(j).dot(v));
    CHECK(in_kernel == doctest::Approx(1.0).epsilon(1e-9));

    auto all = finite_eigenfunctions(op, 1, 5);
    bool found = false;
    for (const auto& g : all)
        found = found || (std::abs(g.lambda) < 1e-12 && g.l == 2 && g.m == 3);
    CHECK(found);

    CHECK_THROWS_AS(finite_eigenfunction(matched_five(0.3), 0.0, 2, 3), ColinearityFailed);
    CHECK_THROWS_AS(finite_eigenfunction(op, 0.37, 2, 3), NotSingularHere);
}

TEST_CASE("generic operators have no compactly supported eigenfunctions")
{
    RandomShellOptions ro;
    ro.real = true;
    auto op = random_operator(99, 8, ro);
    CHECK(finite_eigenfunctions(op, 1, 8).empty());
}

TEST_CASE("spectral weights of a shell vector")
{
    auto op = random_operator(41, 7);
    const long N = 7;
    auto t = assemble_dense(op, N);
    Eigen::SelfAdjointEigenSolver<CMat> es(t.H);
    std::mt19937_64 rng(41);
    for (long n : {2L, 4L, 6L}) {
        CVec phi = oracle::random_unit(op.shell(n).size(), rng);
        for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j) {
            const double lambda = es.eigenvalues()(j);
            const CVec psi = es.eigenvectors().col(j);
            const cplx x1 = op.shell(1).upsilon().dot(psi.segment(t.offset(1), op.shell(1).size()));
            const cplx left = phi.dot(psi.segment(t.offset(n), phi.size()));
            auto p = propagate(op, lambda, u_start(op), n);
            const CVec pu = solution_vector(op.shell(n), lambda, p.at(n - 1).value(), p.at(n).value());
            CHECK(std::abs(std::norm(left) - std::norm(x1) * std::norm(phi.dot(pu))) < 1e-9);
        }
    }

    std::vector<Shell> shells;
    for (long k = -4; k <= 5; ++k)
        shells.push_back(random_shell(42, k));
    OneChannelOperator full(shells, Geometry::full, -4);
    auto w = assemble_window(full, -4, 5);
    Eigen::SelfAdjointEigenSolver<CMat> fs(w.H);
    const double a1 = full.shell(1).a();
    for (long n : {-3L, 0L, 3L}) {
        CVec phi = oracle::random_unit(full.shell(n).size(), rng);
        for (Eigen::Index j = 0; j < fs.eigenvalues().size(); ++j) {
            const double lambda = fs.eigenvalues()(j);
            const CVec psi = fs.eigenvectors().col(j);
            const cplx x1 = full.shell(1).upsilon().dot(psi.segment(w.offset(1), full.shell(1).size()));
            const cplx xt0 = full.shell(0).phi().dot(psi.segment(w.offset(0), full.shell(0).size()));
            const cplx left = phi.dot(psi.segment(w.offset(n), phi.size()));
            auto vec_of = [&](const TransferState& st) {
                const long to = n >= 1 ? n : n - 1;
                auto p = propagate(full, lambda, st, to);
                return solution_vector(full.shell(n), lambda, p.at(n - 1).value(), p.at(n).value());
            };
            const double bound = (std::norm(x1) + a1 * a1 * std::norm(xt0)) *
                                 (std::norm(phi.dot(vec_of(u_start(full)))) +
                                  std::norm(phi.dot(vec_of(w_start(full)))));
            CHECK(std::norm(left) <= bound * (1 + 1e-9) + 1e-14);
        }
    }
}
