#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "ocs/errors.hpp"
#include "ocs/models.hpp"
#include "ocs/partition.hpp"

using namespace ocs;

TEST_CASE("assemble_dense on the two-site free chain")
{
    auto op = free_jacobi(2);
    auto t0 = assemble_dense(op, 2, 0.0);
    CMat e0(2, 2);
    e0 << 0, 1, 1, 0;
    CHECK((t0.H - e0).norm() == doctest::Approx(0));
    auto t1 = assemble_dense(op, 2, 1.0);
    CMat e1(2, 2);
    e1 << 0, 1, 1, -1;
    CHECK((t1.H - e1).norm() == doctest::Approx(0));
    CHECK(t1.hermitian);
    CHECK_FALSE(assemble_dense(op, 2, cplx(0, 1)).hermitian);
}

TEST_CASE("left boundary parameter modifies the first block")
{
    auto op = random_operator(3, 3);
    auto t = assemble_dense(op, 3, 0.0, 0.7);
    auto t0 = assemble_dense(op, 3, 0.0);
    const Shell& s = op.shell(1);
    CMat diff = t0.H - t.H;
    CMat expect = 0.7 * s.a() * s.a() * s.upsilon() * s.upsilon().adjoint();
    CHECK((diff.topLeftCorner(s.size(), s.size()) - expect).norm() < 1e-14);
}

TEST_CASE("apply_operator on the free chain and on an invariant vector")
{
    auto op = free_jacobi(4);
    BlockVector d1 = zero_blocks(op, 1, 4);
    d1.at(1)(0) = 1;
    auto r = apply_operator(op, d1);
    CHECK(std::abs(r.at(2)(0) - 1.0) < 1e-15);
    CHECK(std::abs(r.at(1)(0)) < 1e-15);
    CHECK(std::abs(r.at(3)(0)) < 1e-15);

    // eigenvector orthogonal to both modes stays in its shell
    CMat V = CMat::Zero(3, 3);
    V(0, 0) = 1;
    V(1, 1) = -1;
    V(2, 2) = 0.25;
    CVec ups = CVec::Zero(3), phi = CVec::Zero(3);
    ups(0) = 1;
    phi(1) = 1;
    OneChannelOperator one({Shell(1, V, -1, phi, ups)});
    BlockVector psi{1, {CVec::Unit(3, 2)}};
    auto out = apply_operator(one, psi);
    CHECK((out.at(1) - 0.25 * CVec::Unit(3, 2)).norm() < 1e-15);
}

TEST_CASE("dense truncation reproduces blockwise application on basis vectors")
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto op = random_operator(seed, 4);
        auto t = assemble_dense(op, 4);
        for (Eigen::Index k = 0; k < t.dim(); ++k) {
            CVec e = CVec::Unit(t.dim(), k);
            auto r = apply_operator(op, unflatten(op, 1, e)).flatten();
            CHECK((r - t.H * e).norm() < 1e-12);
        }
        std::mt19937_64 rng(seed);
        CVec psi = oracle::random_unit(static_cast<int>(t.dim()), rng);
        CHECK((apply_operator(op, unflatten(op, 1, psi)).flatten() - t.H * psi).norm() < 1e-12);
    }
}

TEST_CASE("self-adjointness partial sums")
{
    auto flat = jacobi(std::vector<double>(100, 0.0), std::vector<double>(100, -1.0));
    auto r = check_self_adjointness(flat, 100);
    CHECK(r.sum_plus == doctest::Approx(99));
    CHECK(r.met);

    std::vector<double> v(40, 0.0), geo(40), harm(200);
    for (int n = 1; n <= 40; ++n)
        geo[n - 1] = -std::pow(2.0, n);
    auto g = check_self_adjointness(jacobi(v, geo), 40);
    CHECK(g.sum_plus < 1);
    CHECK_FALSE(g.met);

    for (int n = 1; n <= 200; ++n)
        harm[n - 1] = -n;
    auto h = check_self_adjointness(jacobi(std::vector<double>(200, 0.0), harm), 200);
    double expect = 0;
    for (int n = 2; n <= 200; ++n)
        expect += 1.0 / n;
    CHECK(h.sum_plus == doctest::Approx(expect));
    CHECK(h.slope_plus == doctest::Approx(1.0).epsilon(0.1));
    CHECK(h.met);
}

TEST_CASE("full-line self-adjointness uses both sides")
{
    auto op = free_jacobi_full(-20, 20);
    auto r = check_self_adjointness(op, 20);
    CHECK(r.sum_plus == doctest::Approx(19));
    CHECK(r.sum_minus == doctest::Approx(19));
    CHECK(r.met);
}

TEST_CASE("cyclic subspaces")
{
    CMat V = CMat::Zero(2, 2);
    V(0, 0) = 1;
    V(1, 1) = 2;
    CHECK(cyclic_subspace(V, CVec::Unit(2, 0)).cols() == 1);
    CMat X(2, 2);
    X << 0, 1, 1, 0;
    CHECK(cyclic_subspace(X, CVec::Unit(2, 0)).cols() == 2);

    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        CMat U = oracle::random_unitary(5, rng);
        RVec ev(5);
        ev << 1, 1, 2, 3, 3;
        CMat W = U * ev.cast<cplx>().asDiagonal() * U.adjoint();
        CVec v = oracle::random_unit(5, rng);
        CMat Q = cyclic_subspace(W, v);
        CHECK(Q.cols() == 3);
        CHECK((W * Q - Q * (Q.adjoint() * W * Q)).norm() < 1e-9);
        CHECK((Q * (Q.adjoint() * v) - v).norm() < 1e-9);
        // oracle: distinct eigenvalues with nonzero overlap; drop one overlap
        CVec w = v - U.col(2) * U.col(2).dot(v);
        CHECK(cyclic_subspace(W, w.normalized()).cols() == 2);
    }
}

TEST_CASE("invariant-subspace splitting")
{
    std::mt19937_64 rng(5);
    CMat U = oracle::random_unitary(3, rng);
    CMat V = CMat::Zero(4, 4);
    RVec ev(3);
    ev << -1, 0.5, 2;
    V.topLeftCorner(3, 3) = U * ev.cast<cplx>().asDiagonal() * U.adjoint();
    V(3, 3) = 0.3;
    CVec ups = CVec::Zero(4), phi = CVec::Zero(4);
    ups.head(3) = oracle::random_unit(3, rng);
    phi.head(3) = oracle::random_unit(3, rng);
    std::vector<Shell> shells{random_shell(9, 1), Shell(2, V, -1, phi, ups), random_shell(9, 3)};
    OneChannelOperator op(shells);
    auto cs = cyclic_subspaces(op.shell(2));
    CVec psi = CVec::Unit(4, 3);
    CHECK((cs.Vspan.adjoint() * psi).norm() < 1e-9);
    BlockVector b = zero_blocks(op, 1, 3);
    b.at(2) = psi;
    auto r = apply_operator(op, b);
    CHECK(r.at(1).norm() < 1e-14);
    CHECK(r.at(3).norm() < 1e-14);
    CHECK((r.at(2) - V * psi).norm() < 1e-14);
    CHECK_FALSE(channel_broken(op.shell(2)));
}

TEST_CASE("broken channel detection")
{
    CMat V = CMat::Zero(2, 2);
    V(0, 0) = 1;
    V(1, 1) = 2;
    Shell s(1, V, -1, CVec::Unit(2, 1), CVec::Unit(2, 0));
    CHECK(channel_broken(s));
}

TEST_CASE("rank-one factorization")
{
    CMat D(1, 1);
    D(0, 0) = -1;
    auto f = factor_rank_one(D);
    CHECK(f.a == doctest::Approx(-1));
    CHECK(std::abs(f.phi(0) - 1.0) < 1e-15);
    CHECK(std::abs(f.upsilon(0) + 1.0) < 1e-15);

    CVec u(2), p(3);
    u << 1, 1;
    u /= std::sqrt(2.0);
    p << 1, 0, 0;
    CMat D2 = -3.0 * u * p.adjoint();
    auto f2 = factor_rank_one(D2);
    CHECK(f2.a == doctest::Approx(-3));
    CHECK((f2.phi - p).norm() < 1e-14);
    // a < 0 fixes the sign of the backward mode
    CHECK((f2.upsilon + u).norm() < 1e-14);
    CHECK((D2 + f2.a * f2.upsilon * f2.phi.adjoint()).norm() < 1e-14);

    CMat D3(2, 2);
    D3 << 1, 0, 0, 1e-13;
    auto f3 = factor_rank_one(D3);
    CHECK(f3.a == doctest::Approx(-1));
    CHECK(std::abs(std::abs(f3.upsilon(0)) - 1) < 1e-14);
    CHECK((f3.phi - CVec::Unit(2, 0)).norm() < 1e-14);

    CMat D4(2, 2);
    D4 << 1, 0, 0, 1e-3;
    CHECK_THROWS_AS(factor_rank_one(D4), NotOneChannel);

    std::mt19937_64 rng(4);
    for (int k = 0; k < 20; ++k) {
        CVec x = oracle::random_unit(4, rng), y = oracle::random_unit(3, rng);
        CMat R = 2.5 * x * y.adjoint();
        auto g = factor_rank_one(R);
        CHECK((R + g.a * g.upsilon * g.phi.adjoint()).norm() <= 1e-10 * 2.5);
        CHECK(g.a < 0);
    }
}

TEST_CASE("shell validation")
{
    CMat V = CMat::Identity(2, 2);
    CVec e = CVec::Unit(2, 0);
    CHECK_THROWS_AS(Shell(1, V, 0.0, e, e), ValidationError);
    CHECK_THROWS_AS(Shell(1, V, 1.0, 2.0 * e, e), ValidationError);
    CMat N = V;
    N(0, 1) = 1;
    CHECK_THROWS_AS(Shell(1, N, 1.0, e, e), ValidationError);
    CHECK_THROWS_AS(Shell(1, V, 1.0, CVec::Unit(3, 0), e), ValidationError);
}

namespace {

SparseH from_edges(int n, const std::vector<std::pair<int, int>>& edges)
{
    std::vector<Eigen::Triplet<cplx>> t;
    for (auto [x, y] : edges) {
        t.emplace_back(x, y, 1.0);
        t.emplace_back(y, x, 1.0);
    }
    SparseH A(n, n);
    A.setFromTriplets(t.begin(), t.end());
    return A;
}

// all-pairs distances by repeated relaxation
std::vector<int> distances(int n, const std::vector<std::pair<int, int>>& edges,
                           const std::vector<int>& seed)
{
    const int inf = 1 << 20;
    std::vector<int> d(n, inf);
    for (int s : seed)
        d[s] = 0;
    for (int it = 0; it < n; ++it)
        for (auto [x, y] : edges) {
            d[y] = std::min(d[y], d[x] + 1);
            d[x] = std::min(d[x], d[y] + 1);
        }
    return d;
}

}  // namespace

TEST_CASE("partition of a path and a star")
{
    auto path = build_partition(from_edges(3, {{0, 1}, {1, 2}}), {0});
    REQUIRE(path.size() == 3);
    CHECK(path[0] == std::vector<int>{0});
    CHECK(path[1] == std::vector<int>{1});
    CHECK(path[2] == std::vector<int>{2});
    auto star = build_partition(from_edges(4, {{0, 1}, {0, 2}, {0, 3}}), {0});
    REQUIRE(star.size() == 2);
    CHECK(star[1] == std::vector<int>{1, 2, 3});
    CHECK_THROWS_AS(build_partition(from_edges(4, {{0, 1}, {2, 3}}), {0}), DanglingComponent);
}

TEST_CASE("stretched antitree layers group into paired shells")
{
    // R-sets of size 2; R_{3n-2} - R_{3n} paired, R_{3n} - R_{3n+1} complete
    const int shells = 4, s = 2;
    auto vid = [&](int r, int j) { return (r - 1) * s + j; };
    const int nR = 3 * shells - 1;
    std::vector<std::pair<int, int>> edges;
    for (int n = 1; n <= shells; ++n) {
        int a = 3 * n - 2, b = 3 * n, c = 3 * n + 1;
        if (b > nR)
            break;
        for (int j = 0; j < s; ++j)
            edges.push_back({vid(a, j), vid(b, j)});
        if (c <= nR)
            for (int i = 0; i < s; ++i)
                for (int j = 0; j < s; ++j)
                    edges.push_back({vid(b, i), vid(c, j)});
    }
    // R_{3n-1} is empty in the stretched family; compress vertex ids
    std::vector<int> keep, newid(nR * s, -1);
    for (int r = 1; r <= nR; ++r)
        if (r % 3 != 2)
            for (int j = 0; j < s; ++j) {
                newid[vid(r, j)] = static_cast<int>(keep.size());
                keep.push_back(vid(r, j));
            }
    std::vector<std::pair<int, int>> e2;
    for (auto [x, y] : edges)
        e2.push_back({newid[x], newid[y]});
    const int nv = static_cast<int>(keep.size());
    auto A = from_edges(nv, e2);
    std::vector<int> seed{newid[vid(1, 0)], newid[vid(1, 1)]};
    auto layers = build_partition(A, seed);
    auto dist = distances(nv, e2, seed);
    for (size_t k = 0; k < layers.size(); ++k)
        for (int v : layers[k])
            CHECK(dist[v] == static_cast<int>(k));
    CHECK(is_quasi_spherical(A, layers));

    std::vector<int> sizes(layers.size() / 2, 2);
    if (layers.size() % 2)
        sizes.push_back(1);
    auto grouped = group_partition(layers, sizes);
    for (int n = 1; n <= static_cast<int>(grouped.size()); ++n) {
        std::vector<int> expect;
        for (int r : {3 * n - 2, 3 * n})
            if (r <= nR)
                for (int j = 0; j < s; ++j)
                    expect.push_back(newid[vid(r, j)]);
        auto got = grouped[n - 1];
        std::sort(got.begin(), got.end());
        std::sort(expect.begin(), expect.end());
        CHECK(got == expect);
    }
    CHECK(is_quasi_spherical(A, grouped));
    auto op = from_hermitian(A, grouped);
    CHECK(op.count() == static_cast<long>(grouped.size()));
}

TEST_CASE("operator rebuilt from its dense matrix")
{
    auto op = random_operator(21, 5);
    auto t = assemble_dense(op, 5);
    SparseH H = t.H.sparseView();
    Partition p;
    for (long n = 1; n <= 5; ++n) {
        std::vector<int> sh;
        for (int k = 0; k < op.shell(n).size(); ++k)
            sh.push_back(static_cast<int>(t.offset(n)) + k);
        p.push_back(sh);
    }
    auto back = from_hermitian(H, p);
    CHECK((assemble_dense(back, 5).H - t.H).norm() < 1e-12);
    for (long n = 2; n <= 5; ++n)
        CHECK(back.shell(n).a() < 0);
}
