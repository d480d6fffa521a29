#include "ocs/models.hpp"

#include <random>

#include "ocs/errors.hpp"
#include "ocs/rng.hpp"

namespace ocs {

Shell scalar_shell(long n, double v, double a)
{
    CMat V(1, 1);
    V(0, 0) = v;
    CVec one = CVec::Ones(1);
    return Shell(n, V, a, one, one);
}

OneChannelOperator jacobi(const std::vector<double>& v, const std::vector<double>& a, Geometry g,
                          long first)
{
    if (v.size() != a.size() || v.empty())
        throw ValidationError("jacobi: v and a must have equal nonzero length");
    std::vector<Shell> s;
    for (size_t k = 0; k < v.size(); ++k)
        s.push_back(scalar_shell(first + static_cast<long>(k), v[k], a[k]));
    return OneChannelOperator(std::move(s), g, first);
}

OneChannelOperator free_jacobi(long N)
{
    return jacobi(std::vector<double>(N, 0.0), std::vector<double>(N, -1.0));
}

OneChannelOperator free_jacobi_full(long lo, long hi)
{
    const size_t len = static_cast<size_t>(hi - lo + 1);
    return jacobi(std::vector<double>(len, 0.0), std::vector<double>(len, -1.0), Geometry::full, lo);
}

Shell random_shell(std::uint64_t seed, long n, const RandomShellOptions& o)
{
    CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
    std::normal_distribution<double> gauss;
    const int s = o.s_min + static_cast<int>(rng() % static_cast<std::uint64_t>(o.s_max - o.s_min + 1));
    auto entry = [&]() { return o.real ? cplx(gauss(rng), 0) : cplx(gauss(rng), gauss(rng)); };
    CMat G(s, s);
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
            G(i, j) = entry();
    CMat V = o.v_scale * (G + G.adjoint()) / 2.0;
    CVec phi(s), ups(s);
    for (int i = 0; i < s; ++i) {
        phi(i) = entry();
        ups(i) = entry();
    }
    phi.normalize();
    ups.normalize();
    double a = o.a ? *o.a : -(0.5 + 1.5 * rng.uniform());
    return Shell(n, V, a, phi, ups);
}

OneChannelOperator random_operator(std::uint64_t seed, long N, const RandomShellOptions& o)
{
    return OneChannelOperator::generate([&](long n) { return random_shell(seed, n, o); }, 1, N);
}

OneChannelOperator periodic(const std::vector<Shell>& cell, long N)
{
    if (cell.empty())
        throw ValidationError("periodic: empty cell");
    std::vector<Shell> s;
    for (long n = 1; n <= N; ++n)
        s.push_back(cell[static_cast<size_t>((n - 1) % static_cast<long>(cell.size()))].with_index(n));
    return OneChannelOperator(std::move(s));
}

}  // namespace ocs
