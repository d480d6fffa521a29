#include "ocs/partition.hpp"

#include <cmath>
#include <queue>

#include "ocs/errors.hpp"

namespace ocs {

namespace {

void check_hermitian(const SparseH& A)
{
    if (A.rows() != A.cols())
        throw ValidationError("adjacency must be square");
    SparseH d = SparseH(A.adjoint()) - A;
    for (int k = 0; k < d.outerSize(); ++k)
        for (SparseH::InnerIterator it(d, k); it; ++it)
            if (std::abs(it.value()) > 1e-12)
                throw ValidationError("adjacency must be Hermitian");
}

}  // namespace

Partition build_partition(const SparseH& adjacency, const std::vector<int>& seed)
{
    check_hermitian(adjacency);
    if (seed.empty())
        throw ValidationError("seed set must be nonempty");
    const int nv = static_cast<int>(adjacency.rows());
    SparseH A = adjacency;
    A.makeCompressed();
    std::vector<int> dist(nv, -1);
    std::queue<int> q;
    for (int v : seed) {
        if (v < 0 || v >= nv)
            throw ValidationError("seed vertex out of range");
        if (dist[v] < 0) {
            dist[v] = 0;
            q.push(v);
        }
    }
    while (!q.empty()) {
        int v = q.front();
        q.pop();
        for (SparseH::InnerIterator it(A, v); it; ++it) {
            int w = static_cast<int>(it.index());
            if (w != v && it.value() != 0.0 && dist[w] < 0) {
                dist[w] = dist[v] + 1;
                q.push(w);
            }
        }
    }
    int depth = 0;
    for (int v = 0; v < nv; ++v) {
        if (dist[v] < 0)
            throw DanglingComponent("vertex " + std::to_string(v) + " unreachable from seed set");
        depth = std::max(depth, dist[v]);
    }
    Partition p(depth + 1);
    for (int v = 0; v < nv; ++v)
        p[dist[v]].push_back(v);
    return p;
}

Partition group_partition(const Partition& layers, const std::vector<int>& sizes)
{
    Partition out;
    size_t k = 0;
    for (int s : sizes) {
        if (s < 1 || k + s > layers.size())
            throw ValidationError("grouping does not match the number of layers");
        std::vector<int> shell;
        for (int j = 0; j < s; ++j, ++k)
            shell.insert(shell.end(), layers[k].begin(), layers[k].end());
        out.push_back(std::move(shell));
    }
    if (k != layers.size())
        throw ValidationError("grouping leaves layers unassigned");
    return out;
}

std::vector<int> shell_of(const Partition& p, int n_vertices)
{
    std::vector<int> s(n_vertices, -1);
    for (size_t n = 0; n < p.size(); ++n)
        for (int v : p[n])
            s[v] = static_cast<int>(n) + 1;
    return s;
}

bool is_quasi_spherical(const SparseH& adjacency, const Partition& p)
{
    const auto sh = shell_of(p, static_cast<int>(adjacency.rows()));
    for (int k = 0; k < adjacency.outerSize(); ++k)
        for (SparseH::InnerIterator it(adjacency, k); it; ++it) {
            if (it.value() == 0.0)
                continue;
            int x = sh[it.row()], y = sh[it.col()];
            if (x < 0 || y < 0 || std::abs(x - y) > 1)
                return false;
        }
    return true;
}

OneChannelOperator from_hermitian(const SparseH& H, const Partition& p, double tol)
{
    check_hermitian(H);
    if (!is_quasi_spherical(H, p))
        throw ValidationError("partition is not quasi-spherical for this operator");
    const CMat dense = CMat(H);
    auto block = [&](const std::vector<int>& rows, const std::vector<int>& cols) {
        CMat b(rows.size(), cols.size());
        for (size_t i = 0; i < rows.size(); ++i)
            for (size_t j = 0; j < cols.size(); ++j)
                b(i, j) = dense(rows[i], cols[j]);
        return b;
    };
    const size_t N = p.size();
    std::vector<RankOneFactor> f(N);  // f[n] factors D_{n+1}, n >= 1
    for (size_t n = 1; n < N; ++n)
        f[n] = factor_rank_one(block(p[n], p[n - 1]), tol);
    std::vector<Shell> shells;
    for (size_t n = 0; n < N; ++n) {
        CVec ups, phi;
        double a = 1;
        if (n + 1 < N)
            phi = f[n + 1].phi;
        if (n > 0) {
            ups = f[n].upsilon;
            a = f[n].a;
        }
        if (ups.size() == 0)
            ups = phi.size() ? phi : CVec(CVec::Unit(p[n].size(), 0));
        if (phi.size() == 0)
            phi = ups;
        shells.emplace_back(static_cast<long>(n) + 1, block(p[n], p[n]), a, phi, ups);
    }
    return OneChannelOperator(std::move(shells));
}

}  // namespace ocs
