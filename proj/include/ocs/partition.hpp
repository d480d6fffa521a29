#pragma once

#include <vector>

#include <Eigen/Sparse>

#include "ocs/model.hpp"

namespace ocs {

using SparseH = Eigen::SparseMatrix<cplx>;
using Partition = std::vector<std::vector<int>>;

// Breadth-first layers around the seed set: S_1 = seed, S_n = vertices at
// distance n - 1.  Throws DanglingComponent if a vertex is never reached.
Partition build_partition(const SparseH& adjacency, const std::vector<int>& seed);

// Merge consecutive layers: sizes[k] layers go into shell k + 1.
Partition group_partition(const Partition& layers, const std::vector<int>& sizes);

// shell index of every vertex (1-based), -1 if absent
std::vector<int> shell_of(const Partition& p, int n_vertices);

bool is_quasi_spherical(const SparseH& adjacency, const Partition& p);

// Cut a Hermitian matrix along the partition and factor each coupling block.
// The first shell uses a_1 = 1, Υ_1 = Φ_1; the last shell, having no
// outgoing block, uses Φ_N = Υ_N.
OneChannelOperator from_hermitian(const SparseH& H, const Partition& p, double tol = kRankTol);

}  // namespace ocs
