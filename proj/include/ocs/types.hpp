#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace ocs {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2cd;
using Mat2 = Eigen::Matrix2cd;

inline constexpr double kPi = 3.14159265358979323846;

// Distance below which resolvents are not evaluated directly.
inline constexpr double kGuard = 1e-9;
// Relative rank cutoff for SVD and Krylov rank decisions.
inline constexpr double kRankTol = 1e-10;

}  // namespace ocs
