#pragma once

#include <Eigen/Core>

namespace endowave::sh {

constexpr int kMaxDegree = 3;

/// Number of basis functions through degree l inclusive.
constexpr int basis_count(int l) { return (l + 1) * (l + 1); }

/// Flat index of (l, m), m in [-l, l].
constexpr int index(int l, int m) { return l * l + l + m; }

/// Real spherical harmonic Y_l^m for a unit direction.
/// Throws std::invalid_argument for (l, m) outside 0 <= l <= 3, |m| <= l.
double eval(int l, int m, const Eigen::Vector3d& dir);

/// Fills basis[0 .. basis_count(degree)-1] for a unit direction.
void eval_basis(int degree, const Eigen::Vector3d& dir, double* basis);

/// Basis values plus per-function gradients with respect to the (unconstrained)
/// direction components. grad[k] is d basis[k] / d dir.
void eval_basis_grad(int degree, const Eigen::Vector3d& dir, double* basis, Eigen::Vector3d* grad);

} // namespace endowave::sh
