#pragma once

// Independent dense references used by the tests. Nothing here calls the
// library's solvers or loss kernels.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rakekit/rakekit.hpp"

namespace oracle {

using rakekit::Index;
using rakekit::LossKind;
using rakekit::Matrix;
using rakekit::Vector;

struct Scalar {
  LossKind kind;
  double y, l, u;

  double f(double b) const {
    switch (kind) {
      case LossKind::Chi2: return (b - y) * (b - y) / (2.0 * y);
      case LossKind::Entropic: return b == 0.0 ? y : b * std::log(b / y) - b + y;
      case LossKind::Logistic: return (b - l) * std::log((b - l) / (y - l)) + (u - b) * std::log((u - b) / (u - y));
    }
    return 0.0;
  }
  double g(double b) const {
    switch (kind) {
      case LossKind::Chi2: return (b - y) / y;
      case LossKind::Entropic: return std::log(b / y);
      case LossKind::Logistic: return std::log((b - l) / (y - l)) - std::log((u - b) / (u - y));
    }
    return 0.0;
  }
  double h(double b) const {
    switch (kind) {
      case LossKind::Chi2: return 1.0 / y;
      case LossKind::Entropic: return 1.0 / b;
      case LossKind::Logistic: return 1.0 / (b - l) + 1.0 / (u - b);
    }
    return 0.0;
  }
  bool inside(double b) const {
    switch (kind) {
      case LossKind::Chi2: return std::isfinite(b);
      case LossKind::Entropic: return b > 0.0;
      case LossKind::Logistic: return b > l && b < u;
    }
    return false;
  }
};

/// Primal equality-constrained Newton on the full KKT system (infeasible
/// start, residual-norm backtracking). Pinned cells and entropic zeros become
/// extra equality rows; missing cells carry no loss term.
inline Vector primal_kkt_solve(const rakekit::Problem& pb, int max_iter = 200) {
  const Index p = pb.p;
  const Matrix A0 = rakekit::assemble_dense(pb.A, 50'000'000);
  const Matrix B = rakekit::assemble_dense(pb.B, 50'000'000);
  std::vector<Index> pinned, free_obs;
  for (Index c : pb.observed) {
    const bool zero = pb.loss == LossKind::Entropic && pb.y[c] == 0.0;
    (std::isinf(pb.w[c]) || zero ? pinned : free_obs).push_back(c);
  }
  const Index k0 = A0.rows();
  const Index k = k0 + static_cast<Index>(pinned.size());
  Matrix A = Matrix::Zero(k, p);
  Vector s(k);
  A.topRows(k0) = A0;
  s.head(k0) = pb.s;
  for (std::size_t i = 0; i < pinned.size(); ++i) {
    A(k0 + static_cast<Index>(i), pinned[i]) = 1.0;
    s[k0 + static_cast<Index>(i)] = pb.y[pinned[i]];
  }
  auto cell = [&](Index c) {
    return Scalar{pb.loss, pb.y[c], pb.lower.size() ? pb.lower[c] : 0.0, pb.upper.size() ? pb.upper[c] : 0.0};
  };
  auto agg = [&](Index r) {
    return Scalar{pb.loss, pb.s_b[r], pb.lower_b.size() ? pb.lower_b[r] : 0.0, pb.upper_b.size() ? pb.upper_b[r] : 0.0};
  };

  Vector beta(p);
  for (Index c = 0; c < p; ++c) {
    if (!std::isnan(pb.y[c])) beta[c] = pb.y[c];
    else if (pb.loss == LossKind::Logistic) beta[c] = 0.5 * (pb.lower[c] + pb.upper[c]);
    else beta[c] = 1.0;
  }
  for (Index c : pinned) beta[c] = pb.y[c];
  Vector nu = Vector::Zero(k);

  auto residual = [&](const Vector& b, const Vector& v, Vector& rd, Vector& rp) -> bool {
    rd = A.transpose() * v;
    for (Index c : free_obs) {
      const Scalar sc = cell(c);
      if (!sc.inside(b[c])) return false;
      rd[c] += pb.w[c] * sc.g(b[c]);
    }
    const Vector z = B * b;
    for (Index r = 0; r < B.rows(); ++r) {
      const Scalar sc = agg(r);
      if (!sc.inside(z[r])) return false;
      rd += B.row(r).transpose() * (pb.w_b[r] * sc.g(z[r]));
    }
    rp = A * b - s;
    return true;
  };

  Vector rd, rp;
  if (!residual(beta, nu, rd, rp)) throw std::runtime_error("oracle: start outside domain");
  for (int it = 0; it < max_iter; ++it) {
    const double rn = std::sqrt(rd.squaredNorm() + rp.squaredNorm());
    if (rn < 1e-14 * std::max(1.0, s.cwiseAbs().maxCoeff())) break;
    Matrix H = Matrix::Zero(p, p);
    for (Index c : free_obs) H(c, c) = pb.w[c] * cell(c).h(beta[c]);
    const Vector z = B * beta;
    for (Index r = 0; r < B.rows(); ++r) H += pb.w_b[r] * agg(r).h(z[r]) * B.row(r).transpose() * B.row(r);
    Matrix K = Matrix::Zero(p + k, p + k);
    K.topLeftCorner(p, p) = H;
    K.topRightCorner(p, k) = A.transpose();
    K.bottomLeftCorner(k, p) = A;
    Vector rhs(p + k);
    rhs << -rd, -rp;
    const Vector d = K.completeOrthogonalDecomposition().solve(rhs);
    const Vector db = d.head(p), dnu = d.tail(k);
    double t = 1.0;
    Vector rd2, rp2;
    while (t > 1e-12) {
      if (residual(beta + t * db, nu + t * dnu, rd2, rp2) &&
          std::sqrt(rd2.squaredNorm() + rp2.squaredNorm()) <= (1.0 - 1e-4 * t) * rn)
        break;
      t *= 0.5;
    }
    if (t <= 1e-12) break;
    beta += t * db;
    nu += t * dnu;
    rd = rd2;
    rp = rp2;
  }
  return beta;
}

/// Weighted least-squares covariance with the curvature held at w / y.
inline Matrix chi2_formula_covariance(const Vector& y, const Vector& w, const Matrix& A, const Matrix& Sy,
                                      const Matrix& Ss, const Matrix& Sys) {
  const Index p = y.size();
  const Vector winv = (y.array() / w.array()).matrix();
  const Matrix WiAt = winv.asDiagonal() * A.transpose();
  const Matrix Phi_inv = (A * WiAt).inverse();
  const Matrix N = WiAt * Phi_inv;
  const Matrix M = Matrix::Identity(p, p) - N * A;
  const Matrix cross = M * Sys * N.transpose();
  return M * Sy * M.transpose() + N * Ss * N.transpose() + cross + cross.transpose();
}

/// Sum of each row's member cells, row by row, without the operator class.
inline Matrix dense_from_sets(Index p, const std::vector<std::vector<Index>>& sets) {
  Matrix M = Matrix::Zero(static_cast<Index>(sets.size()), p);
  for (std::size_t r = 0; r < sets.size(); ++r)
    for (Index c : sets[r]) M(static_cast<Index>(r), c) = 1.0;
  return M;
}

/// Dense 2D margin matrix: rows first (cell i + m*j belongs to row i), then columns.
inline Matrix margins_2d(Index m, Index n) {
  Matrix A = Matrix::Zero(m + n, m * n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      A(i, i + m * j) = 1.0;
      A(m + j, i + m * j) = 1.0;
    }
  return A;
}

inline double rel_diff(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

/// Random 0/1 operator: each row a random non-empty subset of the cells.
inline rakekit::AggOperator random_operator(std::mt19937_64& rng, Index p, Index rows, double density = 0.3) {
  std::bernoulli_distribution pick(density);
  std::uniform_int_distribution<Index> any(0, p - 1);
  rakekit::AggOperator op(p);
  for (Index r = 0; r < rows; ++r) {
    std::vector<Index> members;
    for (Index c = 0; c < p; ++c)
      if (pick(rng)) members.push_back(c);
    if (members.empty()) members.push_back(any(rng));
    op.add_row(members);
  }
  return op;
}

}  // namespace oracle
