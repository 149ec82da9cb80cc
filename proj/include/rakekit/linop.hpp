#pragma once

// Sparse 0/1 aggregation operators and the matrix-free dual Hessian action.
//
// Each row of an AggOperator is the sorted set of coordinates summed by one
// margin. All reductions run in ascending index order so results are
// reproducible bit for bit.

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rakekit/error.hpp"
#include "rakekit/loss.hpp"

namespace rakekit {

/// Counts scalar multiply-adds performed by operator applications.
struct FlopCounter {
  std::size_t flops = 0;
};

class AggOperator {
 public:
  AggOperator() = default;
  explicit AggOperator(Index ncols) : ncols_(ncols) {}

  AggOperator(Index ncols, std::vector<std::vector<Index>> rows) : ncols_(ncols) {
    for (auto& r : rows) add_row(std::move(r));
  }

  /// Appends a margin. Members are sorted and must be distinct and in range.
  void add_row(std::vector<Index> members) {
    std::sort(members.begin(), members.end());
    if (std::adjacent_find(members.begin(), members.end()) != members.end())
      throw Error(ErrorCode::DimensionMismatch, "aggregation row lists a coordinate twice");
    if (!members.empty() && (members.front() < 0 || members.back() >= ncols_))
      throw Error(ErrorCode::DimensionMismatch, "aggregation row member out of range");
    nnz_ += members.size();
    rows_.push_back(std::move(members));
  }

  Index rows() const { return static_cast<Index>(rows_.size()); }
  Index cols() const { return ncols_; }
  std::size_t nnz() const { return nnz_; }
  const std::vector<Index>& row(Index i) const { return rows_[static_cast<std::size_t>(i)]; }
  const std::vector<std::vector<Index>>& row_sets() const { return rows_; }

  /// Subset of rows, in the given order.
  AggOperator select_rows(const std::vector<Index>& keep) const {
    AggOperator out(ncols_);
    for (Index r : keep) out.add_row(row(r));
    return out;
  }

 private:
  Index ncols_ = 0;
  std::size_t nnz_ = 0;
  std::vector<std::vector<Index>> rows_;
};

/// [top; bottom] over the same coordinates.
inline AggOperator stack(const AggOperator& top, const AggOperator& bottom) {
  if (top.cols() != bottom.cols()) throw Error(ErrorCode::DimensionMismatch, "stack: column counts differ");
  AggOperator out(top.cols());
  for (const auto& r : top.row_sets()) out.add_row(r);
  for (const auto& r : bottom.row_sets()) out.add_row(r);
  return out;
}

inline Vector apply(const AggOperator& op, const Vector& x, FlopCounter* counter = nullptr) {
  if (x.size() != op.cols())
    throw Error(ErrorCode::DimensionMismatch,
                "apply: expected length " + std::to_string(op.cols()) + ", got " + std::to_string(x.size()));
  Vector out(op.rows());
  for (Index i = 0; i < op.rows(); ++i) {
    double acc = 0.0;
    for (Index j : op.row(i)) acc += x[j];
    out[i] = acc;
  }
  if (counter) counter->flops += op.nnz();
  return out;
}

inline Vector apply_transpose(const AggOperator& op, const Vector& u, FlopCounter* counter = nullptr) {
  if (u.size() != op.rows())
    throw Error(ErrorCode::DimensionMismatch,
                "apply_transpose: expected length " + std::to_string(op.rows()) + ", got " + std::to_string(u.size()));
  Vector out = Vector::Zero(op.cols());
  for (Index i = 0; i < op.rows(); ++i) {
    const double v = u[i];
    for (Index j : op.row(i)) out[j] += v;
  }
  if (counter) counter->flops += op.nnz();
  return out;
}

/// op * diag(s) * op^T * x without forming the product.
inline Vector hvp(const AggOperator& op, const Vector& s_diag, const Vector& x, FlopCounter* counter = nullptr) {
  if (s_diag.size() != op.cols()) throw Error(ErrorCode::DimensionMismatch, "hvp: curvature length");
  Vector t = apply_transpose(op, x, counter);
  t.array() *= s_diag.array();
  if (counter) counter->flops += static_cast<std::size_t>(op.cols());
  return apply(op, t, counter);
}

/// Diagonal of op * diag(s) * op^T.
inline Vector hvp_diagonal(const AggOperator& op, const Vector& s_diag) {
  Vector out(op.rows());
  for (Index i = 0; i < op.rows(); ++i) {
    double acc = 0.0;
    for (Index j : op.row(i)) acc += s_diag[j];
    out[i] = acc;
  }
  return out;
}

inline constexpr std::size_t kDefaultDenseCap = 1'000'000;

inline Matrix assemble_dense(const AggOperator& op, std::size_t cap = kDefaultDenseCap) {
  const auto entries = static_cast<std::size_t>(op.rows()) * static_cast<std::size_t>(op.cols());
  if (entries > cap)
    throw Error(ErrorCode::TooLarge, "dense operator would hold " + std::to_string(entries) + " entries (cap " +
                                         std::to_string(cap) + ")");
  Matrix out = Matrix::Zero(op.rows(), op.cols());
  for (Index i = 0; i < op.rows(); ++i)
    for (Index j : op.row(i)) out(i, j) = 1.0;
  return out;
}

/// Row and column margins of an m x n table vectorised column-major
/// (cell (i, j) at i + m j): the first m rows sum each table row, the next n
/// rows sum each table column.
inline AggOperator margin_operator_2d(Index m, Index n) {
  AggOperator op(m * n);
  for (Index i = 0; i < m; ++i) {
    std::vector<Index> r;
    for (Index j = 0; j < n; ++j) r.push_back(i + m * j);
    op.add_row(std::move(r));
  }
  for (Index j = 0; j < n; ++j) {
    std::vector<Index> r;
    for (Index i = 0; i < m; ++i) r.push_back(i + m * j);
    op.add_row(std::move(r));
  }
  return op;
}

/// Hessian action for full 2D row/column margins using the reshape form:
/// Z = S .* (x_r 1^T + 1 x_c^T), result [Z 1; Z^T 1]. Column-major cells.
inline Vector hvp_2d_reshape(Index m, Index n, const Vector& s_diag, const Vector& x) {
  if (s_diag.size() != m * n || x.size() != m + n) throw Error(ErrorCode::DimensionMismatch, "hvp_2d_reshape");
  const Eigen::Map<const Matrix> S(s_diag.data(), m, n);
  const Matrix Z = S.array() * (x.head(m) * Eigen::RowVectorXd::Ones(n) + Vector::Ones(m) * x.tail(n).transpose()).array();
  Vector out(m + n);
  out.head(m) = Z.rowwise().sum();
  out.tail(n) = Z.colwise().sum().transpose();
  return out;
}

}  // namespace rakekit
