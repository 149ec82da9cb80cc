#pragma once

// Tabular raking input and its compilation into an optimization problem.
//
// Each input row carries one categorical value per dimension, a value and a
// weight. A dimension value equal to that dimension's sentinel means "summed
// over this dimension", so rows with any sentinel are aggregates:
//
//   weight == inf     aggregate -> hard constraint (row of A)
//   weight finite > 0 aggregate -> noisy aggregate observation (row of B)
//   weight == 0       granular  -> missing cell (value ignored)
//   weight > 0        granular  -> observed cell (inf pins the cell)
//
// Cells are numbered lexicographically by level index with the last
// declared dimension varying fastest.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "rakekit/csv.hpp"
#include "rakekit/error.hpp"
#include "rakekit/linop.hpp"
#include "rakekit/loss.hpp"

namespace rakekit {

struct DimSpec {
  std::string name;
  std::string aggregate_sentinel = "0";
  std::vector<std::string> levels;  // empty: inferred while parsing

  Index size() const { return static_cast<Index>(levels.size()); }
};

enum class RowKind { Observed, Missing, Constraint, AggregateObservation };

struct RakingRow {
  std::vector<std::string> dim_values;
  double value = 0.0;  // NaN when missing
  double weight = 1.0;
  double lower = std::nan("");
  double upper = std::nan("");
  RowKind kind = RowKind::Observed;
  std::size_t source_line = 0;  // 1-based data line in the input, 0 if synthetic
};

struct RakingData {
  std::vector<DimSpec> dims;
  std::vector<RakingRow> rows;
  std::string value_col = "value";
  std::string weight_col = "weights";
  std::string lower_col;
  std::string upper_col;
  std::vector<std::string> warnings;

  std::size_t count(RowKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const RakingRow& r) { return r.kind == kind; }));
  }
};

struct TableSchema {
  std::vector<DimSpec> dims;
  std::string value_col = "value";
  std::string weight_col = "weights";
  std::string lower_col;  // optional per-row bound columns
  std::string upper_col;
};

namespace detail {

inline bool parses_as_number(const std::string& s) {
  double v;
  return parse_double(s, v) && std::isfinite(v);
}

inline std::string describe_row(const RakingRow& row) {
  std::string out = "(";
  for (std::size_t i = 0; i < row.dim_values.size(); ++i) {
    if (i) out += ", ";
    out += row.dim_values[i];
  }
  out += ")";
  if (row.source_line) out += " at data line " + std::to_string(row.source_line);
  return out;
}

inline RowKind classify(const RakingRow& row, const std::vector<DimSpec>& dims, std::vector<std::string>& warnings) {
  bool aggregate = false;
  for (std::size_t d = 0; d < dims.size(); ++d)
    if (row.dim_values[d] == dims[d].aggregate_sentinel) aggregate = true;

  const double w = row.weight;
  if (std::isnan(w) || w < 0.0)
    throw Error(ErrorCode::BadWeight, "weight must be a non-negative real or inf, row " + describe_row(row));
  if (aggregate) {
    if (w == 0.0) throw Error(ErrorCode::BadWeight, "aggregate rows cannot have weight 0, row " + describe_row(row));
    if (std::isinf(w)) {
      if (!std::isfinite(row.value))
        throw Error(ErrorCode::ConstraintWithoutValue, "constraint row " + describe_row(row) + " has no value");
      return RowKind::Constraint;
    }
    if (!std::isfinite(row.value))
      throw Error(ErrorCode::ParseError, "aggregate observation " + describe_row(row) + " has no value; omit the row instead");
    return RowKind::AggregateObservation;
  }
  if (w == 0.0) {
    if (!std::isnan(row.value))
      warnings.push_back("cell " + describe_row(row) + " has weight 0; its value is ignored and the cell is treated as missing");
    return RowKind::Missing;
  }
  if (std::isnan(row.value)) {
    if (std::isinf(w))
      throw Error(ErrorCode::ConstraintWithoutValue, "pinned cell " + describe_row(row) + " has no value");
    warnings.push_back("cell " + describe_row(row) + " has no value; treated as missing");
    return RowKind::Missing;
  }
  if (!std::isfinite(row.value)) throw Error(ErrorCode::ParseError, "non-finite value in row " + describe_row(row));
  return RowKind::Observed;
}

}  // namespace detail

/// Infers levels (where not declared), classifies rows and checks the table
/// invariants: unique dimension tuples and full coverage of the cell grid.
inline RakingData finalize_table(std::vector<DimSpec> dims, std::vector<RakingRow> rows, std::string value_col = "value",
                                 std::string weight_col = "weights") {
  RakingData data;
  data.value_col = std::move(value_col);
  data.weight_col = std::move(weight_col);

  for (auto& row : rows) {
    if (row.dim_values.size() != dims.size())
      throw Error(ErrorCode::DimensionMismatch, "row " + detail::describe_row(row) + " has the wrong number of dimension values");
  }

  for (std::size_t d = 0; d < dims.size(); ++d) {
    DimSpec& dim = dims[d];
    if (!dim.levels.empty()) {
      std::vector<std::string> sorted = dim.levels;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw Error(ErrorCode::ParseError, "dimension '" + dim.name + "' declares a level twice");
      if (std::find(sorted.begin(), sorted.end(), dim.aggregate_sentinel) != sorted.end())
        throw Error(ErrorCode::ParseError, "dimension '" + dim.name + "' lists its sentinel as a level");
      for (const auto& row : rows) {
        const auto& v = row.dim_values[d];
        if (v != dim.aggregate_sentinel && std::find(dim.levels.begin(), dim.levels.end(), v) == dim.levels.end())
          throw Error(ErrorCode::ParseError, "value '" + v + "' of dimension '" + dim.name + "' is not a declared level");
      }
      continue;
    }
    // Numeric levels sort numerically; anything else keeps first appearance.
    std::vector<std::string> seen;
    for (const auto& row : rows) {
      const auto& v = row.dim_values[d];
      if (v == dim.aggregate_sentinel) continue;
      if (std::find(seen.begin(), seen.end(), v) == seen.end()) seen.push_back(v);
    }
    if (seen.empty()) throw Error(ErrorCode::EmptyProblem, "dimension '" + dim.name + "' has no levels");
    if (std::all_of(seen.begin(), seen.end(), detail::parses_as_number)) {
      std::stable_sort(seen.begin(), seen.end(), [](const std::string& a, const std::string& b) {
        double x, y;
        parse_double(a, x);
        parse_double(b, y);
        return x < y;
      });
    }
    dim.levels = std::move(seen);
  }

  std::map<std::vector<std::string>, std::size_t> tuples;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto [it, fresh] = tuples.emplace(rows[r].dim_values, r);
    if (!fresh)
      throw Error(ErrorCode::DuplicateCell, "dimension tuple " + detail::describe_row(rows[r]) + " repeats " +
                                                detail::describe_row(rows[it->second]));
    rows[r].kind = detail::classify(rows[r], dims, data.warnings);
  }

  // Every cell of the grid needs an observed or missing row.
  std::size_t expected = 1;
  for (const auto& dim : dims) expected *= dim.levels.size();
  std::size_t granular = 0;
  for (const auto& row : rows)
    if (row.kind == RowKind::Observed || row.kind == RowKind::Missing) ++granular;
  if (dims.empty()) throw Error(ErrorCode::EmptyProblem, "no dimensions declared");
  if (granular != expected) {
    // Find one absent cell for the message.
    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t c = 0; c < expected; ++c) {
      std::vector<std::string> key;
      for (std::size_t d = 0; d < dims.size(); ++d) key.push_back(dims[d].levels[idx[d]]);
      if (!tuples.count(key)) {
        RakingRow probe;
        probe.dim_values = key;
        throw Error(ErrorCode::MissingCell, "cell " + detail::describe_row(probe) +
                                                " has no row; add it with weight 0 to mark it missing");
      }
      for (std::size_t d = dims.size(); d-- > 0;) {
        if (++idx[d] < dims[d].levels.size()) break;
        idx[d] = 0;
      }
    }
  }

  data.dims = std::move(dims);
  data.rows = std::move(rows);
  return data;
}

/// Reads raking rows out of a CSV table.
inline RakingData parse_table(const CsvTable& table, const TableSchema& schema) {
  std::vector<long> dim_cols;
  for (const auto& dim : schema.dims) {
    const long c = table.column(dim.name);
    if (c < 0) throw Error(ErrorCode::UnknownColumn, "dimension column '" + dim.name + "' not found");
    dim_cols.push_back(c);
  }
  const long value_c = table.column(schema.value_col);
  if (value_c < 0) throw Error(ErrorCode::UnknownColumn, "value column '" + schema.value_col + "' not found");
  const long weight_c = table.column(schema.weight_col);
  if (weight_c < 0) throw Error(ErrorCode::UnknownColumn, "weight column '" + schema.weight_col + "' not found");
  long lower_c = -1, upper_c = -1;
  if (!schema.lower_col.empty() && (lower_c = table.column(schema.lower_col)) < 0)
    throw Error(ErrorCode::UnknownColumn, "lower-bound column '" + schema.lower_col + "' not found");
  if (!schema.upper_col.empty() && (upper_c = table.column(schema.upper_col)) < 0)
    throw Error(ErrorCode::UnknownColumn, "upper-bound column '" + schema.upper_col + "' not found");

  std::vector<RakingRow> rows;
  rows.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& rec = table.rows[r];
    RakingRow row;
    row.source_line = r + 1;
    for (long c : dim_cols) row.dim_values.push_back(rec[static_cast<std::size_t>(c)]);
    if (!parse_double(rec[static_cast<std::size_t>(value_c)], row.value))
      throw Error(ErrorCode::ParseError, "data line " + std::to_string(r + 1) + ": bad value '" +
                                             rec[static_cast<std::size_t>(value_c)] + "'");
    const auto& wtext = rec[static_cast<std::size_t>(weight_c)];
    if (!parse_double(wtext, row.weight) || std::isnan(row.weight) || row.weight < 0.0)
      throw Error(ErrorCode::BadWeight, "data line " + std::to_string(r + 1) + ": bad weight '" + wtext + "'");
    if (lower_c >= 0 && !parse_double(rec[static_cast<std::size_t>(lower_c)], row.lower))
      throw Error(ErrorCode::ParseError, "data line " + std::to_string(r + 1) + ": bad lower bound");
    if (upper_c >= 0 && !parse_double(rec[static_cast<std::size_t>(upper_c)], row.upper))
      throw Error(ErrorCode::ParseError, "data line " + std::to_string(r + 1) + ": bad upper bound");
    rows.push_back(std::move(row));
  }
  RakingData data = finalize_table(schema.dims, std::move(rows), schema.value_col, schema.weight_col);
  data.lower_col = schema.lower_col;
  data.upper_col = schema.upper_col;
  return data;
}

inline RakingData parse_table(const CsvTable& table, const std::vector<DimSpec>& dims, const std::string& value_col,
                              const std::string& weight_col) {
  TableSchema schema;
  schema.dims = dims;
  schema.value_col = value_col;
  schema.weight_col = weight_col;
  return parse_table(table, schema);
}

/// Writes the data back in tabular form (dimension columns, value, weight and
/// any bound columns), one line per row in stored order.
inline CsvTable emit_table(const RakingData& data) {
  CsvTable out;
  for (const auto& d : data.dims) out.header.push_back(d.name);
  out.header.push_back(data.value_col);
  out.header.push_back(data.weight_col);
  const bool lower = !data.lower_col.empty(), upper = !data.upper_col.empty();
  if (lower) out.header.push_back(data.lower_col);
  if (upper) out.header.push_back(data.upper_col);
  for (const auto& row : data.rows) {
    std::vector<std::string> rec = row.dim_values;
    rec.push_back(row.kind == RowKind::Missing ? "NaN" : format_double(row.value));
    rec.push_back(format_double(row.weight));
    if (lower) rec.push_back(format_double(row.lower));
    if (upper) rec.push_back(format_double(row.upper));
    out.rows.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraint pruning

struct PruneResult {
  AggOperator A;
  Vector s;
  std::vector<Index> kept;     // row ids of the input operator, in order
  std::vector<Index> dropped;  // row ids found linearly dependent
};

struct PruneOptions {
  double rank_tol = 1e-10;         // relative to the largest singular value estimate
  double consistency_tol = 1e-8;   // relative disagreement allowed on dropped margins
  std::size_t dense_cap = 4'000'000;
};

namespace detail {

// Upper bound on sigma_max(A): sqrt of the largest absolute row sum of A A^T.
inline double sigma_max_estimate(const AggOperator& A) {
  std::vector<double> colcount(static_cast<std::size_t>(A.cols()), 0.0);
  for (const auto& r : A.row_sets())
    for (Index j : r) colcount[static_cast<std::size_t>(j)] += 1.0;
  double best = 0.0;
  for (const auto& r : A.row_sets()) {
    double acc = 0.0;
    for (Index j : r) acc += colcount[static_cast<std::size_t>(j)];
    best = std::max(best, acc);
  }
  return std::sqrt(best);
}

inline double overlap(const std::vector<Index>& a, const std::vector<Index>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else { ++n; ++i; ++j; }
  }
  return static_cast<double>(n);
}

}  // namespace detail

/// Drops linearly dependent rows of A greedily in input order and verifies
/// each dropped margin agrees with the value implied by the kept rows.
/// `labels` optionally names each row for error messages.
inline PruneResult prune_constraints(const AggOperator& A, const Vector& s, const PruneOptions& opt = {},
                                     const std::vector<std::string>& labels = {}) {
  auto name = [&](Index i) {
    return labels.size() == static_cast<std::size_t>(A.rows()) ? labels[static_cast<std::size_t>(i)]
                                                                : "constraint row " + std::to_string(i);
  };
  if (s.size() != A.rows()) throw Error(ErrorCode::DimensionMismatch, "prune_constraints: margin count");
  PruneResult out;
  const Index k = A.rows();
  const Index p = A.cols();
  if (k == 0) {
    out.A = AggOperator(p);
    return out;
  }
  const double sigma = detail::sigma_max_estimate(A);
  const double tol = opt.rank_tol * sigma;

  if (static_cast<std::size_t>(k) * static_cast<std::size_t>(p) <= opt.dense_cap) {
    // Gram-Schmidt with one re-orthogonalisation pass on dense rows.
    std::vector<Vector> basis;
    for (Index i = 0; i < k; ++i) {
      Vector v = Vector::Zero(p);
      for (Index j : A.row(i)) v[j] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : basis) v -= q.dot(v) * q;
      const double norm = v.norm();
      if (norm <= tol || A.row(i).empty()) {
        out.dropped.push_back(i);
      } else {
        basis.push_back(v / norm);
        out.kept.push_back(i);
      }
    }
  } else {
    // Incremental Cholesky of the Gram matrix in input order. Squaring loses
    // half the digits, so the floor scales with sqrt(eps) per row.
    std::vector<Vector> lrows;  // rows of L for kept constraints
    std::vector<double> diag;
    for (Index i = 0; i < k; ++i) {
      const double gii = static_cast<double>(A.row(i).size());
      Vector g(static_cast<Index>(out.kept.size()));
      for (std::size_t a = 0; a < out.kept.size(); ++a) g[static_cast<Index>(a)] = detail::overlap(A.row(i), A.row(out.kept[a]));
      Vector l(g.size());
      for (Index a = 0; a < g.size(); ++a) {
        double acc = g[a];
        for (Index b = 0; b < a; ++b) acc -= lrows[static_cast<std::size_t>(a)][b] * l[b];
        l[a] = acc / diag[static_cast<std::size_t>(a)];
      }
      const double d2 = gii - l.squaredNorm();
      const double floor = std::max(tol * tol, 1e-13 * gii);
      if (gii == 0.0 || d2 <= floor) {
        out.dropped.push_back(i);
      } else {
        out.kept.push_back(i);
        lrows.push_back(l);
        diag.push_back(std::sqrt(d2));
      }
    }
  }

  out.A = A.select_rows(out.kept);
  out.s.resize(static_cast<Index>(out.kept.size()));
  for (std::size_t a = 0; a < out.kept.size(); ++a) out.s[static_cast<Index>(a)] = s[out.kept[a]];

  if (!out.dropped.empty()) {
    const Index r = static_cast<Index>(out.kept.size());
    Matrix G(r, r);
    for (Index a = 0; a < r; ++a)
      for (Index b = a; b < r; ++b) G(a, b) = G(b, a) = detail::overlap(out.A.row(a), out.A.row(b));
    Eigen::LDLT<Matrix> ldlt(G);
    for (Index d : out.dropped) {
      if (A.row(d).empty()) {
        if (std::abs(s[d]) > opt.consistency_tol)
          throw Error(ErrorCode::InconsistentMargins, name(d) + " sums no cells but has a nonzero margin");
        continue;
      }
      Vector rhs(r);
      for (Index a = 0; a < r; ++a) rhs[a] = detail::overlap(A.row(d), out.A.row(a));
      const Vector c = ldlt.solve(rhs);
      const double implied = c.dot(out.s);
      const double scale = std::max(std::abs(s[d]), (c.array() * out.s.array()).abs().sum());
      if (std::abs(implied - s[d]) > opt.consistency_tol * scale + 1e-14)
        throw Error(ErrorCode::InconsistentMargins,
                    name(d) + " has margin " + format_double(s[d]) + " but the other constraints imply " +
                        format_double(implied));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compiled problem

struct Problem {
  std::vector<DimSpec> dims;
  Index p = 0;
  LossKind loss = LossKind::Entropic;

  Vector y;      // NaN on missing cells
  Vector w;      // 0 on missing cells, inf on pinned cells
  Vector lower;  // per cell, logistic only
  Vector upper;
  std::vector<Index> observed;  // sorted cell ids with observations
  std::vector<Index> missing;   // sorted cell ids without

  AggOperator A_all;  // every constraint row, input order
  Vector s_all;
  std::vector<std::size_t> a_source;  // data row of each A_all row
  AggOperator A;      // full row rank subset of A_all
  Vector s;
  std::vector<Index> a_kept;
  std::vector<Index> a_dropped;

  AggOperator B;  // aggregate observations
  Vector s_b;
  Vector w_b;
  Vector lower_b;
  Vector upper_b;
  std::vector<std::size_t> b_source;

  std::vector<std::size_t> cell_source;  // data row of each cell

  Index k_a() const { return A.rows(); }
  Index k_b() const { return B.rows(); }
  bool has_missing() const { return !missing.empty(); }

  /// Loss over the observed cells (order of `observed`).
  Loss observed_loss() const {
    const Index n = static_cast<Index>(observed.size());
    Vector yo(n), wo(n), lo, hi;
    if (loss == LossKind::Logistic) {
      lo.resize(n);
      hi.resize(n);
    }
    for (Index i = 0; i < n; ++i) {
      const Index c = observed[static_cast<std::size_t>(i)];
      yo[i] = y[c];
      wo[i] = w[c];
      if (loss == LossKind::Logistic) {
        lo[i] = lower[c];
        hi[i] = upper[c];
      }
    }
    return make_loss(loss, yo, wo, lo, hi);
  }

  /// Loss over the aggregate observations.
  Loss aggregate_loss() const {
    return make_loss(loss, s_b, w_b, loss == LossKind::Logistic ? lower_b : Vector{},
                     loss == LossKind::Logistic ? upper_b : Vector{});
  }

  /// Observed cells as a 0/1 selection operator (P).
  AggOperator selector() const {
    AggOperator P(p);
    for (Index c : observed) P.add_row({c});
    return P;
  }

  std::string cell_label(Index cell) const {
    std::string out;
    Index rem = cell;
    std::vector<std::string> parts(dims.size());
    for (std::size_t d = dims.size(); d-- > 0;) {
      const Index m = dims[d].size();
      parts[d] = dims[d].levels[static_cast<std::size_t>(rem % m)];
      rem /= m;
    }
    for (std::size_t d = 0; d < dims.size(); ++d) {
      if (d) out += ":";
      out += dims[d].name + "=" + parts[d];
    }
    return out;
  }
};

struct LossConfig {
  LossKind kind = LossKind::Entropic;
  // Logistic bounds: per-row columns take precedence over these scalars.
  std::optional<double> lower;
  std::optional<double> upper;
  PruneOptions prune;
};

namespace detail {

inline std::vector<Index> member_cells(const RakingRow& row, const std::vector<DimSpec>& dims) {
  // Per dimension: either a single level index or all of them.
  std::vector<std::vector<Index>> choices(dims.size());
  for (std::size_t d = 0; d < dims.size(); ++d) {
    const auto& v = row.dim_values[d];
    if (v == dims[d].aggregate_sentinel) {
      choices[d].resize(dims[d].levels.size());
      std::iota(choices[d].begin(), choices[d].end(), Index{0});
    } else {
      auto it = std::find(dims[d].levels.begin(), dims[d].levels.end(), v);
      choices[d].push_back(static_cast<Index>(it - dims[d].levels.begin()));
    }
  }
  std::vector<Index> cells{0};
  for (std::size_t d = 0; d < dims.size(); ++d) {
    std::vector<Index> next;
    next.reserve(cells.size() * choices[d].size());
    for (Index base : cells)
      for (Index c : choices[d]) next.push_back(base * dims[d].size() + c);
    cells = std::move(next);
  }
  return cells;
}

}  // namespace detail

/// Compiles parsed rows into operators, reference values and weights, then
/// prunes A to full row rank.
inline Problem build_problem(const RakingData& data, const LossConfig& config = {}) {
  Problem pb;
  pb.dims = data.dims;
  pb.loss = config.kind;
  Index p = 1;
  for (const auto& d : data.dims) p *= d.size();
  if (data.dims.empty() || p == 0) throw Error(ErrorCode::EmptyProblem, "no granular cells");
  pb.p = p;
  pb.y = Vector::Constant(p, std::nan(""));
  pb.w = Vector::Zero(p);
  pb.cell_source.assign(static_cast<std::size_t>(p), 0);
  const bool logistic = config.kind == LossKind::Logistic;
  if (logistic) {
    pb.lower = Vector::Constant(p, std::nan(""));
    pb.upper = Vector::Constant(p, std::nan(""));
  }

  auto bound_of = [&](const RakingRow& row, bool upper_side) {
    const double col = upper_side ? row.upper : row.lower;
    if (!std::isnan(col)) return col;
    const auto& scalar = upper_side ? config.upper : config.lower;
    return scalar ? *scalar : std::nan("");
  };

  pb.A_all = AggOperator(p);
  pb.B = AggOperator(p);
  std::vector<double> s_all, s_b, w_b, lb, ub;
  std::vector<const RakingRow*> b_rows;
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const RakingRow& row = data.rows[r];
    switch (row.kind) {
      case RowKind::Observed:
      case RowKind::Missing: {
        const Index c = detail::member_cells(row, data.dims).front();
        pb.cell_source[static_cast<std::size_t>(c)] = r;
        if (row.kind == RowKind::Observed) {
          pb.y[c] = row.value;
          pb.w[c] = row.weight;
        }
        if (logistic) {
          pb.lower[c] = bound_of(row, false);
          pb.upper[c] = bound_of(row, true);
        }
        break;
      }
      case RowKind::Constraint:
        pb.A_all.add_row(detail::member_cells(row, data.dims));
        s_all.push_back(row.value);
        pb.a_source.push_back(r);
        break;
      case RowKind::AggregateObservation:
        pb.B.add_row(detail::member_cells(row, data.dims));
        s_b.push_back(row.value);
        w_b.push_back(row.weight);
        pb.b_source.push_back(r);
        b_rows.push_back(&row);
        break;
    }
  }
  for (Index c = 0; c < p; ++c) (pb.w[c] > 0.0 ? pb.observed : pb.missing).push_back(c);
  if (pb.observed.empty()) throw Error(ErrorCode::EmptyProblem, "no observed cells");

  pb.s_all = Eigen::Map<const Vector>(s_all.data(), static_cast<Index>(s_all.size()));
  pb.s_b = Eigen::Map<const Vector>(s_b.data(), static_cast<Index>(s_b.size()));
  pb.w_b = Eigen::Map<const Vector>(w_b.data(), static_cast<Index>(w_b.size()));

  if (logistic) {
    for (Index c : pb.observed) {
      const double l = pb.lower[c], u = pb.upper[c], v = pb.y[c];
      if (std::isnan(l) || std::isnan(u))
        throw Error(ErrorCode::BoundsInvalid, "logistic loss needs bounds for cell " + pb.cell_label(c));
      if (!(l < u) || (!std::isinf(pb.w[c]) && !(l < v && v < u)))
        throw Error(ErrorCode::BoundsInvalid, "cell " + pb.cell_label(c) + " violates l < y < u");
    }
    // Aggregate observations take their own bound columns when present,
    // otherwise the sums of their members' bounds.
    pb.lower_b.resize(pb.B.rows());
    pb.upper_b.resize(pb.B.rows());
    for (Index i = 0; i < pb.B.rows(); ++i) {
      const RakingRow& row = *b_rows[static_cast<std::size_t>(i)];
      double l = row.lower, u = row.upper;
      if (std::isnan(l)) {
        l = 0.0;
        for (Index c : pb.B.row(i)) l += pb.lower[c];
      }
      if (std::isnan(u)) {
        u = 0.0;
        for (Index c : pb.B.row(i)) u += pb.upper[c];
      }
      pb.lower_b[i] = l;
      pb.upper_b[i] = u;
      if (!(l < pb.s_b[i] && pb.s_b[i] < u))
        throw Error(ErrorCode::BoundsInvalid, "aggregate observation " + detail::describe_row(row) + " violates l < value < u");
    }
  }

  // Validates reference values against the loss domain.
  (void)pb.observed_loss();
  if (pb.B.rows() > 0) (void)pb.aggregate_loss();

  std::vector<std::string> labels;
  for (std::size_t r : pb.a_source) labels.push_back("constraint " + detail::describe_row(data.rows[r]));
  PruneResult pr = prune_constraints(pb.A_all, pb.s_all, config.prune, labels);
  pb.A = std::move(pr.A);
  pb.s = std::move(pr.s);
  pb.a_kept = std::move(pr.kept);
  pb.a_dropped = std::move(pr.dropped);
  return pb;
}

/// Assembles a problem directly from operators, for programmatic use.
/// `y` holds NaN on missing cells; `w` holds 0 there.
struct ProblemParts {
  LossKind loss = LossKind::Entropic;
  Vector y;
  Vector w;  // empty: unit weights on observed cells
  Vector lower, upper;
  AggOperator A;
  Vector s;
  AggOperator B;
  Vector s_b, w_b, lower_b, upper_b;
  PruneOptions prune;
};

inline Problem make_problem(ProblemParts parts) {
  Problem pb;
  pb.p = parts.y.size();
  pb.loss = parts.loss;
  pb.dims = {DimSpec{"cell", "", {}}};
  for (Index c = 0; c < pb.p; ++c) pb.dims[0].levels.push_back(std::to_string(c + 1));
  pb.y = parts.y;
  if (parts.w.size() == 0) {
    parts.w = Vector::Ones(pb.p);
    for (Index c = 0; c < pb.p; ++c)
      if (std::isnan(parts.y[c])) parts.w[c] = 0.0;
  }
  pb.w = parts.w;
  pb.lower = parts.lower;
  pb.upper = parts.upper;
  for (Index c = 0; c < pb.p; ++c) {
    if (pb.w[c] > 0.0 && std::isnan(pb.y[c]))
      throw Error(ErrorCode::DomainError, "observed cell " + std::to_string(c) + " has no value");
    (pb.w[c] > 0.0 ? pb.observed : pb.missing).push_back(c);
  }
  if (pb.observed.empty()) throw Error(ErrorCode::EmptyProblem, "no observed cells");
  if (parts.A.cols() == 0) parts.A = AggOperator(pb.p);
  if (parts.B.cols() == 0) parts.B = AggOperator(pb.p);
  if (parts.A.cols() != pb.p || parts.B.cols() != pb.p) throw Error(ErrorCode::DimensionMismatch, "operator width");
  pb.A_all = parts.A;
  pb.s_all = parts.s.size() ? parts.s : Vector::Zero(0);
  if (pb.s_all.size() != pb.A_all.rows()) throw Error(ErrorCode::DimensionMismatch, "margin count");
  pb.a_source.resize(static_cast<std::size_t>(pb.A_all.rows()));
  std::iota(pb.a_source.begin(), pb.a_source.end(), std::size_t{0});
  pb.B = parts.B;
  pb.s_b = parts.s_b.size() ? parts.s_b : Vector::Zero(0);
  pb.w_b = parts.w_b.size() ? parts.w_b : Vector::Ones(pb.B.rows());
  if (pb.s_b.size() != pb.B.rows() || pb.w_b.size() != pb.B.rows())
    throw Error(ErrorCode::DimensionMismatch, "aggregate observation count");
  pb.lower_b = parts.lower_b;
  pb.upper_b = parts.upper_b;
  pb.b_source.resize(static_cast<std::size_t>(pb.B.rows()));
  std::iota(pb.b_source.begin(), pb.b_source.end(), std::size_t{0});
  pb.cell_source.resize(static_cast<std::size_t>(pb.p));
  std::iota(pb.cell_source.begin(), pb.cell_source.end(), std::size_t{0});

  (void)pb.observed_loss();
  if (pb.B.rows() > 0) (void)pb.aggregate_loss();

  PruneResult pr = prune_constraints(pb.A_all, pb.s_all, parts.prune);
  pb.A = std::move(pr.A);
  pb.s = std::move(pr.s);
  pb.a_kept = std::move(pr.kept);
  pb.a_dropped = std::move(pr.dropped);
  return pb;
}

/// Same structure with new inputs: observed values (order of `observed`),
/// constraint margins (order of A_all) and aggregate observations. Dropped
/// constraint rows keep their structure; their margins are not re-checked.
inline Problem with_inputs(const Problem& base, const Vector& y_obs, const Vector& s_all, const Vector& s_b) {
  if (y_obs.size() != static_cast<Index>(base.observed.size()) || s_all.size() != base.A_all.rows() ||
      s_b.size() != base.B.rows())
    throw Error(ErrorCode::DimensionMismatch, "with_inputs: input lengths");
  Problem pb = base;
  for (std::size_t i = 0; i < base.observed.size(); ++i) pb.y[base.observed[i]] = y_obs[static_cast<Index>(i)];
  pb.s_all = s_all;
  for (std::size_t a = 0; a < base.a_kept.size(); ++a) pb.s[static_cast<Index>(a)] = s_all[base.a_kept[a]];
  pb.s_b = s_b;
  return pb;
}

}  // namespace rakekit
