#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rakekit/table.hpp"

using namespace rakekit;

namespace {

const char* kTable1 =
    "value,X1,X2,weights\n"
    "1.0,1,1,1.0\n"
    "2.0,1,2,1.0\n"
    "3.0,2,1,1.0\n"
    "NaN,2,2,0.0\n"
    "4.0,1,0,inf\n"
    "7.0,2,0,inf\n"
    "5.0,0,1,10\n";

CsvTable csv(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}

std::vector<DimSpec> dims(std::initializer_list<const char*> names) {
  std::vector<DimSpec> out;
  for (const char* n : names) out.push_back(DimSpec{n, "0", {}});
  return out;
}

ErrorCode parse_code(const std::string& text, std::vector<DimSpec> d = dims({"X1", "X2"})) {
  try {
    const RakingData data = parse_table(csv(text), d, "value", "weights");
    (void)build_problem(data);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Unsupported;
}

// Full m x n table with value i*n + j + 1 plus optional margins.
std::string grid(int m, int n, bool rows, bool cols, double col_bias = 0.0) {
  std::ostringstream out;
  out << "value,X1,X2,weights\n";
  std::vector<double> rs(m, 0.0), cs(n, 0.0);
  for (int i = 1; i <= m; ++i)
    for (int j = 1; j <= n; ++j) {
      const double v = (i - 1) * n + j;
      rs[i - 1] += v;
      cs[j - 1] += v;
      out << v << "," << i << "," << j << ",1\n";
    }
  if (rows)
    for (int i = 1; i <= m; ++i) out << rs[i - 1] << "," << i << ",0,inf\n";
  if (cols)
    for (int j = 1; j <= n; ++j) out << cs[j - 1] + (j == 1 ? col_bias : 0.0) << ",0," << j << ",inf\n";
  return out.str();
}

}  // namespace

TEST(TableParse, Table1Classification) {
  const RakingData d = parse_table(csv(kTable1), dims({"X1", "X2"}), "value", "weights");
  EXPECT_EQ(d.count(RowKind::Observed), 3u);
  EXPECT_EQ(d.count(RowKind::Missing), 1u);
  EXPECT_EQ(d.count(RowKind::Constraint), 2u);
  EXPECT_EQ(d.count(RowKind::AggregateObservation), 1u);
  EXPECT_EQ(d.rows[3].kind, RowKind::Missing);
  EXPECT_EQ(d.rows[4].value, 4.0);
  EXPECT_EQ(d.rows[5].value, 7.0);
  EXPECT_EQ(d.rows[6].weight, 10.0);
  EXPECT_EQ(d.dims[0].levels, (std::vector<std::string>{"1", "2"}));
}

TEST(TableParse, SingleCell) {
  const RakingData d = parse_table(csv("value,X1,weights\n3.0,1,1.0\n"), dims({"X1"}), "value", "weights");
  EXPECT_EQ(d.count(RowKind::Observed), 1u);
  EXPECT_EQ(d.rows.size(), 1u);
  const Problem pb = build_problem(d);
  EXPECT_EQ(pb.p, 1);
  EXPECT_EQ(pb.A.rows(), 0);
}

TEST(TableParse, Errors) {
  EXPECT_EQ(parse_code("value,X1,weights\n1,1,1\n2,1,1\n", dims({"X1"})), ErrorCode::DuplicateCell);
  EXPECT_EQ(parse_code("value,X1,weights\n1,1,-1\n", dims({"X1"})), ErrorCode::BadWeight);
  EXPECT_EQ(parse_code("value,X1,weights\n1,1,nan\n", dims({"X1"})), ErrorCode::BadWeight);
  EXPECT_EQ(parse_code("value,X1,weights\n1,1,1\n,0,inf\n", dims({"X1"})), ErrorCode::ConstraintWithoutValue);
  EXPECT_EQ(parse_code("value,X1,weights\n1,1,1\n3,0,0\n", dims({"X1"})), ErrorCode::BadWeight);
  EXPECT_EQ(parse_code("val,X1,weights\n1,1,1\n", dims({"X1"})), ErrorCode::UnknownColumn);
  EXPECT_EQ(parse_code("value,X1,weights\n1,1,1\n", dims({"Y"})), ErrorCode::UnknownColumn);
  EXPECT_EQ(parse_code("value,X1,X2,weights\n1,1,1,1\n2,2,2,1\n"), ErrorCode::MissingCell);
  EXPECT_EQ(parse_code("value,X1,weights\n,1,0\n", dims({"X1"})), ErrorCode::EmptyProblem);
  EXPECT_EQ(parse_code("value,X1,weights\n1,1,1\nabc,0,inf\n", dims({"X1"})), ErrorCode::ParseError);
}

TEST(TableParse, InfinityCaseInsensitiveAndZeroWeightWarning) {
  const RakingData d =
      parse_table(csv("value,X1,weights\n1,1,1\n5,2,0\n6,0,INF\n"), dims({"X1"}), "value", "weights");
  EXPECT_EQ(d.rows[2].kind, RowKind::Constraint);
  EXPECT_EQ(d.rows[1].kind, RowKind::Missing);
  EXPECT_EQ(d.warnings.size(), 1u);
}

TEST(TableParse, NumericLevelsSortedAndCustomSentinel) {
  std::vector<DimSpec> d{DimSpec{"X1", "all", {}}};
  const RakingData data = parse_table(csv("value,X1,weights\n1,10,1\n2,2,1\n3,0,1\n6,all,inf\n"), d, "value", "weights");
  EXPECT_EQ(data.dims[0].levels, (std::vector<std::string>{"0", "2", "10"}));
  const Problem pb = build_problem(data);
  EXPECT_EQ(pb.p, 3);
  EXPECT_EQ(pb.y[0], 3.0);
  EXPECT_EQ(pb.y[2], 1.0);
  EXPECT_EQ(pb.A.rows(), 1);
}

TEST(TableBuild, Table1Operators) {
  const Problem pb = build_problem(parse_table(csv(kTable1), dims({"X1", "X2"}), "value", "weights"));
  EXPECT_EQ(pb.p, 4);
  EXPECT_EQ(pb.observed, (std::vector<Index>{0, 1, 2}));
  EXPECT_EQ(pb.missing, (std::vector<Index>{3}));
  Matrix A(2, 4), B(1, 4);
  A << 1, 1, 0, 0, 0, 0, 1, 1;
  B << 1, 0, 1, 0;
  EXPECT_EQ(assemble_dense(pb.A), A);
  EXPECT_EQ(assemble_dense(pb.B), B);
  EXPECT_EQ(pb.s, Vector::LinSpaced(2, 4, 7));
  EXPECT_EQ(pb.s_b[0], 5.0);
  EXPECT_EQ(pb.w_b[0], 10.0);
  EXPECT_EQ(pb.cell_label(1), "X1=1:X2=2");
}

TEST(TableBuild, TwoByTwoAllMarginsPrunesOne) {
  const Problem pb = build_problem(parse_table(csv(grid(2, 2, true, true)), dims({"X1", "X2"}), "value", "weights"));
  EXPECT_EQ(pb.A_all.rows(), 4);
  EXPECT_EQ(pb.A.rows(), 3);
  EXPECT_EQ(pb.a_dropped.size(), 1u);
}

TEST(TableBuild, ThreeWayTwoWayMarginsCount) {
  std::ostringstream out;
  out << "value,a,b,c,weights\n";
  for (int a = 1; a <= 3; ++a)
    for (int b = 1; b <= 4; ++b)
      for (int c = 1; c <= 5; ++c) out << "1," << a << "," << b << "," << c << ",1\n";
  for (int a = 1; a <= 3; ++a)
    for (int b = 1; b <= 4; ++b) out << "5," << a << "," << b << ",0,inf\n";
  for (int a = 1; a <= 3; ++a)
    for (int c = 1; c <= 5; ++c) out << "4," << a << ",0," << c << ",inf\n";
  for (int b = 1; b <= 4; ++b)
    for (int c = 1; c <= 5; ++c) out << "3,0," << b << "," << c << ",inf\n";
  const Problem pb = build_problem(parse_table(csv(out.str()), dims({"a", "b", "c"}), "value", "weights"));
  EXPECT_EQ(pb.A_all.rows(), 47);
  // Rank of the two-way margin structure: 47 - (3 + 4 + 5) + 1.
  EXPECT_EQ(pb.A.rows(), 36);
  EXPECT_LE(pb.A_all.nnz(), static_cast<std::size_t>(3 * pb.p));
  // Lexicographic order, last dimension fastest.
  EXPECT_EQ(pb.cell_label(1), "a=1:b=1:c=2");
  EXPECT_EQ(pb.cell_label(5), "a=1:b=2:c=1");
}

TEST(TableBuild, MultiSentinelAggregate) {
  const Problem pb = build_problem(
      parse_table(csv("value,X1,X2,weights\n1,1,1,1\n2,1,2,1\n3,2,1,1\n4,2,2,1\n12,0,0,inf\n"), dims({"X1", "X2"}),
                  "value", "weights"));
  ASSERT_EQ(pb.A.rows(), 1);
  EXPECT_EQ(pb.A.row(0).size(), 4u);
}

TEST(TableBuild, OperatorRowsMatchMembership) {
  const Problem pb = build_problem(parse_table(csv(kTable1), dims({"X1", "X2"}), "value", "weights"));
  const RakingData d = parse_table(csv(kTable1), dims({"X1", "X2"}), "value", "weights");
  Index a = 0, b = 0;
  for (const auto& row : d.rows) {
    if (row.kind != RowKind::Constraint && row.kind != RowKind::AggregateObservation) continue;
    const auto cells = detail::member_cells(row, d.dims);
    Vector ind = Vector::Zero(pb.p);
    for (Index c : cells) ind[c] = 1.0;
    if (row.kind == RowKind::Constraint) EXPECT_EQ(apply(pb.A_all, ind)[a++], static_cast<double>(cells.size()));
    else EXPECT_EQ(apply(pb.B, ind)[b++], static_cast<double>(cells.size()));
  }
}

TEST(TableBuild, LogisticBounds) {
  const auto d = parse_table(csv("value,X1,weights\n1,1,1\n2,2,1\n3,0,inf\n"), dims({"X1"}), "value", "weights");
  LossConfig cfg;
  cfg.kind = LossKind::Logistic;
  try {
    build_problem(d, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BoundsInvalid);
  }
  cfg.lower = 0.0;
  cfg.upper = 1.5;
  EXPECT_THROW(build_problem(d, cfg), Error);
  cfg.upper = 4.0;
  const Problem pb = build_problem(d, cfg);
  EXPECT_EQ(pb.lower, Vector::Zero(2));
  EXPECT_EQ(pb.upper, Vector::Constant(2, 4.0));
}

TEST(TablePrune, FullRankUnchanged) {
  const AggOperator A(4, {{0, 1}, {2, 3}});
  Vector s(2);
  s << 1, 2;
  const PruneResult r = prune_constraints(A, s);
  EXPECT_EQ(r.kept, (std::vector<Index>{0, 1}));
  EXPECT_TRUE(r.dropped.empty());
  EXPECT_EQ(r.s, s);
}

TEST(TablePrune, DropsLaterDependentRow) {
  const AggOperator A = margin_operator_2d(3, 4);
  Vector s(7);
  s << 4, 4, 4, 3, 3, 3, 3;
  const PruneResult r = prune_constraints(A, s);
  EXPECT_EQ(r.A.rows(), 6);
  EXPECT_EQ(r.dropped, (std::vector<Index>{6}));
}

TEST(TablePrune, Inconsistent2dMargins) {
  EXPECT_EQ(parse_code(grid(2, 3, true, true, 1.0)), ErrorCode::InconsistentMargins);
  try {
    build_problem(parse_table(csv(grid(2, 3, true, true, 1.0)), dims({"X1", "X2"}), "value", "weights"));
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("data line"), std::string::npos);
  }
}

TEST(TablePrune, FeasibleSetPreserved) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int inst = 0; inst < 20; ++inst) {
    const Index p = 12;
    AggOperator A = oracle::random_operator(rng, p, 6, 0.4);
    // Append sums and differences of existing rows where they stay 0/1.
    A.add_row(A.row(0));
    Vector beta0(p);
    for (Index i = 0; i < p; ++i) beta0[i] = u(rng);
    const Vector s = apply(A, beta0);
    const PruneResult r = prune_constraints(A, s);
    const Matrix Ad = assemble_dense(r.A);
    EXPECT_EQ(Eigen::FullPivLU<Matrix>(Ad).rank(), Ad.rows());
    // Any solution of the kept system satisfies every row.
    const Vector other = Ad.completeOrthogonalDecomposition().solve(r.s);
    EXPECT_LE((apply(A, other) - s).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(TableRoundTrip, EmitAndReparse) {
  const RakingData d = parse_table(csv(kTable1), dims({"X1", "X2"}), "value", "weights");
  std::ostringstream out;
  write_csv(out, emit_table(d));
  const RakingData d2 = parse_table(csv(out.str()), dims({"X1", "X2"}), "value", "weights");
  const Problem a = build_problem(d), b = build_problem(d2);
  EXPECT_EQ(a.observed, b.observed);
  EXPECT_EQ(a.y.head(3), b.y.head(3));
  EXPECT_EQ(assemble_dense(a.A), assemble_dense(b.A));
  EXPECT_EQ(assemble_dense(a.B), assemble_dense(b.B));
  EXPECT_EQ(a.s, b.s);
  EXPECT_EQ(a.s_b, b.s_b);
  EXPECT_EQ(a.w_b, b.w_b);
}

TEST(TableCsv, QuotedFieldsAndNumbers) {
  const CsvTable t = csv("a,b\n\"x,y\",\"he said \"\"hi\"\"\"\n");
  EXPECT_EQ(t.rows[0][0], "x,y");
  EXPECT_EQ(t.rows[0][1], "he said \"hi\"");
  double v;
  EXPECT_TRUE(parse_double("Inf", v));
  EXPECT_TRUE(std::isinf(v));
  EXPECT_TRUE(parse_double("", v));
  EXPECT_TRUE(std::isnan(v));
  EXPECT_FALSE(parse_double("1,5", v));
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_THROW(csv("a,b\n1\n"), Error);
}
