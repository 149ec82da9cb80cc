#pragma once

// Synthetic scenarios: loss comparison, differential weights, aggregates as
// observations, missing-data strategies, covariance comparison, and the
// Newton vs IPF benchmark. Each scenario emits a tidy CSV table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rakekit/csv.hpp"
#include "rakekit/error.hpp"
#include "rakekit/linop.hpp"
#include "rakekit/loss.hpp"
#include "rakekit/solver.hpp"
#include "rakekit/table.hpp"
#include "rakekit/uq.hpp"

namespace rakekit {

using Rng = std::mt19937_64;

namespace detail {

// Portable uniform draws (std distributions differ across libraries).
inline double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1p-53;
  return lo + (hi - lo) * u;
}

inline long uniform_int(Rng& rng, long lo, long hi) {
  return lo + static_cast<long>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

// Box-Muller on the portable uniform.
inline double normal(Rng& rng, double mean, double sd) {
  double u1 = uniform(rng, 0.0, 1.0);
  while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline long binomial(Rng& rng, long n, double p) {
  long k = 0;
  for (long i = 0; i < n; ++i) k += uniform(rng, 0.0, 1.0) < p ? 1 : 0;
  return k;
}

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline std::vector<DimSpec> grid_dims(const std::vector<Index>& sizes) {
  std::vector<DimSpec> dims;
  const char* names[] = {"X1", "X2", "X3", "X4"};
  for (std::size_t d = 0; d < sizes.size(); ++d) {
    DimSpec ds;
    ds.name = names[d];
    for (Index l = 1; l <= sizes[d]; ++l) ds.levels.push_back(std::to_string(l));
    dims.push_back(std::move(ds));
  }
  return dims;
}

inline RakingRow make_row(std::vector<std::string> dv, double value, double weight) {
  RakingRow r;
  r.dim_values = std::move(dv);
  r.value = value;
  r.weight = weight;
  return r;
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Benchmark instance: table with rows x cols cells, log y ~ N(0, sigma^2),
// every row margin 1/rows and every column margin 1/cols (both total 1).

struct BenchInstance {
  Index m = 0, n = 0;  // rows, columns; column-major cells
  Vector y;
  Vector s_r, s_c;
};

inline BenchInstance bench_instance(Index rows, Index cols, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  BenchInstance b;
  b.m = rows;
  b.n = cols;
  b.y.resize(rows * cols);
  for (Index i = 0; i < b.y.size(); ++i) b.y[i] = std::exp(detail::normal(rng, 0.0, sigma));
  b.s_r = Vector::Constant(rows, 1.0 / static_cast<double>(rows));
  b.s_c = Vector::Constant(cols, 1.0 / static_cast<double>(cols));
  return b;
}

/// The same instance as a general problem for the Newton path.
inline Problem bench_problem(const BenchInstance& b) {
  ProblemParts parts;
  parts.loss = LossKind::Entropic;
  parts.y = b.y;
  parts.A = margin_operator_2d(b.m, b.n);
  parts.s.resize(b.m + b.n);
  parts.s << b.s_r, b.s_c;
  return make_problem(std::move(parts));
}

struct BenchRun {
  std::string solver;
  Solution solution;
  bool converged = false;
  std::string error;
  // Matvec-equivalents when the violation first reached the target, or -1.
  long matvecs_to_target = -1;
};

inline long matvecs_to_reach(const Diagnostics& d, double target) {
  for (const auto& r : d.trace)
    if (r.max_violation <= target) return static_cast<long>(r.matvecs);
  return -1;
}

/// Runs IPF and dual Newton on one instance; failures are recorded, not thrown.
inline std::pair<BenchRun, BenchRun> bench_compare(const BenchInstance& b, const SolverOptions& opt, double target = 1e-8) {
  BenchRun ipf, newton;
  ipf.solver = "ipf";
  newton.solver = "newton";
  try {
    ipf.solution = solve_ipf_2d(b.y, b.m, b.n, b.s_r, b.s_c, opt);
    ipf.converged = true;
  } catch (const SolveError& e) {
    ipf.solution = e.partial();
    ipf.error = e.what();
  }
  try {
    const Problem pb = bench_problem(b);
    SolverOptions o = opt;
    o.force_path = "newton_dual";
    newton.solution = solve(pb, o);
    newton.converged = true;
  } catch (const SolveError& e) {
    newton.solution = e.partial();
    newton.error = e.what();
  }
  ipf.matvecs_to_target = matvecs_to_reach(ipf.solution.diag, target);
  newton.matvecs_to_target = matvecs_to_reach(newton.solution.diag, target);
  return {std::move(ipf), std::move(newton)};
}

/// Long-format trace table (seed, solver, iteration, matvecs, dual objective,
/// dual gap against the best value seen, max violation).
inline CsvTable bench_table(Index rows, Index cols, double sigma, std::uint64_t seed, int instances,
                            const SolverOptions& opt) {
  CsvTable out;
  out.header = {"instance", "seed", "solver", "iteration", "matvecs", "dual_objective", "dual_gap", "max_violation",
                "status"};
  for (int k = 0; k < instances; ++k) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(k);
    const BenchInstance b = bench_instance(rows, cols, sigma, s);
    auto [ipf, newton] = bench_compare(b, opt);
    double best = std::numeric_limits<double>::infinity();
    for (const auto* run : {&ipf, &newton})
      for (const auto& r : run->solution.diag.trace) best = std::min(best, r.dual_objective);
    for (const auto* run : {&ipf, &newton}) {
      const std::string status = run->converged ? "converged" : "NoConvergence";
      for (const auto& r : run->solution.diag.trace)
        out.rows.push_back({std::to_string(k), std::to_string(s), run->solver, std::to_string(r.iteration),
                            std::to_string(r.matvecs), detail::fmt(r.dual_objective), detail::fmt(r.dual_objective - best),
                            detail::fmt(r.max_violation), status});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss comparison: 4 x 5 table, y ~ U[2, 4], every column (sum over the 4
// rows) totals 4, every row (sum over the 5 columns) totals 5, weights 1/y^2.

inline RakingData loss_comparison_data(Rng& rng) {
  const Index R = 4, C = 5;
  auto dims = detail::grid_dims({R, C});
  std::vector<RakingRow> rows;
  for (Index i = 1; i <= R; ++i)
    for (Index j = 1; j <= C; ++j) {
      const double y = detail::uniform(rng, 2.0, 4.0);
      rows.push_back(detail::make_row({std::to_string(i), std::to_string(j)}, y, 1.0 / (y * y)));
    }
  for (Index i = 1; i <= R; ++i) rows.push_back(detail::make_row({std::to_string(i), "0"}, 5.0, kInf));
  for (Index j = 1; j <= C; ++j) rows.push_back(detail::make_row({"0", std::to_string(j)}, 4.0, kInf));
  return finalize_table(std::move(dims), std::move(rows));
}

struct LossComparisonRun {
  LossKind loss;
  Problem problem;
  Solution solution;
};

inline std::vector<LossComparisonRun> loss_comparison_runs(std::uint64_t seed, const SolverOptions& opt = {}) {
  Rng rng(seed);
  const RakingData data = loss_comparison_data(rng);
  std::vector<LossComparisonRun> out;
  for (LossKind kind : {LossKind::Chi2, LossKind::Entropic, LossKind::Logistic}) {
    LossConfig cfg;
    cfg.kind = kind;
    if (kind == LossKind::Logistic) {
      cfg.lower = 0.5;
      cfg.upper = 4.0;
    }
    Problem pb = build_problem(data, cfg);
    Solution sol = solve(pb, opt);
    out.push_back({kind, std::move(pb), std::move(sol)});
  }
  return out;
}

inline CsvTable loss_comparison(std::uint64_t seed, int replicates = 1, const SolverOptions& opt = {}) {
  CsvTable out;
  out.header = {"replicate", "loss", "X1", "X2", "initial", "raked"};
  for (int r = 0; r < replicates; ++r) {
    for (const auto& run : loss_comparison_runs(seed + static_cast<std::uint64_t>(r), opt)) {
      for (Index c = 0; c < run.problem.p; ++c) {
        const auto& row = run.problem.dims;
        out.rows.push_back({std::to_string(r), std::string(to_string(run.loss)),
                            row[0].levels[static_cast<std::size_t>(c / row[1].size())],
                            row[1].levels[static_cast<std::size_t>(c % row[1].size())], detail::fmt(run.problem.y[c]),
                            detail::fmt(run.solution.beta[c])});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differential weights: two causes raked to an all-cause rate of 0.2.

struct WeightsSimulation {
  double initial[2];
  double variance[2];
  double unweighted[2];
  double weighted[2];
};

inline WeightsSimulation weights_simulation_once(Rng& rng, const SolverOptions& opt = {}) {
  constexpr int kObs = 10;
  WeightsSimulation out{};
  for (int cause = 0; cause < 2; ++cause) {
    double rates[kObs];
    for (int k = 0; k < kObs; ++k) {
      const long n = detail::uniform_int(rng, 100, 200);
      const double p = cause == 0 ? 0.1 : detail::expit(detail::logit(0.1) + detail::normal(rng, 0.0, 0.5));
      rates[k] = static_cast<double>(detail::binomial(rng, n, p)) / static_cast<double>(n);
    }
    double mean = 0.0;
    for (double r : rates) mean += r;
    mean /= kObs;
    double ss = 0.0;
    for (double r : rates) ss += (r - mean) * (r - mean);
    out.initial[cause] = mean;
    // Variance of the mean rate, from the spread of the 10 observed rates.
    out.variance[cause] = std::max(ss / (kObs - 1) / kObs, 1e-12);
  }
  Vector y(2);
  y << out.initial[0], out.initial[1];
  const Solution plain = solve_1d_entropic(y, Vector(), 0.2, opt);
  Vector w(2);
  w << 1.0 / out.variance[0], 1.0 / out.variance[1];
  const Solution weighted = solve_1d_entropic(y, w, 0.2, opt);
  for (int c = 0; c < 2; ++c) {
    out.unweighted[c] = plain.beta[c];
    out.weighted[c] = weighted.beta[c];
  }
  return out;
}

inline std::vector<WeightsSimulation> weights_simulation_runs(std::uint64_t seed, int sims = 500,
                                                              const SolverOptions& opt = {}) {
  Rng rng(seed);
  std::vector<WeightsSimulation> out;
  for (int s = 0; s < sims; ++s) out.push_back(weights_simulation_once(rng, opt));
  return out;
}

inline CsvTable weights_simulation(std::uint64_t seed, int sims = 500, const SolverOptions& opt = {}) {
  CsvTable out;
  out.header = {"simulation", "cause", "initial", "variance", "raked_unweighted", "raked_weighted"};
  const auto runs = weights_simulation_runs(seed, sims, opt);
  for (std::size_t s = 0; s < runs.size(); ++s)
    for (int c = 0; c < 2; ++c)
      out.rows.push_back({std::to_string(s), std::to_string(c + 1), detail::fmt(runs[s].initial[c]),
                          detail::fmt(runs[s].variance[c]), detail::fmt(runs[s].unweighted[c]),
                          detail::fmt(runs[s].weighted[c])});
  return out;
}

// ---------------------------------------------------------------------------
// Aggregates as observations: 3 x 4 x 5 table, all 47 two-way margins of the
// true table used as noisy-free aggregate observations, cells inflated by a
// uniform factor, margin weights 1, 2 and 10.

struct AggregateScenario {
  std::vector<DimSpec> dims;
  Vector truth;
  Vector noisy;
  std::vector<RakingRow> margins;  // sentinel rows with their true values
};

inline std::vector<std::vector<std::string>> two_way_margin_keys(const std::vector<DimSpec>& dims) {
  std::vector<std::vector<std::string>> keys;
  const std::size_t D = dims.size();
  for (std::size_t skip = D; skip-- > 0;) {
    // Sum over dimension `skip`, all level combinations of the others.
    std::vector<std::size_t> idx(D, 0);
    bool done = false;
    while (!done) {
      std::vector<std::string> key(D);
      for (std::size_t d = 0; d < D; ++d) key[d] = d == skip ? dims[d].aggregate_sentinel : dims[d].levels[idx[d]];
      keys.push_back(key);
      done = true;
      for (std::size_t d = D; d-- > 0;) {
        if (d == skip) continue;
        if (++idx[d] < dims[d].levels.size()) {
          done = false;
          break;
        }
        idx[d] = 0;
      }
    }
  }
  return keys;
}

inline double sum_over(const std::vector<DimSpec>& dims, const Vector& cells, const std::vector<std::string>& key) {
  RakingRow probe;
  probe.dim_values = key;
  double acc = 0.0;
  for (Index c : detail::member_cells(probe, dims)) acc += cells[c];
  return acc;
}

inline AggregateScenario aggregate_scenario(std::uint64_t seed, double noise_lo, double noise_hi) {
  Rng rng(seed);
  AggregateScenario sc;
  sc.dims = detail::grid_dims({3, 4, 5});
  const Index p = 60;
  sc.truth.resize(p);
  sc.noisy.resize(p);
  for (Index c = 0; c < p; ++c) sc.truth[c] = detail::uniform(rng, 0.0, 10.0);
  for (Index c = 0; c < p; ++c) sc.noisy[c] = sc.truth[c] * detail::uniform(rng, noise_lo, noise_hi);
  for (const auto& key : two_way_margin_keys(sc.dims)) sc.margins.push_back(detail::make_row(key, sum_over(sc.dims, sc.truth, key), 1.0));
  return sc;
}

inline RakingData aggregate_data(const AggregateScenario& sc, double margin_weight) {
  std::vector<RakingRow> rows;
  for (Index c = 0; c < 60; ++c) {
    const Index i = c / 20, j = (c / 5) % 4, k = c % 5;
    rows.push_back(detail::make_row({std::to_string(i + 1), std::to_string(j + 1), std::to_string(k + 1)}, sc.noisy[c], 1.0));
  }
  for (auto r : sc.margins) {
    r.weight = margin_weight;
    rows.push_back(std::move(r));
  }
  return finalize_table(sc.dims, std::move(rows));
}

inline CsvTable aggregate_observations(std::uint64_t seed, double noise_lo = 10.0, double noise_hi = 11.0,
                                       const SolverOptions& opt = {}) {
  const AggregateScenario sc = aggregate_scenario(seed, noise_lo, noise_hi);
  CsvTable out;
  out.header = {"margin_weight", "cell", "truth", "noisy", "raked", "rel_error_noisy", "rel_error_raked"};
  for (double mw : {1.0, 2.0, 10.0}) {
    const Problem pb = build_problem(aggregate_data(sc, mw), LossConfig{LossKind::Entropic, {}, {}, {}});
    const Solution sol = solve(pb, opt);
    for (Index c = 0; c < pb.p; ++c)
      out.rows.push_back({detail::fmt(mw), pb.cell_label(c), detail::fmt(sc.truth[c]), detail::fmt(sc.noisy[c]),
                          detail::fmt(sol.beta[c]), detail::fmt(std::abs(sc.noisy[c] - sc.truth[c]) / sc.truth[c]),
                          detail::fmt(std::abs(sol.beta[c] - sc.truth[c]) / sc.truth[c])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Missing data: 3 x 4 x 5 entropic problem with 3 constraints (X1 totals) and
// 36 aggregate observations (20 sums over X1, 12 sums over X3, 4 sums over
// X1 and X3). The three cells (i, 1, 1) are then removed along with the
// aggregate (0, 1, 1) that sums them.

struct MissingScenarioRun {
  std::string name;
  Problem problem;
  Solution solution;
  std::string status;
};

inline std::vector<MissingScenarioRun> missing_data_runs(std::uint64_t seed, double small_weight = 1e-3,
                                                         const SolverOptions& opt = {}) {
  Rng rng(seed);
  const auto dims = detail::grid_dims({3, 4, 5});
  const Index p = 60;
  Vector truth(p), obs(p);
  for (Index c = 0; c < p; ++c) truth[c] = detail::uniform(rng, 2.0, 10.0);
  for (Index c = 0; c < p; ++c) obs[c] = truth[c] * detail::uniform(rng, 0.9, 1.1);

  std::vector<RakingRow> aggregates;
  for (Index i = 1; i <= 3; ++i) {
    const std::vector<std::string> key{std::to_string(i), "0", "0"};
    aggregates.push_back(detail::make_row(key, sum_over(dims, truth, key), kInf));
  }
  auto add_obs = [&](const std::vector<std::string>& key) {
    aggregates.push_back(detail::make_row(key, sum_over(dims, truth, key) * detail::uniform(rng, 0.95, 1.05), 1.0));
  };
  for (Index j = 1; j <= 4; ++j)
    for (Index k = 1; k <= 5; ++k) add_obs({"0", std::to_string(j), std::to_string(k)});
  for (Index i = 1; i <= 3; ++i)
    for (Index j = 1; j <= 4; ++j) add_obs({std::to_string(i), std::to_string(j), "0"});
  for (Index j = 1; j <= 4; ++j) add_obs({"0", std::to_string(j), "0"});

  auto is_missing = [](Index c) { return (c / 5) % 4 == 0 && c % 5 == 0; };
  double mean_obs = 0.0;
  for (Index c = 0; c < p; ++c)
    if (!is_missing(c)) mean_obs += obs[c];
  mean_obs /= static_cast<double>(p - 3);

  auto build = [&](int scenario) {
    std::vector<RakingRow> rows;
    for (Index c = 0; c < p; ++c) {
      const Index i = c / 20, j = (c / 5) % 4, k = c % 5;
      std::vector<std::string> key{std::to_string(i + 1), std::to_string(j + 1), std::to_string(k + 1)};
      double v = obs[c], w = 1.0;
      if (scenario > 0 && is_missing(c)) {
        if (scenario == 1) v = 0.0;
        else if (scenario == 4) { v = mean_obs; w = small_weight; }
        else { v = std::nan(""); w = 0.0; }
      }
      rows.push_back(detail::make_row(std::move(key), v, w));
    }
    for (const auto& r : aggregates) {
      const bool removed = r.dim_values == std::vector<std::string>{"0", "1", "1"};
      if (removed && scenario != 0 && scenario != 3) continue;
      rows.push_back(r);
    }
    return finalize_table(dims, std::move(rows));
  };

  const char* names[] = {"baseline", "zeros_as_observations", "missing_without_aggregate", "missing_with_aggregate",
                         "mean_with_small_weight"};
  std::vector<MissingScenarioRun> out;
  for (int sc = 0; sc <= 4; ++sc) {
    MissingScenarioRun run;
    run.name = names[sc];
    run.problem = build_problem(build(sc), LossConfig{LossKind::Entropic, {}, {}, {}});
    try {
      run.solution = solve(run.problem, opt);
      run.status = "converged";
    } catch (const SolveError& e) {
      run.solution = e.partial();
      run.status = std::string(to_string(e.code()));
    }
    out.push_back(std::move(run));
  }
  return out;
}

inline CsvTable missing_data(std::uint64_t seed, double small_weight = 1e-3, const SolverOptions& opt = {}) {
  const auto runs = missing_data_runs(seed, small_weight, opt);
  CsvTable out;
  out.header = {"scenario", "cell", "missing", "initial", "raked", "baseline_raked", "status"};
  const Problem& base = runs[0].problem;
  for (std::size_t s = 1; s < runs.size(); ++s) {
    const auto& run = runs[s];
    for (Index c = 0; c < run.problem.p; ++c) {
      const bool miss = (c / 5) % 4 == 0 && c % 5 == 0;
      out.rows.push_back({run.name, run.problem.cell_label(c), miss ? "1" : "0", detail::fmt(base.y[c]),
                          detail::fmt(run.solution.beta[c]), detail::fmt(runs[0].solution.beta[c]), run.status});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Covariance comparison: 3 x 5 entropic table with exact margins, observations
// y0 = beta0 + N(0, 0.1) and input covariance 0.01 off the diagonal, 0.1 k on
// it (margins carry no uncertainty).

struct UqScenario {
  Problem problem;
  InputCovariance cov;
  Vector beta0;
};

inline UqScenario uq_scenario(std::uint64_t seed, LossKind loss = LossKind::Entropic, double cov_scale = 1.0) {
  Rng rng(seed);
  const Index m = 3, n = 5;
  const auto dims = detail::grid_dims({m, n});
  Vector b0(m * n), y0(m * n);
  for (Index c = 0; c < m * n; ++c) b0[c] = detail::uniform(rng, 2.0, 3.0);
  for (Index c = 0; c < m * n; ++c) y0[c] = b0[c] + detail::normal(rng, 0.0, std::sqrt(0.1));
  std::vector<RakingRow> rows;
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      rows.push_back(detail::make_row({std::to_string(i + 1), std::to_string(j + 1)}, y0[i * n + j], 1.0));
  for (Index i = 0; i < m; ++i) rows.push_back(detail::make_row({std::to_string(i + 1), "0"}, b0.segment(i * n, n).sum(), kInf));
  for (Index j = 0; j < n; ++j) {
    double acc = 0.0;
    for (Index i = 0; i < m; ++i) acc += b0[i * n + j];
    rows.push_back(detail::make_row({"0", std::to_string(j + 1)}, acc, kInf));
  }
  UqScenario sc;
  sc.problem = build_problem(finalize_table(dims, std::move(rows)), LossConfig{loss, {}, {}, {}});
  sc.beta0 = b0;
  const Index nin = input_count(sc.problem);
  Matrix S = Matrix::Zero(nin, nin);
  S.topLeftCorner(m * n, m * n).setConstant(0.01);
  for (Index k = 0; k < m * n; ++k) S(k, k) = 0.1 * static_cast<double>(k + 1);
  sc.cov = InputCovariance::dense(cov_scale * S);
  return sc;
}

struct UqComparison {
  UqScenario scenario;
  Solution solution;
  CovarianceResult delta;
  MonteCarloResult mc;
};

inline UqComparison uq_comparison_run(std::uint64_t seed, std::size_t draws, const MonteCarloOptions& mc_opt = {},
                                      double cov_scale = 1.0, const SolverOptions& opt = {}) {
  UqComparison out;
  out.scenario = uq_scenario(seed, LossKind::Entropic, cov_scale);
  out.solution = solve(out.scenario.problem, opt);
  out.delta = delta_covariance(out.scenario.problem, out.solution, out.scenario.cov);
  out.mc = monte_carlo_covariance(out.scenario.problem, out.scenario.cov, draws, seed, mc_opt);
  return out;
}

inline CsvTable uq_comparison(std::uint64_t seed, std::size_t draws = 10000, const SolverOptions& opt = {}) {
  MonteCarloOptions mco;
  mco.skip_failed = true;
  mco.solver = opt;
  const UqComparison r = uq_comparison_run(seed, draws, mco, 1.0, opt);
  const Problem& pb = r.scenario.problem;
  CsvTable out;
  out.header = {"cell", "observed", "input_sd", "raked", "sd_delta", "mc_mean", "sd_mc", "mc_draws_used",
                "mc_draws_failed", "sens_from_y_3_4", "sens_to_beta_3_4"};
  const Index target = 2 * 5 + 3;  // cell (3, 4)
  for (Index c = 0; c < pb.p; ++c)
    out.rows.push_back({pb.cell_label(c), detail::fmt(pb.y[c]), detail::fmt(std::sqrt(r.scenario.cov.full(c, c))),
                        detail::fmt(r.solution.beta[c]), detail::fmt(std::sqrt(std::max(0.0, r.delta.sigma_beta(c, c)))),
                        detail::fmt(r.mc.mean_beta[c]), detail::fmt(std::sqrt(std::max(0.0, r.mc.sample_cov(c, c)))),
                        std::to_string(r.mc.used), std::to_string(r.mc.failed.size()),
                        detail::fmt(r.delta.sensitivity(c, target)), detail::fmt(r.delta.sensitivity(target, c))});
  return out;
}

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"loss_comparison", "weights_simulation", "aggregate_observations",
                                              "missing_data", "uq_comparison"};
  return names;
}

}  // namespace rakekit
