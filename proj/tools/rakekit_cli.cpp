// rakekit command-line tool: solve, uq, bench, experiment.
//
// Exit codes: 0 success, 1 input error, 2 numerical failure.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rakekit/rakekit.hpp"

namespace rk = rakekit;
using json = nlohmann::json;

namespace {

struct InputOptions {
  std::string input;
  std::vector<std::string> dims;
  std::vector<std::string> sentinels{"0"};
  std::string value_col = "value";
  std::string weight_col = "weights";
  std::string loss = "entropic";
  std::string lower, upper;
  std::string out, diag;
  std::string force_path;
};

struct SolverFlags {
  rk::SolverOptions opt;
  void add(CLI::App* app) {
    app->add_option("--max-outer", opt.max_outer, "Newton iteration limit")->capture_default_str();
    app->add_option("--grad-tol", opt.grad_tol, "dual gradient tolerance")->capture_default_str();
    app->add_option("--cons-tol", opt.cons_tol, "constraint violation tolerance")->capture_default_str();
    app->add_option("--krylov-rtol", opt.krylov_rtol, "inner solve relative tolerance")->capture_default_str();
    app->add_option("--krylov-maxit", opt.krylov_maxit, "inner solve iteration limit")->capture_default_str();
  }
};

void add_input_flags(CLI::App* app, InputOptions& in) {
  app->add_option("--input", in.input, "input CSV")->required();
  app->add_option("--dims", in.dims, "dimension columns, comma separated")->delimiter(',')->required();
  app->add_option("--sentinel", in.sentinels, "aggregate marker, one for all dimensions or one per dimension")
      ->delimiter(',')
      ->capture_default_str();
  app->add_option("--value-col", in.value_col, "value column")->capture_default_str();
  app->add_option("--weight-col", in.weight_col, "weight column")->capture_default_str();
  app->add_option("--loss", in.loss, "chi2, entropic or logistic")
      ->check(CLI::IsMember({"chi2", "entropic", "logistic"}))
      ->capture_default_str();
  app->add_option("--lower", in.lower, "logistic lower bound: column name or number");
  app->add_option("--upper", in.upper, "logistic upper bound: column name or number");
  app->add_option("--out", in.out, "raked CSV output (stdout when omitted)");
  app->add_option("--diag", in.diag, "diagnostics JSON output");
  app->add_option("--force-path", in.force_path, "solver path to use instead of the automatic choice")
      ->check(CLI::IsMember(rk::solver_paths()));
}

struct Loaded {
  rk::CsvTable table;
  rk::RakingData data;
  rk::Problem problem;
};

Loaded load(const InputOptions& in) {
  Loaded L;
  L.table = rk::read_csv_file(in.input);
  rk::TableSchema schema;
  if (in.sentinels.size() != 1 && in.sentinels.size() != in.dims.size())
    throw rk::Error(rk::ErrorCode::ParseError, "--sentinel needs one value or one per dimension");
  for (std::size_t d = 0; d < in.dims.size(); ++d) {
    rk::DimSpec ds;
    ds.name = in.dims[d];
    ds.aggregate_sentinel = in.sentinels.size() == 1 ? in.sentinels[0] : in.sentinels[d];
    schema.dims.push_back(ds);
  }
  schema.value_col = in.value_col;
  schema.weight_col = in.weight_col;
  rk::LossConfig cfg;
  cfg.kind = rk::parse_loss_kind(in.loss);
  auto bound = [&](const std::string& arg, std::optional<double>& scalar, std::string& col) {
    if (arg.empty()) return;
    double v;
    if (rk::parse_double(arg, v) && std::isfinite(v)) scalar = v;
    else col = arg;
  };
  bound(in.lower, cfg.lower, schema.lower_col);
  bound(in.upper, cfg.upper, schema.upper_col);
  L.data = rk::parse_table(L.table, schema);
  L.problem = rk::build_problem(L.data, cfg);
  for (const auto& w : L.data.warnings) std::cerr << "warning: " << w << "\n";
  return L;
}

json diagnostics_json(const rk::Problem& pb, const rk::RakingData& data, const rk::Solution& sol, const std::string& status) {
  json j;
  j["status"] = status;
  j["path"] = sol.diag.path;
  j["converged"] = sol.diag.converged;
  j["outer_iterations"] = sol.diag.outer_iterations;
  j["matvecs"] = sol.diag.matvecs;
  j["hvps"] = sol.diag.hvps;
  j["krylov_iterations"] = sol.diag.krylov_iterations;
  j["dual_objective"] = sol.diag.dual_objective;
  j["grad_norm"] = sol.diag.grad_norm;
  j["max_violation"] = sol.diag.max_violation;
  j["cells"] = pb.p;
  j["observed"] = pb.observed.size();
  j["missing"] = pb.missing.size();
  j["constraints"] = pb.A_all.rows();
  j["constraints_kept"] = pb.A.rows();
  j["aggregate_observations"] = pb.B.rows();
  json dropped = json::array();
  for (rk::Index d : pb.a_dropped) dropped.push_back(pb.a_source[static_cast<std::size_t>(d)] + 1);
  j["dropped_constraint_lines"] = dropped;
  j["notes"] = sol.diag.notes;
  j["warnings"] = data.warnings;
  json trace = json::array();
  for (const auto& r : sol.diag.trace)
    trace.push_back({{"iteration", r.iteration},
                     {"matvecs", r.matvecs},
                     {"dual_objective", r.dual_objective},
                     {"grad_norm", r.grad_norm},
                     {"max_violation", r.max_violation},
                     {"step", r.step}});
  j["trace"] = trace;
  return j;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw rk::Error(rk::ErrorCode::ParseError, "cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

void emit_csv(const std::string& path, const rk::CsvTable& t) {
  if (path.empty() || path == "-") rk::write_csv(std::cout, t);
  else rk::write_csv_file(path, t);
}

// Raked value per input row: the cell for granular rows, the member sum for
// aggregates.
std::vector<double> raked_per_row(const Loaded& L, const rk::Solution& sol) {
  std::vector<double> out;
  for (const auto& row : L.data.rows) {
    const auto cells = rk::detail::member_cells(row, L.data.dims);
    double acc = 0.0;
    for (rk::Index c : cells) acc += sol.beta[c];
    out.push_back(acc);
  }
  return out;
}

rk::CsvTable raked_table(const Loaded& L, const rk::Solution& sol, const rk::Matrix* sigma) {
  rk::CsvTable out = L.table;
  out.header.push_back("raked_value");
  out.header.push_back("recovered");
  if (sigma) out.header.push_back("sd");
  const auto raked = raked_per_row(L, sol);
  for (std::size_t r = 0; r < L.data.rows.size(); ++r) {
    const auto& row = L.data.rows[r];
    const auto cells = rk::detail::member_cells(row, L.data.dims);
    bool recovered = false;
    if (row.kind == rk::RowKind::Missing) recovered = sol.recovered[static_cast<std::size_t>(cells.front())];
    out.rows[r].push_back(rk::format_double(raked[r]));
    out.rows[r].push_back(recovered ? "1" : "0");
    if (sigma) {
      double v = 0.0;
      for (rk::Index a : cells)
        for (rk::Index b : cells) v += (*sigma)(a, b);
      out.rows[r].push_back(rk::format_double(std::sqrt(std::max(0.0, v))));
    }
  }
  return out;
}

int cmd_solve(const InputOptions& in, const rk::SolverOptions& base) {
  Loaded L = load(in);
  rk::SolverOptions opt = base;
  if (!in.force_path.empty()) opt.force_path = in.force_path;
  try {
    const rk::Solution sol = rk::solve(L.problem, opt);
    emit_csv(in.out, raked_table(L, sol, nullptr));
    if (!in.diag.empty()) write_json(in.diag, diagnostics_json(L.problem, L.data, sol, "converged"));
    std::cerr << "solved with " << sol.diag.path << " in " << sol.diag.outer_iterations << " iterations, max violation "
              << rk::format_double(sol.diag.max_violation) << "\n";
    return 0;
  } catch (const rk::SolveError& e) {
    // Partial results are still written so the failure can be inspected.
    const rk::Solution& sol = e.partial();
    if (sol.beta.size() == L.problem.p) emit_csv(in.out, raked_table(L, sol, nullptr));
    if (!in.diag.empty()) write_json(in.diag, diagnostics_json(L.problem, L.data, sol, std::string(rk::to_string(e.code()))));
    throw;
  }
}

struct UqFlags {
  std::string mode = "delta";
  std::string cov;
  std::string variance_col;
  std::size_t draws = 1000;
  std::uint64_t seed = 0;
  std::string sigma_out, sensitivity_out, draws_out;
  bool hold_chi2 = false;
  bool skip_failed = false;
  unsigned threads = 0;
};

rk::InputCovariance read_covariance(const Loaded& L, const UqFlags& f) {
  const rk::Problem& pb = L.problem;
  const rk::Index nin = rk::input_count(pb);
  if (!f.cov.empty()) {
    const rk::CsvTable t = rk::read_csv_file(f.cov);
    const std::size_t skip = (!t.header.empty() && t.header[0] == "input") ? 1 : 0;
    if (static_cast<rk::Index>(t.rows.size()) != nin || static_cast<rk::Index>(t.header.size() - skip) != nin)
      throw rk::Error(rk::ErrorCode::DimensionMismatch, "covariance CSV must be " + std::to_string(nin) + " x " +
                                                            std::to_string(nin) + " (observed cells, constraints, "
                                                            "aggregate observations, in input order)");
    rk::Matrix m(nin, nin);
    for (rk::Index i = 0; i < nin; ++i)
      for (rk::Index j = 0; j < nin; ++j) {
        double v;
        if (!rk::parse_double(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j) + skip], v) || !std::isfinite(v))
          throw rk::Error(rk::ErrorCode::ParseError, "bad covariance entry at row " + std::to_string(i + 1));
        m(i, j) = v;
      }
    return rk::InputCovariance::dense(m);
  }
  const long col = L.table.column(f.variance_col);
  if (col < 0) throw rk::Error(rk::ErrorCode::UnknownColumn, "variance column '" + f.variance_col + "' not found");
  std::vector<double> by_row(L.data.rows.size());
  for (std::size_t r = 0; r < L.data.rows.size(); ++r) {
    double v;
    if (!rk::parse_double(L.table.rows[r][static_cast<std::size_t>(col)], v))
      throw rk::Error(rk::ErrorCode::ParseError, "bad variance on data line " + std::to_string(r + 1));
    by_row[r] = std::isnan(v) ? 0.0 : v;
  }
  rk::Vector var(nin);
  rk::Index k = 0;
  for (rk::Index c : pb.observed) var[k++] = by_row[pb.cell_source[static_cast<std::size_t>(c)]];
  for (std::size_t r : pb.a_source) var[k++] = by_row[r];
  for (std::size_t r : pb.b_source) var[k++] = by_row[r];
  return rk::InputCovariance::diagonal(var);
}

rk::CsvTable matrix_table(const std::string& corner, const std::vector<std::string>& rows,
                          const std::vector<std::string>& cols, const rk::Matrix& m) {
  rk::CsvTable t;
  t.header.push_back(corner);
  t.header.insert(t.header.end(), cols.begin(), cols.end());
  for (rk::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> rec{rows[static_cast<std::size_t>(i)]};
    for (rk::Index j = 0; j < m.cols(); ++j) rec.push_back(rk::format_double(m(i, j)));
    t.rows.push_back(std::move(rec));
  }
  return t;
}

int cmd_uq(const InputOptions& in, const rk::SolverOptions& base, const UqFlags& f) {
  if (f.cov.empty() == f.variance_col.empty())
    throw rk::Error(rk::ErrorCode::ParseError, "uq needs exactly one of --cov or --variance-col");
  Loaded L = load(in);
  rk::SolverOptions opt = base;
  if (!in.force_path.empty()) opt.force_path = in.force_path;
  const rk::InputCovariance cov = read_covariance(L, f);
  const rk::Solution sol = rk::solve(L.problem, opt);
  const auto cells = rk::cell_labels(L.problem);
  const auto inputs = rk::input_labels(L.problem);
  json diag = diagnostics_json(L.problem, L.data, sol, "converged");

  rk::Matrix sigma;
  if (f.mode == "delta") {
    rk::UqOptions uo;
    uo.hold_chi2_curvature = f.hold_chi2;
    const rk::CovarianceResult res = rk::delta_covariance(L.problem, sol, cov, uo);
    sigma = res.sigma_beta;
    if (!f.sensitivity_out.empty()) emit_csv(f.sensitivity_out, matrix_table("target", cells, inputs, res.sensitivity));
    diag["uq"] = {{"mode", "delta"}};
  } else {
    rk::MonteCarloOptions mo;
    mo.solver = opt;
    mo.solver.force_path.reset();
    mo.keep_draws = !f.draws_out.empty();
    mo.skip_failed = f.skip_failed;
    mo.threads = f.threads;
    const rk::MonteCarloResult res = rk::monte_carlo_covariance(L.problem, cov, f.draws, f.seed, mo);
    sigma = res.sample_cov;
    if (!f.draws_out.empty()) {
      std::vector<std::string> names;
      for (rk::Index i = 0; i < res.draws.rows(); ++i) names.push_back(std::to_string(i));
      emit_csv(f.draws_out, matrix_table("draw", names, cells, res.draws));
    }
    diag["uq"] = {{"mode", "draws"}, {"draws", f.draws}, {"seed", f.seed}, {"used", res.used}, {"failed", res.failed}};
  }
  emit_csv(in.out, raked_table(L, sol, &sigma));
  if (!f.sigma_out.empty()) emit_csv(f.sigma_out, matrix_table("cell", cells, cells, sigma));
  if (!in.diag.empty()) write_json(in.diag, diag);
  return 0;
}

struct BenchFlags {
  long rows = 30, cols = 20;
  double sigma = 2.0;
  std::uint64_t seed = 0;
  int instances = 1;
  bool full = false;
  std::string out;
};

int cmd_bench(const BenchFlags& f, const rk::SolverOptions& opt) {
  long rows = f.rows, cols = f.cols;
  if (f.full) {
    rows = 300;
    cols = 200;
  }
  const rk::CsvTable t = rk::bench_table(rows, cols, f.sigma, f.seed, f.instances, opt);
  emit_csv(f.out, t);
  return 0;
}

struct ExperimentFlags {
  std::string name;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t draws = 10000;
  int sims = 500;
  int replicates = 1;
  double small_weight = 1e-3;
  bool gentle_noise = false;
};

int cmd_experiment(const ExperimentFlags& f, const rk::SolverOptions& opt) {
  rk::CsvTable t;
  if (f.name == "loss_comparison") t = rk::loss_comparison(f.seed, f.replicates, opt);
  else if (f.name == "weights_simulation") t = rk::weights_simulation(f.seed, f.sims, opt);
  else if (f.name == "aggregate_observations")
    t = f.gentle_noise ? rk::aggregate_observations(f.seed, 1.0, 1.1, opt) : rk::aggregate_observations(f.seed, 10.0, 11.0, opt);
  else if (f.name == "missing_data") t = rk::missing_data(f.seed, f.small_weight, opt);
  else if (f.name == "uq_comparison") t = rk::uq_comparison(f.seed, f.draws, opt);
  else {
    std::string known;
    for (const auto& n : rk::experiment_names()) known += (known.empty() ? "" : ", ") + n;
    throw rk::Error(rk::ErrorCode::UnknownExperiment, "unknown experiment '" + f.name + "' (known: " + known + ")");
  }
  emit_csv(f.out, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rakekit: raking of tables to marginal aggregates"};
  app.require_subcommand(1);

  InputOptions solve_in, uq_in;
  SolverFlags solve_sf, uq_sf, bench_sf, exp_sf;
  UqFlags uqf;
  BenchFlags bf;
  ExperimentFlags ef;

  CLI::App* solve = app.add_subcommand("solve", "rake a CSV table");
  add_input_flags(solve, solve_in);
  solve_sf.add(solve);

  CLI::App* uq = app.add_subcommand("uq", "propagate input covariance to the raked values");
  add_input_flags(uq, uq_in);
  uq_sf.add(uq);
  uq->add_option("--uq", uqf.mode, "delta or draws")->check(CLI::IsMember({"delta", "draws"}))->capture_default_str();
  uq->add_option("--cov", uqf.cov, "full input covariance CSV");
  uq->add_option("--variance-col", uqf.variance_col, "column holding per-row variances");
  uq->add_option("--draws", uqf.draws, "Monte Carlo draws")->check(CLI::Range(std::size_t{2}, std::size_t{100000000}))->capture_default_str();
  uq->add_option("--seed", uqf.seed, "random seed")->capture_default_str();
  uq->add_option("--sigma-out", uqf.sigma_out, "raked covariance CSV");
  uq->add_option("--sensitivity", uqf.sensitivity_out, "sensitivity CSV (delta mode)");
  uq->add_option("--draws-out", uqf.draws_out, "per-draw raked values CSV (draws mode)");
  uq->add_flag("--hold-chi2-curvature", uqf.hold_chi2, "treat the chi2 curvature 1/y as a fixed weight");
  uq->add_flag("--skip-failed", uqf.skip_failed, "drop draws whose solve fails instead of stopping");
  uq->add_option("--threads", uqf.threads, "worker threads (0: RAKEKIT_THREADS or all cores)");

  CLI::App* bench = app.add_subcommand("bench", "IPF vs dual Newton on random 2D entropic tables");
  bench_sf.add(bench);
  bench->add_option("--rows", bf.rows, "table rows")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--cols", bf.cols, "table columns")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--sigma", bf.sigma, "standard deviation of log y")->capture_default_str();
  bench->add_option("--seed", bf.seed, "seed of the first instance")->capture_default_str();
  bench->add_option("--instances", bf.instances, "number of instances")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_flag("--full", bf.full, "use a 300 x 200 table");
  bench->add_option("--out", bf.out, "output CSV (stdout when omitted)");

  CLI::App* exp = app.add_subcommand("experiment", "regenerate a synthetic scenario as CSV");
  exp_sf.add(exp);
  exp->add_option("name", ef.name, "loss_comparison, weights_simulation, aggregate_observations, missing_data, uq_comparison")
      ->required();
  exp->add_option("--seed", ef.seed, "random seed")->capture_default_str();
  exp->add_option("--out", ef.out, "output CSV (stdout when omitted)");
  exp->add_option("--draws", ef.draws, "Monte Carlo draws (uq_comparison)")->capture_default_str();
  exp->add_option("--sims", ef.sims, "simulations (weights_simulation)")->capture_default_str();
  exp->add_option("--replicates", ef.replicates, "replicates (loss_comparison)")->capture_default_str();
  exp->add_option("--small-weight", ef.small_weight, "weight of imputed cells (missing_data)")->capture_default_str();
  exp->add_flag("--gentle-noise", ef.gentle_noise, "noise factor in [1.0, 1.1] instead of [10, 11] (aggregate_observations)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*solve) return cmd_solve(solve_in, solve_sf.opt);
    if (*uq) return cmd_uq(uq_in, uq_sf.opt, uqf);
    if (*bench) return cmd_bench(bf, bench_sf.opt);
    if (*exp) return cmd_experiment(ef, exp_sf.opt);
  } catch (const rk::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rk::is_numerical(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
