#pragma once

// Covariance of raked values.
//
// Inputs are ordered as: observed cell values (ascending cell id), then every
// constraint margin in A_all order, then the aggregate observations. The
// delta method differentiates the optimality system
//
//   W grad f(beta; y) + B^T w_B grad f2(B beta; s_B) + A^T lambda = 0
//   A beta - s = 0
//
// over the free cells (observed, not pinned), giving the sensitivity
// d beta / d input and Sigma_beta = S Sigma S^T.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "rakekit/error.hpp"
#include "rakekit/krylov.hpp"
#include "rakekit/linop.hpp"
#include "rakekit/loss.hpp"
#include "rakekit/solver.hpp"
#include "rakekit/table.hpp"

namespace rakekit {

/// Covariance of the inputs: a full matrix or per-input variances.
struct InputCovariance {
  Matrix full;
  Vector variances;

  static InputCovariance dense(Matrix m) { return InputCovariance{std::move(m), Vector(0)}; }
  static InputCovariance diagonal(Vector v) { return InputCovariance{Matrix(0, 0), std::move(v)}; }

  bool is_diagonal() const { return full.size() == 0; }
  Index size() const { return is_diagonal() ? variances.size() : full.rows(); }

  Matrix as_dense() const { return is_diagonal() ? Matrix(variances.asDiagonal()) : full; }

  void validate(Index expected) const {
    if (size() != expected || (!is_diagonal() && full.cols() != expected))
      throw Error(ErrorCode::DimensionMismatch, "input covariance must be " + std::to_string(expected) + " x " +
                                                    std::to_string(expected) + ", got " + std::to_string(size()));
    if (is_diagonal()) {
      for (Index i = 0; i < variances.size(); ++i)
        if (!(variances[i] >= -1e-10) || !std::isfinite(variances[i]))
          throw Error(ErrorCode::DomainError, "variance " + std::to_string(i) + " is negative or not finite");
      return;
    }
    if (!full.allFinite()) throw Error(ErrorCode::DomainError, "input covariance has non-finite entries");
    const double asym = (full - full.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * std::max(1.0, full.cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::DomainError, "input covariance is not symmetric");
    if (expected > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(full, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-10)
        throw Error(ErrorCode::DomainError, "input covariance is not positive semidefinite");
    }
  }
};

struct CovarianceResult {
  Matrix sigma_beta;   // p x p
  Matrix sensitivity;  // p x inputs
  std::vector<std::string> input_labels;
  std::vector<std::string> cell_labels;
};

struct UqOptions {
  // Treat the chi2 curvature 1/y as a fixed weight (plain weighted least
  // squares). Off: differentiate through it.
  bool hold_chi2_curvature = false;
  Index dense_cap = 2000;
  double krylov_rtol = 1e-12;
  int krylov_maxit = 0;  // 0: 10 x system size
};

inline Index input_count(const Problem& pb) {
  return static_cast<Index>(pb.observed.size()) + pb.A_all.rows() + pb.B.rows();
}

inline std::vector<std::string> input_labels(const Problem& pb) {
  std::vector<std::string> out;
  for (Index c : pb.observed) out.push_back("y[" + pb.cell_label(c) + "]");
  for (Index i = 0; i < pb.A_all.rows(); ++i) out.push_back("s[" + std::to_string(i) + "]");
  for (Index i = 0; i < pb.B.rows(); ++i) out.push_back("s_b[" + std::to_string(i) + "]");
  return out;
}

inline std::vector<std::string> cell_labels(const Problem& pb) {
  std::vector<std::string> out;
  for (Index c = 0; c < pb.p; ++c) out.push_back(pb.cell_label(c));
  return out;
}

/// Mean input vector in the input order.
inline Vector input_vector(const Problem& pb) {
  Vector out(input_count(pb));
  Index k = 0;
  for (Index c : pb.observed) out[k++] = pb.y[c];
  for (Index i = 0; i < pb.A_all.rows(); ++i) out[k++] = pb.s_all[i];
  for (Index i = 0; i < pb.B.rows(); ++i) out[k++] = pb.s_b[i];
  return out;
}

/// Problem with its inputs replaced by `x` (input order).
inline Problem with_input_vector(const Problem& pb, const Vector& x) {
  const Index no = static_cast<Index>(pb.observed.size());
  return with_inputs(pb, x.head(no), x.segment(no, pb.A_all.rows()), x.tail(pb.B.rows()));
}

/// d beta / d input at a converged solution.
inline Matrix sensitivity_matrix(const Problem& pb, const Solution& sol, const UqOptions& opt = {}) {
  if (pb.has_missing()) throw Error(ErrorCode::Unsupported, "uncertainty propagation with missing cells is not supported");
  if (!sol.diag.converged) throw Error(ErrorCode::NotConverged, "solution did not converge; sensitivities would be meaningless");
  const Loss f1 = pb.observed_loss();
  const Index no = static_cast<Index>(pb.observed.size());
  const Index nin = input_count(pb);
  const Index kb = pb.B.rows();
  const Index ka = pb.A.rows();

  // Free cells and their position; frozen cells follow their own input.
  std::vector<Index> free_pos(static_cast<std::size_t>(pb.p), -1);
  std::vector<Index> free_cells, frozen_obs;
  for (Index i = 0; i < no; ++i) {
    if (f1.frozen(i)) frozen_obs.push_back(i);
    else {
      free_pos[static_cast<std::size_t>(pb.observed[static_cast<std::size_t>(i)])] = static_cast<Index>(free_cells.size());
      free_cells.push_back(i);
    }
  }
  const Index nf = static_cast<Index>(free_cells.size());
  const Vector beta_o = detail::gather(pb, sol.beta);
  const Vector h1 = hess_primal_diag(f1, beta_o);
  const Vector m1 = mixed_primal_diag(f1, beta_o, opt.hold_chi2_curvature);

  // d beta_i / d y_i for frozen cells: 1 when pinned by weight, exp(z / w)
  // for entropic cells at zero.
  const AggOperator K = stack(pb.A, pb.B);
  const Vector z = detail::gather(pb, -apply_transpose(K, sol.lambda));
  Vector dz(no);
  for (Index i : frozen_obs)
    dz[i] = std::isinf(f1.w[i]) ? 1.0 : std::exp(z[i] / f1.w[i]);

  Vector h2, m2;
  if (kb > 0) {
    const Loss f2 = pb.aggregate_loss();
    const Vector bb = apply(pb.B, sol.beta);
    h2 = hess_primal_diag(f2, bb);
    m2 = mixed_primal_diag(f2, bb, opt.hold_chi2_curvature);
  }

  const Index n = nf + ka;
  // Right-hand side dF/d input, only non-zero columns stored densely.
  Matrix R = Matrix::Zero(n, nin);
  for (Index q = 0; q < nf; ++q) R(q, free_cells[static_cast<std::size_t>(q)]) = m1[free_cells[static_cast<std::size_t>(q)]];
  // Frozen cells move the constraints and the aggregate-observation terms.
  std::vector<Index> obs_index(static_cast<std::size_t>(pb.p), -1);
  for (Index i = 0; i < no; ++i) obs_index[static_cast<std::size_t>(pb.observed[static_cast<std::size_t>(i)])] = i;
  for (Index a = 0; a < ka; ++a)
    for (Index c : pb.A.row(a)) {
      const Index i = obs_index[static_cast<std::size_t>(c)];
      if (free_pos[static_cast<std::size_t>(c)] < 0) R(nf + a, i) += dz[i];
    }
  for (Index b = 0; b < kb; ++b) {
    const auto& row = pb.B.row(b);
    for (Index c : row) {
      const Index fc = free_pos[static_cast<std::size_t>(c)];
      if (fc < 0) continue;
      for (Index c2 : row) {
        if (free_pos[static_cast<std::size_t>(c2)] >= 0) continue;
        const Index i2 = obs_index[static_cast<std::size_t>(c2)];
        R(fc, i2) += h2[b] * dz[i2];
      }
      R(fc, no + pb.A_all.rows() + b) += m2[b];
    }
  }
  for (std::size_t q = 0; q < pb.a_kept.size(); ++q) R(nf + static_cast<Index>(q), no + pb.a_kept[q]) = -1.0;

  Matrix X(n, nin);
  if (n <= opt.dense_cap) {
    Matrix J = Matrix::Zero(n, n);
    for (Index q = 0; q < nf; ++q) J(q, q) = h1[free_cells[static_cast<std::size_t>(q)]];
    for (Index b = 0; b < kb; ++b) {
      std::vector<Index> members;
      for (Index c : pb.B.row(b))
        if (free_pos[static_cast<std::size_t>(c)] >= 0) members.push_back(free_pos[static_cast<std::size_t>(c)]);
      for (Index u : members)
        for (Index v : members) J(u, v) += h2[b];
    }
    for (Index a = 0; a < ka; ++a)
      for (Index c : pb.A.row(a)) {
        const Index fc = free_pos[static_cast<std::size_t>(c)];
        if (fc < 0) continue;
        J(nf + a, fc) = 1.0;
        J(fc, nf + a) = 1.0;
      }
    Eigen::PartialPivLU<Matrix> lu(J);
    if (n > 0 && !(lu.rcond() > 1e-14))
      throw Error(ErrorCode::SingularKKT, "optimality system is singular; a constraint may touch only pinned cells");
    X = -lu.solve(R);
  } else {
    // Matrix-free KKT operator with a block-diagonal positive preconditioner.
    AggOperator Bf(nf), Af(nf);
    for (Index b = 0; b < kb; ++b) {
      std::vector<Index> r;
      for (Index c : pb.B.row(b))
        if (free_pos[static_cast<std::size_t>(c)] >= 0) r.push_back(free_pos[static_cast<std::size_t>(c)]);
      Bf.add_row(std::move(r));
    }
    for (Index a = 0; a < ka; ++a) {
      std::vector<Index> r;
      for (Index c : pb.A.row(a))
        if (free_pos[static_cast<std::size_t>(c)] >= 0) r.push_back(free_pos[static_cast<std::size_t>(c)]);
      Af.add_row(std::move(r));
    }
    Vector hf(nf);
    for (Index q = 0; q < nf; ++q) hf[q] = h1[free_cells[static_cast<std::size_t>(q)]];
    Vector top_diag = hf;
    if (kb > 0) {
      for (Index b = 0; b < kb; ++b)
        for (Index c : Bf.row(b)) top_diag[c] += h2[b];
    }
    const Vector inv_top = top_diag.cwiseInverse();
    const Vector schur = hvp_diagonal(Af, inv_top);
    Vector pre(n);
    pre.head(nf) = inv_top;
    for (Index a = 0; a < ka; ++a) pre[nf + a] = schur[a] > 0 ? 1.0 / schur[a] : 1.0;
    auto op = [&](const Vector& x) {
      Vector out(n);
      const Vector xb = x.head(nf);
      Vector top = hf.cwiseProduct(xb);
      if (kb > 0) top += apply_transpose(Bf, h2.cwiseProduct(apply(Bf, xb)));
      top += apply_transpose(Af, x.tail(ka));
      out.head(nf) = top;
      out.tail(ka) = apply(Af, xb);
      return out;
    };
    auto prec = [&](const Vector& r) { return Vector(pre.cwiseProduct(r)); };
    const int maxit = opt.krylov_maxit > 0 ? opt.krylov_maxit : static_cast<int>(10 * n);
    for (Index col = 0; col < nin; ++col) {
      const Vector rhs = -R.col(col);
      if (rhs.cwiseAbs().maxCoeff() == 0.0) {
        X.col(col).setZero();
        continue;
      }
      Vector x;
      const KrylovResult kr = minres(op, prec, rhs, x, opt.krylov_rtol, maxit);
      if (kr.breakdown) throw Error(ErrorCode::SingularKKT, "Krylov breakdown on the optimality system");
      if (!kr.converged)
        throw Error(ErrorCode::NotConverged, "Krylov solve for input " + std::to_string(col) + " stopped at relative residual " +
                                                 format_double(kr.rel_residual));
      X.col(col) = x;
    }
  }

  Matrix S = Matrix::Zero(pb.p, nin);
  for (Index q = 0; q < nf; ++q) S.row(pb.observed[static_cast<std::size_t>(free_cells[static_cast<std::size_t>(q)])]) = X.row(q);
  for (Index i : frozen_obs) S(pb.observed[static_cast<std::size_t>(i)], i) = dz[i];
  return S;
}

inline Matrix propagate(const Matrix& S, const InputCovariance& cov) {
  Matrix out = cov.is_diagonal() ? Matrix(S * cov.variances.asDiagonal() * S.transpose()) : Matrix(S * cov.full * S.transpose());
  return 0.5 * (out + out.transpose());
}

inline CovarianceResult delta_covariance(const Problem& pb, const Solution& sol, const InputCovariance& cov,
                                         const UqOptions& opt = {}) {
  cov.validate(input_count(pb));
  CovarianceResult res;
  res.sensitivity = sensitivity_matrix(pb, sol, opt);
  res.sigma_beta = propagate(res.sensitivity, cov);
  res.input_labels = input_labels(pb);
  res.cell_labels = cell_labels(pb);
  return res;
}

/// Weighted least-squares closed form: with W = diag(w / y),
/// Phi = A W^-1 A^T, M = I - W^-1 A^T Phi^-1 A and N = W^-1 A^T Phi^-1,
/// Sigma_beta = M Sy M^T + N Ss N^T + M Sys N^T + N Sys^T M^T.
inline CovarianceResult chi2_closed_form_covariance(const Problem& pb, const InputCovariance& cov) {
  if (pb.loss != LossKind::Chi2) throw Error(ErrorCode::Unsupported, "closed-form covariance needs the chi2 loss");
  if (pb.has_missing() || pb.B.rows() > 0)
    throw Error(ErrorCode::Unsupported, "closed-form covariance handles constraints only, without missing cells");
  const Index nin = input_count(pb);
  cov.validate(nin);
  const Index p = pb.p;
  const Index k = pb.A.rows();
  Vector winv(p);
  for (Index c = 0; c < p; ++c) winv[c] = std::isinf(pb.w[c]) ? 0.0 : pb.y[c] / pb.w[c];
  const Matrix A = assemble_dense(pb.A, 16'000'000);
  const Matrix WiAt = winv.asDiagonal() * A.transpose();
  const Matrix Phi = A * WiAt;
  Eigen::LDLT<Matrix> ldlt(Phi);
  if (k > 0) {
    const Vector d = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(d.minCoeff() > 1e-13 * d.cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::SingularSystem, "A W^-1 A^T is singular");
  }
  const Matrix N = k > 0 ? Matrix(ldlt.solve(WiAt.transpose()).transpose()) : Matrix(p, 0);
  const Matrix M = Matrix::Identity(p, p) - N * A;

  Matrix S = Matrix::Zero(p, nin);
  S.leftCols(p) = M;
  for (std::size_t q = 0; q < pb.a_kept.size(); ++q) S.col(p + pb.a_kept[q]) = N.col(static_cast<Index>(q));

  const Matrix C = cov.as_dense();
  std::vector<Index> srows;
  for (Index a : pb.a_kept) srows.push_back(p + a);
  Matrix Ss(k, k), Sys(p, k);
  for (Index a = 0; a < k; ++a) {
    for (Index b = 0; b < k; ++b) Ss(a, b) = C(srows[static_cast<std::size_t>(a)], srows[static_cast<std::size_t>(b)]);
    Sys.col(a) = C.block(0, srows[static_cast<std::size_t>(a)], p, 1);
  }
  const Matrix Sy = C.topLeftCorner(p, p);
  const Matrix cross = M * Sys * N.transpose();
  Matrix sigma = M * Sy * M.transpose() + N * Ss * N.transpose() + cross + cross.transpose();
  CovarianceResult res;
  res.sigma_beta = 0.5 * (sigma + sigma.transpose());
  res.sensitivity = std::move(S);
  res.input_labels = input_labels(pb);
  res.cell_labels = cell_labels(pb);
  return res;
}

// ---------------------------------------------------------------------------
// Monte Carlo

struct MonteCarloOptions {
  unsigned threads = 0;     // 0: RAKEKIT_THREADS or hardware concurrency
  bool keep_draws = false;  // store every raked draw
  bool skip_failed = false; // drop draws whose solve fails instead of aborting
  SolverOptions solver;
};

struct MonteCarloResult {
  Vector mean_beta;
  Matrix sample_cov;
  Matrix draws;  // n_draws x p when kept; rows of failed draws are NaN
  std::vector<std::size_t> failed;
  std::size_t used = 0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of draw `i`, independent of scheduling.
inline std::uint64_t draw_seed(std::uint64_t seed, std::uint64_t i) { return splitmix64(splitmix64(seed) ^ splitmix64(i + 1)); }

inline unsigned worker_count(unsigned requested) {
  unsigned n = requested;
  if (n == 0) {
    n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("RAKEKIT_THREADS")) {
      const long cap = std::strtol(env, nullptr, 10);
      if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
    }
  }
  return std::max(1u, n);
}

namespace detail {

// Running mean and scatter matrix; merged pairwise in chunk order.
struct Moments {
  double n = 0.0;
  Vector mean;
  Matrix m2;

  explicit Moments(Index p) : mean(Vector::Zero(p)), m2(Matrix::Zero(p, p)) {}

  void add(const Vector& x) {
    n += 1.0;
    const Vector d = x - mean;
    mean += d / n;
    m2.noalias() += d * (x - mean).transpose();
  }

  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double tot = n + o.n;
    const Vector d = o.mean - mean;
    mean += d * (o.n / tot);
    m2 += o.m2 + d * d.transpose() * (n * o.n / tot);
    n = tot;
  }
};

/// Factor L with L L^T = Sigma, tolerating singular PSD matrices.
inline Matrix covariance_factor(const InputCovariance& cov) {
  if (cov.is_diagonal()) return Matrix(cov.variances.cwiseMax(0.0).cwiseSqrt().asDiagonal());
  Eigen::LLT<Matrix> llt(cov.full);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov.full);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Rakes `n_draws` multivariate normal perturbations of the inputs.
/// Results depend only on `seed`, not on the thread count.
inline MonteCarloResult monte_carlo_covariance(const Problem& pb, const InputCovariance& cov, std::size_t n_draws,
                                               std::uint64_t seed, const MonteCarloOptions& opt = {}) {
  if (n_draws < 2) throw Error(ErrorCode::DomainError, "Monte Carlo needs at least 2 draws");
  const Index nin = input_count(pb);
  cov.validate(nin);
  const Matrix L = detail::covariance_factor(cov);
  const Vector mu = input_vector(pb);
  const Index p = pb.p;

  constexpr std::size_t kChunk = 1024;
  const std::size_t n_chunks = (n_draws + kChunk - 1) / kChunk;
  std::vector<detail::Moments> chunk_moments(n_chunks, detail::Moments(p));
  std::vector<std::vector<std::size_t>> chunk_failed(n_chunks);
  std::vector<std::string> chunk_error(n_chunks);
  MonteCarloResult res;
  if (opt.keep_draws) res.draws = Matrix::Constant(static_cast<Index>(n_draws), p, std::nan(""));

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  auto worker = [&]() {
    Vector x(nin), e(nin);
    while (!abort.load()) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) break;
      const std::size_t lo = c * kChunk, hi = std::min(n_draws, lo + kChunk);
      for (std::size_t i = lo; i < hi; ++i) {
        std::mt19937_64 rng(draw_seed(seed, i));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Index j = 0; j < nin; ++j) e[j] = normal(rng);
        x = mu + L * e;
        try {
          const Problem draw = with_input_vector(pb, x);
          const Solution sol = solve(draw, opt.solver);
          chunk_moments[c].add(sol.beta);
          if (opt.keep_draws) res.draws.row(static_cast<Index>(i)) = sol.beta.transpose();
        } catch (const Error& err) {
          chunk_failed[c].push_back(i);
          if (!opt.skip_failed) {
            chunk_error[c] = "draw " + std::to_string(i) + ": " + err.what();
            abort.store(true);
            break;
          }
        }
      }
    }
  };

  const unsigned nt = std::min<unsigned>(worker_count(opt.threads), static_cast<unsigned>(n_chunks));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t c = 0; c < n_chunks; ++c)
    if (!chunk_error[c].empty()) throw Error(ErrorCode::DrawSolveFailed, chunk_error[c]);

  detail::Moments total(p);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    total.merge(chunk_moments[c]);
    res.failed.insert(res.failed.end(), chunk_failed[c].begin(), chunk_failed[c].end());
  }
  res.used = static_cast<std::size_t>(total.n);
  if (res.used < 2) throw Error(ErrorCode::DrawSolveFailed, "fewer than 2 draws could be raked");
  res.mean_beta = total.mean;
  res.sample_cov = total.m2 / (total.n - 1.0);
  return res;
}

// ---------------------------------------------------------------------------
// Queries

enum class QueryKind { Target, Source };

/// Row `index` (all inputs' influence on one raked cell) or column `index`
/// (one input's influence on every raked cell) of the sensitivity matrix.
inline Vector sensitivity_query(const CovarianceResult& res, QueryKind kind, Index index) {
  const Matrix& S = res.sensitivity;
  if (kind == QueryKind::Target) {
    if (index < 0 || index >= S.rows())
      throw Error(ErrorCode::IndexOutOfRange, "target cell " + std::to_string(index) + " out of range");
    return S.row(index).transpose();
  }
  if (index < 0 || index >= S.cols())
    throw Error(ErrorCode::IndexOutOfRange, "input " + std::to_string(index) + " out of range");
  return S.col(index);
}

}  // namespace rakekit
