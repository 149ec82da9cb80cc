#pragma once

// Raking solvers. All of them work on the dual
//
//   D(lambda) = f1*(-K^T lambda) + f2*(lambda_B) + lambda_A^T s,   K = [A; B]
//
// whose minimiser gives beta = grad f1*(-K^T lambda) and the fitted aggregate
// observations zeta = grad f2*(lambda_B). The gradient is
// [s - A beta; zeta - B beta] and the Hessian K S1 K^T + diag(0, S2) with
// S1, S2 the conjugate curvatures.
//
// Missing cells carry no loss, which turns into the dual constraint
// (K^T lambda)_M = 0. That subspace is handled by projecting every Newton
// step onto null(K_M^T); missing beta is recovered from the margins at the end.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "rakekit/error.hpp"
#include "rakekit/krylov.hpp"
#include "rakekit/linop.hpp"
#include "rakekit/loss.hpp"
#include "rakekit/table.hpp"

namespace rakekit {

struct SolverOptions {
  int max_outer = 50;
  double grad_tol = 1e-10;
  double cons_tol = 1e-8;
  double krylov_rtol = 1e-4;
  int krylov_maxit = 100;
  double armijo_c = 1e-4;
  double min_step = 0x1p-30;
  long ipf_max_sweeps = 100000;
  std::optional<std::string> force_path;

  void validate() const {
    if (!(grad_tol > 0 && cons_tol > 0 && krylov_rtol > 0 && armijo_c > 0 && armijo_c < 1 && min_step > 0) ||
        max_outer < 1 || krylov_maxit < 1 || ipf_max_sweeps < 1)
      throw Error(ErrorCode::DomainError, "solver options: tolerances must be positive and iteration limits >= 1");
  }
};

struct IterationRecord {
  int iteration = 0;
  std::size_t matvecs = 0;
  double dual_objective = 0.0;
  double grad_norm = 0.0;
  double max_violation = 0.0;
  double step = 0.0;
};

struct Diagnostics {
  std::string path;
  bool converged = false;
  int outer_iterations = 0;
  // Matvec-equivalents: Newton counts each Hessian product and each
  // gradient/objective evaluation, IPF one per block update.
  std::size_t matvecs = 0;
  std::size_t hvps = 0;
  std::size_t krylov_iterations = 0;
  std::size_t flops = 0;
  double dual_objective = 0.0;
  double grad_norm = 0.0;
  double max_violation = 0.0;
  std::vector<IterationRecord> trace;
  std::vector<std::string> notes;
};

struct Solution {
  Vector beta;    // all p cells; NaN where a missing cell could not be recovered
  Vector lambda;  // pruned A rows, then B rows
  Vector zeta;    // fitted aggregate observations
  std::vector<bool> recovered;  // per cell: missing and recovered
  std::vector<bool> unrecoverable;
  Diagnostics diag;

  Index k_a() const { return lambda.size() - zeta.size(); }
};

/// Numerical failure that still carries the best available iterate.
class SolveError : public Error {
 public:
  SolveError(ErrorCode code, const std::string& what, Solution partial)
      : Error(code, what), partial_(std::move(partial)) {}
  const Solution& partial() const { return partial_; }

 private:
  Solution partial_;
};

/// Multipliers expanded to every constraint row of A_all (dropped rows 0).
inline Vector lambda_all_rows(const Problem& pb, const Solution& sol) {
  Vector out = Vector::Zero(pb.A_all.rows());
  for (std::size_t a = 0; a < pb.a_kept.size(); ++a) out[pb.a_kept[a]] = sol.lambda[static_cast<Index>(a)];
  return out;
}

inline double max_violation(const AggOperator& A, const Vector& s, const Vector& beta) {
  if (A.rows() == 0) return 0.0;
  return (apply(A, beta) - s).cwiseAbs().maxCoeff();
}

namespace detail {

inline double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline double margin_scale(const Problem& pb) {
  return std::max({1.0, inf_norm(pb.s), inf_norm(pb.s_b)});
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

// Scatter observed-coordinate values into a length-p vector (0 elsewhere).
inline Vector scatter(const Problem& pb, const Vector& obs) {
  Vector out = Vector::Zero(pb.p);
  for (std::size_t i = 0; i < pb.observed.size(); ++i) out[pb.observed[i]] = obs[static_cast<Index>(i)];
  return out;
}

inline Vector gather(const Problem& pb, const Vector& full) {
  Vector out(static_cast<Index>(pb.observed.size()));
  for (std::size_t i = 0; i < pb.observed.size(); ++i) out[static_cast<Index>(i)] = full[pb.observed[i]];
  return out;
}

/// Dual state at one multiplier vector.
struct DualPoint {
  Vector lambda;
  Vector beta;   // length p, 0 on missing cells
  Vector zeta;
  Vector grad;
  double value = 0.0;
  bool valid = false;
};

class DualModel {
 public:
  DualModel(const Problem& pb, FlopCounter* flops)
      : pb_(pb), K_(stack(pb.A, pb.B)), f1_(pb.observed_loss()), flops_(flops) {
    if (pb.B.rows() > 0) f2_ = pb.aggregate_loss();
  }

  Index ka() const { return pb_.A.rows(); }
  Index kb() const { return pb_.B.rows(); }
  Index dim() const { return K_.rows(); }
  const AggOperator& K() const { return K_; }

  DualPoint eval(const Vector& lambda) const {
    DualPoint pt;
    pt.lambda = lambda;
    const Vector z = -apply_transpose(K_, lambda, flops_);
    const Vector zo = gather(pb_, z);
    const Vector bo = grad_conjugate(f1_, zo);
    double value = conjugate(f1_, zo) + lambda.head(ka()).dot(pb_.s);
    pt.zeta = Vector(kb());
    if (kb() > 0) {
      const Vector lb = lambda.tail(kb());
      pt.zeta = grad_conjugate(f2_, lb);
      value += conjugate(f2_, lb);
    }
    pt.beta = scatter(pb_, bo);
    const Vector kbeta = apply(K_, pt.beta, flops_);
    pt.grad.resize(dim());
    pt.grad.head(ka()) = pb_.s - kbeta.head(ka());
    if (kb() > 0) pt.grad.tail(kb()) = pt.zeta - kbeta.tail(kb());
    pt.value = value;
    pt.valid = std::isfinite(value) && all_finite(pt.beta) && all_finite(pt.grad);
    return pt;
  }

  /// Conjugate curvature over all p cells (0 on missing and frozen) and over B.
  std::pair<Vector, Vector> curvature(const Vector& lambda) const {
    const Vector zo = gather(pb_, -apply_transpose(K_, lambda));
    Vector s1 = scatter(pb_, hess_conjugate_diag(f1_, zo));
    Vector s2 = kb() > 0 ? hess_conjugate_diag(f2_, lambda.tail(kb())) : Vector(0);
    return {std::move(s1), std::move(s2)};
  }

  Vector hess_apply(const Vector& s1, const Vector& s2, const Vector& x) const {
    Vector out = hvp(K_, s1, x, flops_);
    if (kb() > 0) out.tail(kb()) += s2.cwiseProduct(x.tail(kb()));
    return out;
  }

  Vector hess_diagonal(const Vector& s1, const Vector& s2) const {
    Vector d = hvp_diagonal(K_, s1);
    if (kb() > 0) d.tail(kb()) += s2;
    return d;
  }

 private:
  const Problem& pb_;
  AggOperator K_;
  Loss f1_;
  Loss f2_;
  FlopCounter* flops_;
};

/// Orthogonal projector onto null(K_M^T), stored through an orthonormal basis
/// of range(K_M).
struct NullProjector {
  Matrix Q;  // k x r
  bool identity() const { return Q.cols() == 0; }
  Vector apply(const Vector& x) const {
    if (identity()) return x;
    return x - Q * (Q.transpose() * x);
  }
};

inline Matrix missing_columns(const Problem& pb, const AggOperator& K) {
  const std::size_t entries = static_cast<std::size_t>(K.rows()) * pb.missing.size();
  if (entries > 16'000'000)
    throw Error(ErrorCode::TooLarge, "missing-cell system would hold " + std::to_string(entries) + " entries");
  Matrix KM = Matrix::Zero(K.rows(), static_cast<Index>(pb.missing.size()));
  std::vector<Index> pos(static_cast<std::size_t>(pb.p), -1);
  for (std::size_t j = 0; j < pb.missing.size(); ++j) pos[static_cast<std::size_t>(pb.missing[j])] = static_cast<Index>(j);
  for (Index i = 0; i < K.rows(); ++i)
    for (Index c : K.row(i))
      if (pos[static_cast<std::size_t>(c)] >= 0) KM(i, pos[static_cast<std::size_t>(c)]) = 1.0;
  return KM;
}

inline NullProjector make_projector(const Matrix& KM) {
  NullProjector P;
  if (KM.cols() == 0 || KM.rows() == 0) return P;
  Eigen::ColPivHouseholderQR<Matrix> qr(KM);
  qr.setThreshold(1e-10);
  const Index r = qr.rank();
  if (r == 0) return P;
  Matrix full = qr.householderQ();
  P.Q = full.leftCols(r);
  return P;
}

/// Damped Newton-Krylov on the (possibly projected) dual.
inline Solution newton_core(const Problem& pb, const SolverOptions& opt, const NullProjector& proj,
                            const std::string& path) {
  opt.validate();
  FlopCounter flops;
  DualModel model(pb, &flops);
  Diagnostics diag;
  diag.path = path;
  const double scale = margin_scale(pb);
  const double gtol = opt.grad_tol * scale;
  const double floor_tol = opt.cons_tol * scale;

  auto pgrad = [&](const DualPoint& pt) { return proj.apply(pt.grad); };

  DualPoint cur = model.eval(Vector::Zero(model.dim()));
  diag.matvecs += 1;
  if (!cur.valid) throw Error(ErrorCode::DomainError, "dual objective is not finite at the starting point");
  Vector pg = pgrad(cur);
  double gnorm = inf_norm(pg);
  auto record = [&](int it, double step) {
    IterationRecord rec;
    rec.iteration = it;
    rec.matvecs = diag.matvecs;
    rec.dual_objective = cur.value;
    rec.grad_norm = gnorm;
    // Only the A block of the gradient is a constraint residual.
    rec.max_violation = proj.identity() ? inf_norm(cur.grad.head(model.ka())) : inf_norm(pg.head(model.ka()));
    rec.step = step;
    diag.trace.push_back(rec);
  };
  record(0, 0.0);

  bool converged = gnorm <= gtol;
  bool stalled = false;
  int it = 0;
  while (!converged && it < opt.max_outer) {
    ++it;
    auto [s1, s2] = model.curvature(cur.lambda);
    const Vector hd = model.hess_diagonal(s1, s2);
    Vector inv_d(hd.size());
    for (Index i = 0; i < hd.size(); ++i) inv_d[i] = hd[i] > 1e-300 ? 1.0 / hd[i] : 1.0;

    auto op = [&](const Vector& x) {
      diag.hvps += 1;
      diag.matvecs += 1;
      return proj.apply(model.hess_apply(s1, s2, proj.apply(x)));
    };
    auto jacobi = [&](const Vector& r) { return proj.apply(inv_d.cwiseProduct(proj.apply(r))); };
    auto identity = [&](const Vector& r) { return proj.apply(r); };

    Vector d;
    KrylovResult kr = minres(op, jacobi, Vector(-pg), d, opt.krylov_rtol, opt.krylov_maxit);
    if (kr.breakdown) {
      diag.notes.push_back("iteration " + std::to_string(it) + ": preconditioner breakdown, restarted unpreconditioned");
      kr = minres(op, identity, Vector(-pg), d, opt.krylov_rtol, opt.krylov_maxit);
      if (kr.breakdown) {
        Solution partial{cur.beta, cur.lambda, cur.zeta, {}, {}, diag};
        throw SolveError(ErrorCode::SingularSystem, "Krylov breakdown in the Newton system", std::move(partial));
      }
    }
    diag.krylov_iterations += static_cast<std::size_t>(kr.iterations);
    d = proj.apply(d);

    double slope = pg.dot(d);
    if (!(slope < 0.0) || !d.allFinite()) {
      // Inexact step is not a descent direction; fall back to scaled gradient.
      d = -jacobi(pg);
      slope = pg.dot(d);
      diag.notes.push_back("iteration " + std::to_string(it) + ": fell back to the preconditioned gradient");
    }

    double t = 1.0;
    bool accepted = false;
    DualPoint trial;
    while (t >= opt.min_step) {
      trial = model.eval(cur.lambda + t * d);
      diag.matvecs += 1;
      if (trial.valid) {
        if (trial.value <= cur.value + opt.armijo_c * t * slope) {
          accepted = true;
          break;
        }
        // Near the optimum the decrease drowns in rounding; a smaller
        // gradient is then the better progress measure.
        const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(cur.value));
        if (trial.value <= cur.value + noise && inf_norm(pgrad(trial)) < gnorm) {
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) {
      stalled = true;
      break;
    }
    cur = std::move(trial);
    pg = pgrad(cur);
    gnorm = inf_norm(pg);
    record(it, t);
    converged = gnorm <= gtol;
  }

  diag.outer_iterations = it;
  diag.dual_objective = cur.value;
  diag.grad_norm = gnorm;
  diag.flops = flops.flops;
  if (!converged && gnorm <= floor_tol) {
    diag.notes.push_back("stopped at the rounding floor with gradient norm " + format_double(gnorm));
    converged = true;
  }
  diag.converged = converged;
  Solution sol{cur.beta, cur.lambda, cur.zeta, std::vector<bool>(static_cast<std::size_t>(pb.p), false),
               std::vector<bool>(static_cast<std::size_t>(pb.p), false), std::move(diag)};
  if (!converged) {
    sol.diag.max_violation = inf_norm(cur.grad.head(model.ka()));
    const std::string why = stalled ? "line search failed to make progress" : "iteration limit reached";
    throw SolveError(ErrorCode::NoConvergence,
                     why + " after " + std::to_string(it) + " iterations; gradient norm " + format_double(gnorm) +
                         ", tolerance " + format_double(gtol),
                     std::move(sol));
  }
  return sol;
}

inline void finish(const Problem& pb, const SolverOptions& opt, Solution& sol) {
  Vector b = sol.beta;
  for (Index i = 0; i < b.size(); ++i)
    if (std::isnan(b[i])) b[i] = 0.0;
  sol.diag.max_violation = max_violation(pb.A, pb.s, b);
  if (sol.zeta.size() != pb.B.rows()) sol.zeta = apply(pb.B, b);
  const double tol = opt.cons_tol * margin_scale(pb);
  if (sol.diag.max_violation > tol) {
    sol.diag.converged = false;
    throw SolveError(ErrorCode::NoConvergence,
                     "constraint violation " + format_double(sol.diag.max_violation) + " exceeds " + format_double(tol),
                     sol);
  }
}

inline void require_no_missing(const Problem& pb, const char* who) {
  if (pb.has_missing()) throw Error(ErrorCode::Unsupported, std::string(who) + " does not handle missing cells");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1D

/// One all-ones constraint with the entropic loss. Equal finite weights give
/// the proportional scaling s / sum(y); otherwise a scalar Newton iteration on
/// sum_i y_i exp(-lambda / w_i) = s.
inline Solution solve_1d_entropic(const Vector& y, const Vector& w_in, double s, const SolverOptions& opt = {}) {
  opt.validate();
  const Index n = y.size();
  if (n == 0) throw Error(ErrorCode::EmptyProblem, "no cells");
  const Vector w = w_in.size() ? w_in : Vector::Ones(n);
  if (w.size() != n) throw Error(ErrorCode::DimensionMismatch, "weight length");
  if (!(s > 0.0)) throw Error(ErrorCode::NonPositiveInput, "margin must be positive");
  for (Index i = 0; i < n; ++i) {
    if (!(y[i] >= 0.0) || !std::isfinite(y[i])) throw Error(ErrorCode::NonPositiveInput, "observations must be non-negative");
    if (!(w[i] > 0.0)) throw Error(ErrorCode::BadWeight, "weights must be positive");
  }
  if (!(y.sum() > 0.0)) throw Error(ErrorCode::NonPositiveInput, "observations sum to zero");

  Solution sol;
  sol.recovered.assign(static_cast<std::size_t>(n), false);
  sol.unrecoverable.assign(static_cast<std::size_t>(n), false);
  sol.zeta = Vector(0);
  sol.lambda = Vector(1);
  const bool uniform = std::isfinite(w[0]) && (w.array() == w[0]).all();
  if (uniform) {
    const double factor = s / y.sum();
    sol.beta = factor * y;
    sol.lambda[0] = -w[0] * std::log(factor);
    sol.diag.path = "1d_closed_form";
    sol.diag.converged = true;
    sol.diag.matvecs = 1;
    sol.diag.max_violation = std::abs(sol.beta.sum() - s);
    return sol;
  }

  // Frozen cells (infinite weight or zero value) contribute a constant.
  double fixed = 0.0;
  for (Index i = 0; i < n; ++i)
    if (std::isinf(w[i]) || y[i] == 0.0) fixed += y[i];
  const double target = s - fixed;
  sol.diag.path = "1d_weighted_newton";
  auto beta_at = [&](double lam) {
    Vector b(n);
    for (Index i = 0; i < n; ++i) b[i] = (std::isinf(w[i]) || y[i] == 0.0) ? y[i] : y[i] * std::exp(-lam / w[i]);
    return b;
  };
  auto dual = [&](double lam) {
    double v = lam * s;
    for (Index i = 0; i < n; ++i) {
      if (std::isinf(w[i]) || y[i] == 0.0) v -= lam * y[i];
      else v += w[i] * y[i] * std::expm1(-lam / w[i]);
    }
    return v;
  };
  bool any_free = false;
  for (Index i = 0; i < n; ++i) any_free |= !(std::isinf(w[i]) || y[i] == 0.0);
  if (!any_free || !(target > 0.0)) {
    if (std::abs(target) <= opt.cons_tol * std::max(1.0, s) && !any_free) {
      sol.beta = y;
      sol.lambda[0] = 0.0;
      sol.diag.converged = true;
      return sol;
    }
    throw Error(ErrorCode::NonPositiveInput, "pinned cells already exceed the margin");
  }

  double lam = 0.0;
  double val = dual(lam);
  const double tol = opt.grad_tol * std::max(1.0, s);
  for (int it = 1; it <= std::max(opt.max_outer, 200); ++it) {
    Vector b = beta_at(lam);
    const double g = s - b.sum();
    sol.diag.matvecs += 1;
    sol.diag.trace.push_back({it - 1, sol.diag.matvecs, val, std::abs(g), std::abs(g), 0.0});
    if (std::abs(g) <= tol) {
      sol.beta = b;
      sol.lambda[0] = lam;
      sol.diag.converged = true;
      sol.diag.outer_iterations = it - 1;
      sol.diag.dual_objective = val;
      sol.diag.grad_norm = std::abs(g);
      sol.diag.max_violation = std::abs(g);
      return sol;
    }
    double h = 0.0;
    for (Index i = 0; i < n; ++i)
      if (!(std::isinf(w[i]) || y[i] == 0.0)) h += b[i] / w[i];
    const double d = -g / h;
    double t = 1.0;
    bool ok = false;
    while (t >= opt.min_step) {
      const double trial = dual(lam + t * d);
      // Near the solution the dual value stops resolving the decrease; a full
      // step that shrinks the residual is taken anyway.
      const bool shrinks = t == 1.0 && std::abs(s - beta_at(lam + d).sum()) < 0.5 * std::abs(g);
      if (std::isfinite(trial) && (trial <= val + opt.armijo_c * t * g * d || shrinks)) {
        lam += t * d;
        val = trial;
        ok = true;
        break;
      }
      t *= 0.5;
    }
    if (!ok) break;
  }
  sol.beta = beta_at(lam);
  sol.lambda[0] = lam;
  sol.diag.max_violation = std::abs(sol.beta.sum() - s);
  throw SolveError(ErrorCode::NoConvergence, "weighted 1D Newton did not converge", sol);
}

// ---------------------------------------------------------------------------
// chi2

/// The chi2 dual is quadratic, so one linear solve is exact:
/// (A S A^T) lambda = A y - s with S = diag(y / w), beta = y - S A^T lambda.
inline Solution solve_chi2_closed_form(const Problem& pb, const SolverOptions& opt = {}) {
  if (pb.loss != LossKind::Chi2) throw Error(ErrorCode::Unsupported, "chi2 closed form needs the chi2 loss");
  detail::require_no_missing(pb, "chi2 closed form");
  if (pb.B.rows() > 0) throw Error(ErrorCode::Unsupported, "chi2 closed form handles constraints only");
  const Loss f = pb.observed_loss();
  const Vector S = hess_conjugate_diag(f, Vector::Zero(pb.p));
  const Index k = pb.A.rows();

  Solution sol;
  sol.diag.path = "chi2_closed_form";
  sol.recovered.assign(static_cast<std::size_t>(pb.p), false);
  sol.unrecoverable.assign(static_cast<std::size_t>(pb.p), false);
  sol.zeta = Vector(0);
  if (k == 0) {
    sol.beta = pb.y;
    sol.lambda = Vector(0);
    sol.diag.converged = true;
    return sol;
  }

  // Gram matrix A S A^T assembled cell by cell.
  std::vector<std::vector<Index>> rows_of(static_cast<std::size_t>(pb.p));
  for (Index i = 0; i < k; ++i)
    for (Index c : pb.A.row(i)) rows_of[static_cast<std::size_t>(c)].push_back(i);
  Matrix G = Matrix::Zero(k, k);
  for (Index c = 0; c < pb.p; ++c) {
    const auto& r = rows_of[static_cast<std::size_t>(c)];
    for (Index a : r)
      for (Index b : r) G(a, b) += S[c];
  }
  Eigen::LDLT<Matrix> ldlt(G);
  const Vector dg = ldlt.vectorD();
  const double dmax = dg.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(dg.minCoeff() > 1e-13 * dmax))
    throw Error(ErrorCode::SingularSystem, "A S A^T is singular; some constraint touches only pinned cells");

  const Vector r0 = apply(pb.A, pb.y) - pb.s;
  Vector lambda = ldlt.solve(r0);
  Vector beta = pb.y - S.cwiseProduct(apply_transpose(pb.A, lambda));
  // One refinement pass against the constraint residual.
  const Vector res = apply(pb.A, beta) - pb.s;
  const Vector dl = ldlt.solve(res);
  lambda += dl;
  beta -= S.cwiseProduct(apply_transpose(pb.A, dl));

  sol.beta = beta;
  sol.lambda = lambda;
  sol.diag.converged = true;
  sol.diag.matvecs = 4;
  sol.diag.max_violation = max_violation(pb.A, pb.s, beta);
  const double tol = opt.cons_tol * detail::margin_scale(pb);
  if (sol.diag.max_violation > tol)
    throw SolveError(ErrorCode::SingularSystem, "closed-form solve is too ill-conditioned", sol);
  return sol;
}

// ---------------------------------------------------------------------------
// IPF

/// Alternating row and column scaling on an m x n table stored column-major.
/// lambda holds [row multipliers; column multipliers] with beta_ij =
/// y_ij exp(-lambda_r,i - lambda_c,j).
inline Solution solve_ipf_2d(const Vector& y, Index m, Index n, const Vector& s_r, const Vector& s_c,
                             const SolverOptions& opt = {}) {
  opt.validate();
  if (y.size() != m * n || s_r.size() != m || s_c.size() != n)
    throw Error(ErrorCode::DimensionMismatch, "IPF: table and margin sizes disagree");
  for (Index i = 0; i < y.size(); ++i)
    if (!(y[i] > 0.0) || !std::isfinite(y[i])) throw Error(ErrorCode::NonPositiveInput, "IPF needs positive observations");
  const double tr = s_r.sum(), tc = s_c.sum();
  if (std::abs(tr - tc) > 1e-8 * std::max(std::abs(tr), std::abs(tc)))
    throw Error(ErrorCode::InconsistentMargins,
                "row margins sum to " + format_double(tr) + " but column margins sum to " + format_double(tc));

  const Eigen::Map<const Matrix> Y(y.data(), m, n);
  Vector a = Vector::Ones(m), b = Vector::Ones(n);
  Solution sol;
  Diagnostics& diag = sol.diag;
  diag.path = "ipf_2d";
  const double ysum = y.sum();

  auto observe = [&](long half) {
    const Matrix Bt = a.asDiagonal() * Y * b.asDiagonal();
    const Vector rs = Bt.rowwise().sum(), cs = Bt.colwise().sum().transpose();
    const double viol = std::max((rs - s_r).cwiseAbs().maxCoeff(), (cs - s_c).cwiseAbs().maxCoeff());
    const Vector lr = -a.array().log().matrix(), lc = -b.array().log().matrix();
    const double dual = Bt.sum() - ysum + lr.dot(s_r) + lc.dot(s_c);
    IterationRecord rec;
    rec.iteration = static_cast<int>(half);
    rec.matvecs = diag.matvecs;
    rec.dual_objective = dual;
    rec.grad_norm = viol;
    rec.max_violation = viol;
    rec.step = 1.0;
    diag.trace.push_back(rec);
    return viol;
  };

  double viol = observe(0);
  const double tol = opt.cons_tol * std::max({1.0, s_r.cwiseAbs().maxCoeff(), s_c.cwiseAbs().maxCoeff()});
  long half = 0;
  while (viol > tol && half < 2 * opt.ipf_max_sweeps) {
    if (half % 2 == 0) {
      a = s_r.cwiseQuotient(Y * b);
    } else {
      b = s_c.cwiseQuotient(Y.transpose() * a);
    }
    ++half;
    diag.matvecs += 1;
    viol = observe(half);
  }
  const Matrix Bt = a.asDiagonal() * Y * b.asDiagonal();
  sol.beta = Eigen::Map<const Vector>(Bt.data(), m * n);
  sol.lambda.resize(m + n);
  sol.lambda.head(m) = -a.array().log().matrix();
  sol.lambda.tail(n) = -b.array().log().matrix();
  sol.zeta = Vector(0);
  sol.recovered.assign(static_cast<std::size_t>(m * n), false);
  sol.unrecoverable.assign(static_cast<std::size_t>(m * n), false);
  diag.outer_iterations = static_cast<int>((half + 1) / 2);
  diag.max_violation = viol;
  diag.grad_norm = viol;
  diag.dual_objective = diag.trace.back().dual_objective;
  diag.converged = viol <= tol;
  if (!diag.converged)
    throw SolveError(ErrorCode::NoConvergence, "IPF reached the sweep limit with violation " + format_double(viol), sol);
  return sol;
}

namespace detail {

// Recognises a two-dimensional problem whose constraints are exactly all row
// sums and all column sums. Returns the IPF layout: the table is column-major
// with rows indexed by the last dimension.
struct Ipf2dLayout {
  Index m = 0, n = 0;
  std::vector<Index> row_of_A;  // A_all row -> index into [s_r; s_c]
};

inline std::optional<Ipf2dLayout> ipf_layout(const Problem& pb) {
  if (pb.dims.size() != 2 || pb.has_missing() || pb.B.rows() > 0 || pb.loss != LossKind::Entropic) return std::nullopt;
  for (Index c = 0; c < pb.p; ++c)
    if (std::isinf(pb.w[c]) || !(pb.y[c] > 0.0)) return std::nullopt;
  for (Index c = 1; c < pb.p; ++c)
    if (pb.w[c] != pb.w[0]) return std::nullopt;
  Ipf2dLayout L;
  L.m = pb.dims[1].size();
  L.n = pb.dims[0].size();
  if (pb.A_all.rows() != L.m + L.n) return std::nullopt;
  const AggOperator ref = margin_operator_2d(L.m, L.n);
  std::vector<bool> used(static_cast<std::size_t>(L.m + L.n), false);
  for (Index i = 0; i < pb.A_all.rows(); ++i) {
    Index hit = -1;
    for (Index r = 0; r < ref.rows(); ++r)
      if (!used[static_cast<std::size_t>(r)] && ref.row(r) == pb.A_all.row(i)) {
        hit = r;
        break;
      }
    if (hit < 0) return std::nullopt;
    used[static_cast<std::size_t>(hit)] = true;
    L.row_of_A.push_back(hit);
  }
  return L;
}

}  // namespace detail

/// IPF on a compiled problem (entropic, 2D, full row and column margins,
/// uniform weights, no missing cells or aggregate observations).
inline Solution solve_ipf_2d(const Problem& pb, const SolverOptions& opt = {}) {
  const auto layout = detail::ipf_layout(pb);
  if (!layout) throw Error(ErrorCode::Unsupported, "IPF needs an entropic 2D table with all row and column margins");
  Vector sv(layout->m + layout->n);
  for (Index i = 0; i < pb.A_all.rows(); ++i) sv[layout->row_of_A[static_cast<std::size_t>(i)]] = pb.s_all[i];
  // Uniform weights w rescale the multipliers only.
  Solution sol = solve_ipf_2d(pb.y, layout->m, layout->n, sv.head(layout->m), sv.tail(layout->n), opt);
  Vector lam_ref = sol.lambda * pb.w[0];
  // Multipliers for the pruned A rows: take the IPF pair, then absorb the
  // dropped row's multiplier into the rest by re-solving A^T lambda = z.
  const Vector z = apply_transpose(margin_operator_2d(layout->m, layout->n), lam_ref);
  Matrix At = assemble_dense(pb.A, 16'000'000).transpose();
  sol.lambda = At.colPivHouseholderQr().solve(z);
  sol.zeta = Vector(0);
  return sol;
}

// ---------------------------------------------------------------------------
// General Newton

inline Solution solve_newton_dual(const Problem& pb, const SolverOptions& opt = {}) {
  detail::require_no_missing(pb, "the unconstrained dual Newton solver");
  Solution sol = detail::newton_core(pb, opt, detail::NullProjector{}, "newton_dual");
  detail::finish(pb, opt, sol);
  return sol;
}

/// Reduced dual for problems with missing cells. Observed beta comes from the
/// conjugate gradient; missing beta solves K_M beta_M = [s; zeta] - K_O beta_O
/// in the least-squares sense with a rank check.
inline Solution solve_missing(const Problem& pb, const SolverOptions& opt = {}) {
  if (!pb.has_missing()) {
    Solution sol = detail::newton_core(pb, opt, detail::NullProjector{}, "reduced_dual_newton");
    detail::finish(pb, opt, sol);
    return sol;
  }
  const AggOperator K = stack(pb.A, pb.B);
  const Matrix KM = detail::missing_columns(pb, K);
  const detail::NullProjector proj = detail::make_projector(KM);
  Solution sol;
  if (proj.Q.cols() == K.rows()) {
    // The constraint pins lambda = 0: observed cells keep their values.
    FlopCounter flops;
    detail::DualModel model(pb, &flops);
    const detail::DualPoint pt = model.eval(Vector::Zero(K.rows()));
    sol.beta = pt.beta;
    sol.lambda = pt.lambda;
    sol.zeta = pt.zeta;
    sol.diag.path = "reduced_dual_newton";
    sol.diag.converged = true;
    sol.diag.matvecs = 1;
    sol.diag.dual_objective = pt.value;
    sol.diag.trace.push_back({0, 1, pt.value, 0.0, 0.0, 0.0});
    sol.recovered.assign(static_cast<std::size_t>(pb.p), false);
    sol.unrecoverable.assign(static_cast<std::size_t>(pb.p), false);
  } else {
    sol = detail::newton_core(pb, opt, proj, "reduced_dual_newton");
  }

  // Recovery of the missing cells.
  Vector rhs(K.rows());
  const Vector kb = apply(K, sol.beta);
  rhs.head(pb.A.rows()) = pb.s - kb.head(pb.A.rows());
  if (pb.B.rows() > 0) rhs.tail(pb.B.rows()) = sol.zeta - kb.tail(pb.B.rows());

  Eigen::JacobiSVD<Matrix> svd(KM, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const Vector sv = svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > 1e-10 * smax) ++rank;
  svd.setThreshold(1e-10);
  const Vector bm = svd.solve(rhs);
  const Matrix null_basis = svd.matrixV().rightCols(KM.cols() - rank);

  std::vector<std::string> lost;
  for (std::size_t j = 0; j < pb.missing.size(); ++j) {
    const Index c = pb.missing[j];
    const bool determined = null_basis.cols() == 0 || null_basis.row(static_cast<Index>(j)).norm() <= 1e-8;
    if (determined) {
      sol.beta[c] = bm[static_cast<Index>(j)];
      sol.recovered[static_cast<std::size_t>(c)] = true;
    } else {
      sol.beta[c] = std::nan("");
      sol.unrecoverable[static_cast<std::size_t>(c)] = true;
      lost.push_back(pb.cell_label(c));
    }
  }
  if (!lost.empty()) {
    std::string names;
    for (std::size_t i = 0; i < lost.size(); ++i) names += (i ? ", " : "") + lost[i];
    sol.diag.notes.push_back("unrecoverable cells: " + names);
    throw SolveError(ErrorCode::MissingUnrecoverable,
                     "the margins do not determine missing cell(s) " + names + "; observed cells were still raked",
                     std::move(sol));
  }
  detail::finish(pb, opt, sol);
  return sol;
}

// ---------------------------------------------------------------------------
// Dispatch

inline const std::vector<std::string>& solver_paths() {
  static const std::vector<std::string> paths{"1d_closed_form", "chi2_closed_form", "ipf_2d", "newton_dual",
                                              "reduced_dual_newton"};
  return paths;
}

namespace detail {

inline bool is_1d_entropic(const Problem& pb) {
  return pb.loss == LossKind::Entropic && !pb.has_missing() && pb.B.rows() == 0 && pb.A.rows() == 1 &&
         static_cast<Index>(pb.A.row(0).size()) == pb.p;
}

inline Solution run_1d(const Problem& pb, const SolverOptions& opt) {
  if (!is_1d_entropic(pb))
    throw Error(ErrorCode::Unsupported, "the 1D solver needs one all-cells constraint, the entropic loss and no missing cells");
  Solution sol = solve_1d_entropic(pb.y, pb.w, pb.s[0], opt);
  detail::finish(pb, opt, sol);
  return sol;
}

}  // namespace detail

inline Solution solve(const Problem& pb, const SolverOptions& opt = {}) {
  opt.validate();
  if (opt.force_path) {
    const std::string& path = *opt.force_path;
    if (path == "1d_closed_form") return detail::run_1d(pb, opt);
    if (path == "chi2_closed_form") return solve_chi2_closed_form(pb, opt);
    if (path == "ipf_2d") return solve_ipf_2d(pb, opt);
    if (path == "newton_dual") return solve_newton_dual(pb, opt);
    if (path == "reduced_dual_newton") return solve_missing(pb, opt);
    throw Error(ErrorCode::Unsupported, "unknown solver path '" + path + "'");
  }
  if (pb.has_missing()) return solve_missing(pb, opt);
  if (detail::is_1d_entropic(pb)) return detail::run_1d(pb, opt);
  if (pb.loss == LossKind::Chi2 && pb.B.rows() == 0) return solve_chi2_closed_form(pb, opt);
  return solve_newton_dual(pb, opt);
}

}  // namespace rakekit
