#pragma once

// Separable raking losses and their convex conjugates.
//
// Every loss is a sum of per-coordinate terms w_i f(beta_i; y_i) with
// f(y; y) = 0. The conjugate of the weighted term is w f*(z / w), so the
// conjugate gradient is f*'(z / w) and the conjugate curvature is
// f*''(z / w) / w.
//
// A coordinate is "frozen" when its weight is infinite or, for the entropic
// loss, when its reference value is zero. Frozen coordinates are pinned at
// beta_i = y_i; their conjugate is the linear function y_i z.

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "rakekit/error.hpp"

namespace rakekit {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class LossKind { Chi2, Entropic, Logistic };

constexpr std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Chi2: return "chi2";
    case LossKind::Entropic: return "entropic";
    case LossKind::Logistic: return "logistic";
  }
  return "unknown";
}

inline LossKind parse_loss_kind(std::string_view name) {
  if (name == "chi2") return LossKind::Chi2;
  if (name == "entropic") return LossKind::Entropic;
  if (name == "logistic") return LossKind::Logistic;
  throw Error(ErrorCode::ParseError, "unknown loss '" + std::string(name) + "'");
}

namespace detail {

// Scalar kernels for one coordinate with unit weight. `l` and `u` are only
// read by the logistic loss.
struct Chi2Kernel {
  static double value(double b, double y, double, double) {
    const double d = b - y;
    return d * d / (2.0 * y);
  }
  static double grad(double b, double y, double, double) { return (b - y) / y; }
  static double hess(double, double y, double, double) { return 1.0 / y; }
  static double mixed(double b, double y, double, double) { return -b / (y * y); }
  static double conj(double z, double y, double, double) { return y * (0.5 * z * z + z); }
  static double conj_grad(double z, double y, double, double) { return y * (z + 1.0); }
  static double conj_hess(double, double y, double, double) { return y; }
  static bool in_domain(double b, double, double, double) { return std::isfinite(b); }
};

struct EntropicKernel {
  static double value(double b, double y, double, double) {
    if (b == 0.0) return y;
    return b * std::log(b / y) - (b - y);
  }
  static double grad(double b, double y, double, double) { return std::log(b / y); }
  static double hess(double b, double, double, double) { return 1.0 / b; }
  static double mixed(double, double y, double, double) { return -1.0 / y; }
  static double conj(double z, double y, double, double) { return y * std::expm1(z); }
  static double conj_grad(double z, double y, double, double) { return y * std::exp(z); }
  static double conj_hess(double z, double y, double, double) { return y * std::exp(z); }
  static bool in_domain(double b, double, double, double) { return b >= 0.0 && std::isfinite(b); }
};

struct LogisticKernel {
  static double xlogx_ratio(double a, double c) { return a == 0.0 ? 0.0 : a * std::log(a / c); }

  static double value(double b, double y, double l, double u) {
    return xlogx_ratio(b - l, y - l) + xlogx_ratio(u - b, u - y);
  }
  static double grad(double b, double y, double l, double u) {
    return std::log((b - l) / (y - l)) - std::log((u - b) / (u - y));
  }
  static double hess(double b, double, double l, double u) { return 1.0 / (b - l) + 1.0 / (u - b); }
  static double mixed(double, double y, double l, double u) { return -1.0 / (y - l) - 1.0 / (u - y); }

  // (u - l) log(t e^z + 1 - t) + l z with t = (y - l) / (u - l), evaluated
  // with log1p/expm1 around whichever side keeps the exponent non-positive.
  static double conj(double z, double y, double l, double u) {
    const double width = u - l;
    const double t = (y - l) / width;
    double lse;
    if (z <= 0.0) {
      lse = std::log1p(t * std::expm1(z));
    } else {
      lse = z + std::log1p((1.0 - t) * std::expm1(-z));
    }
    return width * lse + l * z;
  }

  // Position inside (l, u) is sigmoid(z + logit(t)). Both distances to the
  // bounds are formed from their own sigmoid so neither side cancels.
  static double conj_grad(double z, double y, double l, double u) {
    const double width = u - l;
    const double shift = std::log(y - l) - std::log(u - y);
    const double arg = z + shift;
    if (arg <= 0.0) {
      const double e = std::exp(arg);
      return l + width * (e / (1.0 + e));
    }
    const double e = std::exp(-arg);
    return u - width * (e / (1.0 + e));
  }

  static double conj_hess(double z, double y, double l, double u) {
    const double width = u - l;
    const double arg = z + std::log(y - l) - std::log(u - y);
    const double e = std::exp(-std::abs(arg));
    return width * e / ((1.0 + e) * (1.0 + e));
  }

  static bool in_domain(double b, double, double l, double u) { return b > l && b < u; }
};

template <class Fn>
decltype(auto) dispatch(LossKind kind, Fn&& fn) {
  switch (kind) {
    case LossKind::Chi2: return fn(Chi2Kernel{});
    case LossKind::Entropic: return fn(EntropicKernel{});
    case LossKind::Logistic: return fn(LogisticKernel{});
  }
  return fn(Chi2Kernel{});
}

}  // namespace detail

/// A separable loss over n coordinates. One kind per loss; bounds only
/// matter for the logistic kind but may vary by coordinate.
struct Loss {
  LossKind kind = LossKind::Entropic;
  Vector y;
  Vector w;
  Vector lower;
  Vector upper;

  Index size() const { return y.size(); }

  bool frozen(Index i) const {
    return std::isinf(w[i]) || (kind == LossKind::Entropic && y[i] == 0.0);
  }

  double lo(Index i) const { return lower.size() ? lower[i] : 0.0; }
  double hi(Index i) const { return upper.size() ? upper[i] : 0.0; }
};

/// Builds a loss and checks the per-kind reference-value invariants.
/// Empty `w` means unit weights.
inline Loss make_loss(LossKind kind, Vector y, Vector w = {}, Vector lower = {}, Vector upper = {}) {
  const Index n = y.size();
  if (w.size() == 0) w = Vector::Ones(n);
  if (w.size() != n) throw Error(ErrorCode::DimensionMismatch, "weight vector length differs from y");
  for (Index i = 0; i < n; ++i) {
    if (!(w[i] > 0.0)) throw Error(ErrorCode::BadWeight, "loss weights must be positive (coordinate " + std::to_string(i) + ")");
    if (!std::isfinite(y[i])) throw Error(ErrorCode::DomainError, "non-finite reference value at coordinate " + std::to_string(i));
  }
  switch (kind) {
    case LossKind::Chi2:
      for (Index i = 0; i < n; ++i)
        if (!(y[i] > 0.0) && !std::isinf(w[i]))
          throw Error(ErrorCode::DomainError, "chi2 loss needs y > 0 (coordinate " + std::to_string(i) + ")");
      break;
    case LossKind::Entropic:
      for (Index i = 0; i < n; ++i)
        if (y[i] < 0.0 && !std::isinf(w[i]))
          throw Error(ErrorCode::DomainError, "entropic loss needs y >= 0 (coordinate " + std::to_string(i) + ")");
      break;
    case LossKind::Logistic:
      if (lower.size() != n || upper.size() != n)
        throw Error(ErrorCode::BoundsInvalid, "logistic loss needs lower and upper bounds for every coordinate");
      for (Index i = 0; i < n; ++i) {
        if (!(lower[i] < upper[i]))
          throw Error(ErrorCode::BoundsInvalid, "logistic bounds need l < u (coordinate " + std::to_string(i) + ")");
        if (!std::isinf(w[i]) && !(lower[i] < y[i] && y[i] < upper[i]))
          throw Error(ErrorCode::BoundsInvalid, "logistic loss needs l < y < u (coordinate " + std::to_string(i) + ")");
      }
      break;
  }
  return Loss{kind, std::move(y), std::move(w), std::move(lower), std::move(upper)};
}

/// sum_i w_i f(beta_i; y_i). Frozen coordinates contribute zero and must sit
/// at their reference value.
inline double eval(const Loss& loss, const Vector& beta) {
  if (beta.size() != loss.size()) throw Error(ErrorCode::DimensionMismatch, "eval: beta length");
  return detail::dispatch(loss.kind, [&](auto k) {
    using K = decltype(k);
    double total = 0.0;
    for (Index i = 0; i < loss.size(); ++i) {
      const double y = loss.y[i];
      if (loss.frozen(i)) {
        if (std::abs(beta[i] - y) > 1e-9 * std::max(1.0, std::abs(y)))
          throw Error(ErrorCode::DomainError, "frozen coordinate " + std::to_string(i) + " moved off its reference value");
        continue;
      }
      if (!K::in_domain(beta[i], y, loss.lo(i), loss.hi(i)))
        throw Error(ErrorCode::DomainError, "beta outside the loss domain at coordinate " + std::to_string(i));
      total += loss.w[i] * K::value(beta[i], y, loss.lo(i), loss.hi(i));
    }
    return total;
  });
}

/// sum_i w_i f*(z_i / w_i).
inline double conjugate(const Loss& loss, const Vector& z) {
  if (z.size() != loss.size()) throw Error(ErrorCode::DimensionMismatch, "conjugate: z length");
  return detail::dispatch(loss.kind, [&](auto k) {
    using K = decltype(k);
    double total = 0.0;
    for (Index i = 0; i < loss.size(); ++i) {
      if (loss.frozen(i)) {
        total += loss.y[i] * z[i];
        continue;
      }
      const double w = loss.w[i];
      total += w * K::conj(z[i] / w, loss.y[i], loss.lo(i), loss.hi(i));
    }
    return total;
  });
}

/// Coordinate-wise gradient of the weighted conjugate, i.e. the primal
/// recovery map beta(z).
inline Vector grad_conjugate(const Loss& loss, const Vector& z) {
  if (z.size() != loss.size()) throw Error(ErrorCode::DimensionMismatch, "grad_conjugate: z length");
  Vector out(loss.size());
  detail::dispatch(loss.kind, [&](auto k) {
    using K = decltype(k);
    for (Index i = 0; i < loss.size(); ++i) {
      out[i] = loss.frozen(i) ? loss.y[i] : K::conj_grad(z[i] / loss.w[i], loss.y[i], loss.lo(i), loss.hi(i));
    }
    return 0;
  });
  return out;
}

/// Diagonal of the weighted conjugate Hessian; zero on frozen coordinates.
inline Vector hess_conjugate_diag(const Loss& loss, const Vector& z) {
  if (z.size() != loss.size()) throw Error(ErrorCode::DimensionMismatch, "hess_conjugate_diag: z length");
  Vector out(loss.size());
  detail::dispatch(loss.kind, [&](auto k) {
    using K = decltype(k);
    for (Index i = 0; i < loss.size(); ++i) {
      if (loss.frozen(i)) {
        out[i] = 0.0;
        continue;
      }
      const double w = loss.w[i];
      out[i] = K::conj_hess(z[i] / w, loss.y[i], loss.lo(i), loss.hi(i)) / w;
    }
    return 0;
  });
  return out;
}

/// Primal gradient w_i f'(beta_i; y_i). Frozen coordinates report 0.
inline Vector grad_primal(const Loss& loss, const Vector& beta) {
  Vector out(loss.size());
  detail::dispatch(loss.kind, [&](auto k) {
    using K = decltype(k);
    for (Index i = 0; i < loss.size(); ++i)
      out[i] = loss.frozen(i) ? 0.0 : loss.w[i] * K::grad(beta[i], loss.y[i], loss.lo(i), loss.hi(i));
    return 0;
  });
  return out;
}

/// Primal curvature w_i f''(beta_i; y_i).
inline Vector hess_primal_diag(const Loss& loss, const Vector& beta) {
  Vector out(loss.size());
  detail::dispatch(loss.kind, [&](auto k) {
    using K = decltype(k);
    for (Index i = 0; i < loss.size(); ++i)
      out[i] = loss.frozen(i) ? 0.0 : loss.w[i] * K::hess(beta[i], loss.y[i], loss.lo(i), loss.hi(i));
    return 0;
  });
  return out;
}

/// Mixed derivative w_i d^2 f / (d beta_i d y_i). With `hold_chi2_curvature`
/// the 1/y factor of the chi2 loss is treated as a fixed weight, which is the
/// plain weighted least-squares model.
inline Vector mixed_primal_diag(const Loss& loss, const Vector& beta, bool hold_chi2_curvature = false) {
  Vector out(loss.size());
  detail::dispatch(loss.kind, [&](auto k) {
    using K = decltype(k);
    for (Index i = 0; i < loss.size(); ++i) {
      if (loss.frozen(i)) {
        out[i] = 0.0;
      } else if (hold_chi2_curvature && loss.kind == LossKind::Chi2) {
        out[i] = -loss.w[i] / loss.y[i];
      } else {
        out[i] = loss.w[i] * K::mixed(beta[i], loss.y[i], loss.lo(i), loss.hi(i));
      }
    }
    return 0;
  });
  return out;
}

}  // namespace rakekit
