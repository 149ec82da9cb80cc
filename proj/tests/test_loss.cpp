#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rakekit/loss.hpp"

using namespace rakekit;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Loss logistic(double y, double l, double u, double w = 1.0) {
  return make_loss(LossKind::Logistic, vec({y}), vec({w}), vec({l}), vec({u}));
}

}  // namespace

TEST(LossEval, ZeroAtReference) {
  EXPECT_EQ(eval(make_loss(LossKind::Entropic, vec({1, 2, 3})), vec({1, 2, 3})), 0.0);
  EXPECT_EQ(eval(logistic(2, 0, 4), vec({2})), 0.0);
  EXPECT_EQ(eval(make_loss(LossKind::Chi2, vec({5})), vec({5})), 0.0);
}

TEST(LossEval, Chi2Formula) { EXPECT_DOUBLE_EQ(eval(make_loss(LossKind::Chi2, vec({2})), vec({4})), 1.0); }

TEST(LossEval, OutsideDomainThrows) {
  try {
    eval(make_loss(LossKind::Entropic, vec({1})), vec({-1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DomainError);
  }
  EXPECT_THROW(eval(logistic(2, 0, 4), vec({4})), Error);
}

TEST(LossConstruction, InvariantsChecked) {
  auto code = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Unsupported;
  };
  EXPECT_EQ(code([] { make_loss(LossKind::Chi2, vec({0})); }), ErrorCode::DomainError);
  EXPECT_EQ(code([] { make_loss(LossKind::Entropic, vec({-1})); }), ErrorCode::DomainError);
  EXPECT_EQ(code([] { logistic(5, 0, 4); }), ErrorCode::BoundsInvalid);
  EXPECT_EQ(code([] { logistic(1, 4, 0); }), ErrorCode::BoundsInvalid);
  EXPECT_EQ(code([] { make_loss(LossKind::Chi2, vec({1}), vec({0})); }), ErrorCode::BadWeight);
}

TEST(LossConjugate, Examples) {
  EXPECT_EQ(conjugate(make_loss(LossKind::Entropic, vec({3})), vec({0})), 0.0);
  EXPECT_NEAR(conjugate(logistic(1, 0, 4), vec({0})), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(conjugate(make_loss(LossKind::Chi2, vec({2}), vec({2})), vec({1})), 2.5);
}

TEST(LossConjugate, MatchesNumericalLegendreTransform) {
  // max_x (x z - w f(x)) on a fine grid around the analytic maximiser.
  struct Case {
    LossKind kind;
    double y, w, l, u, z;
  };
  for (const Case c : {Case{LossKind::Chi2, 2, 2, 0, 0, 1}, Case{LossKind::Entropic, 1.5, 3, 0, 0, 0.7},
                       Case{LossKind::Logistic, 1, 2, 0, 4, -0.9}}) {
    const oracle::Scalar f{c.kind, c.y, c.l, c.u};
    const double lo = c.kind == LossKind::Logistic ? c.l + 1e-9 : (c.kind == LossKind::Entropic ? 1e-9 : -20.0);
    const double hi = c.kind == LossKind::Logistic ? c.u - 1e-9 : 20.0;
    double best = -1e300, arg = lo;
    for (int pass = 0; pass < 4; ++pass) {
      const double a = pass == 0 ? lo : std::max(lo, arg - (hi - lo) * std::pow(1e-3, pass));
      const double b = pass == 0 ? hi : std::min(hi, arg + (hi - lo) * std::pow(1e-3, pass));
      for (int i = 0; i <= 20000; ++i) {
        const double x = a + (b - a) * i / 20000.0;
        const double v = x * c.z - c.w * f.f(x);
        if (v > best) best = v, arg = x;
      }
    }
    Loss L = c.kind == LossKind::Logistic ? logistic(c.y, c.l, c.u, c.w) : make_loss(c.kind, vec({c.y}), vec({c.w}));
    EXPECT_NEAR(conjugate(L, vec({c.z})), best, 1e-9) << to_string(c.kind);
  }
}

TEST(LossGradConjugate, Examples) {
  EXPECT_EQ(grad_conjugate(make_loss(LossKind::Entropic, vec({1, 2})), vec({0, 0})), vec({1, 2}));
  EXPECT_NEAR(grad_conjugate(logistic(1, 0, 4), vec({0}))[0], 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(grad_conjugate(make_loss(LossKind::Chi2, vec({3})), vec({2}))[0], 9.0);
}

TEST(LossHessConjugate, Examples) {
  EXPECT_EQ(hess_conjugate_diag(make_loss(LossKind::Chi2, vec({1, 2})), vec({5, -3})), vec({1, 2}));
  EXPECT_DOUBLE_EQ(hess_conjugate_diag(make_loss(LossKind::Entropic, vec({2})), vec({0}))[0], 2.0);
  EXPECT_NEAR(hess_conjugate_diag(make_loss(LossKind::Entropic, vec({2}), vec({2})), vec({2}))[0], std::exp(1.0), 1e-15);
}

class LossProperty : public ::testing::TestWithParam<LossKind> {
 protected:
  // Random loss of `n` coordinates with weights in [0.2, 5].
  Loss random_loss(std::mt19937_64& rng, Index n) {
    std::uniform_real_distribution<double> uy(0.5, 3.0), uw(0.2, 5.0), ub(0.1, 2.0);
    Vector y(n), w(n), l(n), u(n);
    for (Index i = 0; i < n; ++i) {
      y[i] = uy(rng);
      w[i] = uw(rng);
      l[i] = y[i] - ub(rng);
      u[i] = y[i] + ub(rng);
    }
    if (GetParam() == LossKind::Logistic) return make_loss(GetParam(), y, w, l, u);
    return make_loss(GetParam(), y, w);
  }
};

TEST_P(LossProperty, GradientAndHessianMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uz(-2.0, 2.0);
  const Loss L = random_loss(rng, 200);
  const double h = 1e-5;
  for (Index i = 0; i < L.size(); ++i) {
    Vector z = Vector::Zero(L.size());
    z[i] = uz(rng);
    Vector zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    const double fd_g = (conjugate(L, zp) - conjugate(L, zm)) / (2 * h);
    const double fd_h = (grad_conjugate(L, zp)[i] - grad_conjugate(L, zm)[i]) / (2 * h);
    EXPECT_NEAR(grad_conjugate(L, z)[i], fd_g, 1e-6 * std::max(1.0, std::abs(fd_g)));
    EXPECT_NEAR(hess_conjugate_diag(L, z)[i], fd_h, 1e-5 * std::max(1.0, std::abs(fd_h)));
  }
}

TEST_P(LossProperty, FenchelInversionAndInequality) {
  std::mt19937_64 rng(12);
  const Loss L = random_loss(rng, 300);
  std::uniform_real_distribution<double> t(0.05, 0.95), uz(-1.5, 1.5);
  Vector beta(L.size());
  for (Index i = 0; i < L.size(); ++i) {
    const double lo = GetParam() == LossKind::Logistic ? L.lower[i] : (GetParam() == LossKind::Entropic ? 0.0 : -3.0);
    const double hi = GetParam() == LossKind::Logistic ? L.upper[i] : 6.0;
    beta[i] = lo + (hi - lo) * t(rng);
  }
  const Vector z = grad_primal(L, beta);
  const Vector back = grad_conjugate(L, z);
  for (Index i = 0; i < L.size(); ++i) EXPECT_NEAR(back[i], beta[i], 1e-10 * std::max(1.0, std::abs(beta[i])));
  EXPECT_NEAR(eval(L, beta) + conjugate(L, z), z.dot(beta), 1e-9 * std::max(1.0, std::abs(z.dot(beta))));
  for (int rep = 0; rep < 50; ++rep) {
    Vector zr(L.size());
    for (Index i = 0; i < L.size(); ++i) zr[i] = uz(rng);
    EXPECT_GE(eval(L, beta) + conjugate(L, zr), zr.dot(beta) - 1e-9);
  }
}

TEST_P(LossProperty, WeightLimitPinsToReference) {
  std::mt19937_64 rng(13);
  Loss L = random_loss(rng, 50);
  L.w.setConstant(1e12);
  std::uniform_real_distribution<double> uz(-5.0, 5.0);
  Vector z(L.size());
  for (Index i = 0; i < L.size(); ++i) z[i] = uz(rng);
  EXPECT_LT((grad_conjugate(L, z) - L.y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST_P(LossProperty, MixedDerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(14);
  const Loss L = random_loss(rng, 40);
  const double h = 1e-6;
  Vector beta = L.y;
  for (Index i = 0; i < L.size(); ++i) beta[i] += 0.3 * (GetParam() == LossKind::Logistic ? (L.upper[i] - L.y[i]) : 0.5);
  const Vector mixed = mixed_primal_diag(L, beta);
  for (Index i = 0; i < L.size(); ++i) {
    Loss Lp = L, Lm = L;
    Lp.y[i] += h;
    Lm.y[i] -= h;
    const double fd = (grad_primal(Lp, beta)[i] - grad_primal(Lm, beta)[i]) / (2 * h);
    EXPECT_NEAR(mixed[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, LossProperty,
                         ::testing::Values(LossKind::Chi2, LossKind::Entropic, LossKind::Logistic),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(LossBounds, LogisticRecoveryStaysInsideForExtremeArguments) {
  const Loss L = logistic(1, 0, 4);
  for (double z : {-800.0, -40.0, -1.0, 0.0, 1.0, 40.0, 800.0}) {
    const double b = grad_conjugate(L, vec({z}))[0];
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 4.0);
    EXPECT_TRUE(std::isfinite(conjugate(L, vec({z}))));
  }
  EXPECT_GT(grad_conjugate(L, vec({30.0}))[0], 0.0);
  EXPECT_LT(grad_conjugate(L, vec({30.0}))[0], 4.0);
}

TEST(LossBounds, EntropicZeroReferenceIsFrozen) {
  const Loss L = make_loss(LossKind::Entropic, vec({0, 2}));
  const Vector b = grad_conjugate(L, vec({3, 0}));
  EXPECT_EQ(b[0], 0.0);
  EXPECT_EQ(hess_conjugate_diag(L, vec({3, 0}))[0], 0.0);
  EXPECT_GT(grad_conjugate(L, vec({-50, -50}))[1], 0.0);
}

TEST(LossTaylor, EntropicCloseToChi2NearReference) {
  const double y = 2.0;
  const oracle::Scalar e{LossKind::Entropic, y, 0, 0};
  for (double d : {1e-1, 1e-2, 1e-3}) {
    const double gap = std::abs(e.f(y + d) - d * d / (2 * y));
    EXPECT_LE(gap, 0.2 * d * d * d);
  }
}
