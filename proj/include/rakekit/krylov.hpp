#pragma once

// Preconditioned MINRES (Paige & Saunders) for symmetric systems, with the
// operator and preconditioner supplied as callables. The preconditioner
// applies M^{-1} and must be symmetric positive definite on the Krylov space.

#include <algorithm>
#include <cmath>
#include <limits>

#include "rakekit/loss.hpp"

namespace rakekit {

struct KrylovResult {
  int iterations = 0;
  double rel_residual = 0.0;  // preconditioned residual norm over its initial value
  bool converged = false;
  bool breakdown = false;     // preconditioner lost definiteness
};

template <class Op, class Prec>
KrylovResult minres(Op&& op, Prec&& precond, const Vector& b, Vector& x, double rtol, int maxit) {
  KrylovResult res;
  const Index n = b.size();
  x = Vector::Zero(n);

  Vector r1 = b;
  Vector yv = precond(r1);
  double beta1 = r1.dot(yv);
  if (beta1 < 0.0) {
    res.breakdown = true;
    return res;
  }
  beta1 = std::sqrt(beta1);
  if (beta1 == 0.0) {
    res.converged = true;
    return res;
  }

  Vector r2 = r1;
  Vector w = Vector::Zero(n), w1 = Vector::Zero(n), w2 = Vector::Zero(n), v(n);
  double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
  double cs = -1.0, sn = 0.0;
  constexpr double tiny = std::numeric_limits<double>::min();

  for (int itn = 1; itn <= maxit; ++itn) {
    v = yv / beta;
    yv = op(v);
    if (itn >= 2) yv -= (beta / oldb) * r1;
    const double alfa = v.dot(yv);
    yv -= (alfa / beta) * r2;
    r1 = r2;
    r2 = yv;
    yv = precond(r2);
    oldb = beta;
    double bb = r2.dot(yv);
    if (bb < 0.0) {
      res.breakdown = true;
      res.iterations = itn;
      return res;
    }
    beta = std::sqrt(bb);

    const double oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    const double gamma = std::max(std::hypot(gbar, beta), tiny);
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;

    w1 = w2;
    w2 = w;
    w = (v - oldeps * w1 - delta * w2) / gamma;
    x += phi * w;

    res.iterations = itn;
    res.rel_residual = phibar / beta1;
    // beta == 0 means the Krylov space is invariant and x is exact.
    if (res.rel_residual <= rtol || beta == 0.0) {
      res.converged = true;
      return res;
    }
  }
  return res;
}

}  // namespace rakekit
