#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include "qnet/params.hpp"

namespace qnet {

// Box/simplex-constrained nonlinear least squares. The curvature model is the
// Gauss-Newton approximation with Levenberg-Marquardt damping; every trial
// iterate is pushed back onto the feasible set by the caller-supplied
// projection. Convergence is declared on the projected gradient.
struct LeastSquaresProblem {
  std::function<Vector(const Vector&)> residual;
  std::function<Vector(const Vector&)> project;
};

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  double cost = std::numeric_limits<double>::infinity();  // 0.5 * ||r||^2
  double projected_gradient_norm = std::numeric_limits<double>::infinity();
};

namespace detail {

inline bool try_residual(const LeastSquaresProblem& prob, const Vector& x, Vector& r) {
  try {
    r = prob.residual(x);
  } catch (const std::exception&) {
    return false;
  }
  return r.allFinite();
}

}  // namespace detail

inline SolveReport solve_projected_least_squares(const LeastSquaresProblem& prob, Vector& x,
                                                 int max_iterations = 500,
                                                 double gradient_tol = 1e-9) {
  SolveReport report;
  x = prob.project(x);
  Vector r;
  if (!detail::try_residual(prob, x, r)) return report;
  const int dim = static_cast<int>(x.size());
  const int out = static_cast<int>(r.size());
  double cost = 0.5 * r.squaredNorm();

  double damping = 1e-3;
  Matrix jac(out, dim);
  Vector probe = x, r_probe;

  for (int iter = 0; iter < max_iterations; ++iter) {
    report.iterations = iter + 1;

    // Forward-difference Jacobian, falling back to a backward step when the
    // forward probe leaves the domain of the residual.
    for (int j = 0; j < dim; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(x(j)));
      probe = x;
      probe(j) = x(j) + h;
      if (detail::try_residual(prob, probe, r_probe)) {
        jac.col(j) = (r_probe - r) / h;
      } else {
        probe(j) = x(j) - h;
        if (!detail::try_residual(prob, probe, r_probe)) {
          jac.col(j).setZero();
          continue;
        }
        jac.col(j) = (r - r_probe) / h;
      }
    }

    const Vector grad = jac.transpose() * r;
    const Vector pg = x - prob.project(x - grad);
    report.projected_gradient_norm = pg.lpNorm<Eigen::Infinity>();
    if (report.projected_gradient_norm <= gradient_tol) {
      report.converged = true;
      break;
    }

    const Matrix jtj = jac.transpose() * jac;
    Vector scale = jtj.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    for (int bump = 0; bump < 25; ++bump) {
      Matrix model = jtj;
      model.diagonal() += damping * scale;
      const Vector step = model.ldlt().solve(-grad);
      if (!step.allFinite()) {
        damping *= 4.0;
        continue;
      }
      const Vector x_try = prob.project(x + step);
      Vector r_try;
      if (detail::try_residual(prob, x_try, r_try)) {
        const double cost_try = 0.5 * r_try.squaredNorm();
        if (cost_try < cost) {
          x = x_try;
          r = std::move(r_try);
          cost = cost_try;
          damping = std::max(damping / 3.0, 1e-12);
          accepted = true;
          break;
        }
      }
      damping *= 4.0;
    }
    if (!accepted) {
      // No descent at any damping level: numerically stationary.
      report.converged = true;
      break;
    }
  }

  report.cost = cost;
  return report;
}

}  // namespace qnet
