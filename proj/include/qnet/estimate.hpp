#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qnet/moments.hpp"
#include "qnet/simulate.hpp"
#include "qnet/solver.hpp"

namespace qnet {

struct IllConditionedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverOptions {
  int max_iterations = 500;
  double gradient_tol = 1e-9;
  int starts = 8;
  std::uint64_t seed = 1;
  ProjectionConfig projection;
  // Per-block weights for the moment equations (identity by default; hook for
  // GMM-style weighting).
  double weight_alpha0 = 1.0;
  double weight_alpha1 = 1.0;
  double weight_alpha2 = 1.0;
  double closed_form_cond_limit = 1e12;
  double reorder_cond_limit = 1e8;
};

struct EstimationResult {
  NetworkParams theta_hat;
  double residual_norm = 0.0;  // ||psi-stack|| at the returned point
  int iterations = 0;
  bool converged = false;
  EstimationMode mode = EstimationMode::KnownServices;
  // Stations with no observed mass; their parameters are pinned to zero.
  std::vector<int> degenerate_stations;
  // Closed-form identification output (projected), attached as a diagnostic
  // by the known-services pipeline.
  std::optional<NetworkParams> closed_form;
};

// ---------------------------------------------------------------------------
// Empirical moments
// ---------------------------------------------------------------------------

// alpha0_i   = (1/m)     sum_k     N[k][i]
// alpha1_ji  = (1/(m-1)) sum_k     N[k][j] N[k+1][i]
// alpha2_ji  = (1/(m-2)) sum_k     N[k][j] N[k+2][i]
inline MomentSet empirical_moments(const ObservationLog& log, bool need_lag2) {
  const auto m = log.m();
  const int n = log.n();
  if (m < 2) throw std::invalid_argument("empirical_moments: need at least two epochs");
  if (need_lag2 && m < 3)
    throw std::invalid_argument("empirical_moments: lag-two moments need at least three epochs");

  MomentSet out;
  out.source = MomentSource::Empirical;
  out.beta = log.beta;
  out.alpha0 = Vector::Zero(n);
  out.alpha1 = Matrix::Zero(n, n);
  if (need_lag2) out.alpha2 = Matrix::Zero(n, n);

  // Chunked accumulation keeps the double-precision copies small and the
  // reduction order fixed.
  constexpr Eigen::Index kBlock = 1 << 15;
  for (Eigen::Index start = 0; start < m; start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, m - start);
    const Matrix x = log.counts.middleRows(start, rows).cast<double>();
    out.alpha0 += x.colwise().sum().transpose();

    const Eigen::Index pairs1 = std::min(kBlock, m - 1 - start);
    if (pairs1 > 0) {
      const Matrix head = log.counts.middleRows(start, pairs1).cast<double>();
      const Matrix tail = log.counts.middleRows(start + 1, pairs1).cast<double>();
      out.alpha1 += head.transpose() * tail;
    }
    if (need_lag2) {
      const Eigen::Index pairs2 = std::min(kBlock, m - 2 - start);
      if (pairs2 > 0) {
        const Matrix head = log.counts.middleRows(start, pairs2).cast<double>();
        const Matrix tail = log.counts.middleRows(start + 2, pairs2).cast<double>();
        *out.alpha2 += head.transpose() * tail;
      }
    }
  }
  out.alpha0 /= static_cast<double>(m);
  out.alpha1 /= static_cast<double>(m - 1);
  if (need_lag2) *out.alpha2 /= static_cast<double>(m - 2);
  return out;
}

// ---------------------------------------------------------------------------
// Moment-equation residual (the psi-stack)
// ---------------------------------------------------------------------------

namespace detail {

inline void flatten_into(const Matrix& m, Vector& out, int& at, double weight) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(at++) = weight * m(i, j);
}

}  // namespace detail

// Stacked moment-equation residuals (empirical minus analytic) for the blocks
// the mode uses: alpha0 and alpha1 always; the full lag-two matrix for the
// model-free mode; its diagonal when observation probabilities are estimated.
inline Vector moment_residual(const NetworkParams& candidate, const ThetaSpace& space,
                              const MomentSet& target, const SolverOptions& opts = {}) {
  const int n = space.n;
  const bool lag2 = mode_needs_lag2(space.mode);
  if (lag2 && !target.alpha2)
    throw std::invalid_argument("moment_residual: mode needs lag-two moments");

  const MomentSet analytic = observed_moments(candidate, space.beta, lag2);
  int size = n + n * n;
  if (space.mode == EstimationMode::ModelFree) size += n * n;
  if (space.mode == EstimationMode::WithObservationProbabilities) size += n;

  Vector r(size);
  int at = 0;
  for (int i = 0; i < n; ++i)
    r(at++) = opts.weight_alpha0 * (target.alpha0(i) - analytic.alpha0(i));
  detail::flatten_into(target.alpha1 - analytic.alpha1, r, at, opts.weight_alpha1);
  if (space.mode == EstimationMode::ModelFree) {
    detail::flatten_into(*target.alpha2 - *analytic.alpha2, r, at, opts.weight_alpha2);
  } else if (space.mode == EstimationMode::WithObservationProbabilities) {
    for (int i = 0; i < n; ++i)
      r(at++) = opts.weight_alpha2 * ((*target.alpha2)(i, i) - (*analytic.alpha2)(i, i));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Closed-form identification (known services, full observation)
// ---------------------------------------------------------------------------

// Inverts the lag-one moment equation for Q and lambda given the service
// transforms. The raw output is not projected; finite-sample noise can push
// it outside the parameter space and the caller decides what to do.
inline std::pair<Matrix, Vector> identify_closed_form(const MomentSet& moments,
                                                      const std::vector<ServiceModel>& services,
                                                      double beta,
                                                      double cond_limit = 1e12) {
  const int n = static_cast<int>(moments.alpha0.size());
  if (static_cast<int>(services.size()) != n)
    throw std::invalid_argument("identify_closed_form: service count mismatch");
  detail::check_beta(beta);

  Vector g(n), lst(n), lst_res(n);
  for (int i = 0; i < n; ++i) {
    const TransformBundle b = services[i].bundle(beta);
    if (!(b.mean > 0.0)) throw std::invalid_argument("identify_closed_form: service mean must be positive");
    g(i) = b.mean;
    lst(i) = b.lst;
    lst_res(i) = b.lst_res;
  }

  const Vector& a0 = moments.alpha0;
  const Matrix& a1 = moments.alpha1;
  const Vector leff = a0.cwiseQuotient(g);
  const Matrix phi = a0 * a0.transpose() + Matrix(a0.asDiagonal());

  // Post-multiplying the moment equation by P^{-1} = Xi1 + Xi2 Q linearizes
  // it in Q; collecting terms gives Omega1 Q = Omega2. The additive part of
  // P_res carries the residual transform, so the diagonal factors below use
  // lst_res (for exponential services this coincides with the fresh lst).
  const Vector xi1 = (Vector::Ones(n) - lst).cwiseInverse();
  const Vector xi2 = -lst.cwiseProduct(xi1);
  const Vector d1 = lst_res + (Vector::Ones(n) - lst_res).cwiseProduct(xi2);
  const Vector d2 = (Vector::Ones(n) - lst_res).cwiseProduct(xi1);
  const Matrix outer = (a0 * leff.transpose()) / beta;

  const Matrix omega1 = a1 * xi2.asDiagonal() - phi * d1.asDiagonal() + outer;
  const Matrix omega2 = -a1 * xi1.asDiagonal() + phi * d2.asDiagonal() + outer;

  Eigen::JacobiSVD<Matrix> svd(omega1, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smin = svd.singularValues()(n - 1);
  const double smax = svd.singularValues()(0);
  if (!(smin > 0.0) || smax / smin > cond_limit)
    throw IllConditionedError("identify_closed_form: Omega1 is numerically singular");

  Matrix Q = omega1.partialPivLu().solve(omega2);
  Vector lambda = (Matrix::Identity(n, n) - Q.transpose()) * leff;
  return {std::move(Q), std::move(lambda)};
}

// ---------------------------------------------------------------------------
// Sequential scheme for fully observed data (p = 1)
// ---------------------------------------------------------------------------

namespace detail {

// Multiplicative row rescale for a packed zero-diagonal Q block plus a boxed
// tail; mirrors project_theta for the sequential solver's reduced vector.
inline Vector project_q_eta(const Vector& x, int n, double eta_lo, double eta_hi,
                            double exit_margin) {
  Vector out = x;
  const int row_len = n - 1;
  for (int k = 0; k < n * row_len; ++k) out(k) = std::clamp(out(k), 0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int k = 0; k < row_len; ++k) sum += out(i * row_len + k);
    const double cap = 1.0 - exit_margin;
    if (sum > cap + 1e-12) {
      const double scale = cap / sum;
      for (int k = 0; k < row_len; ++k) out(i * row_len + k) *= scale;
    }
  }
  for (int i = 0; i < n; ++i)
    out(n * row_len + i) = std::clamp(out(n * row_len + i), eta_lo, eta_hi);
  return out;
}

inline Matrix q_from_offdiag(const Vector& x, int n) {
  Matrix Q = Matrix::Zero(n, n);
  int at = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      Q(i, j) = x(at++);
    }
  return Q;
}

inline double condition_estimate(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return svd.singularValues()(0) / smin;
}

// Crude per-station service-parameter guess from the lag-one autocovariance:
// for an isolated exponential station the covariance equals rho*beta/(mu+beta).
inline double crude_rate_guess(double a0, double cov, double beta) {
  if (cov > 1e-12 && a0 > cov) return beta * (a0 / cov - 1.0);
  return beta;  // scale-level fallback
}

}  // namespace detail

// Solves the n^2 cross-moment equations for (Q, eta) with lambda eliminated
// through the snapshot equations, then recovers lambda; the p = 1 fast path.
// The residual uses the reordered factorization when its leading factor is
// well conditioned at the warm start, and the direct form otherwise.
inline EstimationResult estimate_sequential(const MomentSet& moments, double beta,
                                            const std::vector<ServiceModel>& family,
                                            const SolverOptions& opts = {}) {
  const int n = static_cast<int>(moments.alpha0.size());
  if (static_cast<int>(family.size()) != n)
    throw std::invalid_argument("estimate_sequential: family size mismatch");
  detail::check_beta(beta);
  const Vector& a0 = moments.alpha0;
  const Matrix& a1 = moments.alpha1;
  if ((a0.array() <= 0.0).any())
    throw std::invalid_argument("estimate_sequential: zero first moment; station unidentifiable");

  const Matrix t1 = a0 * a0.transpose() + Matrix(a0.asDiagonal());
  const ProjectionConfig& pc = opts.projection;

  auto services_at = [&](const Vector& eta) {
    std::vector<ServiceModel> s;
    s.reserve(n);
    for (int i = 0; i < n; ++i) s.push_back(family[i].with_parameter(eta(i)));
    return s;
  };

  // Warm start for eta from the per-station autocovariances.
  Vector eta(n);
  for (int i = 0; i < n; ++i) {
    const double mu = detail::crude_rate_guess(a0(i), a1(i, i) - a0(i) * a0(i), beta);
    double value = mu;
    if (const auto* e = family[i].as_erlang()) value = e->shape * mu;
    if (family[i].as_deterministic()) value = 1.0 / mu;
    eta(i) = std::clamp(value, pc.service_param_lo, pc.service_param_hi);
  }

  // Profile refinement: with services fixed at eta the closed form returns Q
  // directly, and the correct eta is the one whose identified Q has a zero
  // diagonal. This is an n-dimensional root find and gives a near-exact warm
  // start whenever the closed form is usable.
  {
    LeastSquaresProblem profile;
    profile.residual = [&](const Vector& e) -> Vector {
      const auto [Q, lambda] = identify_closed_form(moments, services_at(e), beta,
                                                    opts.closed_form_cond_limit);
      return Q.diagonal();
    };
    profile.project = [&](const Vector& e) {
      Vector out = e;
      for (int i = 0; i < n; ++i) out(i) = std::clamp(out(i), pc.service_param_lo, pc.service_param_hi);
      return out;
    };
    solve_projected_least_squares(profile, eta, 200, 1e-12);
  }

  Matrix Q0 = Matrix::Zero(n, n);
  try {
    Q0 = identify_closed_form(moments, services_at(eta), beta, opts.closed_form_cond_limit).first;
    Q0.diagonal().setZero();
  } catch (const std::exception&) {
    // keep the zero matrix; the least-squares stage searches from there
  }

  const int qdim = n * (n - 1);
  auto pack = [&](const Matrix& Q, const Vector& e) {
    Vector x(qdim + n);
    int at = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        x(at++) = Q(i, j);
      }
    x.tail(n) = e;
    return x;
  };

  auto cross_moment_residual = [&](const Vector& x, bool reordered) -> Vector {
    const Matrix Q = detail::q_from_offdiag(x.head(qdim), n);
    const Vector e = x.tail(n);
    Vector g(n), lst(n), lst_res(n);
    for (int i = 0; i < n; ++i) {
      const TransformBundle b = family[i].with_parameter(e(i)).bundle(beta);
      g(i) = b.mean;
      lst(i) = b.lst;
      lst_res(i) = b.lst_res;
    }
    const Matrix t2 =
        (a0 * (a0.cwiseQuotient(g)).transpose()) * (Matrix::Identity(n, n) - Q) / beta;
    Matrix lhs = Matrix::Identity(n, n) - lst.asDiagonal() * Q;
    Eigen::PartialPivLU<Matrix> lu(lhs);
    Matrix rhs = Matrix::Zero(n, n);
    rhs.diagonal() = Vector::Ones(n) - lst;
    const Matrix t3 = lu.solve(rhs);
    if (!t3.allFinite()) throw std::runtime_error("singular passage system");

    const Matrix base = t1 * Matrix((Vector::Ones(n) - lst_res).asDiagonal());
    const Matrix factor = t1 * Matrix(lst_res.asDiagonal()) * Q + t2;
    Matrix R;
    if (reordered) {
      R = factor.partialPivLu().solve(a1 - base) - t3;
    } else {
      R = base + factor * t3 - a1;
    }
    if (!R.allFinite()) throw std::runtime_error("residual evaluation failed");
    Vector out(n * n);
    int at = 0;
    detail::flatten_into(R, out, at, 1.0);
    return out;
  };

  // Pick the residual form once, at the warm start.
  bool reordered = false;
  {
    Vector g(n), lst_res(n);
    for (int i = 0; i < n; ++i) {
      const TransformBundle b = family[i].with_parameter(eta(i)).bundle(beta);
      g(i) = b.mean;
      lst_res(i) = b.lst_res;
    }
    const Matrix t2 =
        (a0 * (a0.cwiseQuotient(g)).transpose()) * (Matrix::Identity(n, n) - Q0) / beta;
    const Matrix factor = t1 * Matrix(lst_res.asDiagonal()) * Q0 + t2;
    reordered = detail::condition_estimate(factor) <= opts.reorder_cond_limit;
  }

  LeastSquaresProblem problem;
  problem.residual = [&](const Vector& x) { return cross_moment_residual(x, reordered); };
  problem.project = [&](const Vector& x) {
    return detail::project_q_eta(x, n, pc.service_param_lo, pc.service_param_hi, pc.exit_margin);
  };

  Vector best_x = pack(Q0, eta);
  SolveReport best = solve_projected_least_squares(problem, best_x, opts.max_iterations,
                                                   opts.gradient_tol);

  // Randomized restarts if the warm-started solve did not reach a good fit.
  if (best.cost > 1e-16 && opts.starts > 1) {
    Rng rng(Rng::mix(opts.seed ^ 0x5eau));
    const int extra = std::max(0, opts.starts / 2 - 1);
    for (int s = 0; s < extra && best.cost > 1e-16; ++s) {
      Matrix Qr = Matrix::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < n; ++j)
          if (i != j) row += (Qr(i, j) = rng.u01());
        const double target = rng.uniform(0.05, 0.85);
        if (row > 0) Qr.row(i) *= target / row;
      }
      Vector er(n);
      for (int i = 0; i < n; ++i)
        er(i) = std::clamp(eta(i) * std::exp(rng.uniform(-1.0, 1.0)), pc.service_param_lo,
                           pc.service_param_hi);
      Vector x = pack(Qr, er);
      SolveReport rep = solve_projected_least_squares(problem, x, opts.max_iterations,
                                                      opts.gradient_tol);
      if (rep.cost < best.cost) {
        best = rep;
        best_x = x;
      }
    }
  }

  const Matrix Qhat = detail::q_from_offdiag(best_x.head(qdim), n);
  const Vector eta_hat = best_x.tail(n);
  const auto services = services_at(eta_hat);
  Vector g(n);
  for (int i = 0; i < n; ++i) g(i) = services[i].mean();
  const Vector lambda_hat =
      (Matrix::Identity(n, n) - Qhat.transpose()) * a0.cwiseQuotient(g);

  const ThetaSpace space = ThetaSpace::parametric(beta, family);
  NetworkParams raw = make_params(Qhat, lambda_hat, services, Vector::Ones(n));
  EstimationResult result;
  result.theta_hat = project_theta(raw, space, pc);
  result.mode = EstimationMode::ParametricServices;
  result.iterations = best.iterations;
  result.converged = best.converged;
  result.residual_norm = moment_residual(result.theta_hat, space, moments, opts).norm();
  return result;
}

// ---------------------------------------------------------------------------
// Constrained least squares over the full psi-stack
// ---------------------------------------------------------------------------

// Divides the censoring out of observed moments when p is known and positive.
inline MomentSet decensor(const MomentSet& moments, const Vector& p) {
  MomentSet out = moments;
  out.alpha0 = moments.alpha0.cwiseQuotient(p);
  const Matrix pp = p * p.transpose();
  out.alpha1 = moments.alpha1.cwiseQuotient(pp);
  if (moments.alpha2) out.alpha2 = moments.alpha2->cwiseQuotient(pp);
  return out;
}

namespace detail {

// Mode-specific warm start for the least-squares stage: the closed form for
// known services, the sequential scheme (on de-censored moments) otherwise.
inline std::optional<NetworkParams> warm_start(const MomentSet& moments,
                                               const ThetaSpace& space,
                                               const SolverOptions& opts) {
  const int n = space.n;
  if ((space.p.array() <= 0.0).any() && space.mode != EstimationMode::WithObservationProbabilities)
    return std::nullopt;
  try {
    switch (space.mode) {
      case EstimationMode::KnownServices: {
        const MomentSet plain = decensor(moments, space.p);
        auto [Q, lambda] = identify_closed_form(plain, space.services, space.beta,
                                                opts.closed_form_cond_limit);
        return project_theta(make_params(std::move(Q), std::move(lambda), space.services, space.p),
                             space, opts.projection);
      }
      case EstimationMode::ParametricServices: {
        const MomentSet plain = decensor(moments, space.p);
        EstimationResult seq = estimate_sequential(plain, space.beta, space.services, opts);
        NetworkParams theta = seq.theta_hat;
        theta.p = space.p;
        return project_theta(theta, space, opts.projection);
      }
      case EstimationMode::ModelFree: {
        // The model-free coordinates carry a per-station flat direction: the
        // lag-two block pins the service-time *shape* but the moment blocks
        // cannot separate E[G] from the arrival rate along one direction per
        // station. Damped least squares therefore stays near its start, so
        // the start has to carry the right shape already. Fit one-parameter
        // surrogate families, score each candidate's transform triple on the
        // full psi-stack (lag-two included), and anchor at the best one.
        const MomentSet plain = decensor(moments, space.p);
        std::optional<NetworkParams> best;
        double best_score = std::numeric_limits<double>::infinity();
        const std::vector<std::vector<ServiceModel>> families = {
            std::vector<ServiceModel>(n, ServiceModel::exponential(1.0)),
            std::vector<ServiceModel>(n, ServiceModel::erlang(2, 1.0)),
            std::vector<ServiceModel>(n, ServiceModel::deterministic(1.0))};
        for (const auto& family : families) {
          try {
            EstimationResult seq = estimate_sequential(plain, space.beta, family, opts);
            std::vector<ServiceModel> triples;
            triples.reserve(n);
            for (int i = 0; i < n; ++i) {
              const TransformBundle b = seq.theta_hat.services[i].bundle(space.beta);
              triples.push_back(ServiceModel::model_free(b.mean, b.lst, b.dlst, space.beta));
            }
            NetworkParams theta = project_theta(
                make_params(seq.theta_hat.Q, seq.theta_hat.lambda, std::move(triples), space.p),
                space, opts.projection);
            const double score = moment_residual(theta, space, moments, opts).norm();
            if (score < best_score) {
              best_score = score;
              best = std::move(theta);
            }
          } catch (const std::exception&) {
            // surrogate family failed to fit; try the next one
          }
        }
        return best;
      }
      case EstimationMode::WithObservationProbabilities: {
        // Full-observation fit as a starting shape; p starts at one.
        EstimationResult seq = estimate_sequential(moments, space.beta, space.services, opts);
        NetworkParams theta = seq.theta_hat;
        theta.p = Vector::Ones(n);
        return project_theta(theta, space, opts.projection);
      }
    }
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return std::nullopt;
}

inline NetworkParams random_feasible(const MomentSet& moments, const ThetaSpace& space,
                                     Rng& rng, const ProjectionConfig& pc) {
  const int n = space.n;
  Matrix Q = Matrix::Zero(n, n);
  const bool zero_diag = mode_forbids_self_loops(space.mode);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      if (zero_diag && i == j) continue;
      row += (Q(i, j) = rng.u01());
    }
    const double target = rng.uniform(0.05, 0.85);
    if (row > 0) Q.row(i) *= target / row;
  }

  std::vector<ServiceModel> services;
  services.reserve(n);
  Vector g(n);
  Vector p = space.p;
  switch (space.mode) {
    case EstimationMode::KnownServices:
      services = space.services;
      break;
    case EstimationMode::ParametricServices:
    case EstimationMode::WithObservationProbabilities:
      for (int i = 0; i < n; ++i) {
        const double eta = std::clamp(std::exp(rng.uniform(-1.5, 2.3)), pc.service_param_lo,
                                      pc.service_param_hi);
        services.push_back(space.services[i].with_parameter(eta));
      }
      if (space.mode == EstimationMode::WithObservationProbabilities) {
        p.resize(n);
        for (int i = 0; i < n; ++i) p(i) = rng.uniform(0.3, 1.0);
      }
      break;
    case EstimationMode::ModelFree:
      for (int i = 0; i < n; ++i) {
        const double mean = std::clamp(std::exp(rng.uniform(-2.3, 1.6)), pc.g_lo, pc.g_hi);
        const double lst = rng.uniform(0.1, 0.9);
        const double dlst = -rng.uniform(0.05, 0.9) * mean;
        services.push_back(ServiceModel::model_free(mean, lst, dlst, space.beta));
      }
      break;
  }
  for (int i = 0; i < n; ++i) g(i) = services[i].mean();

  // Data-scaled arrival rates: invert the snapshot equations at this guess.
  Vector pf = p.cwiseMax(1e-3);
  Vector leff = moments.alpha0.cwiseQuotient(pf).cwiseQuotient(g);
  Vector lambda = (Matrix::Identity(n, n) - Q.transpose()) * leff;
  for (int i = 0; i < n; ++i)
    lambda(i) = std::clamp(lambda(i) * rng.uniform(0.5, 1.5), 0.0, pc.lambda_cap);

  return project_theta(make_params(std::move(Q), std::move(lambda), std::move(services), std::move(p)),
                       space, pc);
}

}  // namespace detail

// Minimizes the stacked moment-equation residuals over the parameter space by
// multi-start projected least squares: the mode's warm start (closed form or
// sequential) when available, then randomized feasible points. Deterministic
// given opts.seed; ties resolve to the earliest start.
inline EstimationResult estimate_least_squares(const MomentSet& moments, const ThetaSpace& space,
                                               const SolverOptions& opts = {},
                                               const std::optional<NetworkParams>& init = {}) {
  if (space.n < 1) throw std::invalid_argument("estimate_least_squares: empty parameter space");
  const bool lag2 = mode_needs_lag2(space.mode);
  if (lag2 && !moments.alpha2)
    throw std::invalid_argument("estimate_least_squares: mode needs lag-two moments");

  LeastSquaresProblem problem;
  problem.residual = [&](const Vector& x) {
    return moment_residual(unpack_theta(x, space), space, moments, opts);
  };
  problem.project = [&](const Vector& x) {
    return pack_theta(project_theta(x, space, opts.projection), space);
  };

  std::vector<Vector> starts;
  if (init) starts.push_back(pack_theta(project_theta(*init, space, opts.projection), space));
  if (auto warm = detail::warm_start(moments, space, opts))
    starts.push_back(pack_theta(*warm, space));
  Rng rng(Rng::mix(opts.seed));
  while (static_cast<int>(starts.size()) < std::max(1, opts.starts))
    starts.push_back(pack_theta(detail::random_feasible(moments, space, rng, opts.projection), space));

  Vector best_x;
  SolveReport best;
  bool have_best = false;
  for (const auto& start : starts) {
    Vector x = start;
    const SolveReport report =
        solve_projected_least_squares(problem, x, opts.max_iterations, opts.gradient_tol);
    // Later starts replace the incumbent only on a clear improvement; exact
    // ties (flat directions reach the same cost) resolve to the earliest
    // start, which is the warm start when one exists.
    const bool better =
        !have_best || report.cost < best.cost - std::max(1e-30, 1e-6 * best.cost);
    if (better) {
      best = report;
      best_x = x;
      have_best = true;
    }
    if (best.cost <= 1e-20) break;  // exact fit; further starts cannot improve
  }

  EstimationResult result;
  result.mode = space.mode;
  result.theta_hat = unpack_theta(best_x, space);
  result.iterations = best.iterations;
  result.converged = best.converged;
  result.residual_norm = moment_residual(result.theta_hat, space, moments, opts).norm();
  return result;
}

// ---------------------------------------------------------------------------
// Full pipeline: log -> empirical moments -> warm start -> least squares
// ---------------------------------------------------------------------------

namespace detail {

inline MomentSet slice_moments(const MomentSet& moments, const std::vector<int>& keep) {
  const int k = static_cast<int>(keep.size());
  MomentSet out;
  out.source = moments.source;
  out.beta = moments.beta;
  out.alpha0 = Vector(k);
  out.alpha1 = Matrix(k, k);
  if (moments.alpha2) out.alpha2 = Matrix(k, k);
  for (int a = 0; a < k; ++a) {
    out.alpha0(a) = moments.alpha0(keep[a]);
    for (int b = 0; b < k; ++b) {
      out.alpha1(a, b) = moments.alpha1(keep[a], keep[b]);
      if (moments.alpha2) (*out.alpha2)(a, b) = (*moments.alpha2)(keep[a], keep[b]);
    }
  }
  return out;
}

inline ThetaSpace slice_space(const ThetaSpace& space, const std::vector<int>& keep) {
  ThetaSpace out = space;
  out.n = static_cast<int>(keep.size());
  out.services.clear();
  out.p = Vector(out.n);
  for (int a = 0; a < out.n; ++a) {
    out.services.push_back(space.services[keep[a]]);
    out.p(a) = space.p(keep[a]);
  }
  return out;
}

}  // namespace detail

inline EstimationResult estimate(const ObservationLog& log, const ThetaSpace& space,
                                 const SolverOptions& opts = {}) {
  if (log.n() != space.n)
    throw std::invalid_argument("estimate: log and parameter space disagree on n");
  MomentSet moments = empirical_moments(log, mode_needs_lag2(space.mode));

  // Stations that never show any mass are unidentifiable: pin them to zero and
  // estimate the remaining sub-network.
  std::vector<int> active, dead;
  for (int i = 0; i < space.n; ++i)
    (moments.alpha0(i) > 0.0 ? active : dead).push_back(i);

  if (active.empty()) {
    EstimationResult result;
    result.mode = space.mode;
    result.degenerate_stations = dead;
    Vector zero_lambda = Vector::Zero(space.n);
    Vector zero_p = space.mode == EstimationMode::WithObservationProbabilities
                        ? Vector::Zero(space.n)
                        : space.p;
    result.theta_hat = make_params(Matrix::Zero(space.n, space.n), zero_lambda,
                                   space.services, zero_p);
    result.converged = true;
    result.residual_norm = 0.0;
    return result;
  }

  if (!dead.empty()) {
    const MomentSet sub_moments = detail::slice_moments(moments, active);
    const ThetaSpace sub_space = detail::slice_space(space, active);
    EstimationResult sub = estimate_least_squares(sub_moments, sub_space, opts);

    EstimationResult result;
    result.mode = space.mode;
    result.degenerate_stations = dead;
    Matrix Q = Matrix::Zero(space.n, space.n);
    Vector lambda = Vector::Zero(space.n);
    Vector p = space.p;
    std::vector<ServiceModel> services = space.services;
    for (int a = 0; a < static_cast<int>(active.size()); ++a) {
      lambda(active[a]) = sub.theta_hat.lambda(a);
      services[active[a]] = sub.theta_hat.services[a];
      if (space.mode == EstimationMode::WithObservationProbabilities)
        p(active[a]) = sub.theta_hat.p(a);
      for (int b = 0; b < static_cast<int>(active.size()); ++b)
        Q(active[a], active[b]) = sub.theta_hat.Q(a, b);
    }
    if (space.mode == EstimationMode::WithObservationProbabilities)
      for (int i : dead) p(i) = 0.0;
    result.theta_hat = make_params(std::move(Q), std::move(lambda), std::move(services), std::move(p));
    result.iterations = sub.iterations;
    result.converged = sub.converged;
    result.residual_norm = moment_residual(result.theta_hat, space, moments, opts).norm();
    return result;
  }

  // Known services with known positive observation probabilities: the moment
  // equations invert in closed form, and that inversion (projected into the
  // parameter space) is the estimator. Refining it by unweighted least
  // squares over the constrained set systematically trades arrival rate for
  // the routing noise that the projection clips at zero, so the refinement is
  // reserved for ill-conditioned inversions.
  if (space.mode == EstimationMode::KnownServices && (space.p.array() > 0.0).all()) {
    try {
      const MomentSet plain = decensor(moments, space.p);
      auto [Q, lambda] = identify_closed_form(plain, space.services, space.beta,
                                              opts.closed_form_cond_limit);
      EstimationResult result;
      result.mode = space.mode;
      result.theta_hat = project_theta(
          make_params(std::move(Q), std::move(lambda), space.services, space.p), space,
          opts.projection);
      result.closed_form = result.theta_hat;
      result.converged = true;
      result.residual_norm = moment_residual(result.theta_hat, space, moments, opts).norm();
      return result;
    } catch (const std::exception&) {
      // fall through to least squares from multiple starts
    }
  }

  return estimate_least_squares(moments, space, opts);
}

}  // namespace qnet
