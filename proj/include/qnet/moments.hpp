#pragma once

#include <optional>
#include <stdexcept>

#include "qnet/params.hpp"

namespace qnet {

// Gamma terms carry a 1/beta factor; reject rates below this.
inline constexpr double kMinBeta = 1e-9;

// Passage probabilities at rate beta. P(i, j) is the probability that a
// customer who just entered station i sits at station j after an independent
// exponential(beta) time; the res variants start from a residual service.
// dP / dP_res are the entrywise derivatives in beta.
struct PassageMatrices {
  double beta = 0.0;
  Matrix P;
  Matrix P_res;
  Matrix dP;
  Matrix dP_res;
  Vector P0;      // exit probabilities, 1 - P 1
  Vector P0_res;
};

enum class MomentSource { Analytic, Empirical };

// First and cross moments of the sampled populations. alpha1(j, i) pairs
// station j at the earlier epoch with station i one epoch later; alpha2 is the
// two-epochs-apart (Erlang-2 gap) analogue. Not symmetric in general.
struct MomentSet {
  Vector alpha0;
  Matrix alpha1;
  std::optional<Matrix> alpha2;
  MomentSource source = MomentSource::Analytic;
  double beta = 0.0;
};

namespace detail {

struct TransformVectors {
  Vector mean, lst, dlst, lst_res, dlst_res;
};

inline TransformVectors transforms_at(const NetworkParams& params, double beta) {
  const int n = params.n;
  TransformVectors t{Vector(n), Vector(n), Vector(n), Vector(n), Vector(n)};
  for (int i = 0; i < n; ++i) {
    const TransformBundle b = params.services[i].bundle(beta);
    t.mean(i) = b.mean;
    t.lst(i) = b.lst;
    t.dlst(i) = b.dlst;
    t.lst_res(i) = b.lst_res;
    t.dlst_res(i) = b.dlst_res;
  }
  return t;
}

inline void check_beta(double beta) {
  if (!(beta >= kMinBeta))
    throw std::invalid_argument("beta must be at least 1e-9");
}

}  // namespace detail

// Solves the traffic equations (I - Q^T) x = lambda.
inline Vector effective_rates(const NetworkParams& params) {
  const int n = params.n;
  const Matrix A = Matrix::Identity(n, n) - params.Q.transpose();
  Eigen::PartialPivLU<Matrix> lu(A);
  Vector x = lu.solve(params.lambda);
  const double resid = (A * x - params.lambda).norm();
  if (!x.allFinite() || resid > 1e-8 * (1.0 + params.lambda.norm()))
    throw std::runtime_error("effective_rates: traffic equations are singular (drain condition violated)");
  for (int i = 0; i < n; ++i) {
    if (x(i) < -1e-8)
      throw std::runtime_error("effective_rates: negative effective rate; invalid routing matrix");
    if (x(i) < 0.0) x(i) = 0.0;
  }
  return x;
}

inline Vector loads(const NetworkParams& params) {
  Vector rho = effective_rates(params);
  for (int i = 0; i < params.n; ++i) rho(i) *= params.services[i].mean();
  return rho;
}

inline PassageMatrices passage(const NetworkParams& params, double beta) {
  detail::check_beta(beta);
  const int n = params.n;
  const auto t = detail::transforms_at(params, beta);

  const Matrix A = Matrix::Identity(n, n) - t.lst.asDiagonal() * params.Q;
  Eigen::PartialPivLU<Matrix> lu(A);

  Matrix rhs = Matrix::Zero(n, n);
  rhs.diagonal() = Vector::Ones(n) - t.lst;

  PassageMatrices out;
  out.beta = beta;
  out.P = lu.solve(rhs);
  if (!out.P.allFinite())
    throw std::runtime_error("passage: I - diag(G) Q is singular");

  const Matrix QP = params.Q * out.P;
  out.P_res = t.lst_res.asDiagonal() * QP;
  out.P_res.diagonal().array() += (1.0 - t.lst_res.array());

  out.dP = lu.solve(t.dlst.asDiagonal() * (QP - Matrix::Identity(n, n)));
  out.dP_res = t.dlst_res.asDiagonal() * QP + t.lst_res.asDiagonal() * (params.Q * out.dP);
  out.dP_res.diagonal() -= t.dlst_res;

  out.P0 = Vector::Ones(n) - out.P.rowwise().sum();
  out.P0_res = Vector::Ones(n) - out.P_res.rowwise().sum();
  return out;
}

namespace detail {

inline Matrix lag1_from(const Vector& rho, const Vector& lambda, const PassageMatrices& pm) {
  Matrix second = rho * rho.transpose() + Matrix(rho.asDiagonal());
  const Eigen::RowVectorXd lP = lambda.transpose() * pm.P;
  return second * pm.P_res + (rho * lP) / pm.beta;
}

inline Matrix lag2_from(const Vector& rho, const Vector& lambda, const PassageMatrices& pm) {
  Matrix second = rho * rho.transpose() + Matrix(rho.asDiagonal());
  const Eigen::RowVectorXd lP = lambda.transpose() * pm.P;
  const Eigen::RowVectorXd ldP = lambda.transpose() * pm.dP;
  return second * (pm.P_res - pm.beta * pm.dP_res) + 2.0 * (rho * lP) / pm.beta - rho * ldP;
}

}  // namespace detail

// E[M(0) M(T_beta)^T]: entry (j, i) pairs station j now with station i at the
// next Poisson epoch.
inline Matrix cross_moment_lag1(const NetworkParams& params, double beta) {
  detail::check_beta(beta);
  return detail::lag1_from(loads(params), params.lambda, passage(params, beta));
}

// E[M(0) M(E_{beta,2})^T]: same, two Poisson epochs apart.
inline Matrix cross_moment_lag2(const NetworkParams& params, double beta) {
  detail::check_beta(beta);
  return detail::lag2_from(loads(params), params.lambda, passage(params, beta));
}

// Moments of the thinned (observed) populations: each customer at station i
// is seen independently with probability p_i, so first moments scale by p and
// cross moments by p p^T.
inline MomentSet observed_moments(const NetworkParams& params, double beta,
                                  bool with_lag2 = true) {
  detail::check_beta(beta);
  const Vector rho = loads(params);
  const PassageMatrices pm = passage(params, beta);

  MomentSet out;
  out.source = MomentSource::Analytic;
  out.beta = beta;
  out.alpha0 = params.p.cwiseProduct(rho);
  const auto dp = params.p.asDiagonal();
  out.alpha1 = dp * detail::lag1_from(rho, params.lambda, pm) * dp;
  if (with_lag2) out.alpha2 = dp * detail::lag2_from(rho, params.lambda, pm) * dp;
  return out;
}

}  // namespace qnet
