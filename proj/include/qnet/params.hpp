#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "qnet/service.hpp"

namespace qnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RoutingMatrix = Matrix;  // sub-stochastic; implied exit probability is the row deficit

enum class EstimationMode {
  KnownServices,                 // estimate Q, lambda
  ParametricServices,            // estimate Q (zero diagonal), lambda, one parameter per service
  ModelFree,                     // estimate Q (zero diagonal), lambda, (E[G], lst, dlst) per station
  WithObservationProbabilities,  // ParametricServices plus the observation probabilities
};

constexpr bool mode_forbids_self_loops(EstimationMode m) {
  return m != EstimationMode::KnownServices;
}

constexpr bool mode_needs_lag2(EstimationMode m) {
  return m == EstimationMode::ModelFree || m == EstimationMode::WithObservationProbabilities;
}

inline const char* mode_name(EstimationMode m) {
  switch (m) {
    case EstimationMode::KnownServices: return "known";
    case EstimationMode::ParametricServices: return "parametric";
    case EstimationMode::ModelFree: return "modelfree";
    case EstimationMode::WithObservationProbabilities: return "withp";
  }
  return "unknown";
}

inline EstimationMode mode_from_name(const std::string& s) {
  if (s == "known") return EstimationMode::KnownServices;
  if (s == "parametric") return EstimationMode::ParametricServices;
  if (s == "modelfree") return EstimationMode::ModelFree;
  if (s == "withp") return EstimationMode::WithObservationProbabilities;
  throw std::invalid_argument("unknown estimation mode: " + s);
}

struct ProjectionConfig {
  double lambda_cap = 100.0;       // upper bound on each external arrival rate
  double exit_margin = 1e-3;       // over-full Q rows get rescaled to sum 1 - exit_margin
  double g_lo = 1e-3;              // model-free mean bounds [g-, g+]
  double g_hi = 1e3;
  double service_param_lo = 1e-6;  // rates / durations of one-parameter families
  double service_param_hi = 1e6;
  double lst_margin = 1e-9;        // keeps model-free lst in (0,1) and dlst below 0
  double support_eps = 1e-12;      // Q entries at or below this count as absent edges
};

// A full parameter point: routing matrix, external rates, service models and
// observation probabilities. Immutable by convention; operations return copies.
struct NetworkParams {
  int n = 0;
  RoutingMatrix Q;
  Vector lambda;
  std::vector<ServiceModel> services;
  Vector p;
};

inline NetworkParams make_params(Matrix Q, Vector lambda,
                                 std::vector<ServiceModel> services, Vector p = Vector()) {
  NetworkParams out;
  out.n = static_cast<int>(Q.rows());
  if (out.n < 1) throw std::invalid_argument("network needs at least one station");
  if (Q.cols() != out.n) throw std::invalid_argument("routing matrix must be square");
  if (lambda.size() != out.n) throw std::invalid_argument("lambda length must equal n");
  if (static_cast<int>(services.size()) != out.n)
    throw std::invalid_argument("service list length must equal n");
  if (p.size() == 0) p = Vector::Ones(out.n);
  if (p.size() != out.n) throw std::invalid_argument("p length must equal n");
  out.Q = std::move(Q);
  out.lambda = std::move(lambda);
  out.services = std::move(services);
  out.p = std::move(p);
  return out;
}

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool ok() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }

  bool passed(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c.pass;
    return false;
  }
};

namespace detail {

// Forward reachability over the support of Q from the given seed set.
inline std::vector<bool> reach_forward(const Matrix& Q, std::vector<bool> seen, double eps) {
  const int n = static_cast<int>(Q.rows());
  std::deque<int> queue;
  for (int i = 0; i < n; ++i)
    if (seen[i]) queue.push_back(i);
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    for (int j = 0; j < n; ++j) {
      if (!seen[j] && Q(i, j) > eps) {
        seen[j] = true;
        queue.push_back(j);
      }
    }
  }
  return seen;
}

}  // namespace detail

// Pure report of every structural invariant; nothing is repaired here.
inline ValidationReport validate(const NetworkParams& params, EstimationMode mode,
                                 const ProjectionConfig& cfg = {}) {
  ValidationReport report;
  const int n = params.n;
  const double eps = cfg.support_eps;

  auto add = [&](std::string name, bool pass, std::string detail = "") {
    report.checks.push_back({std::move(name), pass, std::move(detail)});
  };

  bool shape_ok = n >= 1 && params.Q.rows() == n && params.Q.cols() == n &&
                  params.lambda.size() == n && params.p.size() == n &&
                  static_cast<int>(params.services.size()) == n;
  add("shape", shape_ok, shape_ok ? "" : "field sizes inconsistent with n");
  if (!shape_ok) return report;

  bool entries_ok = true;
  bool rows_ok = true;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      const double q = params.Q(i, j);
      if (!(q >= 0.0 && q <= 1.0)) entries_ok = false;
      row += q;
    }
    if (row > 1.0 + 1e-12) rows_ok = false;
  }
  add("q_entries_in_unit_interval", entries_ok);
  add("sub_stochastic_rows", rows_ok);

  if (mode_forbids_self_loops(mode)) {
    bool diag_ok = true;
    for (int i = 0; i < n; ++i)
      if (params.Q(i, i) != 0.0) diag_ok = false;
    add("zero_diagonal", diag_ok,
        diag_ok ? "" : "mode requires q_ii = 0 for identifiability");
  }

  // Drain: every station must reach one with a positive exit deficit.
  {
    std::vector<bool> drains(n, false);
    for (int i = 0; i < n; ++i)
      drains[i] = (1.0 - params.Q.row(i).sum()) > eps;
    // reverse reachability: walk the transposed support from the draining set
    const Matrix Qt = params.Q.transpose();
    const auto reached = detail::reach_forward(Qt, drains, eps);
    bool drain_ok = true;
    std::string missing;
    for (int i = 0; i < n; ++i) {
      if (!reached[i]) {
        drain_ok = false;
        missing += (missing.empty() ? "" : ",") + std::to_string(i + 1);
      }
    }
    add("drain", drain_ok, drain_ok ? "" : "no exit path from station(s) " + missing);
  }

  // Flow-in: every station is fed, directly or through the routing graph.
  {
    std::vector<bool> fed(n, false);
    for (int i = 0; i < n; ++i) fed[i] = params.lambda(i) > 0.0;
    const auto reached = detail::reach_forward(params.Q, fed, eps);
    bool flow_ok = true;
    std::string missing;
    for (int i = 0; i < n; ++i) {
      if (!reached[i]) {
        flow_ok = false;
        missing += (missing.empty() ? "" : ",") + std::to_string(i + 1);
      }
    }
    add("flow_in", flow_ok, flow_ok ? "" : "no inflow at station(s) " + missing);
  }

  {
    bool lam_ok = true;
    for (int i = 0; i < n; ++i)
      if (!(params.lambda(i) >= 0.0 && params.lambda(i) <= cfg.lambda_cap)) lam_ok = false;
    add("lambda_bounds", lam_ok);
  }
  {
    bool p_ok = true;
    for (int i = 0; i < n; ++i)
      if (!(params.p(i) >= 0.0 && params.p(i) <= 1.0)) p_ok = false;
    add("p_bounds", p_ok);
  }
  {
    bool svc_ok = true;
    std::string why;
    for (int i = 0; i < n; ++i) {
      const auto& s = params.services[i];
      if (const auto* mf = s.as_model_free()) {
        if (!(mf->mean >= cfg.g_lo && mf->mean <= cfg.g_hi)) {
          svc_ok = false;
          why = "model-free mean outside [g-, g+] at station " + std::to_string(i + 1);
          break;
        }
      }
      if (!(s.mean() > 0.0) || !std::isfinite(s.mean())) {
        svc_ok = false;
        why = "non-finite or non-positive mean at station " + std::to_string(i + 1);
        break;
      }
    }
    add("service_bounds", svc_ok, why);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Parameter-space coordinates.
//
// Estimation context: mode plus the structural givens needed to rebuild a full
// parameter point from the free coordinates. `services` holds the known models
// (KnownServices) or the one-parameter family templates whose parameter gets
// replaced per candidate; `beta` anchors model-free transform triples; `p` is
// used by every mode except WithObservationProbabilities, where it is free.
// ---------------------------------------------------------------------------
struct ThetaSpace {
  int n = 0;
  EstimationMode mode = EstimationMode::KnownServices;
  double beta = 1.0;
  std::vector<ServiceModel> services;
  Vector p;

  static ThetaSpace known(double beta, std::vector<ServiceModel> services, Vector p = Vector()) {
    return make(EstimationMode::KnownServices, beta, std::move(services), std::move(p));
  }
  static ThetaSpace parametric(double beta, std::vector<ServiceModel> family, Vector p = Vector()) {
    return make(EstimationMode::ParametricServices, beta, std::move(family), std::move(p));
  }
  static ThetaSpace model_free(double beta, int n, Vector p = Vector()) {
    std::vector<ServiceModel> fill(n, ServiceModel::exponential(1.0));
    return make(EstimationMode::ModelFree, beta, std::move(fill), std::move(p));
  }
  static ThetaSpace with_p(double beta, std::vector<ServiceModel> family) {
    return make(EstimationMode::WithObservationProbabilities, beta, std::move(family), Vector());
  }

 private:
  static ThetaSpace make(EstimationMode mode, double beta,
                         std::vector<ServiceModel> services, Vector p) {
    ThetaSpace s;
    s.n = static_cast<int>(services.size());
    if (s.n < 1) throw std::invalid_argument("theta space needs at least one station");
    s.mode = mode;
    s.beta = beta;
    s.services = std::move(services);
    s.p = p.size() ? std::move(p) : Vector::Ones(s.n);
    if (s.p.size() != s.n) throw std::invalid_argument("p length must equal n");
    return s;
  }
};

inline int free_q_entries(const ThetaSpace& space) {
  return mode_forbids_self_loops(space.mode) ? space.n * (space.n - 1) : space.n * space.n;
}

inline int theta_dim(const ThetaSpace& space) {
  const int n = space.n;
  switch (space.mode) {
    case EstimationMode::KnownServices: return n * n + n;
    case EstimationMode::ParametricServices: return n * n + n;          // (n^2 - n) + n + n
    case EstimationMode::ModelFree: return n * n + 3 * n;               // (n^2 - n) + n + 3n
    case EstimationMode::WithObservationProbabilities: return n * n + 2 * n;
  }
  throw std::logic_error("unreachable");
}

// Coordinate order: Q (row-major, diagonal skipped when the mode forbids self
// loops), lambda, then per mode: service parameters / model-free triples
// (means, lsts, dlsts as three blocks) / service parameters followed by p.
inline Vector pack_theta(const NetworkParams& params, const ThetaSpace& space) {
  const int n = space.n;
  if (params.n != n) throw std::invalid_argument("pack_theta: dimension mismatch");
  Vector x(theta_dim(space));
  int at = 0;
  const bool skip_diag = mode_forbids_self_loops(space.mode);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (skip_diag && i == j) continue;
      x(at++) = params.Q(i, j);
    }
  for (int i = 0; i < n; ++i) x(at++) = params.lambda(i);
  switch (space.mode) {
    case EstimationMode::KnownServices:
      break;
    case EstimationMode::ParametricServices:
      for (int i = 0; i < n; ++i) x(at++) = params.services[i].parameter();
      break;
    case EstimationMode::ModelFree: {
      for (int i = 0; i < n; ++i) x(at++) = params.services[i].mean();
      for (int i = 0; i < n; ++i) {
        const auto* mf = params.services[i].as_model_free();
        if (!mf) throw std::invalid_argument("pack_theta: model-free mode needs model-free services");
        x(at + i) = mf->lst_at_beta;
        x(at + n + i) = mf->dlst_at_beta;
      }
      at += 2 * n;
      break;
    }
    case EstimationMode::WithObservationProbabilities:
      for (int i = 0; i < n; ++i) x(at++) = params.services[i].parameter();
      for (int i = 0; i < n; ++i) x(at++) = params.p(i);
      break;
  }
  return x;
}

inline NetworkParams unpack_theta(const Vector& x, const ThetaSpace& space) {
  const int n = space.n;
  if (x.size() != theta_dim(space))
    throw std::invalid_argument("unpack_theta: dimension mismatch");
  Matrix Q = Matrix::Zero(n, n);
  int at = 0;
  const bool skip_diag = mode_forbids_self_loops(space.mode);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (skip_diag && i == j) continue;
      Q(i, j) = x(at++);
    }
  Vector lambda(n);
  for (int i = 0; i < n; ++i) lambda(i) = x(at++);

  std::vector<ServiceModel> services;
  services.reserve(n);
  Vector p = space.p;
  switch (space.mode) {
    case EstimationMode::KnownServices:
      services = space.services;
      break;
    case EstimationMode::ParametricServices:
      for (int i = 0; i < n; ++i) services.push_back(space.services[i].with_parameter(x(at + i)));
      at += n;
      break;
    case EstimationMode::ModelFree:
      for (int i = 0; i < n; ++i)
        services.push_back(ServiceModel::model_free(x(at + i), x(at + n + i),
                                                    x(at + 2 * n + i), space.beta));
      at += 3 * n;
      break;
    case EstimationMode::WithObservationProbabilities: {
      for (int i = 0; i < n; ++i) services.push_back(space.services[i].with_parameter(x(at + i)));
      at += n;
      p = x.segment(at, n);
      at += n;
      break;
    }
  }
  return make_params(std::move(Q), std::move(lambda), std::move(services), std::move(p));
}

// Nearest-in-L1 feasible point: coordinates are clipped into their boxes and
// over-full routing rows are rescaled multiplicatively to sum 1 - exit_margin,
// which preserves the ratios between routing probabilities.
inline NetworkParams project_theta(const Vector& raw, const ThetaSpace& space,
                                   const ProjectionConfig& cfg = {}) {
  const int n = space.n;
  if (raw.size() != theta_dim(space))
    throw std::invalid_argument("project_theta: dimension mismatch");
  Vector x = raw;
  auto clip = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };

  const bool skip_diag = mode_forbids_self_loops(space.mode);
  const int nq = free_q_entries(space);
  for (int k = 0; k < nq; ++k) x(k) = clip(x(k), 0.0, 1.0);
  int at = nq;
  for (int i = 0; i < n; ++i, ++at) x(at) = clip(x(at), 0.0, cfg.lambda_cap);
  switch (space.mode) {
    case EstimationMode::KnownServices:
      break;
    case EstimationMode::ParametricServices:
      for (int i = 0; i < n; ++i, ++at)
        x(at) = clip(x(at), cfg.service_param_lo, cfg.service_param_hi);
      break;
    case EstimationMode::ModelFree:
      for (int i = 0; i < n; ++i, ++at) x(at) = clip(x(at), cfg.g_lo, cfg.g_hi);
      for (int i = 0; i < n; ++i, ++at) x(at) = clip(x(at), cfg.lst_margin, 1.0 - cfg.lst_margin);
      // dlst stays strictly negative; |dlst| cannot exceed the mean bound
      for (int i = 0; i < n; ++i, ++at) x(at) = clip(x(at), -cfg.g_hi, -cfg.lst_margin);
      break;
    case EstimationMode::WithObservationProbabilities:
      for (int i = 0; i < n; ++i, ++at)
        x(at) = clip(x(at), cfg.service_param_lo, cfg.service_param_hi);
      for (int i = 0; i < n; ++i, ++at) x(at) = clip(x(at), 0.0, 1.0);
      break;
  }

  // Rescale over-full routing rows. Row-major packing with an optional
  // diagonal skip, so row i occupies a contiguous block of the Q segment.
  const int row_len = skip_diag ? n - 1 : n;
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int k = 0; k < row_len; ++k) sum += x(i * row_len + k);
    const double cap = 1.0 - cfg.exit_margin;
    if (sum > cap + 1e-12) {  // slack keeps the rescale idempotent under roundoff
      const double scale = cap / sum;
      for (int k = 0; k < row_len; ++k) x(i * row_len + k) *= scale;
    }
  }
  return unpack_theta(x, space);
}

inline NetworkParams project_theta(const NetworkParams& params, const ThetaSpace& space,
                                   const ProjectionConfig& cfg = {}) {
  return project_theta(pack_theta(params, space), space, cfg);
}

// Entrywise L1 distance restricted to the coordinates estimated by the mode.
inline double param_distance(const NetworkParams& a, const NetworkParams& b,
                             const ThetaSpace& space) {
  return (pack_theta(a, space) - pack_theta(b, space)).lpNorm<1>();
}

}  // namespace qnet
