#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "qnet/estimate.hpp"
#include "qnet/experiments.hpp"
#include "qnet/simulate.hpp"

namespace qtest {

using qnet::Matrix;
using qnet::Vector;

// Mean and standard error of a time series via non-overlapping batch means;
// the SE absorbs the autocorrelation that plain CLT bands would miss.
struct BatchStats {
  double mean = 0.0;
  double se = 0.0;
};

inline BatchStats batch_mean_se(const std::vector<double>& series, int batches = 50) {
  BatchStats out;
  const std::size_t len = series.size() / batches;
  if (len == 0) batches = 1;
  std::vector<double> bm;
  for (int b = 0; b < batches; ++b) {
    const std::size_t lo = b * len;
    const std::size_t hi = (b + 1 == batches) ? series.size() : lo + len;
    double sum = 0.0;
    for (std::size_t k = lo; k < hi; ++k) sum += series[k];
    bm.push_back(sum / static_cast<double>(hi - lo));
  }
  for (double v : bm) out.mean += v;
  out.mean /= bm.size();
  double var = 0.0;
  for (double v : bm) var += (v - out.mean) * (v - out.mean);
  if (bm.size() > 1) var /= (bm.size() - 1);
  out.se = std::sqrt(var / bm.size());
  return out;
}

// Batch statistics of every lag-one product series N_j(k) N_i(k+1) in one pass.
inline std::pair<Matrix, Matrix> lag1_product_batches(const qnet::CountMatrix& counts,
                                                      int batches = 50) {
  const auto m = counts.rows();
  const int n = static_cast<int>(counts.cols());
  const auto pairs = m - 1;
  std::vector<Matrix> sums(batches, Matrix::Zero(n, n));
  std::vector<long> sizes(batches, 0);
  for (Eigen::Index k = 0; k < pairs; ++k) {
    const int b = static_cast<int>((k * batches) / pairs);
    ++sizes[b];
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        sums[b](j, i) += static_cast<double>(counts(k, j)) * counts(k + 1, i);
  }
  Matrix mean = Matrix::Zero(n, n);
  for (int b = 0; b < batches; ++b) {
    sums[b] /= static_cast<double>(sizes[b]);
    mean += sums[b];
  }
  mean /= batches;
  Matrix var = Matrix::Zero(n, n);
  for (int b = 0; b < batches; ++b) {
    const Matrix d = sums[b] - mean;
    var += d.cwiseProduct(d);
  }
  var /= (batches - 1);
  const Matrix se = (var / batches).cwiseSqrt();
  return {mean, se};
}

// Random valid parameter point with exponential services; self-loops allowed
// unless asked otherwise. Rows are strictly sub-stochastic, rates positive.
inline qnet::NetworkParams random_exponential_params(qnet::Rng& rng, int n,
                                                     bool self_loops = true) {
  Matrix Q = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      if (!self_loops && i == j) continue;
      row += (Q(i, j) = rng.u01());
    }
    const double target = rng.uniform(0.1, 0.85);
    if (row > 0.0) Q.row(i) *= target / row;
  }
  Vector lambda(n);
  for (int i = 0; i < n; ++i) lambda(i) = rng.uniform(0.5, 5.0);
  std::vector<qnet::ServiceModel> services;
  for (int i = 0; i < n; ++i)
    services.push_back(qnet::ServiceModel::exponential(rng.uniform(0.5, 5.0)));
  return qnet::make_params(Q, lambda, services);
}

// Same routing draw, but cycling through all sampleable service kinds.
inline qnet::NetworkParams random_mixed_params(qnet::Rng& rng, int n) {
  qnet::NetworkParams params = random_exponential_params(rng, n);
  for (int i = 0; i < n; ++i) {
    switch (i % 3) {
      case 0: params.services[i] = qnet::ServiceModel::exponential(rng.uniform(0.5, 5.0)); break;
      case 1: params.services[i] = qnet::ServiceModel::erlang(2, rng.uniform(1.0, 6.0)); break;
      case 2: params.services[i] = qnet::ServiceModel::deterministic(rng.uniform(0.2, 2.0)); break;
    }
  }
  return params;
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

inline bool counts_equal(const qnet::CountMatrix& a, const qnet::CountMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace qtest
