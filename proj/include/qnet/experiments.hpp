#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qnet/estimate.hpp"
#include "qnet/io.hpp"

namespace qnet {

// ---------------------------------------------------------------------------
// Reference networks
// ---------------------------------------------------------------------------

enum class Topology { Line, Circle, SymmetricCircle, Cliques };

inline Topology topology_from_name(const std::string& s) {
  if (s == "line") return Topology::Line;
  if (s == "circle") return Topology::Circle;
  if (s == "symcircle") return Topology::SymmetricCircle;
  if (s == "cliques") return Topology::Cliques;
  throw std::invalid_argument("unknown topology: " + s);
}

inline const char* topology_name(Topology t) {
  switch (t) {
    case Topology::Line: return "line";
    case Topology::Circle: return "circle";
    case Topology::SymmetricCircle: return "symcircle";
    case Topology::Cliques: return "cliques";
  }
  return "unknown";
}

// Five-station benchmark family: lambda = (3,2,4,3,4), exponential services
// with rates (2,3,3,4,3), full observation.
inline NetworkParams benchmark5_params(Topology t) {
  const int n = 5;
  Matrix Q = Matrix::Zero(n, n);
  switch (t) {
    case Topology::Line:
      for (int i = 0; i + 1 < n; ++i) Q(i, i + 1) = 0.5;
      break;
    case Topology::Circle:
      for (int i = 0; i + 1 < n; ++i) Q(i, i + 1) = 0.5;
      Q(4, 0) = 0.5;
      break;
    case Topology::SymmetricCircle:
      for (int i = 0; i + 1 < n; ++i) Q(i, i + 1) = Q(i + 1, i) = 0.25;
      Q(0, 4) = Q(4, 0) = 0.25;
      break;
    case Topology::Cliques:
      Q(0, 1) = Q(1, 0) = 0.5;
      Q(2, 3) = 0.5;
      Q(4, 3) = 0.5;
      Q(3, 2) = 0.25;
      Q(3, 4) = 0.25;
      break;
  }
  Vector lambda(n), mu(n);
  lambda << 3, 2, 4, 3, 4;
  mu << 2, 3, 3, 4, 3;
  std::vector<ServiceModel> services;
  for (int i = 0; i < n; ++i) services.push_back(ServiceModel::exponential(mu(i)));
  return make_params(Q, lambda, services);
}

// Homogeneous directed ring: identical rates everywhere, routing probability q
// to the next station clockwise or counterclockwise. Both orientations share
// the same stationary distribution.
inline NetworkParams homogeneous_circle(int n, double lambda, double mu, double q,
                                        bool clockwise) {
  Matrix Q = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const int next = clockwise ? (i + 1) % n : (i + n - 1) % n;
    Q(i, next) = q;
  }
  std::vector<ServiceModel> services(n, ServiceModel::exponential(mu));
  return make_params(Q, Vector::Constant(n, lambda), services);
}

// Uniformly sampled zero-diagonal sub-stochastic routing: each row draws unit
// exponential weights for its off-diagonal entries plus one exit atom and
// normalizes, i.e. Dirichlet weights with an exit share.
inline Matrix random_substochastic(int n, Rng& rng) {
  Matrix Q = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double total = rng.exponential(1.0);  // exit atom
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      Q(i, j) = rng.exponential(1.0);
      total += Q(i, j);
    }
    for (int j = 0; j < n; ++j) Q(i, j) /= total;
  }
  return Q;
}

// ---------------------------------------------------------------------------
// Experiment 1: four five-station topologies, known services, p = 1
// ---------------------------------------------------------------------------

struct Experiment1Result {
  NetworkParams truth;
  Matrix lambda_draws;          // R x n
  std::vector<Matrix> q_draws;  // R matrices
  Vector lambda_mean, lambda_var;
  Matrix q_mean, q_var;
};

inline Experiment1Result run_experiment1(Topology topology, int runs, std::int64_t m,
                                         double beta, std::uint64_t seed, int jobs = 1,
                                         const std::optional<std::filesystem::path>& out = {}) {
  Experiment1Result res;
  res.truth = benchmark5_params(topology);
  const int n = res.truth.n;
  const ThetaSpace space = ThetaSpace::known(beta, res.truth.services);

  res.lambda_draws.resize(runs, n);
  res.q_draws.assign(runs, Matrix::Zero(n, n));

  auto run_one = [&](int r) {
    const ObservationLog log = simulate(res.truth, beta, m, Rng::substream_seed(seed, r));
    SolverOptions opts;
    opts.seed = Rng::substream_seed(seed ^ 0xabcdull, r);
    const EstimationResult est = estimate(log, space, opts);
    res.lambda_draws.row(r) = est.theta_hat.lambda.transpose();
    res.q_draws[r] = est.theta_hat.Q;
  };
  if (jobs <= 1 || runs == 1) {
    for (int r = 0; r < runs; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1)) run_one(r);
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(jobs, runs); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  res.lambda_mean = res.lambda_draws.colwise().mean().transpose();
  res.lambda_var = Vector::Zero(n);
  res.q_mean = Matrix::Zero(n, n);
  res.q_var = Matrix::Zero(n, n);
  for (int r = 0; r < runs; ++r) res.q_mean += res.q_draws[r];
  res.q_mean /= runs;
  if (runs > 1) {
    for (int r = 0; r < runs; ++r) {
      const Vector dl = res.lambda_draws.row(r).transpose() - res.lambda_mean;
      res.lambda_var += dl.cwiseProduct(dl);
      const Matrix dq = res.q_draws[r] - res.q_mean;
      res.q_var += dq.cwiseProduct(dq);
    }
    res.lambda_var /= (runs - 1);
    res.q_var /= (runs - 1);
  }

  if (out) {
    std::filesystem::create_directories(*out);
    std::string per_run = "run";
    for (int i = 0; i < n; ++i) per_run += ",lambda_" + std::to_string(i + 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        per_run += ",q_" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
    per_run += '\n';
    for (int r = 0; r < runs; ++r) {
      per_run += std::to_string(r + 1);
      for (int i = 0; i < n; ++i) per_run += ',' + format_double(res.lambda_draws(r, i));
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) per_run += ',' + format_double(res.q_draws[r](i, j));
      per_run += '\n';
    }
    io_detail::write_file(*out / "per_run_estimates.csv", per_run);

    std::string hist = "lambda_1\n";
    for (int r = 0; r < runs; ++r) hist += format_double(res.lambda_draws(r, 0)) + "\n";
    io_detail::write_file(*out / "lambda1_histogram.csv", hist);

    std::string summary = "station,lambda_true,lambda_mean,lambda_var\n";
    for (int i = 0; i < n; ++i)
      summary += std::to_string(i + 1) + ',' + format_double(res.truth.lambda(i)) + ',' +
                 format_double(res.lambda_mean(i)) + ',' + format_double(res.lambda_var(i)) + '\n';
    io_detail::write_file(*out / "lambda_summary.csv", summary);
    write_matrix_csv(res.q_mean, *out / "q_mean.csv");
    write_matrix_csv(res.q_var, *out / "q_var.csv");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Experiment 2: cyclic network, unknown services and observation probabilities,
// accuracy as a function of the number of observations
// ---------------------------------------------------------------------------

struct Experiment2Result {
  NetworkParams truth;
  struct Row {
    std::int64_t m = 0;
    double q_err = 0.0, lambda_err = 0.0, mu_err = 0.0, p_err = 0.0;
    NetworkParams estimate;
  };
  std::vector<Row> rows;
};

inline NetworkParams experiment2_params() {
  NetworkParams params = benchmark5_params(Topology::Circle);
  Vector p(5);
  p << 0.9, 0.8, 0.95, 0.85, 0.75;
  params.p = p;
  return params;
}

inline Experiment2Result run_experiment2(const std::vector<std::int64_t>& ms, double beta,
                                         std::uint64_t seed,
                                         const std::optional<std::filesystem::path>& out = {}) {
  Experiment2Result res;
  res.truth = experiment2_params();
  const int n = res.truth.n;
  std::vector<ServiceModel> family(n, ServiceModel::exponential(1.0));
  const ThetaSpace space = ThetaSpace::with_p(beta, family);

  for (std::size_t k = 0; k < ms.size(); ++k) {
    const std::int64_t m = ms[k];
    const ObservationLog log = simulate(res.truth, beta, m, Rng::substream_seed(seed, k));
    SolverOptions opts;
    opts.seed = Rng::substream_seed(seed ^ 0x2222ull, k);
    const EstimationResult est = estimate(log, space, opts);

    Experiment2Result::Row row;
    row.m = m;
    row.estimate = est.theta_hat;
    row.q_err = (est.theta_hat.Q - res.truth.Q).cwiseAbs().sum();
    row.lambda_err = (est.theta_hat.lambda - res.truth.lambda).cwiseAbs().sum();
    for (int i = 0; i < n; ++i)
      row.mu_err += std::abs(est.theta_hat.services[i].parameter() -
                             res.truth.services[i].parameter());
    row.p_err = (est.theta_hat.p - res.truth.p).cwiseAbs().sum();
    res.rows.push_back(std::move(row));
  }

  if (out) {
    std::filesystem::create_directories(*out);
    std::string err = "m,q_l1_error,lambda_l1_error,mu_l1_error,p_l1_error\n";
    for (const auto& row : res.rows)
      err += std::to_string(row.m) + ',' + format_double(row.q_err) + ',' +
             format_double(row.lambda_err) + ',' + format_double(row.mu_err) + ',' +
             format_double(row.p_err) + '\n';
    io_detail::write_file(*out / "error_vs_m.csv", err);

    // Adjacency rendering rule: below 0.01 the edge is omitted, below 0.02 it
    // is drawn dotted.
    for (const auto& row : res.rows) {
      std::string adj = "from,to,q_hat,render\n";
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;
          const double q = row.estimate.Q(i, j);
          const char* render = q < 0.01 ? "omitted" : (q < 0.02 ? "dotted" : "solid");
          adj += std::to_string(i + 1) + ',' + std::to_string(j + 1) + ',' + format_double(q) +
                 ',' + render + '\n';
        }
      io_detail::write_file(*out / ("adjacency_m" + std::to_string(row.m) + ".csv"), adj);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Experiment 3: ten stations, random routing, sequential scheme at p = 1
// ---------------------------------------------------------------------------

struct Experiment3Result {
  NetworkParams truth;
  EstimationResult est;
  Vector mu_hat;
  double q_sq_err = 0.0;  // total squared error over the off-diagonal entries
  Vector lambda_eff_true, lambda_eff_hat;
};

inline NetworkParams experiment3_params(std::uint64_t seed) {
  const int n = 10;
  Rng rng(Rng::substream_seed(seed, 0x3333));
  Matrix Q = random_substochastic(n, rng);
  Vector mu(n), lambda(n);
  mu << 2, 3, 3, 6, 3, 4, 6, 3, 2, 5;
  lambda << 3, 2, 4, 5, 2, 6, 4, 3, 2, 6;
  std::vector<ServiceModel> services;
  for (int i = 0; i < n; ++i) services.push_back(ServiceModel::exponential(mu(i)));
  return make_params(Q, lambda, services);
}

inline Experiment3Result run_experiment3(std::int64_t m, double beta, std::uint64_t seed,
                                         const std::optional<std::filesystem::path>& out = {}) {
  Experiment3Result res;
  res.truth = experiment3_params(seed);
  const int n = res.truth.n;

  const ObservationLog log = simulate(res.truth, beta, m, Rng::substream_seed(seed, 1));
  const MomentSet moments = empirical_moments(log, false);
  std::vector<ServiceModel> family(n, ServiceModel::exponential(1.0));
  SolverOptions opts;
  opts.seed = Rng::substream_seed(seed ^ 0x3333ull, 1);
  res.est = estimate_sequential(moments, beta, family, opts);

  res.mu_hat = Vector(n);
  for (int i = 0; i < n; ++i) res.mu_hat(i) = res.est.theta_hat.services[i].parameter();
  const Matrix dq = res.est.theta_hat.Q - res.truth.Q;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) res.q_sq_err += dq(i, j) * dq(i, j);
  res.lambda_eff_true = effective_rates(res.truth);
  res.lambda_eff_hat = effective_rates(res.est.theta_hat);

  if (out) {
    std::filesystem::create_directories(*out);
    write_matrix_csv(dq.cwiseAbs(), *out / "q_abs_error.csv");
    std::string entries = "from,to,q_true,q_hat,abs_error\n";
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        entries += std::to_string(i + 1) + ',' + std::to_string(j + 1) + ',' +
                   format_double(res.truth.Q(i, j)) + ',' +
                   format_double(res.est.theta_hat.Q(i, j)) + ',' +
                   format_double(std::abs(dq(i, j))) + '\n';
      }
    io_detail::write_file(*out / "q_error_entries.csv", entries);

    std::string mu = "station,mu_true,mu_hat\n";
    for (int i = 0; i < n; ++i)
      mu += std::to_string(i + 1) + ',' + format_double(res.truth.services[i].parameter()) +
            ',' + format_double(res.mu_hat(i)) + '\n';
    io_detail::write_file(*out / "mu_hat.csv", mu);

    std::string leff = "station,lambda_eff_true,lambda_eff_hat\n";
    for (int i = 0; i < n; ++i)
      leff += std::to_string(i + 1) + ',' + format_double(res.lambda_eff_true(i)) + ',' +
              format_double(res.lambda_eff_hat(i)) + '\n';
    io_detail::write_file(*out / "lambda_eff.csv", leff);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Experiment 4: two stations, exponential vs Erlang-2 data, exponential
// assumption vs model-free estimation
// ---------------------------------------------------------------------------

struct Experiment4Result {
  struct Entry {
    std::string data_law;   // "exponential" | "erlang2"
    std::string estimator;  // "exponential" | "modelfree"
    Vector lambda_hat;
    Vector mean_hat;  // estimated E[G]
    double q12 = 0.0, q21 = 0.0;
  };
  std::vector<Entry> entries;
};

inline NetworkParams experiment4_params(bool erlang_data) {
  const int n = 2;
  Matrix Q = Matrix::Zero(n, n);
  Q(0, 1) = Q(1, 0) = 0.5;
  Vector lambda(n);
  lambda << 3, 4;
  std::vector<ServiceModel> services;
  if (erlang_data) {
    services = {ServiceModel::erlang(2, 3.0), ServiceModel::erlang(2, 5.0)};
  } else {
    services = {ServiceModel::exponential(3.0), ServiceModel::exponential(5.0)};
  }
  return make_params(Q, lambda, services);
}

inline Experiment4Result run_experiment4(std::int64_t m, double beta, std::uint64_t seed,
                                         const std::optional<std::filesystem::path>& out = {}) {
  Experiment4Result res;
  const std::vector<ServiceModel> exp_family(2, ServiceModel::exponential(1.0));

  int case_index = 0;
  for (bool erlang_data : {false, true}) {
    const NetworkParams truth = experiment4_params(erlang_data);
    const ObservationLog log = simulate(truth, beta, m, Rng::substream_seed(seed, case_index));

    for (const std::string estimator : {"exponential", "modelfree"}) {
      SolverOptions opts;
      opts.seed = Rng::substream_seed(seed ^ 0x4444ull, case_index * 2 + (estimator == "modelfree"));
      const ThetaSpace space = estimator == "exponential"
                                   ? ThetaSpace::parametric(beta, exp_family)
                                   : ThetaSpace::model_free(beta, 2);
      const EstimationResult est = estimate(log, space, opts);

      Experiment4Result::Entry entry;
      entry.data_law = erlang_data ? "erlang2" : "exponential";
      entry.estimator = estimator;
      entry.lambda_hat = est.theta_hat.lambda;
      entry.mean_hat = Vector(2);
      entry.mean_hat << est.theta_hat.services[0].mean(), est.theta_hat.services[1].mean();
      entry.q12 = est.theta_hat.Q(0, 1);
      entry.q21 = est.theta_hat.Q(1, 0);
      res.entries.push_back(std::move(entry));
    }
    ++case_index;
  }

  if (out) {
    std::filesystem::create_directories(*out);
    std::string table = "data_law,estimator,lambda_1,lambda_2,eg_1,eg_2,q_12,q_21\n";
    for (const auto& e : res.entries)
      table += e.data_law + ',' + e.estimator + ',' + format_double(e.lambda_hat(0)) + ',' +
               format_double(e.lambda_hat(1)) + ',' + format_double(e.mean_hat(0)) + ',' +
               format_double(e.mean_hat(1)) + ',' + format_double(e.q12) + ',' +
               format_double(e.q21) + '\n';
    io_detail::write_file(*out / "comparison_table.csv", table);
  }
  return res;
}

}  // namespace qnet
