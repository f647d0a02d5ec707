#pragma once

#include <atomic>
#include <bit>
#include <cstdint>
#include <optional>
#include <queue>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "qnet/moments.hpp"
#include "qnet/rng.hpp"

namespace qnet {

using CountMatrix =
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Sampled population data: m rows of observed counts at Poisson epochs of
// rate beta. true_counts holds the uncensored populations when retained.
struct ObservationLog {
  double beta = 0.0;
  CountMatrix counts;
  std::optional<CountMatrix> true_counts;
  std::uint64_t seed = 0;
  std::uint64_t params_fingerprint = 0;

  Eigen::Index m() const { return counts.rows(); }
  int n() const { return static_cast<int>(counts.cols()); }
};

struct SimulateOptions {
  bool keep_true_counts = false;
  // When set, start from an empty network and discard [0, burnin] instead of
  // drawing the exact stationary state.
  std::optional<double> burnin;
};

// Initial condition drawn from the stationary law: Poisson(rho_i) customers
// per station, each holding a residual (excess-life) service time.
struct PopulationState {
  std::vector<int> counts;
  std::vector<std::pair<int, double>> residuals;  // (station, remaining service)
};

// FNV-1a over the numeric content of a parameter point; identifies the
// generating parameters in log sidecars.
inline std::uint64_t params_fingerprint(const NetworkParams& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto eat = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffull;
      h *= 1099511628211ull;
    }
  };
  auto eat_d = [&](double v) { eat(std::bit_cast<std::uint64_t>(v)); };
  eat(static_cast<std::uint64_t>(params.n));
  for (int i = 0; i < params.n; ++i)
    for (int j = 0; j < params.n; ++j) eat_d(params.Q(i, j));
  for (int i = 0; i < params.n; ++i) eat_d(params.lambda(i));
  for (const auto& s : params.services) {
    eat(static_cast<std::uint64_t>(s.kind()));
    if (const auto* e = s.as_exponential()) {
      eat_d(e->rate);
    } else if (const auto* e = s.as_erlang()) {
      eat(static_cast<std::uint64_t>(e->shape));
      eat_d(e->rate);
    } else if (const auto* d = s.as_deterministic()) {
      eat_d(d->duration);
    } else if (const auto* m = s.as_model_free()) {
      eat_d(m->mean);
      eat_d(m->lst_at_beta);
      eat_d(m->dlst_at_beta);
      eat_d(m->anchored_beta);
    }
  }
  for (int i = 0; i < params.n; ++i) eat_d(params.p(i));
  return h;
}

namespace detail {

inline void check_sampleable(const NetworkParams& params) {
  for (const auto& s : params.services)
    if (!s.sampleable())
      throw std::invalid_argument("network with model-free services cannot be simulated");
  const auto report = validate(params, EstimationMode::KnownServices);
  if (!report.passed("shape") || !report.passed("q_entries_in_unit_interval") ||
      !report.passed("sub_stochastic_rows") || !report.passed("drain") ||
      !report.passed("lambda_bounds") || !report.passed("p_bounds"))
    throw std::invalid_argument("invalid network parameters for simulation");
}

// Next station after a service completion at `station`; -1 means exit.
inline int route_after(const Matrix& Q, int station, Rng& rng) {
  const double u = rng.u01();
  double acc = 0.0;
  for (int j = 0; j < Q.cols(); ++j) {
    acc += Q(station, j);
    if (u < acc) return j;
  }
  return -1;
}

}  // namespace detail

inline PopulationState stationary_init(const NetworkParams& params, Rng& rng) {
  detail::check_sampleable(params);
  const Vector rho = loads(params);
  PopulationState state;
  state.counts.assign(params.n, 0);
  for (int i = 0; i < params.n; ++i) {
    const int k = rng.poisson(rho(i));
    state.counts[i] = k;
    for (int c = 0; c < k; ++c)
      state.residuals.emplace_back(i, params.services[i].sample_residual(rng));
  }
  return state;
}

// Event-driven run: Poisson external arrivals, routing on each service
// completion, and an independent rate-beta Poisson sampling stream merged
// into the same event queue. Fully deterministic given the seed.
inline ObservationLog simulate(const NetworkParams& params, double beta, std::int64_t m,
                               std::uint64_t seed, const SimulateOptions& options = {}) {
  if (m < 2) throw std::invalid_argument("simulate: need at least two epochs");
  if (!(beta > 0.0)) throw std::invalid_argument("simulate: beta must be positive");
  detail::check_sampleable(params);
  const int n = params.n;

  struct Event {
    double time;
    std::uint64_t seq;  // insertion order; breaks ties deterministically
    enum Kind : std::uint8_t { Completion, Arrival, Sample } kind;
    int station;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.seq > b.seq;
    }
  };

  Rng rng(seed);
  std::priority_queue<Event, std::vector<Event>, Later> queue;
  std::uint64_t seq = 0;
  auto push = [&](double time, Event::Kind kind, int station) {
    queue.push(Event{time, seq++, kind, station});
  };

  std::vector<int> counts(n, 0);

  // Initial population: exact stationary draw unless a burn-in was requested,
  // in which case the network starts empty and sampling begins after [0, T].
  if (!options.burnin) {
    PopulationState init = stationary_init(params, rng);
    counts = init.counts;
    for (const auto& [station, remaining] : init.residuals)
      push(remaining, Event::Completion, station);
  }

  // External arrival streams.
  for (int i = 0; i < n; ++i)
    if (params.lambda(i) > 0.0) push(rng.exponential(params.lambda(i)), Event::Arrival, i);

  // Sampling stream.
  const double t0 = options.burnin ? *options.burnin : 0.0;
  push(t0 + rng.exponential(beta), Event::Sample, -1);

  ObservationLog log;
  log.beta = beta;
  log.seed = seed;
  log.params_fingerprint = params_fingerprint(params);
  log.counts.resize(m, n);
  if (options.keep_true_counts) {
    log.true_counts.emplace();
    log.true_counts->resize(m, n);
  }

  std::int64_t recorded = 0;
  while (recorded < m) {
    const Event ev = queue.top();
    queue.pop();
    switch (ev.kind) {
      case Event::Completion: {
        const int next = detail::route_after(params.Q, ev.station, rng);
        --counts[ev.station];
        if (next >= 0) {
          ++counts[next];
          push(ev.time + params.services[next].sample(rng), Event::Completion, next);
        }
        break;
      }
      case Event::Arrival: {
        ++counts[ev.station];
        push(ev.time + params.services[ev.station].sample(rng), Event::Completion, ev.station);
        push(ev.time + rng.exponential(params.lambda(ev.station)), Event::Arrival, ev.station);
        break;
      }
      case Event::Sample: {
        for (int i = 0; i < n; ++i) {
          if (log.true_counts) (*log.true_counts)(recorded, i) = counts[i];
          log.counts(recorded, i) =
              params.p(i) >= 1.0 ? counts[i] : rng.binomial(counts[i], params.p(i));
        }
        ++recorded;
        push(ev.time + rng.exponential(beta), Event::Sample, -1);
        break;
      }
    }
  }
  return log;
}

// R independent runs from deterministically derived per-run substreams.
// Output order matches the run index regardless of scheduling.
inline std::vector<ObservationLog> replicate(const NetworkParams& params, double beta,
                                             std::int64_t m, int runs, std::uint64_t seed,
                                             const SimulateOptions& options = {},
                                             int jobs = 1) {
  if (runs < 1) throw std::invalid_argument("replicate: need at least one run");
  std::vector<ObservationLog> logs(runs);
  auto run_one = [&](int r) {
    logs[r] = simulate(params, beta, m, Rng::substream_seed(seed, r), options);
  };
  if (jobs <= 1 || runs == 1) {
    for (int r = 0; r < runs; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1)) run_one(r);
    };
    std::vector<std::thread> pool;
    const int workers = std::min(jobs, runs);
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return logs;
}

}  // namespace qnet
