// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance is pinned here, in code.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "qnet/estimate.hpp"
#include "qnet/experiments.hpp"

using namespace qnet;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    pass = false;
    if (detail.empty()) detail = why;
  }
  void check(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// 1. Analytic lag-one cross moments sit within 4 batch-means standard errors
//    of the simulated products on the line benchmark, m = 5e5.
Outcome criterion1() {
  Outcome out;
  const auto truth = benchmark5_params(Topology::Line);
  const auto log = simulate(truth, 5.0, 500000, 20240401);
  const auto [mean, se] = qtest::lag1_product_batches(log.counts);
  const Matrix analytic = cross_moment_lag1(truth, 5.0);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 5; ++i) {
      const double gap = std::abs(mean(j, i) - analytic(j, i));
      out.check(gap <= 4.0 * se(j, i), "entry (" + std::to_string(j + 1) + "," +
                                           std::to_string(i + 1) + ") off by " + fmt(gap) +
                                           " vs 4se=" + fmt(4.0 * se(j, i)));
    }
  return out;
}

// 2. Closed-form identification round-trips 200 randomized parameter points
//    with exponential services to 1e-8.
Outcome criterion2() {
  Outcome out;
  Rng rng(77001);
  int done = 0;
  for (int n : {1, 2, 3, 5}) {
    for (int trial = 0; trial < 50; ++trial, ++done) {
      const auto truth = qtest::random_exponential_params(rng, n);
      const double beta = rng.uniform(0.5, 5.0);
      const auto ms = observed_moments(truth, beta, false);
      const auto [Q, lambda] = identify_closed_form(ms, truth.services, beta);
      const double err = std::max(qtest::max_abs(Q - truth.Q),
                                  (lambda - truth.lambda).cwiseAbs().maxCoeff());
      out.check(err <= 1e-8,
                "n=" + std::to_string(n) + " trial " + std::to_string(trial) + " err=" + fmt(err));
    }
  }
  out.check(done == 200, "expected 200 round trips");
  return out;
}

// 3. The Erlang-2 relation: lag2 = lag1 - beta d(lag1)/dbeta, checked against
//    central finite differences at relative 1e-4 on 50 randomized points.
Outcome criterion3() {
  Outcome out;
  Rng rng(77002);
  for (int trial = 0; trial < 50; ++trial) {
    const auto params = qtest::random_mixed_params(rng, 4);
    const double beta = rng.uniform(0.5, 5.0);
    const double h = 1e-4 * beta;
    const Matrix fd =
        (cross_moment_lag1(params, beta + h) - cross_moment_lag1(params, beta - h)) / (2.0 * h);
    const Matrix expected = cross_moment_lag1(params, beta) - beta * fd;
    const Matrix got = cross_moment_lag2(params, beta);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double denom = std::max(std::abs(expected(i, j)) + std::abs(got(i, j)), 1e-12);
        const double rel = std::abs(expected(i, j) - got(i, j)) / denom;
        out.check(rel <= 1e-4, "trial " + std::to_string(trial) + " rel=" + fmt(rel));
      }
  }
  return out;
}

// 4. Experiment 1(a) at reduced scale: R=30 runs of m=250000 keep the mean
//    estimates within 0.1 (lambda) and 0.02 (Q entries) of the truth.
Outcome criterion4() {
  Outcome out;
  const auto res = run_experiment1(Topology::Line, 30, 250000, 5.0, 20240404, 1);
  for (int i = 0; i < 5; ++i) {
    const double gap = std::abs(res.lambda_mean(i) - res.truth.lambda(i));
    out.check(gap <= 0.1, "lambda_" + std::to_string(i + 1) + " mean off by " + fmt(gap));
  }
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double gap = std::abs(res.q_mean(i, j) - res.truth.Q(i, j));
      out.check(gap <= 0.02, "q_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) +
                                 " mean off by " + fmt(gap));
    }
  return out;
}

// 5. Experiment 4 misspecification gap on Erlang-2 data: the model-free fit
//    recovers both means within 10% while the exponential fit misses E[G_1]
//    by at least 15%.
Outcome criterion5() {
  Outcome out;
  const auto res = run_experiment4(1000000, 3.0, 20240405);
  const double g1 = 2.0 / 3.0, g2 = 0.4;
  for (const auto& e : res.entries) {
    if (e.data_law != "erlang2") continue;
    if (e.estimator == "modelfree") {
      const double r1 = std::abs(e.mean_hat(0) - g1) / g1;
      const double r2 = std::abs(e.mean_hat(1) - g2) / g2;
      out.check(r1 <= 0.10, "model-free E[G1] off by " + fmt(100 * r1) + "%");
      out.check(r2 <= 0.10, "model-free E[G2] off by " + fmt(100 * r2) + "%");
    } else {
      const double r1 = std::abs(e.mean_hat(0) - g1) / g1;
      out.check(r1 >= 0.15, "exponential-assumption E[G1] off by only " + fmt(100 * r1) + "%");
    }
  }
  return out;
}

// 6. Consistency trend: the median L1 estimation error over 10 seeds is
//    non-increasing across m in {1e4, 1e5, 1e6} and strictly drops overall.
Outcome criterion6() {
  Outcome out;
  const auto truth = benchmark5_params(Topology::Line);
  const ThetaSpace space = ThetaSpace::known(5.0, truth.services);
  const std::vector<std::int64_t> ms = {10000, 100000, 1000000};
  std::vector<double> medians;
  for (std::size_t level = 0; level < ms.size(); ++level) {
    std::vector<double> errors;
    for (int s = 0; s < 10; ++s) {
      const auto log =
          simulate(truth, 5.0, ms[level], Rng::substream_seed(20240406 + level, s));
      SolverOptions opts;
      opts.seed = Rng::substream_seed(99 + level, s);
      const auto est = estimate(log, space, opts);
      errors.push_back(param_distance(est.theta_hat, truth, space));
    }
    std::sort(errors.begin(), errors.end());
    medians.push_back(0.5 * (errors[4] + errors[5]));
  }
  out.check(medians[0] >= medians[1] && medians[1] >= medians[2],
            "medians not non-increasing: " + fmt(medians[0]) + ", " + fmt(medians[1]) + ", " +
                fmt(medians[2]));
  out.check(medians[0] > medians[2],
            "no strict decrease from m=1e4 (" + fmt(medians[0]) + ") to m=1e6 (" +
                fmt(medians[2]) + ")");
  return out;
}

// 7. Invariant suites: row conservation, beta limits, the Lemma-1 fixed
//    point, derivative checks, projection idempotence, seed determinism.
Outcome criterion7() {
  Outcome out;
  Rng rng(77007);

  for (int trial = 0; trial < 20; ++trial) {
    const auto params = qtest::random_mixed_params(rng, 4);
    const double beta = rng.uniform(0.5, 5.0);
    const auto pm = passage(params, beta);
    out.check((pm.P.rowwise().sum() + pm.P0 - Vector::Ones(4)).cwiseAbs().maxCoeff() <= 1e-12,
              "row conservation of P");
    out.check(
        (pm.P_res.rowwise().sum() + pm.P0_res - Vector::Ones(4)).cwiseAbs().maxCoeff() <= 1e-12,
        "row conservation of P_res");

    Vector lst(4);
    for (int i = 0; i < 4; ++i) lst(i) = params.services[i].bundle(beta).lst;
    const Matrix fixed_point = Matrix(lst.asDiagonal()) * params.Q * pm.P +
                               Matrix::Identity(4, 4) - Matrix(lst.asDiagonal());
    out.check(qtest::max_abs(pm.P - fixed_point) <= 1e-12, "Lemma-1 fixed point residual");

    const double h = 1e-4 * beta;
    const auto lo = passage(params, beta - h);
    const auto hi = passage(params, beta + h);
    const Matrix fd = (hi.P - lo.P) / (2.0 * h);
    const Matrix fd_res = (hi.P_res - lo.P_res) / (2.0 * h);
    out.check(qtest::max_abs(pm.dP - fd) / std::max(1e-8, qtest::max_abs(fd)) <= 1e-4,
              "dP finite differences");
    out.check(
        qtest::max_abs(pm.dP_res - fd_res) / std::max(1e-8, qtest::max_abs(fd_res)) <= 1e-4,
        "dP_res finite differences");
  }

  {
    const auto line = benchmark5_params(Topology::Line);
    const Vector rho = loads(line);
    const Matrix second = rho * rho.transpose() + Matrix(rho.asDiagonal());
    out.check(qtest::max_abs(cross_moment_lag1(line, 1e6) - second) <= 1e-3,
              "large-beta limit of lag1");
    out.check(qtest::max_abs(cross_moment_lag1(line, 1e-6) - rho * rho.transpose()) <= 1e-3,
              "small-beta limit of lag1");
    out.check(qtest::max_abs(cross_moment_lag2(line, 1e-6) - rho * rho.transpose()) <= 1e-3,
              "small-beta limit of lag2");
  }

  {
    const ThetaSpace space = ThetaSpace::parametric(
        2.0, std::vector<ServiceModel>(4, ServiceModel::exponential(1.0)));
    for (int trial = 0; trial < 50; ++trial) {
      Vector raw(theta_dim(space));
      for (int i = 0; i < raw.size(); ++i) raw(i) = rng.uniform(-3.0, 3.0);
      const auto once = project_theta(raw, space);
      const auto twice = project_theta(pack_theta(once, space), space);
      out.check((pack_theta(once, space) - pack_theta(twice, space)).cwiseAbs().maxCoeff() == 0.0,
                "projection idempotence");
    }
  }

  {
    const auto truth = benchmark5_params(Topology::Circle);
    const auto a = simulate(truth, 5.0, 20000, 31337);
    const auto b = simulate(truth, 5.0, 20000, 31337);
    out.check(qtest::counts_equal(a.counts, b.counts), "determinism under fixed seed");
  }
  return out;
}

// 8. Orientation recovery: both homogeneous circle orientations share alpha0,
//    differ in alpha1, and identification returns the generating matrix.
Outcome criterion8() {
  Outcome out;
  const auto cw = homogeneous_circle(5, 3.0, 3.0, 0.5, true);
  const auto ccw = homogeneous_circle(5, 3.0, 3.0, 0.5, false);
  const auto ms_cw = observed_moments(cw, 5.0, false);
  const auto ms_ccw = observed_moments(ccw, 5.0, false);
  out.check((ms_cw.alpha0 - ms_ccw.alpha0).cwiseAbs().maxCoeff() <= 1e-12,
            "stationary moments should coincide");
  out.check(qtest::max_abs(ms_cw.alpha1 - ms_ccw.alpha1) > 1e-6,
            "lag-one moments should differ");
  const auto [Q_cw, l_cw] = identify_closed_form(ms_cw, cw.services, 5.0);
  const auto [Q_ccw, l_ccw] = identify_closed_form(ms_ccw, ccw.services, 5.0);
  out.check(qtest::max_abs(Q_cw - cw.Q) <= 1e-8, "clockwise orientation not recovered");
  out.check(qtest::max_abs(Q_ccw - ccw.Q) <= 1e-8, "counterclockwise orientation not recovered");
  return out;
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    Outcome (*run)();
  };
  const std::vector<Entry> criteria = {
      {"criterion-1 engine-simulator cross-oracle", criterion1},
      {"criterion-2 closed-form round trip (200 points)", criterion2},
      {"criterion-3 Erlang-2 relation vs finite differences", criterion3},
      {"criterion-4 experiment 1(a) reproduction (R=30, m=250k)", criterion4},
      {"criterion-5 experiment 4 misspecification gap", criterion5},
      {"criterion-6 consistency trend in m", criterion6},
      {"criterion-7 invariant suites", criterion7},
      {"criterion-8 circle orientation recovery", criterion8},
  };

  bool all_pass = true;
  for (const auto& c : criteria) {
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    all_pass = all_pass && out.pass;
    std::printf("%s %s%s%s\n", out.pass ? "PASS" : "FAIL", c.name,
                out.detail.empty() ? "" : " -- ", out.detail.c_str());
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
