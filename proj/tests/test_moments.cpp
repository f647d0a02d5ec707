#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "qnet/moments.hpp"

using namespace qnet;
using Catch::Approx;

namespace {

NetworkParams single_queue(double lambda, ServiceModel service, double q_self = 0.0) {
  Matrix Q(1, 1);
  Q << q_self;
  Vector l(1);
  l << lambda;
  return make_params(Q, l, {service});
}

NetworkParams tandem2() {
  Matrix Q(2, 2);
  Q << 0, 1, 0, 0;
  Vector l(2);
  l << 3, 0;
  std::vector<ServiceModel> services(2, ServiceModel::exponential(2.0));
  return make_params(Q, l, services);
}

}  // namespace

TEST_CASE("effective rates solve the traffic equations") {
  SECTION("no routing means effective equals external") {
    Rng rng(2);
    auto params = qtest::random_exponential_params(rng, 4);
    params.Q.setZero();
    REQUIRE(qtest::max_abs(effective_rates(params) - params.lambda) <= 1e-14);
  }
  SECTION("line network by forward substitution") {
    const auto params = benchmark5_params(Topology::Line);
    Vector expected(5);
    expected << 3.0, 3.5, 5.75, 5.875, 6.9375;
    REQUIRE(qtest::max_abs(effective_rates(params) - expected) <= 1e-12);
  }
  SECTION("single queue with a self loop") {
    const auto params = single_queue(3.0, ServiceModel::exponential(2.0), 0.5);
    REQUIRE(effective_rates(params)(0) == Approx(6.0).epsilon(1e-13));
  }
  SECTION("no drain makes the system singular") {
    const auto params = single_queue(3.0, ServiceModel::exponential(2.0), 1.0);
    REQUIRE_THROWS_AS(effective_rates(params), std::runtime_error);
  }
}

TEST_CASE("loads multiply effective rates by mean service times") {
  SECTION("single queue") {
    REQUIRE(loads(single_queue(3.0, ServiceModel::exponential(2.0)))(0) == Approx(1.5));
  }
  SECTION("line network") {
    const auto params = benchmark5_params(Topology::Line);
    Vector expected(5);
    expected << 1.5, 3.5 / 3.0, 5.75 / 3.0, 5.875 / 4.0, 6.9375 / 3.0;
    REQUIRE(qtest::max_abs(loads(params) - expected) <= 1e-12);
  }
  SECTION("empty network") {
    auto params = benchmark5_params(Topology::Line);
    params.lambda.setZero();
    REQUIRE(loads(params).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("passage matrices on small networks") {
  SECTION("single node") {
    const auto pm = passage(single_queue(3.0, ServiceModel::exponential(2.0)), 5.0);
    REQUIRE(pm.P(0, 0) == Approx(5.0 / 7.0).epsilon(1e-13));
    REQUIRE(pm.P0(0) == Approx(2.0 / 7.0).epsilon(1e-13));
  }
  SECTION("two-station tandem") {
    const auto pm = passage(tandem2(), 5.0);
    Matrix expected(2, 2);
    expected << 5.0 / 7.0, 10.0 / 49.0, 0.0, 5.0 / 7.0;
    REQUIRE(qtest::max_abs(pm.P - expected) <= 1e-13);
  }
  SECTION("exponential networks have P_res equal to P") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
      const auto params = qtest::random_exponential_params(rng, 4);
      const auto pm = passage(params, rng.uniform(0.5, 5.0));
      REQUIRE(qtest::max_abs(pm.P_res - pm.P) <= 1e-12);
    }
  }
}

TEST_CASE("passage invariants on random networks") {
  Rng rng(77);
  for (int trial = 0; trial < 15; ++trial) {
    const auto params = qtest::random_mixed_params(rng, 4);
    for (double beta : {1e-3, 1e-1, 1.0, 10.0, 1e3}) {
      const auto pm = passage(params, beta);

      // row conservation, exactly
      REQUIRE((pm.P.rowwise().sum() + pm.P0 - Vector::Ones(4)).cwiseAbs().maxCoeff() <= 1e-12);
      REQUIRE((pm.P_res.rowwise().sum() + pm.P0_res - Vector::Ones(4)).cwiseAbs().maxCoeff() <=
              1e-12);

      // entries stay probabilities
      REQUIRE(pm.P.minCoeff() >= -1e-12);
      REQUIRE(pm.P.maxCoeff() <= 1.0 + 1e-12);
      REQUIRE(pm.P_res.minCoeff() >= -1e-12);
      REQUIRE(pm.P_res.maxCoeff() <= 1.0 + 1e-12);

      // defining linear system of Lemma 1
      const auto t = [&] {
        Vector lst(4);
        for (int i = 0; i < 4; ++i) lst(i) = params.services[i].bundle(beta).lst;
        return lst;
      }();
      const Matrix fixed_point =
          Matrix(t.asDiagonal()) * params.Q * pm.P + Matrix::Identity(4, 4) -
          Matrix(t.asDiagonal());
      REQUIRE(qtest::max_abs(pm.P - fixed_point) <= 1e-12);
    }
  }
}

TEST_CASE("passage derivatives match finite differences") {
  Rng rng(78);
  for (int trial = 0; trial < 10; ++trial) {
    const auto params = qtest::random_mixed_params(rng, 4);
    const double beta = rng.uniform(0.5, 5.0);
    const double h = 1e-4 * beta;
    const auto lo = passage(params, beta - h);
    const auto hi = passage(params, beta + h);
    const auto pm = passage(params, beta);
    const Matrix fd = (hi.P - lo.P) / (2.0 * h);
    const Matrix fd_res = (hi.P_res - lo.P_res) / (2.0 * h);
    const double scale = std::max(1e-8, qtest::max_abs(fd));
    REQUIRE(qtest::max_abs(pm.dP - fd) / scale <= 1e-4);
    const double scale_res = std::max(1e-8, qtest::max_abs(fd_res));
    REQUIRE(qtest::max_abs(pm.dP_res - fd_res) / scale_res <= 1e-4);
  }
}

TEST_CASE("lag-one cross moment values") {
  const auto params = single_queue(3.0, ServiceModel::exponential(2.0));
  SECTION("single queue closed form") {
    REQUIRE(cross_moment_lag1(params, 5.0)(0, 0) == Approx(23.25 / 7.0).epsilon(1e-12));
  }
  SECTION("large beta forces the stationary second moment") {
    const auto params5 = benchmark5_params(Topology::Line);
    const Vector rho = loads(params5);
    const Matrix target = rho * rho.transpose() + Matrix(rho.asDiagonal());
    REQUIRE(qtest::max_abs(cross_moment_lag1(params5, 1e6) - target) <= 1e-3);
  }
  SECTION("small beta forces independence") {
    const auto params5 = benchmark5_params(Topology::Line);
    const Vector rho = loads(params5);
    const Matrix target = rho * rho.transpose();
    REQUIRE(qtest::max_abs(cross_moment_lag1(params5, 1e-6) - target) <= 1e-3);
  }
  SECTION("beta below the guard is rejected") {
    REQUIRE_THROWS_AS(cross_moment_lag1(params, 1e-10), std::invalid_argument);
  }
}

TEST_CASE("single-queue reduction against the scalar formula") {
  // Independent oracle: (rho^2 + rho) P(G_res >= T) + rho lambda / beta * P(G >= T),
  // with the tail probabilities expressed through the transforms.
  const std::vector<ServiceModel> kinds = {ServiceModel::exponential(2.0),
                                           ServiceModel::erlang(2, 5.0),
                                           ServiceModel::deterministic(0.5)};
  for (const auto& service : kinds) {
    for (double beta : {0.5, 1.0, 5.0}) {
      const double lambda = 3.0;
      const auto params = single_queue(lambda, service);
      const auto b = service.bundle(beta);
      const double rho = lambda * b.mean;
      const double scalar =
          (rho * rho + rho) * (1.0 - b.lst_res) + rho * lambda / beta * (1.0 - b.lst);
      REQUIRE(cross_moment_lag1(params, beta)(0, 0) == Approx(scalar).epsilon(1e-12));
    }
  }
}

TEST_CASE("orientation convention: tandem mass flows forward") {
  const Matrix a1 = cross_moment_lag1(tandem2(), 5.0);
  REQUIRE(a1(0, 1) > a1(1, 0));
}

TEST_CASE("lag-two cross moment values") {
  SECTION("single queue closed form") {
    const auto params = single_queue(3.0, ServiceModel::exponential(2.0));
    REQUIRE(cross_moment_lag2(params, 5.0)(0, 0) == Approx(147.75 / 49.0).epsilon(1e-12));
  }
  SECTION("small beta forces independence") {
    const auto params5 = benchmark5_params(Topology::Line);
    const Vector rho = loads(params5);
    REQUIRE(qtest::max_abs(cross_moment_lag2(params5, 1e-6) - rho * rho.transpose()) <= 1e-3);
  }
}

TEST_CASE("lag-two equals lag-one minus beta times its derivative") {
  Rng rng(52);
  for (int trial = 0; trial < 10; ++trial) {
    const auto params = qtest::random_mixed_params(rng, 4);
    const double beta = rng.uniform(0.5, 5.0);
    const double h = 1e-4 * beta;
    const Matrix fd = (cross_moment_lag1(params, beta + h) - cross_moment_lag1(params, beta - h)) /
                      (2.0 * h);
    const Matrix expected = cross_moment_lag1(params, beta) - beta * fd;
    const Matrix got = cross_moment_lag2(params, beta);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double denom = std::max(std::abs(expected(i, j)) + std::abs(got(i, j)), 1e-12);
        REQUIRE(std::abs(expected(i, j) - got(i, j)) / denom <= 1e-4);
      }
  }
}

TEST_CASE("observed moments apply the thinning") {
  SECTION("full observation is the identity") {
    const auto params = benchmark5_params(Topology::Circle);
    const auto ms = observed_moments(params, 5.0);
    REQUIRE(qtest::max_abs(ms.alpha1 - cross_moment_lag1(params, 5.0)) <= 1e-14);
    REQUIRE((ms.alpha0 - loads(params)).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SECTION("single queue with half observation") {
    auto params = single_queue(3.0, ServiceModel::exponential(2.0));
    params.p(0) = 0.5;
    const auto ms = observed_moments(params, 5.0);
    REQUIRE(ms.alpha0(0) == Approx(0.75).epsilon(1e-13));
    REQUIRE(ms.alpha1(0, 0) == Approx(0.25 * 23.25 / 7.0).epsilon(1e-12));
  }
}
