#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>

#include "qnet/rng.hpp"

namespace qnet {

// Service-time transform values evaluated at a single rate beta.
// The residual (excess-life) fields are derived from the fresh ones via
//   lst_res  = (1 - lst) / (beta * mean)
//   dlst_res = -(1 - lst + beta * dlst) / (beta^2 * mean)
struct TransformBundle {
  double beta = 0.0;
  double mean = 0.0;      // E[G]
  double lst = 0.0;       // E[exp(-beta G)], in (0, 1)
  double dlst = 0.0;      // d/dbeta E[exp(-beta G)], negative
  double lst_res = 0.0;   // residual LST, in (0, 1)
  double dlst_res = 0.0;  // residual LST derivative, negative
};

enum class ServiceKind { Exponential, Erlang, Deterministic, ModelFree };

struct ExponentialService {
  double rate;
  friend bool operator==(const ExponentialService&, const ExponentialService&) = default;
};

struct ErlangService {
  int shape;
  double rate;
  friend bool operator==(const ErlangService&, const ErlangService&) = default;
};

struct DeterministicService {
  double duration;
  friend bool operator==(const DeterministicService&, const DeterministicService&) = default;
};

// Transform triple anchored at one sampling rate. It carries enough
// information for the moment formulas but does not define a distribution,
// so it cannot be sampled.
struct ModelFreeService {
  double mean;
  double lst_at_beta;
  double dlst_at_beta;
  double anchored_beta;
  friend bool operator==(const ModelFreeService&, const ModelFreeService&) = default;
};

class ServiceModel {
 public:
  static ServiceModel exponential(double rate) {
    require(rate > 0.0, "exponential rate must be positive");
    return ServiceModel(ExponentialService{rate});
  }

  static ServiceModel erlang(int shape, double rate) {
    require(shape >= 1, "erlang shape must be at least 1");
    require(rate > 0.0, "erlang rate must be positive");
    return ServiceModel(ErlangService{shape, rate});
  }

  static ServiceModel deterministic(double duration) {
    require(duration > 0.0, "deterministic duration must be positive");
    return ServiceModel(DeterministicService{duration});
  }

  static ServiceModel model_free(double mean, double lst_at_beta,
                                 double dlst_at_beta, double anchored_beta) {
    require(mean > 0.0, "model-free mean must be positive");
    require(lst_at_beta > 0.0 && lst_at_beta < 1.0, "model-free lst must lie in (0,1)");
    require(dlst_at_beta < 0.0, "model-free dlst must be negative");
    require(anchored_beta > 0.0, "model-free anchor beta must be positive");
    return ServiceModel(ModelFreeService{mean, lst_at_beta, dlst_at_beta, anchored_beta});
  }

  ServiceKind kind() const {
    return static_cast<ServiceKind>(law_.index());
  }

  bool sampleable() const { return kind() != ServiceKind::ModelFree; }

  double mean() const {
    switch (kind()) {
      case ServiceKind::Exponential: return 1.0 / std::get<ExponentialService>(law_).rate;
      case ServiceKind::Erlang: {
        const auto& e = std::get<ErlangService>(law_);
        return static_cast<double>(e.shape) / e.rate;
      }
      case ServiceKind::Deterministic: return std::get<DeterministicService>(law_).duration;
      case ServiceKind::ModelFree: return std::get<ModelFreeService>(law_).mean;
    }
    throw std::logic_error("unreachable");
  }

  TransformBundle bundle(double beta) const {
    if (beta <= 0.0) throw std::invalid_argument("bundle: beta must be positive");
    TransformBundle b;
    b.beta = beta;
    switch (kind()) {
      case ServiceKind::Exponential: {
        const double mu = std::get<ExponentialService>(law_).rate;
        b.mean = 1.0 / mu;
        b.lst = mu / (mu + beta);
        b.dlst = -mu / ((mu + beta) * (mu + beta));
        break;
      }
      case ServiceKind::Erlang: {
        const auto& e = std::get<ErlangService>(law_);
        const double base = e.rate / (e.rate + beta);
        b.mean = static_cast<double>(e.shape) / e.rate;
        b.lst = std::pow(base, e.shape);
        b.dlst = -static_cast<double>(e.shape) * std::pow(base, e.shape) / (e.rate + beta);
        break;
      }
      case ServiceKind::Deterministic: {
        const double d = std::get<DeterministicService>(law_).duration;
        b.mean = d;
        b.lst = std::exp(-beta * d);
        b.dlst = -d * b.lst;
        break;
      }
      case ServiceKind::ModelFree: {
        const auto& m = std::get<ModelFreeService>(law_);
        if (beta != m.anchored_beta) {
          throw std::invalid_argument(
              "bundle: model-free service queried away from its anchored beta");
        }
        b.mean = m.mean;
        b.lst = m.lst_at_beta;
        b.dlst = m.dlst_at_beta;
        break;
      }
    }
    b.lst_res = (1.0 - b.lst) / (beta * b.mean);
    b.dlst_res = -(1.0 - b.lst + beta * b.dlst) / (beta * beta * b.mean);
    return b;
  }

  double sample(Rng& rng) const {
    switch (kind()) {
      case ServiceKind::Exponential: return rng.exponential(std::get<ExponentialService>(law_).rate);
      case ServiceKind::Erlang: {
        const auto& e = std::get<ErlangService>(law_);
        return rng.erlang(e.shape, e.rate);
      }
      case ServiceKind::Deterministic: return std::get<DeterministicService>(law_).duration;
      case ServiceKind::ModelFree:
        throw std::invalid_argument("sample: model-free service is not sampleable");
    }
    throw std::logic_error("unreachable");
  }

  // Draw from the excess-life density (1 - G(s)) / E[G]. Exponential is
  // memoryless; the Erlang equilibrium law is the uniform mixture of
  // Erlang(j, rate) for j = 1..shape; deterministic gives uniform [0, d].
  double sample_residual(Rng& rng) const {
    switch (kind()) {
      case ServiceKind::Exponential: return rng.exponential(std::get<ExponentialService>(law_).rate);
      case ServiceKind::Erlang: {
        const auto& e = std::get<ErlangService>(law_);
        const int j = 1 + static_cast<int>(rng.u01() * e.shape);
        return rng.erlang(j > e.shape ? e.shape : j, e.rate);
      }
      case ServiceKind::Deterministic:
        return rng.u01() * std::get<DeterministicService>(law_).duration;
      case ServiceKind::ModelFree:
        throw std::invalid_argument("sample_residual: model-free service is not sampleable");
    }
    throw std::logic_error("unreachable");
  }

  // One-parameter-family access used by the parametric estimation modes:
  // exponential/Erlang expose their rate, deterministic its duration.
  double parameter() const {
    switch (kind()) {
      case ServiceKind::Exponential: return std::get<ExponentialService>(law_).rate;
      case ServiceKind::Erlang: return std::get<ErlangService>(law_).rate;
      case ServiceKind::Deterministic: return std::get<DeterministicService>(law_).duration;
      case ServiceKind::ModelFree:
        throw std::invalid_argument("parameter: model-free service has no single parameter");
    }
    throw std::logic_error("unreachable");
  }

  ServiceModel with_parameter(double value) const {
    switch (kind()) {
      case ServiceKind::Exponential: return exponential(value);
      case ServiceKind::Erlang: return erlang(std::get<ErlangService>(law_).shape, value);
      case ServiceKind::Deterministic: return deterministic(value);
      case ServiceKind::ModelFree:
        throw std::invalid_argument("with_parameter: model-free service has no single parameter");
    }
    throw std::logic_error("unreachable");
  }

  const ExponentialService* as_exponential() const { return std::get_if<ExponentialService>(&law_); }
  const ErlangService* as_erlang() const { return std::get_if<ErlangService>(&law_); }
  const DeterministicService* as_deterministic() const { return std::get_if<DeterministicService>(&law_); }
  const ModelFreeService* as_model_free() const { return std::get_if<ModelFreeService>(&law_); }

  friend bool operator==(const ServiceModel& a, const ServiceModel& b) = default;

 private:
  using Law = std::variant<ExponentialService, ErlangService, DeterministicService, ModelFreeService>;

  explicit ServiceModel(Law law) : law_(law) {}

  static void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
  }

  Law law_;
};

}  // namespace qnet
