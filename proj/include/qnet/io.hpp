#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qnet/estimate.hpp"
#include "qnet/moments.hpp"
#include "qnet/params.hpp"
#include "qnet/simulate.hpp"

namespace qnet {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Small CSV helpers. Comma separated, '.' decimal point, LF line endings.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace io_detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

inline std::string station_header(int n, const std::string& lead = "") {
  std::string h = lead;
  for (int i = 0; i < n; ++i) {
    if (!h.empty()) h += ',';
    h += "station_" + std::to_string(i + 1);
  }
  return h;
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Parameter points
// ---------------------------------------------------------------------------

inline Json service_to_json(const ServiceModel& s) {
  Json j;
  switch (s.kind()) {
    case ServiceKind::Exponential:
      j["kind"] = "exponential";
      j["rate"] = s.as_exponential()->rate;
      break;
    case ServiceKind::Erlang:
      j["kind"] = "erlang";
      j["shape"] = s.as_erlang()->shape;
      j["rate"] = s.as_erlang()->rate;
      break;
    case ServiceKind::Deterministic:
      j["kind"] = "deterministic";
      j["duration"] = s.as_deterministic()->duration;
      break;
    case ServiceKind::ModelFree: {
      const auto* m = s.as_model_free();
      j["kind"] = "modelfree";
      j["mean"] = m->mean;
      j["lst_at_beta"] = m->lst_at_beta;
      j["dlst_at_beta"] = m->dlst_at_beta;
      j["anchored_beta"] = m->anchored_beta;
      break;
    }
  }
  return j;
}

inline ServiceModel service_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "exponential") return ServiceModel::exponential(j.at("rate").get<double>());
  if (kind == "erlang")
    return ServiceModel::erlang(j.at("shape").get<int>(), j.at("rate").get<double>());
  if (kind == "deterministic")
    return ServiceModel::deterministic(j.at("duration").get<double>());
  if (kind == "modelfree")
    return ServiceModel::model_free(j.at("mean").get<double>(), j.at("lst_at_beta").get<double>(),
                                    j.at("dlst_at_beta").get<double>(),
                                    j.at("anchored_beta").get<double>());
  throw std::invalid_argument("unknown service kind: " + kind);
}

inline Json params_to_json(const NetworkParams& params) {
  Json j;
  j["n"] = params.n;
  Json q = Json::array();
  for (int i = 0; i < params.n; ++i) {
    Json row = Json::array();
    for (int k = 0; k < params.n; ++k) row.push_back(params.Q(i, k));
    q.push_back(std::move(row));
  }
  j["Q"] = std::move(q);
  j["lambda"] = std::vector<double>(params.lambda.data(), params.lambda.data() + params.n);
  Json services = Json::array();
  for (const auto& s : params.services) services.push_back(service_to_json(s));
  j["services"] = std::move(services);
  j["p"] = std::vector<double>(params.p.data(), params.p.data() + params.n);
  return j;
}

inline NetworkParams params_from_json(const Json& j) {
  const int n = j.at("n").get<int>();
  Matrix Q(n, n);
  const auto& q = j.at("Q");
  if (static_cast<int>(q.size()) != n) throw std::invalid_argument("params: Q row count != n");
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(q[i].size()) != n)
      throw std::invalid_argument("params: Q is not square");
    for (int k = 0; k < n; ++k) Q(i, k) = q[i][k].get<double>();
  }
  const auto lam = j.at("lambda").get<std::vector<double>>();
  if (static_cast<int>(lam.size()) != n) throw std::invalid_argument("params: lambda length != n");
  Vector lambda = Eigen::Map<const Vector>(lam.data(), n);
  std::vector<ServiceModel> services;
  for (const auto& s : j.at("services")) services.push_back(service_from_json(s));
  Vector p = Vector::Ones(n);
  if (j.contains("p")) {
    const auto pv = j.at("p").get<std::vector<double>>();
    if (static_cast<int>(pv.size()) != n) throw std::invalid_argument("params: p length != n");
    p = Eigen::Map<const Vector>(pv.data(), n);
  }
  return make_params(std::move(Q), std::move(lambda), std::move(services), std::move(p));
}

inline void save_params(const NetworkParams& params, const std::filesystem::path& path) {
  io_detail::write_file(path, params_to_json(params).dump(2) + "\n");
}

inline NetworkParams load_params(const std::filesystem::path& path) {
  return params_from_json(Json::parse(io_detail::read_file(path)));
}

// ---------------------------------------------------------------------------
// Moment sets: one CSV per matrix plus a JSON with everything
// ---------------------------------------------------------------------------

inline void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  std::string text = io_detail::station_header(static_cast<int>(m.cols())) + "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) text += ',';
      text += format_double(m(i, j));
    }
    text += '\n';
  }
  io_detail::write_file(path, text);
}

inline Json moments_to_json(const MomentSet& ms) {
  Json j;
  j["version"] = 1;
  j["beta"] = ms.beta;
  j["source"] = ms.source == MomentSource::Analytic ? "analytic" : "empirical";
  const int n = static_cast<int>(ms.alpha0.size());
  j["alpha0"] = std::vector<double>(ms.alpha0.data(), ms.alpha0.data() + n);
  auto mat = [](const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      Json row = Json::array();
      for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["alpha1"] = mat(ms.alpha1);
  j["alpha2"] = ms.alpha2 ? mat(*ms.alpha2) : Json(nullptr);
  return j;
}

inline MomentSet moments_from_json(const Json& j) {
  MomentSet ms;
  ms.beta = j.at("beta").get<double>();
  ms.source = j.at("source").get<std::string>() == "analytic" ? MomentSource::Analytic
                                                              : MomentSource::Empirical;
  const auto a0 = j.at("alpha0").get<std::vector<double>>();
  const int n = static_cast<int>(a0.size());
  ms.alpha0 = Eigen::Map<const Vector>(a0.data(), n);
  auto mat = [n](const Json& rows) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) m(i, k) = rows[i][k].get<double>();
    return m;
  };
  ms.alpha1 = mat(j.at("alpha1"));
  if (!j.at("alpha2").is_null()) ms.alpha2 = mat(j.at("alpha2"));
  return ms;
}

inline void write_moments(const MomentSet& ms, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Matrix a0 = ms.alpha0.transpose();
  write_matrix_csv(a0, dir / "alpha0.csv");
  write_matrix_csv(ms.alpha1, dir / "alpha1.csv");
  if (ms.alpha2) write_matrix_csv(*ms.alpha2, dir / "alpha2.csv");
  io_detail::write_file(dir / "moments.json", moments_to_json(ms).dump(2) + "\n");
}

inline MomentSet read_moments(const std::filesystem::path& json_path) {
  return moments_from_json(Json::parse(io_detail::read_file(json_path)));
}

// ---------------------------------------------------------------------------
// Observation logs: counts CSV plus a JSON sidecar
// ---------------------------------------------------------------------------

inline std::filesystem::path sidecar_path(std::filesystem::path csv_path) {
  csv_path.replace_extension(".json");
  return csv_path;
}

inline void write_log(const ObservationLog& log, const std::filesystem::path& csv_path) {
  const int n = log.n();
  auto counts_csv = [&](const CountMatrix& counts) {
    std::string text = io_detail::station_header(n, "epoch_index") + "\n";
    for (Eigen::Index k = 0; k < counts.rows(); ++k) {
      text += std::to_string(k + 1);
      for (int i = 0; i < n; ++i) {
        text += ',';
        text += std::to_string(counts(k, i));
      }
      text += '\n';
    }
    return text;
  };
  io_detail::write_file(csv_path, counts_csv(log.counts));

  Json side;
  side["version"] = 1;
  side["beta"] = log.beta;
  side["seed"] = log.seed;
  side["params_fingerprint"] = log.params_fingerprint;
  side["m"] = static_cast<std::int64_t>(log.m());
  side["n"] = n;
  if (log.true_counts) {
    std::filesystem::path true_path = csv_path;
    true_path.replace_extension();
    true_path += "_true.csv";
    io_detail::write_file(true_path, counts_csv(*log.true_counts));
    side["true_counts_file"] = true_path.filename().string();
  }
  io_detail::write_file(sidecar_path(csv_path), side.dump(2) + "\n");
}

inline CountMatrix read_counts_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open: " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty counts file");
  const auto header = io_detail::split_csv_line(line);
  const int n = static_cast<int>(header.size()) - 1;
  if (n < 1 || header[0] != "epoch_index")
    throw std::runtime_error("malformed counts header in " + csv_path.string());
  std::vector<std::int32_t> data;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = io_detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != n + 1)
      throw std::runtime_error("malformed counts row in " + csv_path.string());
    for (int i = 1; i <= n; ++i) data.push_back(static_cast<std::int32_t>(std::stol(cells[i])));
    ++rows;
  }
  CountMatrix counts(rows, n);
  for (Eigen::Index k = 0; k < rows; ++k)
    for (int i = 0; i < n; ++i) counts(k, i) = data[k * n + i];
  return counts;
}

inline ObservationLog read_log(const std::filesystem::path& csv_path) {
  ObservationLog log;
  log.counts = read_counts_csv(csv_path);
  const Json side = Json::parse(io_detail::read_file(sidecar_path(csv_path)));
  log.beta = side.at("beta").get<double>();
  log.seed = side.at("seed").get<std::uint64_t>();
  log.params_fingerprint = side.at("params_fingerprint").get<std::uint64_t>();
  if (side.contains("true_counts_file")) {
    const auto path = csv_path.parent_path() / side.at("true_counts_file").get<std::string>();
    log.true_counts = read_counts_csv(path);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Estimation results: JSON plus a flat named-parameter CSV
// ---------------------------------------------------------------------------

inline Json result_to_json(const EstimationResult& r) {
  Json j;
  j["version"] = 1;
  j["mode"] = mode_name(r.mode);
  j["theta_hat"] = params_to_json(r.theta_hat);
  j["residual_norm"] = r.residual_norm;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["degenerate_stations"] = r.degenerate_stations;
  j["closed_form"] = r.closed_form ? params_to_json(*r.closed_form) : Json(nullptr);
  return j;
}

inline void write_result(const EstimationResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io_detail::write_file(dir / "estimate.json", result_to_json(r).dump(2) + "\n");

  std::string csv = "name,value\n";
  const auto& t = r.theta_hat;
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      csv += "q_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + "," +
             format_double(t.Q(i, j)) + "\n";
  for (int i = 0; i < t.n; ++i)
    csv += "lambda_" + std::to_string(i + 1) + "," + format_double(t.lambda(i)) + "\n";
  for (int i = 0; i < t.n; ++i) {
    const std::string tag = "service_" + std::to_string(i + 1) + "_";
    const auto& s = t.services[i];
    if (const auto* e = s.as_exponential()) {
      csv += tag + "rate," + format_double(e->rate) + "\n";
    } else if (const auto* e = s.as_erlang()) {
      csv += tag + "shape," + std::to_string(e->shape) + "\n";
      csv += tag + "rate," + format_double(e->rate) + "\n";
    } else if (const auto* d = s.as_deterministic()) {
      csv += tag + "duration," + format_double(d->duration) + "\n";
    } else if (const auto* m = s.as_model_free()) {
      csv += tag + "mean," + format_double(m->mean) + "\n";
      csv += tag + "lst," + format_double(m->lst_at_beta) + "\n";
      csv += tag + "dlst," + format_double(m->dlst_at_beta) + "\n";
    }
  }
  for (int i = 0; i < t.n; ++i)
    csv += "p_" + std::to_string(i + 1) + "," + format_double(t.p(i)) + "\n";
  io_detail::write_file(dir / "estimate.csv", csv);
}

}  // namespace qnet
