#pragma once

/**
 * @file io.hpp
 * @brief CSV data ingestion and JSON serialization of models, strategies,
 *        matrices, and reports.
 *
 * Conventions: matrices serialize as row-major nested arrays with an explicit
 * "q"; all user-facing indices (edges, active sets, error messages) are
 * 1-based. Structured artifacts are JSON; observation tables are CSV.
 */

#include <charconv>
#include <chrono>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "estimator.hpp"
#include "graph.hpp"
#include "inference.hpp"
#include "model.hpp"
#include "normalizer.hpp"

namespace etm {

using json = nlohmann::json;

inline constexpr const char* kLibraryVersion = "0.1.0";

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

/// Shortest round-trip decimal rendering.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(const std::string& tok, double& out) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
  if (b == e) return false;
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

} // namespace detail

/// Reads one observation per row, p numeric columns, optional header.
/// Integer-kind coordinates must parse as exact non-negative integers.
inline Dataset load_csv(const std::string& path, const TraceModel& model) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open data file: " + path);
  std::vector<Vector> rows;
  std::string line;
  int lineno = 0, datarow = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto toks = detail::split_csv_line(line);
    // optional header: skip the first line when any cell is non-numeric
    if (datarow == 0) {
      double probe;
      bool numeric = true;
      for (const auto& t : toks)
        if (!detail::parse_double(t, probe)) numeric = false;
      if (!numeric && lineno == 1) continue;
    }
    if (static_cast<int>(toks.size()) != model.p)
      throw DomainError("row " + std::to_string(datarow + 1) + ": expected " +
                        std::to_string(model.p) + " columns, found " +
                        std::to_string(toks.size()));
    Vector x(model.p);
    for (int j = 0; j < model.p; ++j) {
      double v;
      if (!detail::parse_double(toks[j], v))
        throw DomainError("parse error at row " + std::to_string(datarow + 1) +
                          ", column " + std::to_string(j + 1) + ": '" +
                          toks[j] + "'");
      CoordKind kind = model.domain.coords[j].kind;
      if (is_discrete(kind) && v != std::floor(v))
        throw DomainError("non-integer value in " +
                          std::string(kind == CoordKind::binary ? "binary"
                                                                : "integer") +
                          " column " + std::to_string(j + 1) + ", row " +
                          std::to_string(datarow + 1));
      if (!model.domain.coord_contains(j, v))
        throw DomainError("value " + toks[j] + " outside the domain of column " +
                          std::to_string(j + 1) + ", row " +
                          std::to_string(datarow + 1));
      x[j] = v;
    }
    rows.push_back(std::move(x));
    ++datarow;
  }
  if (rows.empty()) throw DomainError("data file has no observations: " + path);
  Matrix m(rows.size(), model.p);
  for (size_t i = 0; i < rows.size(); ++i) m.row(i) = rows[i].transpose();
  return Dataset::validated(std::move(m), model);
}

inline void save_csv(const Matrix& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  for (long i = 0; i < data.rows(); ++i) {
    for (long j = 0; j < data.cols(); ++j) {
      if (j) out << ',';
      out << detail::format_double(data(i, j));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON: matrices
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return json{{"q", m.rows()}, {"rows", std::move(rows)}};
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.contains("q") || !j.contains("rows"))
    throw Error("matrix JSON needs fields \"q\" and \"rows\"");
  const int q = j.at("q").get<int>();
  const auto& rows = j.at("rows");
  if (static_cast<int>(rows.size()) != q)
    throw Error("matrix JSON: row count does not match q");
  Matrix m(q, q);
  for (int i = 0; i < q; ++i) {
    if (static_cast<int>(rows[i].size()) != q)
      throw Error("matrix JSON: row " + std::to_string(i + 1) + " has wrong length");
    for (int k = 0; k < q; ++k) m(i, k) = rows[i][k].get<double>();
  }
  return m;
}

// ---------------------------------------------------------------------------
// JSON: model configuration
// ---------------------------------------------------------------------------

inline Family family_from_string(const std::string& s) {
  for (Family f : {Family::gaussian, Family::nonparanormal, Family::ising,
                   Family::multinomial_ising, Family::poisson_sqrt,
                   Family::exponential_sqrt, Family::laplace_sqrt,
                   Family::composite_sqrt, Family::mixture_gaussian_binary,
                   Family::restricted_pairwise, Family::poisson_naive})
    if (s == family_name(f)) return f;
  throw Error("unknown family: " + s);
}

/**
 * Model JSON schema:
 *   {"family": "<name>", "p": n}                      most families
 *   {"family": "multinomial_ising", "l": n, "m": n}
 *   {"family": "composite_sqrt", "p1": n, "p2": n}
 *   {"family": "nonparanormal", "p": n,
 *    "transforms": [{"type":"identity"} | {"type":"affine","a":..,"b":..}]}
 *   {"family": "restricted_pairwise", "p": n,
 *    "active_set": [[i,j], ...],   // 1-based
 *    "xi": "zero" | "neg_quartic"} // built-in base terms
 */
inline TraceModel model_from_json(const json& j) {
  FamilyConfig cfg;
  cfg.family = family_from_string(j.at("family").get<std::string>());
  cfg.p = j.value("p", 0);
  cfg.l = j.value("l", 0);
  cfg.m = j.value("m", 0);
  cfg.p1 = j.value("p1", 0);
  cfg.p2 = j.value("p2", 0);
  if (j.contains("transforms")) {
    for (const auto& t : j.at("transforms")) {
      std::string type = t.at("type").get<std::string>();
      if (type == "identity") {
        cfg.transforms.push_back(Transform::identity());
      } else if (type == "affine") {
        cfg.transforms.push_back(
            Transform::affine(t.at("a").get<double>(), t.at("b").get<double>()));
      } else {
        throw Error("unknown transform type: " + type);
      }
    }
  }
  if (j.contains("active_set")) {
    for (const auto& e : j.at("active_set")) {
      if (e.size() != 2) throw Error("active_set entries must be pairs");
      cfg.active_set.emplace_back(e[0].get<int>() - 1, e[1].get<int>() - 1);
    }
  }
  if (cfg.family == Family::restricted_pairwise) {
    std::string xi = j.value("xi", "zero");
    if (xi == "zero") {
      cfg.xi_covariates = [](const Vector&) { return 0.0; };
      cfg.xi_response = [](double) { return 0.0; };
    } else if (xi == "neg_quartic") {
      cfg.xi_covariates = [](const Vector& x) {
        return -x.array().square().square().sum();
      };
      cfg.xi_response = [](double y) { return -y * y * y * y; };
    } else {
      throw Error("unknown xi built-in: " + xi +
                  " (expected \"zero\" or \"neg_quartic\")");
    }
  }
  return build_model(cfg);
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open JSON file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

inline void save_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// JSON: evaluation strategy
// ---------------------------------------------------------------------------

inline EvalStrategy strategy_from_json(const json& j) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "closed_form") return EvalStrategy::closed_form();
  if (kind == "enumerate") return EvalStrategy::enumerate_states();
  if (kind == "truncated_series")
    return EvalStrategy::truncated_series(j.value("tail_tol", 1e-12),
                                          j.value("max_cap", 4096));
  if (kind == "quadrature")
    return EvalStrategy::quadrature(j.value("nodes_per_dim", 64));
  if (kind == "monte_carlo")
    return EvalStrategy::monte_carlo(j.value("samples", 200000L),
                                     j.value("seed", std::uint64_t{0}));
  throw Error("unknown strategy kind: " + kind);
}

inline json strategy_to_json(const EvalStrategy& st) {
  using K = EvalStrategy::Kind;
  switch (st.kind) {
    case K::closed_form:
      return json{{"kind", "closed_form"}};
    case K::enumerate_states:
      return json{{"kind", "enumerate"}};
    case K::truncated_series:
      return json{{"kind", "truncated_series"},
                  {"tail_tol", st.tail_tol},
                  {"max_cap", st.max_cap}};
    case K::quadrature:
      return json{{"kind", "quadrature"}, {"nodes_per_dim", st.nodes_per_dim}};
    case K::monte_carlo:
      return json{{"kind", "monte_carlo"},
                  {"samples", st.samples},
                  {"seed", st.seed}};
  }
  throw Error("unreachable");
}

/// Family-appropriate default evaluation route.
inline EvalStrategy default_strategy(const TraceModel& model,
                                     std::uint64_t seed = 0) {
  switch (model.family) {
    case Family::gaussian:
    case Family::nonparanormal:
    case Family::mixture_gaussian_binary:
      return EvalStrategy::closed_form();
    default:
      break;
  }
  if (model.has_finite_domain()) return EvalStrategy::enumerate_states();
  if (!model.has_continuous_coords()) return EvalStrategy::truncated_series();
  int nc = 0;
  for (const auto& c : model.domain.coords)
    if (!is_discrete(c.kind)) ++nc;
  if (nc <= 4) return EvalStrategy::quadrature();
  return EvalStrategy::monte_carlo(200000, seed);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace detail {

/// FNV-1a 64-bit over a canonical JSON dump.
inline std::string config_hash(const json& j) {
  std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return std::string(buf);
}

} // namespace detail

struct Report {
  json model_config;
  json strategy_config;
  std::uint64_t seed = 0;

  FitResult fit;
  /// per-edge tests, 1-based endpoints
  struct EdgeRecord {
    int i = 0, j = 0;
    double statistic = 0.0;
    int dof = 0;
    double p_value = 0.0;
  };
  std::vector<EdgeRecord> tests;
  std::optional<double> alpha;
  std::vector<std::pair<int, int>> subgraph_edges; ///< 1-based

  std::string config_hash;
  std::string version = kLibraryVersion;
  std::string timestamp;
};

inline json report_to_json(const Report& r) {
  json j;
  j["model"] = r.model_config;
  j["strategy"] = r.strategy_config;
  j["seed"] = r.seed;
  j["fit"] = {{"m_hat", matrix_to_json(r.fit.m_hat)},
              {"objective", r.fit.objective},
              {"log_likelihood", r.fit.log_likelihood},
              {"iterations", r.fit.iterations},
              {"final_grad_norm", r.fit.final_grad_norm},
              {"converged", r.fit.converged},
              {"stationarity_gap", r.fit.stationarity_gap}};
  json tests = json::array();
  for (const auto& t : r.tests)
    tests.push_back({{"i", t.i},
                     {"j", t.j},
                     {"statistic", t.statistic},
                     {"dof", t.dof},
                     {"p_value", t.p_value}});
  j["tests"] = std::move(tests);
  if (r.alpha) {
    json edges = json::array();
    for (auto [i, jj] : r.subgraph_edges) edges.push_back({i, jj});
    j["subgraph"] = {{"alpha", *r.alpha}, {"edges", std::move(edges)}};
  }
  j["provenance"] = {{"config_hash", r.config_hash},
                     {"version", r.version},
                     {"timestamp", r.timestamp}};
  return j;
}

inline Report report_from_json(const json& j) {
  Report r;
  r.model_config = j.at("model");
  r.strategy_config = j.at("strategy");
  r.seed = j.at("seed").get<std::uint64_t>();
  const auto& f = j.at("fit");
  r.fit.m_hat = matrix_from_json(f.at("m_hat"));
  r.fit.objective = f.at("objective").get<double>();
  r.fit.log_likelihood = f.at("log_likelihood").get<double>();
  r.fit.iterations = f.at("iterations").get<int>();
  r.fit.final_grad_norm = f.at("final_grad_norm").get<double>();
  r.fit.converged = f.at("converged").get<bool>();
  r.fit.stationarity_gap = f.at("stationarity_gap").get<double>();
  for (const auto& t : j.at("tests")) {
    Report::EdgeRecord rec;
    rec.i = t.at("i").get<int>();
    rec.j = t.at("j").get<int>();
    rec.statistic = t.at("statistic").get<double>();
    rec.dof = t.at("dof").get<int>();
    rec.p_value = t.at("p_value").get<double>();
    r.tests.push_back(rec);
  }
  if (j.contains("subgraph")) {
    r.alpha = j.at("subgraph").at("alpha").get<double>();
    for (const auto& e : j.at("subgraph").at("edges"))
      r.subgraph_edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  }
  const auto& p = j.at("provenance");
  r.config_hash = p.at("config_hash").get<std::string>();
  r.version = p.at("version").get<std::string>();
  r.timestamp = p.at("timestamp").get<std::string>();
  return r;
}

/// Hash over the semantic configuration only (not timestamps or outputs).
inline std::string semantic_config_hash(const json& model_config,
                                        const json& strategy_config,
                                        std::uint64_t seed) {
  json j = {{"model", model_config},
            {"strategy", strategy_config},
            {"seed", seed}};
  return detail::config_hash(j);
}

} // namespace etm
