#pragma once

// JSON / CSV serialization for the file formats the command-line front end
// reads and writes. CSV numbers go out with 17 significant digits; infinities
// are the strings "inf" and "-inf" everywhere.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aif/envsim.hpp"
#include "aif/hmm.hpp"
#include "aif/learning.hpp"
#include "aif/matrix.hpp"
#include "aif/planning.hpp"
#include "aif/probkit.hpp"

namespace aif::io {

using nlohmann::json;

/// Malformed or inconsistent input; the message names the offending field.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// JSON value for a double. Finite values are written by the JSON library's
/// shortest round-trip formatter, which reproduces the double exactly.
inline json number(double x) {
  if (!std::isfinite(x)) return format_double(x);
  return x;
}

inline json numbers(std::span<const double> xs) {
  json out = json::array();
  for (double x : xs) out.push_back(number(x));
  return out;
}

inline json matrix_json(const Matrix& m) {
  json out = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(numbers(m.row(r)));
  return out;
}

inline double read_number(const json& j, const std::string& field) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
  }
  throw InputError(field + ": expected a number");
}

inline const json& require(const json& j, const std::string& key, const std::string& where = "") {
  if (!j.is_object() || !j.contains(key)) throw InputError((where.empty() ? key : where + "." + key) + ": missing");
  return j.at(key);
}

inline std::vector<double> read_vector(const json& j, const std::string& field) {
  if (!j.is_array()) throw InputError(field + ": expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(read_number(j[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

inline Matrix read_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw InputError(field + ": expected a non-empty array of rows");
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < j.size(); ++r) {
    rows.push_back(read_vector(j[r], field + "[" + std::to_string(r) + "]"));
    if (rows.back().size() != rows.front().size()) {
      throw InputError(field + "[" + std::to_string(r) + "]: ragged row");
    }
  }
  return Matrix::from_rows(rows);
}

inline std::size_t read_index(const json& j, const std::string& field) {
  if (!j.is_number_integer() || j.get<long long>() < 0) throw InputError(field + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

/// Writes through a temporary file in the same directory, then renames.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(path.string() + ": cannot write");
    out << content;
    if (!out) throw InputError(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_atomic(path, j.dump(2) + "\n"); }

// ---- HMM ----

inline Hmm hmm_from_json(const json& j) {
  HmmData d;
  d.p0 = read_vector(require(j, "p0"), "p0");
  d.A = read_matrix(require(j, "A"), "A");
  d.B = read_matrix(require(j, "B"), "B");
  if (j.contains("labels")) {
    for (const auto& l : j.at("labels")) {
      if (!l.is_string()) throw InputError("labels: expected strings");
      d.labels.push_back(l.get<std::string>());
    }
  }
  if (j.contains("S") && read_index(j.at("S"), "S") != d.p0.size()) throw InputError("S: does not match p0");
  if (j.contains("O") && read_index(j.at("O"), "O") != d.A.cols()) throw InputError("O: does not match A");
  const auto report = validate(d);
  if (!report.empty()) throw InputError(describe(report));
  return Hmm::from_data(d);
}

inline json hmm_to_json(const Hmm& m) {
  json j;
  j["S"] = m.num_states();
  j["O"] = m.num_obs();
  j["p0"] = numbers(m.p0.weights());
  j["A"] = matrix_json(m.A.matrix());
  j["B"] = matrix_json(m.B.matrix());
  if (!m.labels.empty()) j["labels"] = m.labels;
  return j;
}

/// Either a bare array of observation indices or {"obs": [...]}.
inline std::vector<std::size_t> observations_from_json(const json& j, std::size_t num_obs) {
  const json& arr = j.is_object() ? require(j, "obs") : j;
  if (!arr.is_array()) throw InputError("obs: expected an array of observation indices");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto o = read_index(arr[i], "obs[" + std::to_string(i) + "]");
    if (o >= num_obs) throw InputError("obs[" + std::to_string(i) + "]: index out of range");
    out.push_back(o);
  }
  return out;
}

// ---- policy sets ----

struct PolicySet {
  ActionModel actions;
  std::vector<Policy> policies;
  PreferenceDist preference;
  std::optional<LogWeights> log_prior;
};

inline ActionModel actions_from_json(const json& j, std::size_t num_states) {
  std::vector<std::string> names;
  std::vector<StochasticMatrix> mats;
  auto add = [&](const std::string& name, const json& m) {
    const std::string field = "actions." + name;
    const Matrix b = read_matrix(m, field);
    if (b.rows() != num_states || b.cols() != num_states) throw InputError(field + ": expected S x S");
    try {
      mats.emplace_back(b);
    } catch (const Error& e) {
      throw InputError(field + ": " + e.what());
    }
    names.push_back(name);
  };
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& entry = j[i];
      const auto& name = require(entry, "name", "actions[" + std::to_string(i) + "]");
      if (!name.is_string()) throw InputError("actions[" + std::to_string(i) + "].name: expected a string");
      add(name.get<std::string>(), require(entry, "B", "actions[" + std::to_string(i) + "]"));
    }
  } else if (j.is_object()) {
    for (const auto& [name, m] : j.items()) add(name, m);
  } else {
    throw InputError("actions: expected an array of {name, B} or an object");
  }
  if (mats.empty()) throw InputError("actions: empty");
  return ActionModel(std::move(names), std::move(mats));
}

inline json actions_to_json(const ActionModel& am) {
  json out = json::array();
  for (std::size_t i = 0; i < am.size(); ++i)
    out.push_back({{"name", am.names[i]}, {"B", matrix_json(am.transitions[i].matrix())}});
  return out;
}

inline PolicySet policy_set_from_json(const json& j, std::size_t num_states) {
  PolicySet ps;
  ps.actions = actions_from_json(require(j, "actions"), num_states);
  const auto& pols = require(j, "policies");
  if (!pols.is_array() || pols.empty()) throw InputError("policies: expected a non-empty array");
  for (std::size_t i = 0; i < pols.size(); ++i) {
    const std::string field = "policies[" + std::to_string(i) + "]";
    if (!pols[i].is_array()) throw InputError(field + ": expected an array of action names");
    Policy p;
    for (const auto& a : pols[i]) {
      if (!a.is_string()) throw InputError(field + ": expected action names");
      try {
        p.push_back(ps.actions.index_of(a.get<std::string>()));
      } catch (const Error&) {
        throw InputError(field + ": unknown action '" + a.get<std::string>() + "'");
      }
    }
    if (p.size() != pols[0].size()) throw InputError(field + ": policies must share one length");
    ps.policies.push_back(std::move(p));
  }
  const auto pref = read_vector(require(j, "preference"), "preference");
  if (pref.size() != num_states) throw InputError("preference: expected S entries");
  try {
    ps.preference = PreferenceDist{CategoricalDist(pref)};
  } catch (const Error& e) {
    throw InputError(std::string("preference: ") + e.what());
  }
  if (j.contains("log_prior")) {
    auto lp = read_vector(j.at("log_prior"), "log_prior");
    if (lp.size() != ps.policies.size()) throw InputError("log_prior: expected one entry per policy");
    ps.log_prior = LogWeights{std::move(lp)};
  }
  return ps;
}

inline json policies_to_json(const ActionModel& am, const std::vector<Policy>& policies) {
  json out = json::array();
  for (const auto& p : policies) {
    json names = json::array();
    for (std::size_t a : p) names.push_back(am.names[a]);
    out.push_back(std::move(names));
  }
  return out;
}

inline std::string policy_name(const ActionModel& am, const Policy& p) {
  std::string s;
  for (std::size_t a : p) {
    if (!s.empty()) s += ',';
    s += am.names[a];
  }
  return s;
}

// ---- agent environments ----

/// A self-contained environment description: the world model (also the
/// agent's model), its actions, policy set, preference and horizon.
struct EnvSpec {
  std::string name;
  Hmm model;
  PolicySet policy_set;
  std::size_t horizon = 0;

  Environment environment() const {
    return Environment{policy_set.actions, model.A, model.p0, 0, Rng(0)};
  }
};

inline json env_to_json(const std::string& name, const Hmm& model, const ActionModel& am,
                        const std::vector<Policy>& policies, const PreferenceDist& pref, std::size_t horizon) {
  json j;
  j["name"] = name;
  j["horizon"] = horizon;
  j["model"] = hmm_to_json(model);
  j["actions"] = actions_to_json(am);
  j["policies"] = policies_to_json(am, policies);
  j["preference"] = numbers(pref.p_c.weights());
  return j;
}

inline EnvSpec env_from_json(const json& j) {
  EnvSpec e;
  e.name = j.contains("name") && j.at("name").is_string() ? j.at("name").get<std::string>() : "custom";
  e.model = hmm_from_json(require(j, "model"));
  e.policy_set = policy_set_from_json(j, e.model.num_states());
  e.horizon = read_index(require(j, "horizon"), "horizon");
  if (e.horizon == 0 || e.policy_set.policies.front().size() != e.horizon) {
    throw InputError("horizon: must equal the policy length");
  }
  return e;
}

// ---- Dirichlet priors and training data ----

struct PriorFile {
  DirichletHmm concentrations;
  std::optional<CategoricalDist> p0;
};

inline PriorFile prior_from_json(const json& j) {
  PriorFile pf;
  try {
    pf.concentrations = DirichletHmm(read_matrix(require(j, "C_A"), "C_A"), read_matrix(require(j, "C_B"), "C_B"));
  } catch (const Error& e) {
    throw InputError(std::string("C_A/C_B: ") + e.what());
  }
  if (j.contains("p0")) {
    const auto p0 = read_vector(j.at("p0"), "p0");
    if (p0.size() != pf.concentrations.num_states()) throw InputError("p0: expected S entries");
    try {
      pf.p0 = CategoricalDist(p0);
    } catch (const Error& e) {
      throw InputError(std::string("p0: ") + e.what());
    }
  }
  return pf;
}

inline json dirichlet_to_json(const DirichletHmm& d) {
  return {{"C_A", matrix_json(d.c_a)}, {"C_B", matrix_json(d.c_b)}};
}

/// One JSON array of observation indices per non-blank line.
inline std::vector<std::vector<std::size_t>> sequences_from_jsonl(const std::string& text, std::size_t num_obs) {
  std::vector<std::vector<std::size_t>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError("data line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      out.push_back(observations_from_json(j, num_obs));
    } catch (const InputError& e) {
      throw InputError("data line " + std::to_string(lineno) + ": " + e.what());
    }
    if (out.back().empty()) throw InputError("data line " + std::to_string(lineno) + ": empty sequence");
  }
  return out;
}

// ---- CSV ----

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) {
    row_strings(header);
  }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

}  // namespace aif::io
