#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bayeseg/model.hpp"
#include "bayeseg/pipeline.hpp"

namespace bayeseg {

/// Effective run configuration: all hyperparameters and fit settings under
/// their config-file key names.  Unset keys keep the model defaults.
struct RunConfig {
  Hyperparams hyper;
  FitConfig fit;
};

namespace detail {

struct ConfigKey {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' has non-numeric value '" + value + "'");
  }
  if (pos != value.size())
    throw std::invalid_argument("config: key '" + key +
                                "' has trailing junk in value '" + value + "'");
  return v;
}

inline long long parse_int(const std::string& key, const std::string& value) {
  const double v = parse_double(key, value);
  const long long i = static_cast<long long>(v);
  if (static_cast<double>(i) != v)
    throw std::invalid_argument("config: key '" + key +
                                "' expects an integer, got '" + value + "'");
  return i;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: key '" + key +
                              "' expects true/false, got '" + value + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  auto positive = [](const std::string& key, double v) {
    if (!(v > 0.0))
      throw std::invalid_argument("config: key '" + key +
                                  "' must be positive");
    return v;
  };
  static const std::map<std::string, ConfigKey> keys = {
      {"k",
       {[](RunConfig& c, const std::string& v) {
          const long long i = parse_int("k", v);
          if (i < 1) throw std::invalid_argument("config: key 'k' must be >= 1");
          c.hyper.K = static_cast<int>(i);
        },
        [](const RunConfig& c) { return std::to_string(c.hyper.K); }}},
      {"mu0",
       {[](RunConfig& c, const std::string& v) {
          c.hyper.mu0 = parse_double("mu0", v);
        },
        [](const RunConfig& c) { return format_double(c.hyper.mu0); }}},
      {"sigma0",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.sigma0 = positive("sigma0", parse_double("sigma0", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.sigma0); }}},
      {"phi_rho",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.phi_rho = positive("phi_rho", parse_double("phi_rho", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.phi_rho); }}},
      {"gamma_rho",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.gamma_rho = positive("gamma_rho", parse_double("gamma_rho", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.gamma_rho); }}},
      {"phi_upsilon",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.phi_upsilon =
              positive("phi_upsilon", parse_double("phi_upsilon", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.phi_upsilon); }}},
      {"gamma_upsilon",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.gamma_upsilon =
              positive("gamma_upsilon", parse_double("gamma_upsilon", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.gamma_upsilon); }}},
      {"phi_omega",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.phi_omega = positive("phi_omega", parse_double("phi_omega", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.phi_omega); }}},
      {"gamma_omega",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.gamma_omega =
              positive("gamma_omega", parse_double("gamma_omega", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.gamma_omega); }}},
      {"alpha_pi",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.alpha_pi = positive("alpha_pi", parse_double("alpha_pi", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.alpha_pi); }}},
      {"beta_pi",
       {[positive](RunConfig& c, const std::string& v) {
          c.hyper.beta_pi = positive("beta_pi", parse_double("beta_pi", v));
        },
        [](const RunConfig& c) { return format_double(c.hyper.beta_pi); }}},
      {"lambda",
       {[](RunConfig& c, const std::string& v) {
          const double d = parse_double("lambda", v);
          if (!(d >= 0.0))
            throw std::invalid_argument("config: key 'lambda' must be >= 0");
          c.hyper.lambda = d;
        },
        [](const RunConfig& c) { return format_double(c.hyper.lambda); }}},
      {"max_sweeps",
       {[](RunConfig& c, const std::string& v) {
          const long long i = parse_int("max_sweeps", v);
          if (i < 1)
            throw std::invalid_argument("config: key 'max_sweeps' must be >= 1");
          c.fit.max_sweeps = static_cast<int>(i);
        },
        [](const RunConfig& c) { return std::to_string(c.fit.max_sweeps); }}},
      {"grad_steps_per_sweep",
       {[](RunConfig& c, const std::string& v) {
          const long long i = parse_int("grad_steps_per_sweep", v);
          if (i < 0)
            throw std::invalid_argument(
                "config: key 'grad_steps_per_sweep' must be >= 0");
          c.fit.grad_steps_per_sweep = static_cast<int>(i);
        },
        [](const RunConfig& c) {
          return std::to_string(c.fit.grad_steps_per_sweep);
        }}},
      {"learning_rate",
       {[positive](RunConfig& c, const std::string& v) {
          c.fit.learning_rate =
              positive("learning_rate", parse_double("learning_rate", v));
        },
        [](const RunConfig& c) { return format_double(c.fit.learning_rate); }}},
      {"convergence_tol",
       {[](RunConfig& c, const std::string& v) {
          const double d = parse_double("convergence_tol", v);
          if (!(d >= 0.0))
            throw std::invalid_argument(
                "config: key 'convergence_tol' must be >= 0");
          c.fit.convergence_tol = d;
        },
        [](const RunConfig& c) {
          return format_double(c.fit.convergence_tol);
        }}},
      {"seed",
       {[](RunConfig& c, const std::string& v) {
          c.fit.seed = static_cast<std::uint64_t>(parse_int("seed", v));
        },
        [](const RunConfig& c) { return std::to_string(c.fit.seed); }}},
      {"supervised",
       {[](RunConfig& c, const std::string& v) {
          c.fit.supervised = parse_bool("supervised", v);
        },
        [](const RunConfig& c) {
          return c.fit.supervised ? std::string("true") : std::string("false");
        }}},
      {"exact_rho_expectation",
       {[](RunConfig& c, const std::string& v) {
          c.fit.exact_rho_expectation = parse_bool("exact_rho_expectation", v);
        },
        [](const RunConfig& c) {
          return c.fit.exact_rho_expectation ? std::string("true")
                                             : std::string("false");
        }}},
  };
  return keys;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

/// Applies `key = value` lines from an optional file, then flag overrides.
/// Precedence: flags > file > defaults.  Unknown keys are an error.
inline RunConfig parse_config(
    const std::string& file_path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  RunConfig cfg;
  const auto& keys = detail::config_keys();

  if (!file_path.empty()) {
    std::ifstream is(file_path);
    if (!is) throw std::runtime_error("cannot open config file: " + file_path);
    std::string line;
    int line_no = 0;
    std::vector<std::string> unknown;
    while (std::getline(is, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string stripped = detail::trim(line);
      if (stripped.empty()) continue;
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: malformed line " +
                                    std::to_string(line_no) + " (missing '=')");
      const std::string key = detail::trim(stripped.substr(0, eq));
      const std::string value = detail::trim(stripped.substr(eq + 1));
      if (key.empty() || value.empty())
        throw std::invalid_argument("config: malformed line " +
                                    std::to_string(line_no));
      auto it = keys.find(key);
      if (it == keys.end()) {
        unknown.push_back(key);
        continue;
      }
      it->second.set(cfg, value);
    }
    if (!unknown.empty()) {
      std::string msg = "config: unknown keys:";
      for (const auto& k : unknown) msg += " " + k;
      throw std::invalid_argument(msg);
    }
  }

  for (const auto& [key, value] : overrides) {
    auto it = keys.find(key);
    if (it == keys.end())
      throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second.set(cfg, value);
  }
  cfg.hyper.validate();
  cfg.fit.validate();
  return cfg;
}

/// Serializes the effective configuration; parsing the result reproduces it.
inline std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, entry] : detail::config_keys())
    os << key << " = " << entry.get(cfg) << "\n";
  return os.str();
}

}  // namespace bayeseg
