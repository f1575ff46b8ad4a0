#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "darcysa/annealer.hpp"
#include "darcysa/darcy.hpp"
#include "darcysa/grid.hpp"
#include "darcysa/randfield.hpp"

namespace darcysa {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SolverChoice { anneal, fvm, both };

inline const char* to_string(SolverChoice s) {
  switch (s) {
    case SolverChoice::anneal: return "anneal";
    case SolverChoice::fvm: return "fvm";
    case SolverChoice::both: return "both";
  }
  return "?";
}

inline SolverChoice solver_from_string(const std::string& s) {
  if (s == "anneal") return SolverChoice::anneal;
  if (s == "fvm") return SolverChoice::fvm;
  if (s == "both") return SolverChoice::both;
  throw ConfigError("solver must be one of anneal, fvm, both (got '" + s + "')");
}

enum class Profile { paper, desk };

inline Profile profile_from_string(const std::string& s) {
  if (s == "paper") return Profile::paper;
  if (s == "desk") return Profile::desk;
  throw ConfigError("profile must be paper or desk (got '" + s + "')");
}

inline const std::vector<double> default_variances{0.125, 0.25, 0.5, 1.0, 1.75, 2.5};

struct RunConfig {
  int nx = 50, ny = 70, nz = 50;
  double lx = 40.0, ly = 85.0, lz = 25.0;
  BoundaryConditions bc{};
  std::vector<double> sigma2 = default_variances;
  std::array<double, 3> corr_len{8.0, 8.0, 5.0};
  KernelModel kernel = KernelModel::exponential;
  int max_embedding_steps = 12;
  FaceAverage face_average = FaceAverage::harmonic;
  long realizations = 10000;
  SolverChoice solver = SolverChoice::anneal;
  AnnealConfig anneal{};
  double fvm_rel_tol = 1e-10;
  std::uint64_t seed = 20240101;
  int workers = 1;
  std::string output_dir = "out";
  std::size_t histogram_bins = 0;  // 0 = Freedman-Diaconis
  double failure_budget = 0.01;    // tolerated fraction of failed realizations
  bool write_traces = false;

  GridSpec grid() const { return GridSpec(nx, ny, nz, lx, ly, lz); }

  CovarianceSpec covariance(double s2) const {
    CovarianceSpec c;
    c.variance = s2;
    c.corr_len = corr_len;
    c.model = kernel;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (nx < 1) fail("grid.nx must be ≥ 1");
    if (ny < 1) fail("grid.ny must be ≥ 1");
    if (nz < 1) fail("grid.nz must be ≥ 1");
    if (!(lx > 0.0)) fail("domain.lx must be > 0");
    if (!(ly > 0.0)) fail("domain.ly must be > 0");
    if (!(lz > 0.0)) fail("domain.lz must be > 0");
    if (sigma2.empty()) fail("sigma2 must list at least one variance");
    for (double s : sigma2)
      if (!(s >= 0.0)) fail("every sigma2 must be ≥ 0");
    for (double l : corr_len)
      if (!(l > 0.0)) fail("field.corr_len values must be > 0");
    if (realizations < 1) fail("N must be ≥ 1");
    if (workers < 1) fail("workers must be ≥ 1");
    if (!(fvm_rel_tol > 0.0)) fail("fvm.rel_tol must be > 0");
    if (max_embedding_steps < 0) fail("field.max_embedding_steps must be ≥ 0");
    if (!(failure_budget >= 0.0 && failure_budget <= 1.0)) fail("failure_budget must lie in [0,1]");
    try {
      bc.validate();
      anneal.validate();
    } catch (const DomainError& e) {
      fail(e.what());
    }
  }
};

/// Preset overrides; the full-scale profile is the struct default.
inline void apply_profile(RunConfig& c, Profile p) {
  if (p == Profile::paper) {
    c = RunConfig{};
    return;
  }
  c = RunConfig{};
  c.nx = 12;
  c.ny = 17;
  c.nz = 12;
  c.realizations = 200;
  c.sigma2 = {0.5, 2.5};
  // One tenth of the full-scale sweep counts; the residual thresholds still
  // govern convergence.
  c.anneal.pre_sweeps = 200;
  c.anneal.block_sweeps = 300;
  c.anneal.block_sweeps_high_variance = 600;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConfigValue {
  std::string key;
  std::string text;
  int line;

  [[noreturn]] void fail(const std::string& why) const {
    std::ostringstream os;
    os << "line " << line << ": " << key << ": " << why;
    throw ConfigError(os.str());
  }

  double as_double() const {
    double v = 0.0;
    const char* end = text.data() + text.size();
    auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) fail("expected a number, got '" + text + "'");
    return v;
  }

  long long as_integer() const {
    long long v = 0;
    const char* end = text.data() + text.size();
    auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) fail("expected an integer, got '" + text + "'");
    return v;
  }

  std::uint64_t as_unsigned() const {
    std::uint64_t v = 0;
    const char* end = text.data() + text.size();
    auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) fail("expected a nonnegative integer, got '" + text + "'");
    return v;
  }

  bool as_bool() const {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    fail("expected true or false, got '" + text + "'");
  }

  std::string as_string() const {
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"')
      return text.substr(1, text.size() - 2);
    return text;
  }

  std::vector<double> as_list() const {
    if (text.size() < 2 || text.front() != '[' || text.back() != ']')
      fail("expected a list like [0.5, 1.0], got '" + text + "'");
    std::vector<double> out;
    std::stringstream ss(text.substr(1, text.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      ConfigValue v{key, trim(item), line};
      if (v.text.empty()) fail("empty list element");
      out.push_back(v.as_double());
    }
    return out;
  }

  int as_int() const {
    const long long v = as_integer();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      fail("integer out of range");
    return static_cast<int>(v);
  }
};

using Setter = std::function<void(RunConfig&, const ConfigValue&)>;

inline const std::map<std::string, Setter>& config_schema() {
  static const std::map<std::string, Setter> schema = {
      {"grid.nx", [](RunConfig& c, const ConfigValue& v) { c.nx = v.as_int(); }},
      {"grid.ny", [](RunConfig& c, const ConfigValue& v) { c.ny = v.as_int(); }},
      {"grid.nz", [](RunConfig& c, const ConfigValue& v) { c.nz = v.as_int(); }},
      {"domain.lx", [](RunConfig& c, const ConfigValue& v) { c.lx = v.as_double(); }},
      {"domain.ly", [](RunConfig& c, const ConfigValue& v) { c.ly = v.as_double(); }},
      {"domain.lz", [](RunConfig& c, const ConfigValue& v) { c.lz = v.as_double(); }},
      {"bc.inlet_pressure", [](RunConfig& c, const ConfigValue& v) { c.bc.inlet_pressure = v.as_double(); }},
      {"bc.outlet_pressure", [](RunConfig& c, const ConfigValue& v) { c.bc.outlet_pressure = v.as_double(); }},
      {"sigma2", [](RunConfig& c, const ConfigValue& v) {
         c.sigma2 = v.text.front() == '[' ? v.as_list() : std::vector<double>{v.as_double()};
       }},
      {"field.corr_len_x", [](RunConfig& c, const ConfigValue& v) { c.corr_len[0] = v.as_double(); }},
      {"field.corr_len_y", [](RunConfig& c, const ConfigValue& v) { c.corr_len[1] = v.as_double(); }},
      {"field.corr_len_z", [](RunConfig& c, const ConfigValue& v) { c.corr_len[2] = v.as_double(); }},
      {"field.model", [](RunConfig& c, const ConfigValue& v) {
         const std::string s = v.as_string();
         if (s == "exponential") c.kernel = KernelModel::exponential;
         else if (s == "gaussian") c.kernel = KernelModel::gaussian;
         else v.fail("expected exponential or gaussian, got '" + s + "'");
       }},
      {"field.max_embedding_steps", [](RunConfig& c, const ConfigValue& v) { c.max_embedding_steps = v.as_int(); }},
      {"face_average", [](RunConfig& c, const ConfigValue& v) {
         const std::string s = v.as_string();
         if (s == "harmonic") c.face_average = FaceAverage::harmonic;
         else if (s == "one_sided") c.face_average = FaceAverage::one_sided;
         else v.fail("expected harmonic or one_sided, got '" + s + "'");
       }},
      {"N", [](RunConfig& c, const ConfigValue& v) { c.realizations = v.as_integer(); }},
      {"solver", [](RunConfig& c, const ConfigValue& v) {
         try {
           c.solver = solver_from_string(v.as_string());
         } catch (const ConfigError& e) {
           v.fail(e.what());
         }
       }},
      {"seed", [](RunConfig& c, const ConfigValue& v) { c.seed = v.as_unsigned(); }},
      {"workers", [](RunConfig& c, const ConfigValue& v) { c.workers = v.as_int(); }},
      {"output_dir", [](RunConfig& c, const ConfigValue& v) { c.output_dir = v.as_string(); }},
      {"failure_budget", [](RunConfig& c, const ConfigValue& v) { c.failure_budget = v.as_double(); }},
      {"histogram.bins", [](RunConfig& c, const ConfigValue& v) {
         const long long b = v.as_integer();
         if (b < 0) v.fail("must be >= 0");
         c.histogram_bins = static_cast<std::size_t>(b);
       }},
      {"output.traces", [](RunConfig& c, const ConfigValue& v) { c.write_traces = v.as_bool(); }},
      {"fvm.rel_tol", [](RunConfig& c, const ConfigValue& v) { c.fvm_rel_tol = v.as_double(); }},
      {"anneal.M", [](RunConfig& c, const ConfigValue& v) { c.anneal.pre_sweeps = v.as_int(); }},
      {"anneal.Ns", [](RunConfig& c, const ConfigValue& v) { c.anneal.block_sweeps = v.as_int(); }},
      {"anneal.Ns_high_variance", [](RunConfig& c, const ConfigValue& v) { c.anneal.block_sweeps_high_variance = v.as_int(); }},
      {"anneal.alpha", [](RunConfig& c, const ConfigValue& v) { c.anneal.alpha = v.as_double(); }},
      {"anneal.T_init", [](RunConfig& c, const ConfigValue& v) { c.anneal.t_init = v.as_double(); }},
      {"anneal.eps1", [](RunConfig& c, const ConfigValue& v) { c.anneal.eps1 = v.as_double(); }},
      {"anneal.eps2", [](RunConfig& c, const ConfigValue& v) { c.anneal.eps2 = v.as_double(); }},
      {"anneal.or_ratio", [](RunConfig& c, const ConfigValue& v) { c.anneal.or_ratio = v.as_double(); }},
      {"anneal.proposal_width", [](RunConfig& c, const ConfigValue& v) { c.anneal.proposal_width = v.as_double(); }},
      {"anneal.target_acceptance", [](RunConfig& c, const ConfigValue& v) { c.anneal.target_acceptance = v.as_double(); }},
      {"anneal.plateau_tol", [](RunConfig& c, const ConfigValue& v) { c.anneal.plateau_tol = v.as_double(); }},
      {"anneal.max_plateau_windows", [](RunConfig& c, const ConfigValue& v) { c.anneal.max_plateau_windows = v.as_int(); }},
      {"anneal.max_cooling_phases", [](RunConfig& c, const ConfigValue& v) { c.anneal.max_cooling_phases = v.as_int(); }},
      {"anneal.greedy_check_interval", [](RunConfig& c, const ConfigValue& v) { c.anneal.greedy_check_interval = v.as_int(); }},
      {"anneal.max_greedy_sweeps", [](RunConfig& c, const ConfigValue& v) { c.anneal.max_greedy_sweeps = v.as_integer(); }},
  };
  return schema;
}

}  // namespace detail

/// Parses `key = value` lines ('#' starts a comment). A `profile` key, if
/// present, selects the base preset before the other keys are applied, so
/// its position in the document does not matter.
inline RunConfig parse_config(const std::string& text, Profile base = Profile::paper) {
  std::vector<detail::ConfigValue> entries;
  std::map<std::string, int> seen;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    const std::string s = detail::trim(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::ostringstream os;
      os << "line " << line << ": expected 'key = value', got '" << s << "'";
      throw ConfigError(os.str());
    }
    detail::ConfigValue v{detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)), line};
    if (v.key.empty()) v.fail("empty key");
    if (v.text.empty()) v.fail("missing value");
    if (v.key != "profile" && !detail::config_schema().count(v.key)) v.fail("unknown key");
    if (auto [it, fresh] = seen.emplace(v.key, line); !fresh) {
      std::ostringstream os;
      os << "duplicate key (first set on line " << it->second << ")";
      v.fail(os.str());
    }
    entries.push_back(std::move(v));
  }

  Profile profile = base;
  for (const auto& v : entries)
    if (v.key == "profile") {
      try {
        profile = profile_from_string(v.as_string());
      } catch (const ConfigError& e) {
        v.fail(e.what());
      }
    }

  auto build = [&](const detail::ConfigValue* skip) {
    RunConfig c;
    apply_profile(c, profile);
    for (const auto& v : entries)
      if (&v != skip && v.key != "profile") detail::config_schema().at(v.key)(c, v);
    return c;
  };
  auto problem = [](const RunConfig& c) -> std::string {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.what();
    }
    return {};
  };

  RunConfig c = build(nullptr);
  const std::string msg = problem(c);
  if (msg.empty()) return c;
  // Blame the last line without which this particular complaint goes away;
  // cross-field invariants (eps2 < eps1) then point at the later setting.
  for (auto it = entries.rbegin(); it != entries.rend(); ++it)
    if (it->key != "profile" && problem(build(&*it)) != msg) it->fail(msg);
  throw ConfigError(msg);
}

/// Flat key-value echo of every setting, in the parser's own syntax.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  std::string ladder = "[";
  for (std::size_t i = 0; i < c.sigma2.size(); ++i) ladder += (i ? ", " : "") + num(c.sigma2[i]);
  ladder += "]";
  const auto& a = c.anneal;
  return {
      {"grid.nx", std::to_string(c.nx)},
      {"grid.ny", std::to_string(c.ny)},
      {"grid.nz", std::to_string(c.nz)},
      {"domain.lx", num(c.lx)},
      {"domain.ly", num(c.ly)},
      {"domain.lz", num(c.lz)},
      {"bc.inlet_pressure", num(c.bc.inlet_pressure)},
      {"bc.outlet_pressure", num(c.bc.outlet_pressure)},
      {"sigma2", ladder},
      {"field.corr_len_x", num(c.corr_len[0])},
      {"field.corr_len_y", num(c.corr_len[1])},
      {"field.corr_len_z", num(c.corr_len[2])},
      {"field.model", to_string(c.kernel)},
      {"field.max_embedding_steps", std::to_string(c.max_embedding_steps)},
      {"face_average", c.face_average == FaceAverage::harmonic ? "harmonic" : "one_sided"},
      {"N", std::to_string(c.realizations)},
      {"solver", to_string(c.solver)},
      {"seed", std::to_string(c.seed)},
      {"workers", std::to_string(c.workers)},
      {"output_dir", c.output_dir},
      {"failure_budget", num(c.failure_budget)},
      {"histogram.bins", std::to_string(c.histogram_bins)},
      {"output.traces", c.write_traces ? "true" : "false"},
      {"fvm.rel_tol", num(c.fvm_rel_tol)},
      {"anneal.M", std::to_string(a.pre_sweeps)},
      {"anneal.Ns", std::to_string(a.block_sweeps)},
      {"anneal.Ns_high_variance", std::to_string(a.block_sweeps_high_variance)},
      {"anneal.alpha", num(a.alpha)},
      {"anneal.T_init", num(a.t_init)},
      {"anneal.eps1", num(a.eps1)},
      {"anneal.eps2", num(a.eps2)},
      {"anneal.or_ratio", num(a.or_ratio)},
      {"anneal.proposal_width", num(a.proposal_width)},
      {"anneal.target_acceptance", num(a.target_acceptance)},
      {"anneal.plateau_tol", num(a.plateau_tol)},
      {"anneal.max_plateau_windows", std::to_string(a.max_plateau_windows)},
      {"anneal.max_cooling_phases", std::to_string(a.max_cooling_phases)},
      {"anneal.greedy_check_interval", std::to_string(a.greedy_check_interval)},
      {"anneal.max_greedy_sweeps", std::to_string(a.max_greedy_sweeps)},
  };
}

}  // namespace darcysa
