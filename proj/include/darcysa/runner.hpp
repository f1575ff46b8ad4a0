#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "darcysa/annealer.hpp"
#include "darcysa/config.hpp"
#include "darcysa/fv_reference.hpp"
#include "darcysa/randfield.hpp"
#include "darcysa/rng.hpp"
#include "darcysa/stats.hpp"

#ifndef DARCYSA_VERSION
#define DARCYSA_VERSION "0.1.0"
#endif

namespace darcysa {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CSV artifacts

namespace detail {

inline std::ostream& precise(std::ostream& os) {
  os << std::setprecision(17);
  return os;
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  return os;
}

inline void check_written(std::ostream& os, const std::filesystem::path& p) {
  os.flush();
  if (!os) throw IoError("failed while writing " + p.string());
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline const char* samples_header =
    "realization_id,sigma2,p_center,p_08Y,qx_star,qy_star,Qy_star,conservation_dev";
inline const char* fits_header = "sigma2,observable,family,mu,sigma,k,loglik,ks_stat,ks_crit,ks_pass";
inline const char* histograms_header = "sigma2,observable,bin_left,bin_right,density";

inline void write_samples_csv(std::ostream& os, const std::vector<EnsembleTable>& tables) {
  detail::precise(os) << samples_header << '\n';
  for (const auto& t : tables)
    for (const auto& s : t.samples())
      os << s.realization_id << ',' << s.sigma2 << ',' << s.p_center << ',' << s.p_08y << ','
         << s.qx_star << ',' << s.qy_star << ',' << s.Qy_star << ',' << s.conservation_dev << '\n';
}

inline std::vector<ObservableSample> read_samples_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("samples file is empty");
  const auto header = detail::split_csv(detail::trim(line));
  const auto expected = detail::split_csv(samples_header);
  for (const auto& col : expected)
    if (std::find(header.begin(), header.end(), col) == header.end())
      throw IoError("samples file is missing column '" + col + "'");
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos[header[i]] = i;

  std::vector<ObservableSample> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) {
      std::ostringstream os;
      os << "samples line " << lineno << ": expected " << header.size() << " columns, got "
         << cells.size();
      throw IoError(os.str());
    }
    auto num = [&](const char* col) {
      try {
        return std::stod(cells[pos.at(col)]);
      } catch (const std::exception&) {
        std::ostringstream os;
        os << "samples line " << lineno << ": column " << col << " is not a number";
        throw IoError(os.str());
      }
    };
    ObservableSample s;
    s.realization_id = static_cast<std::int64_t>(num("realization_id"));
    s.sigma2 = num("sigma2");
    s.p_center = num("p_center");
    s.p_08y = num("p_08Y");
    s.qx_star = num("qx_star");
    s.qy_star = num("qy_star");
    s.Qy_star = num("Qy_star");
    s.conservation_dev = num("conservation_dev");
    out.push_back(s);
  }
  return out;
}

struct EnsembleFits {
  double sigma2;
  std::vector<ObservableFit> fits;
};

inline void write_fits_csv(std::ostream& os, const std::vector<EnsembleFits>& all) {
  detail::precise(os) << fits_header << '\n';
  for (const auto& e : all)
    for (const auto& of : e.fits) {
      if (!of.fit) continue;
      const FitResult& f = *of.fit;
      os << e.sigma2 << ',' << to_string(of.observable) << ',' << to_string(f.family) << ','
         << f.mu << ',' << f.sigma << ',';
      if (f.family == Family::exp_power) os << f.k;
      os << ',' << f.loglik << ',' << f.ks_stat << ',' << f.ks_crit << ','
         << (f.ks_pass ? "true" : "false") << '\n';
    }
}

inline void write_histograms_csv(std::ostream& os, const std::vector<EnsembleTable>& tables,
                                 std::size_t bins = 0) {
  detail::precise(os) << histograms_header << '\n';
  for (const auto& t : tables) {
    if (t.size() < 2) continue;
    for (auto o : all_observables) {
      const Histogram h = histogram(t.values(o), bins);
      for (const auto& b : h.bins)
        os << t.sigma2() << ',' << to_string(o) << ',' << b.left << ',' << b.right << ','
           << b.density << '\n';
    }
  }
}

/// Groups samples by sigma^2 (ascending). Samples read back from CSV carry
/// no grid, so the tables use a placeholder grid.
inline std::vector<EnsembleTable> tables_from_samples(const std::vector<ObservableSample>& samples,
                                                      const GridSpec& g = GridSpec(1, 1, 1, 1, 1, 1)) {
  std::map<double, EnsembleTable> by;
  for (const auto& s : samples) by.try_emplace(s.sigma2, s.sigma2, g).first->second.add(s);
  std::vector<EnsembleTable> out;
  for (auto& [_, t] : by) out.push_back(std::move(t));
  return out;
}

inline std::vector<EnsembleFits> fit_tables(const std::vector<EnsembleTable>& tables) {
  std::vector<EnsembleFits> out;
  for (const auto& t : tables) out.push_back({t.sigma2(), fit_ensemble(t)});
  return out;
}

// ---------------------------------------------------------------------------
// Cost model

struct FlopReport {
  double cells = 0.0;
  double fft = 0.0;     // 2 N log N
  double fvm = 0.0;     // N log N
  double anneal = 0.0;  // N^2

  void print(std::ostream& os) const {
    os << std::setprecision(4) << "cells            " << cells << '\n'
       << "fft generation   ~ 2 N log N = " << fft << " flops\n"
       << "fvm solve        ~ N log N   = " << fvm << " flops\n"
       << "annealing        ~ N^2       = " << anneal << " flops\n";
  }
};

inline FlopReport flop_report(const GridSpec& g) {
  const double n = static_cast<double>(g.cell_count());
  const double ln = n > 1.0 ? std::log(n) : 0.0;
  return {n, 2.0 * n * ln, n * ln, n * n};
}

inline FlopReport flop_report(const RunConfig& c) { return flop_report(c.grid()); }

// ---------------------------------------------------------------------------
// Ensemble run

struct StageTimes {
  double generate = 0.0;
  double fvm = 0.0;
  double anneal = 0.0;
};

struct RealizationOutcome {
  std::size_t sigma_index = 0;
  long index = 0;
  std::uint64_t seed = 0;
  StageTimes time;
  std::optional<ObservableSample> sa;
  std::optional<ObservableSample> fvm;
  std::optional<double> max_abs_diff;  // |p_SA - p_FVM| when both solvers ran
  long sweeps = 0;
  std::string failure;

  bool failed() const { return !failure.empty(); }
};

struct RunManifest {
  RunConfig config;
  std::string version = DARCYSA_VERSION;
  std::vector<RealizationOutcome> outcomes;
  std::vector<double> min_eigenvalues;  // per sigma^2
  double wall_seconds = 0.0;

  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.failed(); }));
  }
  double failure_fraction() const {
    return outcomes.empty() ? 0.0 : static_cast<double>(failures()) / static_cast<double>(outcomes.size());
  }
  bool budget_exceeded() const { return failure_fraction() > config.failure_budget; }

  void write(std::ostream& os) const {
    detail::precise(os);
    os << "version = " << version << '\n';
    for (const auto& [k, v] : config_entries(config)) os << "config." << k << " = " << v << '\n';
    os << "realizations = " << outcomes.size() << '\n'
       << "failures = " << failures() << '\n'
       << "wall_seconds = " << wall_seconds << '\n';
    const FlopReport f = flop_report(config);
    os << "flops.fft = " << f.fft << '\n'
       << "flops.fvm = " << f.fvm << '\n'
       << "flops.anneal = " << f.anneal << '\n';
    for (std::size_t s = 0; s < min_eigenvalues.size(); ++s)
      os << "embedding." << s << ".min_eigenvalue = " << min_eigenvalues[s] << '\n';
    for (const auto& o : outcomes) {
      const std::string id = std::to_string(o.sigma_index) + "." + std::to_string(o.index);
      os << "seed." << id << " = " << o.seed << '\n';
      os << "timing." << id << ".generate = " << o.time.generate << '\n';
      if (config.solver != SolverChoice::anneal) os << "timing." << id << ".fvm = " << o.time.fvm << '\n';
      if (config.solver != SolverChoice::fvm) {
        os << "timing." << id << ".anneal = " << o.time.anneal << '\n';
        os << "sweeps." << id << " = " << o.sweeps << '\n';
      }
      if (o.max_abs_diff) os << "oracle." << id << ".max_abs_diff = " << *o.max_abs_diff << '\n';
      if (o.failed()) os << "failure." << id << " = " << o.failure << '\n';
    }
  }
};

struct RunResult {
  RunManifest manifest;
  std::vector<EnsembleTable> sa;   // per sigma^2, empty when SA did not run
  std::vector<EnsembleTable> fvm;  // per sigma^2, empty when FVM did not run
};

/// Seed of realization r at ladder index s.
inline std::uint64_t realization_seed(std::uint64_t master, std::size_t s, long r) {
  return derive_seed(master, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(r)});
}

/// field seed = derive(realization, 0), annealer seed = derive(realization, 1)
inline ScalarField realization_permeability(const EmbeddingPlan& plan, std::uint64_t seed) {
  return exponentiate(sample_log_field(plan, derive_seed(seed, {0})));
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void run_one(const RunConfig& cfg, const EmbeddingPlan& plan, double sigma2,
                    RealizationOutcome& out) {
  using clock = std::chrono::steady_clock;
  const GridSpec g = cfg.grid();
  const NormalizationSpec norm = NormalizationSpec::from(sigma2, g, cfg.bc);
  const std::int64_t id = out.index;

  auto t0 = clock::now();
  const ScalarField K = realization_permeability(plan, out.seed);
  const Transmissibilities T = transmissibilities(K, cfg.face_average);
  out.time.generate = seconds_since(t0);

  std::optional<PressureState> ref;
  if (cfg.solver != SolverChoice::anneal) {
    t0 = clock::now();
    try {
      ref = solve_linear(assemble(T, cfg.bc), cfg.fvm_rel_tol);
      out.fvm = extract(*ref, T, norm, sigma2, id);
    } catch (const SolverError& e) {
      out.failure = std::string("fvm: ") + e.what();
    }
    out.time.fvm = seconds_since(t0);
  }
  if (cfg.solver != SolverChoice::fvm) {
    t0 = clock::now();
    try {
      AnnealResult r = anneal(T, cfg.bc, cfg.anneal.for_variance(sigma2), derive_seed(out.seed, {1}));
      out.sweeps = r.trace.total_sweeps;
      out.sa = extract(r.pressure, T, norm, sigma2, id);
      if (ref) {
        double m = 0.0;
        for (std::size_t i = 0; i < ref->values.size(); ++i)
          m = std::max(m, std::abs(ref->values[i] - r.pressure.values[i]));
        out.max_abs_diff = m;
      }
      if (cfg.write_traces) {
        const auto dir = std::filesystem::path(cfg.output_dir) / "traces";
        const auto path = dir / ("trace_" + std::to_string(out.sigma_index) + "_" + std::to_string(id) + ".csv");
        auto os = open_output(path);
        r.trace.write_csv(os);
        check_written(os, path);
      }
    } catch (const NonConvergenceError& e) {
      out.sweeps = e.trace.total_sweeps;
      if (!out.failure.empty()) out.failure += "; ";
      out.failure += std::string("anneal: ") + e.what();
    }
    out.time.anneal = seconds_since(t0);
  }
}

}  // namespace detail

/// Runs every (sigma^2, realization) task over a fixed pool of workers.
/// Tasks are pure given their derived seed; results are accumulated into
/// per-worker shards and merged, so outputs do not depend on the worker
/// count. `log` receives progress lines when non-null.
inline RunResult run_ensemble(const RunConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const GridSpec g = cfg.grid();

  std::vector<EmbeddingPlan> plans;
  RunResult result;
  result.manifest.config = cfg;
  for (double s2 : cfg.sigma2) {
    plans.push_back(plan_embedding(cfg.covariance(s2), g, cfg.max_embedding_steps));
    result.manifest.min_eigenvalues.push_back(plans.back().min_eigenvalue());
  }
  if (cfg.write_traces && cfg.solver != SolverChoice::fvm)
    std::filesystem::create_directories(std::filesystem::path(cfg.output_dir) / "traces");

  const std::size_t n_sigma = cfg.sigma2.size();
  const auto n_real = static_cast<std::size_t>(cfg.realizations);
  auto& outcomes = result.manifest.outcomes;
  outcomes.resize(n_sigma * n_real);
  std::unordered_set<std::uint64_t> seeds;
  for (std::size_t s = 0; s < n_sigma; ++s)
    for (std::size_t r = 0; r < n_real; ++r) {
      auto& o = outcomes[s * n_real + r];
      o.sigma_index = s;
      o.index = static_cast<long>(r);
      o.seed = realization_seed(cfg.seed, s, o.index);
      if (!seeds.insert(o.seed).second)
        throw std::logic_error("realization seed collision at sigma index " + std::to_string(s));
    }

  const bool want_sa = cfg.solver != SolverChoice::fvm;
  const bool want_fvm = cfg.solver != SolverChoice::anneal;
  auto empty_tables = [&] {
    std::vector<EnsembleTable> v;
    for (double s2 : cfg.sigma2) v.emplace_back(s2, g);
    return v;
  };
  const auto workers = static_cast<std::size_t>(std::max(1, cfg.workers));
  std::vector<std::vector<EnsembleTable>> sa_shards(workers, empty_tables());
  std::vector<std::vector<EnsembleTable>> fvm_shards(workers, empty_tables());

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex log_mutex;
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto work = [&](std::size_t w) {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= outcomes.size()) return;
      auto& o = outcomes[t];
      try {
        detail::run_one(cfg, plans[o.sigma_index], cfg.sigma2[o.sigma_index], o);
      } catch (const DomainError& e) {
        o.failure = std::string("field: ") + e.what();
      } catch (...) {
        std::lock_guard lk(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        next.store(outcomes.size());
        return;
      }
      if (!o.failed()) {
        if (o.sa) sa_shards[w][o.sigma_index].add(*o.sa);
        if (o.fvm) fvm_shards[w][o.sigma_index].add(*o.fvm);
      }
      const std::size_t d = done.fetch_add(1) + 1;
      if (log && (d % std::max<std::size_t>(1, outcomes.size() / 20) == 0 || d == outcomes.size())) {
        std::lock_guard lk(log_mutex);
        *log << "  " << d << "/" << outcomes.size() << " realizations" << std::endl;
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  auto merge_shards = [&](std::vector<std::vector<EnsembleTable>>& shards) {
    std::vector<EnsembleTable> out = empty_tables();
    for (auto& shard : shards)
      for (std::size_t s = 0; s < n_sigma; ++s) out[s].merge(shard[s]);
    return out;
  };
  if (want_sa) result.sa = merge_shards(sa_shards);
  if (want_fvm) result.fvm = merge_shards(fvm_shards);
  result.manifest.wall_seconds = detail::seconds_since(t_start);
  return result;
}

/// Writes samples/fits/histograms for one solver under `suffix`.
inline void write_artifacts(const std::filesystem::path& dir, const std::vector<EnsembleTable>& tables,
                            std::size_t bins, const std::string& suffix = "") {
  const auto samples = dir / ("samples" + suffix + ".csv");
  const auto fits = dir / ("fits" + suffix + ".csv");
  const auto hist = dir / ("histograms" + suffix + ".csv");
  {
    auto os = detail::open_output(samples);
    write_samples_csv(os, tables);
    detail::check_written(os, samples);
  }
  {
    auto os = detail::open_output(fits);
    write_fits_csv(os, fit_tables(tables));
    detail::check_written(os, fits);
  }
  {
    auto os = detail::open_output(hist);
    write_histograms_csv(os, tables, bins);
    detail::check_written(os, hist);
  }
}

/// Full pipeline: ensemble, statistics and every artifact in
/// cfg.output_dir. With solver = both the annealer's samples are the
/// primary outputs and the finite-volume ones carry a `_fvm` suffix.
inline RunManifest run(const RunConfig& cfg, std::ostream* log = nullptr) {
  const std::filesystem::path dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  RunResult r = run_ensemble(cfg, log);
  if (cfg.solver == SolverChoice::fvm) {
    write_artifacts(dir, r.fvm, cfg.histogram_bins);
  } else {
    write_artifacts(dir, r.sa, cfg.histogram_bins);
    if (cfg.solver == SolverChoice::both) write_artifacts(dir, r.fvm, cfg.histogram_bins, "_fvm");
  }
  const auto mpath = dir / "manifest.txt";
  auto os = detail::open_output(mpath);
  r.manifest.write(os);
  detail::check_written(os, mpath);
  return std::move(r.manifest);
}

// ---------------------------------------------------------------------------
// Manifest reading

inline std::map<std::string, std::string> read_manifest(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find(" = ");
    if (eq == std::string::npos) throw IoError("manifest line " + std::to_string(lineno) + " is not 'key = value'");
    kv[s.substr(0, eq)] = s.substr(eq + 3);
  }
  return kv;
}

}  // namespace darcysa
