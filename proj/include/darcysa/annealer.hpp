#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "darcysa/darcy.hpp"
#include "darcysa/rng.hpp"

namespace darcysa {

/// Schedule for the annealing solver. Sweep counts are full-lattice sweeps.
struct AnnealConfig {
  int pre_sweeps = 2000;                   // M: plain Metropolis sweeps at T = 1
  int block_sweeps = 3000;                 // N_s: sweeps per plateau window / cooling phase
  int block_sweeps_high_variance = 6000;   // N_s used when sigma^2 > 1
  double alpha = 0.9;                      // cooling factor
  double t_init = 0.5;                     // T_i
  double eps1 = 0.1;                       // residual that ends cooling
  double eps2 = 1e-2;                      // residual that ends the greedy phase
  double or_ratio = 0.75;                  // fraction of cooling sweeps that are over-relaxation
  double proposal_width = 0.1;             // initial half-width of uniform proposals [m]
  double target_acceptance = 0.4;          // Metropolis acceptance the width controller aims for
  double plateau_tol = 0.01;
  int max_plateau_windows = 10;
  int max_cooling_phases = 500;
  int greedy_check_interval = 10;
  long max_greedy_sweeps = 2'000'000;

  void validate() const {
    auto fail = [](const std::string& m) { throw DomainError("anneal config: " + m); };
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0,1)");
    if (!(t_init > 0.0 && t_init <= 1.0)) fail("t_init must lie in (0,1]");
    if (!(eps2 > 0.0 && eps2 < eps1)) fail("require 0 < eps2 < eps1");
    if (!(or_ratio >= 0.0 && or_ratio < 1.0)) fail("or_ratio must lie in [0,1)");
    if (!(proposal_width > 0.0)) fail("proposal_width must be > 0");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) fail("target_acceptance must lie in (0,1)");
    if (!(plateau_tol > 0.0)) fail("plateau_tol must be > 0");
    if (pre_sweeps < 0 || block_sweeps < 1 || block_sweeps_high_variance < 1)
      fail("sweep counts must be positive");
    if (max_plateau_windows < 1 || max_cooling_phases < 1 || greedy_check_interval < 1 ||
        max_greedy_sweeps < 1)
      fail("iteration budgets must be positive");
  }

  /// Copy with N_s chosen for the given log-permeability variance.
  AnnealConfig for_variance(double sigma2) const {
    AnnealConfig c = *this;
    if (sigma2 > 1.0) c.block_sweeps = block_sweeps_high_variance;
    return c;
  }
};

enum class AnnealPhase { initial, equilibrate, cooling, greedy, final };

inline const char* to_string(AnnealPhase p) {
  switch (p) {
    case AnnealPhase::initial: return "initial";
    case AnnealPhase::equilibrate: return "equilibrate";
    case AnnealPhase::cooling: return "cooling";
    case AnnealPhase::greedy: return "greedy";
    case AnnealPhase::final: return "final";
  }
  return "?";
}

struct TraceRecord {
  AnnealPhase phase;
  int k;              // plateau window, cooling step or greedy check index
  double temperature; // 0 in the greedy phase
  long sweep;         // cumulative sweeps at this record
  double action;
  double residual;
  double acceptance;  // over the Metropolis/greedy sweeps since the previous record
};

struct AnnealTrace {
  std::vector<TraceRecord> records;
  bool plateau_reached = false;
  long total_sweeps = 0;

  void write_csv(std::ostream& os) const {
    os << "phase,k,temperature,sweep,action,residual,acceptance_rate\n";
    os.precision(17);
    for (const auto& r : records)
      os << to_string(r.phase) << ',' << r.k << ',' << r.temperature << ',' << r.sweep << ','
         << r.action << ',' << r.residual << ',' << r.acceptance << '\n';
  }
};

class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, AnnealTrace t)
      : std::runtime_error(what), trace(std::move(t)) {}
  AnnealTrace trace;
};

struct SweepResult {
  double acceptance = 0.0;    // fraction of cells whose proposal was accepted
  double action_change = 0.0; // sum of accepted local deltas
};

/// Random start: every cell uniform between the two boundary heads.
inline PressureState init_pressure(const GridSpec& g, const BoundaryConditions& bc,
                                   std::uint64_t seed) {
  bc.validate();
  PressureState p(g, bc, bc.low());
  if (bc.low() == bc.high()) return p;
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(bc.low(), bc.high());
  for (auto& v : p.values) v = u(rng);
  return p;
}

/// Mean total incident transmissibility over all cells. Proposal
/// half-widths are `width * sqrt(reference / D_cell)`, so `width` is in metres
/// for a cell of average stiffness and stiffer cells take smaller steps.
inline double reference_curvature(const Transmissibilities& T) {
  const GridSpec& g = T.grid();
  double sum = 0.0;
  for (int a = 0; a < 3; ++a)
    for (double t : T.forward(static_cast<Axis>(a))) sum += 2.0 * t;
  for (double t : T.inlet()) sum += t;
  for (double t : T.outlet()) sum += t;
  return sum / static_cast<double>(g.cell_count());
}

namespace detail {

/// Visits every cell in linear-index order, handing (i,j,k,idx) to `f`.
template <class F>
inline void for_each_cell(const GridSpec& g, F&& f) {
  std::size_t idx = 0;
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i, ++idx) f(i, j, k, idx);
}

template <class Accept>
inline SweepResult proposal_sweep(PressureState& p, const Transmissibilities& T, double width,
                                  Rng& rng, Accept&& accept) {
  std::uniform_real_distribution<double> step(-1.0, 1.0);
  const double ref = reference_curvature(T);
  std::size_t accepted = 0;
  double change = 0.0;
  for_each_cell(p.grid, [&](int i, int j, int k, std::size_t idx) {
    const IncidentSums s = incident_sums(p.values, p.bc, T, i, j, k, idx);
    const double old_value = p.values[idx];
    const double new_value = old_value + width * std::sqrt(ref / s.total) * step(rng);
    const double ds = local_action_delta(s, old_value, new_value);
    if (accept(ds)) {
      p.values[idx] = new_value;
      change += ds;
      ++accepted;
    }
  });
  return {static_cast<double>(accepted) / static_cast<double>(p.grid.cell_count()), change};
}

}  // namespace detail

/// One Metropolis sweep at `temperature`: uniform proposals of half-width
/// `width`, accepted with probability min(1, exp(-dS/T)).
inline SweepResult mh_sweep(PressureState& p, const Transmissibilities& T, double temperature,
                            double width, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  return detail::proposal_sweep(p, T, width, rng, [&](double ds) {
    if (ds <= 0.0) return true;
    return u01(rng) < std::exp(-ds / temperature);
  });
}

/// Per-cell proposal half-widths for the greedy phase. A cell's width grows
/// after an accepted move and shrinks after a rejection, so every cell keeps
/// a step size matched to its own distance from the local minimum.
struct GreedyWidths {
  std::vector<double> half_width;
  double grow = 1.5;
  double shrink = 0.8;

  GreedyWidths(const Transmissibilities& T, const PressureState& p, double width) {
    const double ref = reference_curvature(T);
    half_width.resize(p.grid.cell_count());
    detail::for_each_cell(p.grid, [&](int i, int j, int k, std::size_t idx) {
      half_width[idx] = width * std::sqrt(ref / incident_sums(p.values, p.bc, T, i, j, k, idx).total);
    });
  }
};

/// Greedy sweep: only strictly action-lowering proposals are accepted.
inline SweepResult greedy_sweep(PressureState& p, const Transmissibilities& T,
                                GreedyWidths& widths, Rng& rng) {
  std::uniform_real_distribution<double> step(-1.0, 1.0);
  std::size_t accepted = 0;
  double change = 0.0;
  detail::for_each_cell(p.grid, [&](int i, int j, int k, std::size_t idx) {
    const IncidentSums s = incident_sums(p.values, p.bc, T, i, j, k, idx);
    const double old_value = p.values[idx];
    const double new_value = old_value + widths.half_width[idx] * step(rng);
    const double ds = local_action_delta(s, old_value, new_value);
    if (ds < 0.0) {
      p.values[idx] = new_value;
      change += ds;
      ++accepted;
      widths.half_width[idx] *= widths.grow;
    } else {
      widths.half_width[idx] *= widths.shrink;
    }
  });
  return {static_cast<double>(accepted) / static_cast<double>(p.grid.cell_count()), change};
}

/// Greedy sweep with one curvature-scaled width for all cells.
inline SweepResult greedy_sweep(PressureState& p, const Transmissibilities& T, double width,
                                Rng& rng) {
  return detail::proposal_sweep(p, T, width, rng, [](double ds) { return ds < 0.0; });
}

/// Over-relaxation sweep: each cell is reflected through its local minimiser,
/// p <- 2 p* - p, which leaves S unchanged. Returns the summed local deltas
/// (zero up to rounding).
inline double or_sweep(PressureState& p, const Transmissibilities& T) {
  double change = 0.0;
  detail::for_each_cell(p.grid, [&](int i, int j, int k, std::size_t idx) {
    const IncidentSums s = incident_sums(p.values, p.bc, T, i, j, k, idx);
    const double old_value = p.values[idx];
    const double new_value = 2.0 * (s.weighted / s.total) - old_value;
    change += local_action_delta(s, old_value, new_value);
    p.values[idx] = new_value;
  });
  return change;
}

/// T^(k) = alpha^k T_i.
inline double cooling_temperature(int k, double alpha, double t_init) {
  return std::pow(alpha, k) * t_init;
}

/// True when the latest window mean has stopped decreasing and differs from
/// the previous one by at most `tol` relative.
inline bool plateau_reached(std::span<const double> window_means, double tol) {
  if (window_means.size() < 2) return false;
  const double prev = window_means[window_means.size() - 2];
  const double last = window_means.back();
  return last >= prev && std::abs(last - prev) <= tol * std::abs(prev);
}

/// Over-relaxation in the pattern OR, OR, OR, MH for or_ratio = 3/4;
/// sweep s is OR iff ceil((s+1) r) > ceil(s r).
inline bool is_or_sweep(long s, double or_ratio) {
  return std::ceil((s + 1) * or_ratio) > std::ceil(s * or_ratio);
}

namespace detail {

inline double adapt_width(double width, double acceptance, double target, double lo, double hi) {
  return width * std::clamp(acceptance / target, lo, hi);
}

}  // namespace detail

struct AnnealResult {
  PressureState pressure;
  AnnealTrace trace;
};

/// Full annealing solve: random start, M plain Metropolis sweeps, plateau
/// windows of N_s sweeps at T = 1, exponential cooling phases of N_s sweeps
/// mixing OR and Metropolis sweeps until the residual is <= eps1, then
/// greedy sweeps until the residual is <= eps2. Throws
/// NonConvergenceError when a budget is exhausted.
inline AnnealResult anneal(const Transmissibilities& T, const BoundaryConditions& bc,
                           const AnnealConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const GridSpec& g = T.grid();
  PressureState p = init_pressure(g, bc, derive_seed(seed, {0}));
  Rng rng = make_rng(derive_seed(seed, {1}));
  AnnealTrace trace;
  long sweeps = 0;

  double running = action(p, T);
  double res = residual(p, T);
  trace.records.push_back({AnnealPhase::initial, 0, 1.0, 0, running, res, 0.0});

  auto finish = [&]() {
    const double s = action(p, T);
    trace.records.push_back({AnnealPhase::final, 0, 0.0, sweeps, s, residual(p, T), 0.0});
    trace.total_sweeps = sweeps;
    return AnnealResult{std::move(p), std::move(trace)};
  };
  if (res <= cfg.eps2) return finish();

  double width = cfg.proposal_width;

  // Plain Metropolis at T = 1; the first window is the M pre-sweeps.
  std::vector<double> window_means;
  auto mh_window = [&](long n) {
    double sum = 0.0, acc = 0.0;
    long adapt_count = 0;
    double adapt_acc = 0.0;
    for (long s = 0; s < n; ++s) {
      const SweepResult r = mh_sweep(p, T, 1.0, width, rng);
      running += r.action_change;
      sum += running;
      acc += r.acceptance;
      adapt_acc += r.acceptance;
      if (++adapt_count == 50) {
        width = detail::adapt_width(width, adapt_acc / adapt_count, cfg.target_acceptance, 0.5, 2.0);
        adapt_count = 0;
        adapt_acc = 0.0;
      }
      ++sweeps;
    }
    running = action(p, T);
    return std::pair{n > 0 ? sum / n : running, n > 0 ? acc / n : 0.0};
  };
  {
    auto [mean, acc] = mh_window(cfg.pre_sweeps);
    window_means.push_back(mean);
    trace.records.push_back({AnnealPhase::equilibrate, 0, 1.0, sweeps, running, residual(p, T), acc});
  }
  for (int w = 1; w <= cfg.max_plateau_windows; ++w) {
    auto [mean, acc] = mh_window(cfg.block_sweeps);
    window_means.push_back(mean);
    trace.records.push_back({AnnealPhase::equilibrate, w, 1.0, sweeps, running, residual(p, T), acc});
    if (plateau_reached(window_means, cfg.plateau_tol)) {
      trace.plateau_reached = true;
      break;
    }
  }

  // Cooling.
  bool cooled = false;
  for (int k = 0; k < cfg.max_cooling_phases; ++k) {
    const double temp = cooling_temperature(k, cfg.alpha, cfg.t_init);
    width *= k == 0 ? std::sqrt(cfg.t_init) : std::sqrt(cfg.alpha);
    double acc = 0.0;
    long mh_count = 0;
    for (long s = 0; s < cfg.block_sweeps; ++s) {
      if (is_or_sweep(s, cfg.or_ratio)) {
        running += or_sweep(p, T);
      } else {
        const SweepResult r = mh_sweep(p, T, temp, width, rng);
        running += r.action_change;
        acc += r.acceptance;
        ++mh_count;
      }
      ++sweeps;
    }
    acc = mh_count > 0 ? acc / mh_count : 0.0;
    if (mh_count > 0) width = detail::adapt_width(width, acc, cfg.target_acceptance, 0.5, 2.0);
    running = action(p, T);
    res = residual(p, T);
    trace.records.push_back({AnnealPhase::cooling, k, temp, sweeps, running, res, acc});
    if (res <= cfg.eps1) {
      cooled = true;
      break;
    }
  }
  if (!cooled) {
    std::ostringstream os;
    os << "annealing did not reach residual " << cfg.eps1 << " within " << cfg.max_cooling_phases
       << " cooling phases (last residual " << res << ")";
    trace.total_sweeps = sweeps;
    throw NonConvergenceError(os.str(), std::move(trace));
  }

  // Greedy descent. The recorded action is the running sum of accepted
  // (negative) deltas, so it cannot increase.
  double acc = 0.0;
  int checks = 0;
  GreedyWidths widths(T, p, width);
  for (long s = 1; s <= cfg.max_greedy_sweeps; ++s) {
    const SweepResult r = greedy_sweep(p, T, widths, rng);
    running += r.action_change;
    acc += r.acceptance;
    ++sweeps;
    if (s % cfg.greedy_check_interval == 0) {
      res = residual(p, T);
      trace.records.push_back({AnnealPhase::greedy, ++checks, 0.0, sweeps, running, res,
                               acc / cfg.greedy_check_interval});
      acc = 0.0;
      if (res <= cfg.eps2) return finish();
    }
  }
  std::ostringstream os;
  os << "greedy phase did not reach residual " << cfg.eps2 << " within " << cfg.max_greedy_sweeps
     << " sweeps (last residual " << res << ")";
  trace.total_sweeps = sweeps;
  throw NonConvergenceError(os.str(), std::move(trace));
}

inline AnnealResult anneal(const ScalarField& K, const BoundaryConditions& bc,
                           const AnnealConfig& cfg, std::uint64_t seed,
                           FaceAverage rule = FaceAverage::harmonic) {
  return anneal(transmissibilities(K, rule), bc, cfg, seed);
}

}  // namespace darcysa
