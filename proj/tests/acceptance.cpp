// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Timings are wall clock on the current machine.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "darcysa/runner.hpp"

using namespace darcysa;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using clock_type = std::chrono::steady_clock;

double since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

RunConfig desk(const std::string& extra) { return parse_config("profile = desk\n" + extra); }

// Greedy-phase records, starting from the record the phase was entered
// from, must never raise the action. The final record recomputes S from
// scratch; its round-off against the running sum is tracked separately.
bool greedy_monotone(const AnnealTrace& t, double& final_excess) {
  final_excess = 0.0;
  for (std::size_t i = 1; i < t.records.size(); ++i) {
    const auto& a = t.records[i - 1];
    const auto& b = t.records[i];
    if (b.phase == AnnealPhase::greedy && b.action > a.action) return false;
    if (b.phase == AnnealPhase::final && a.phase == AnnealPhase::greedy)
      final_excess = std::max(final_excess, (b.action - a.action) / a.action);
  }
  return true;
}

long greedy_runs_checked = 0;
long greedy_runs_violating = 0;
double worst_final_excess = 0.0;

AnnealResult checked_anneal(const Transmissibilities& T, const BoundaryConditions& bc,
                            const AnnealConfig& cfg, std::uint64_t seed) {
  AnnealResult r = anneal(T, bc, cfg, seed);
  ++greedy_runs_checked;
  double excess = 0.0;
  if (!greedy_monotone(r.trace, excess)) ++greedy_runs_violating;
  worst_final_excess = std::max(worst_final_excess, excess);
  return r;
}

// 1 -----------------------------------------------------------------------
Verdict oracle_equivalence() {
  RunConfig c = desk("sigma2 = [1.0]\nN = 20\nsolver = both\nanneal.eps2 = 1e-4\n");
  const auto t0 = clock_type::now();
  const RunResult r = run_ensemble(c);
  const double secs = since(t0);
  double worst = 0.0;
  std::size_t recorded = 0;
  for (const auto& o : r.manifest.outcomes)
    if (o.max_abs_diff) {
      worst = std::max(worst, *o.max_abs_diff);
      ++recorded;
    }
  const bool ok = r.manifest.failures() == 0 && recorded == 20 && worst <= 5e-3 && secs <= 600;
  return {ok, "max |p_SA-p_FVM| = " + fmt(worst) + " (limit 5e-3) over " + std::to_string(recorded) +
                  " realizations, " + std::to_string(r.manifest.failures()) + " failures, " +
                  fmt(secs, 3) + " s (limit 600 s)"};
}

// 2 -----------------------------------------------------------------------
Verdict hand_fixture() {
  const GridSpec g(1, 2, 1, 1, 1, 1);
  const BoundaryConditions bc{};
  const ScalarField K(g, 1.0);
  const auto fvm = reference_solution(K, bc);
  const auto T = transmissibilities(K);
  const auto sa = checked_anneal(T, bc, AnnealConfig{}, 2);
  const double e_fvm = std::max(std::abs(fvm[0] - 0.75), std::abs(fvm[1] - 0.25));
  const double e_sa = std::max(std::abs(sa.pressure[0] - 0.75), std::abs(sa.pressure[1] - 0.25));
  return {e_fvm <= 1e-10 && e_sa <= 1e-2,
          "FVM error " + fmt(e_fvm, 3) + " (limit 1e-10), SA error " + fmt(e_sa, 3) + " (limit 1e-2)"};
}

// 3 -----------------------------------------------------------------------
Verdict or_invariance() {
  const GridSpec g(5, 6, 4, 40, 85, 25);
  const auto plan = plan_embedding(CovarianceSpec{2.5, {8, 8, 5}}, g);
  const auto T = transmissibilities(exponentiate(sample_log_field(plan, 31)));
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  std::uniform_int_distribution<std::size_t> pick(0, g.cell_count() - 1);
  PressureState p(g, BoundaryConditions{});
  double worst = 0.0;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    for (auto& v : p.values) v = u(rng);
    const CellIndex c = delinearize(pick(rng), g);
    const double before = action(p, T);
    const double star = local_minimizer(p, T, c);
    p[linearize(c, g)] = 2.0 * star - p.at(c);
    const double after = action(p, T);
    worst = std::max(worst, std::abs(after - before) / std::max(before, 1.0));
  }
  return {worst <= 1e-10, "max relative action change " + fmt(worst, 3) + " over " +
                              std::to_string(trials) + " random single-cell reflections (limit 1e-10)"};
}

// 5 -----------------------------------------------------------------------
Verdict field_fidelity() {
  const int n = 32;
  const GridSpec g(n, n, n, n * 0.8, n * 85.0 / 70.0, n * 0.5);
  const CovarianceSpec c{0.5, {8, 8, 5}};
  const auto t0 = clock_type::now();
  const auto plan = plan_embedding(c, g);
  const int lag = 10;  // lambda_x / dx
  const std::size_t cells = g.cell_count();
  std::vector<double> sum(cells, 0.0), sq(cells, 0.0);
  double lag_prod = 0.0;
  long lag_pairs = 0;
  const int fields = 500;
  auto absorb = [&](const ScalarField& L) {
    for (std::size_t i = 0; i < cells; ++i) {
      sum[i] += L[i];
      sq[i] += L[i] * L[i];
    }
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i + lag < n; ++i) {
          lag_prod += L.at({i, j, k}) * L.at({i + lag, j, k});
          ++lag_pairs;
        }
  };
  for (int s = 0; s < fields / 2; ++s) {
    const auto [a, b] = sample_log_field_pair(plan, derive_seed(55, {static_cast<std::uint64_t>(s)}));
    absorb(a);
    absorb(b);
  }
  const double secs = since(t0);
  double mean_var = 0.0, worst_cell = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const double m = sum[i] / fields;
    const double v = sq[i] / fields - m * m;
    mean_var += v / cells;
    worst_cell = std::max(worst_cell, std::abs(v / c.variance - 1.0));
  }
  // Ensemble means are ~0; the product moment over variance is the
  // correlation coefficient.
  const double rho = lag_prod / lag_pairs / mean_var;
  const double expect = std::exp(-1.0);
  const bool ok = std::abs(mean_var / c.variance - 1.0) <= 0.05 && std::abs(rho - expect) <= 0.05 && secs <= 120;
  return {ok, "mean pointwise variance " + fmt(mean_var) + " (0.5 +-5%, worst single cell off by " +
                  fmt(100 * worst_cell, 3) + "%), lag-lambda_x correlation " + fmt(rho) + " vs " +
                  fmt(expect) + " +-0.05, embedding " + std::to_string(plan.dims()[0]) + "x" +
                  std::to_string(plan.dims()[1]) + "x" + std::to_string(plan.dims()[2]) + ", " +
                  fmt(secs, 3) + " s for " + std::to_string(fields) + " fields (limit 120 s)"};
}

// 6 -----------------------------------------------------------------------
Verdict conservation() {
  const RunConfig c = desk("sigma2 = [1.0]");
  const GridSpec g = c.grid();
  const auto plan = plan_embedding(c.covariance(1.0), g);
  const auto norm = NormalizationSpec::from(1.0, g, c.bc);
  double worst_fvm = 0.0, worst_sa = 0.0, sum_sa = 0.0;
  const int n = 10;
  for (int r = 0; r < n; ++r) {
    const std::uint64_t seed = realization_seed(606, 0, r);
    const auto T = transmissibilities(realization_permeability(plan, seed));
    const auto fvm = solve_linear(assemble(T, c.bc), c.fvm_rel_tol);
    worst_fvm = std::max(worst_fvm, extract(fvm, T, norm).conservation_dev);
    const auto sa = checked_anneal(T, c.bc, c.anneal.for_variance(1.0), derive_seed(seed, {1}));
    const double d = extract(sa.pressure, T, norm).conservation_dev;
    worst_sa = std::max(worst_sa, d);
    sum_sa += d;
  }
  return {worst_fvm <= 1e-8 && worst_sa <= 1e-3,
          "std/mean of Q_y(j): FVM worst " + fmt(worst_fvm, 3) + " (limit 1e-8), SA at eps2=1e-2 worst " +
              fmt(worst_sa, 3) + ", mean " + fmt(sum_sa / n, 3) + " (limit 1e-3), desk grid sigma2=1, " +
              std::to_string(n) + " realizations"};
}

// Ensemble shared by 7 and 9.
const RunResult& desk_ensemble() {
  static const RunResult r = run_ensemble(desk("sigma2 = [0.5]\nN = 500\nsolver = fvm\nseed = 707\n"));
  return r;
}

// 7 -----------------------------------------------------------------------
Verdict symmetry() {
  const auto& t = desk_ensemble().fvm.at(0);
  const Moments m = t.moments(Observable::p_center);
  const double se = std::sqrt(m.variance() / m.count);
  const double z = (m.mean - 0.5) / se;
  return {std::abs(z) <= 3.0, "mean p(center) = " + fmt(m.mean, 6) + ", SE " + fmt(se, 3) + ", |z| = " +
                                  fmt(std::abs(z), 3) + " (limit 3), N = " + std::to_string(m.count)};
}

// 8 -----------------------------------------------------------------------
Verdict fit_recovery() {
  const int n = 10000;
  std::mt19937_64 rng(808);
  std::vector<double> ln(n), gauss(n), lap(n);
  std::lognormal_distribution<double> dl(0.3, 0.5);
  std::normal_distribution<double> dn(0.0, 1.0);
  std::exponential_distribution<double> de(1.0);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < n; ++i) {
    ln[i] = dl(rng);
    gauss[i] = dn(rng);
    lap[i] = (coin(rng) ? 1 : -1) * de(rng);
  }
  const auto fl = fit_lognormal(ln);
  const double zmu = (fl.mu - 0.3) / (0.5 / std::sqrt(n));
  const double zsig = (fl.sigma - 0.5) / (0.5 / std::sqrt(2.0 * n));
  const double k2 = fit_exp_power(gauss).k;
  const double k1 = fit_exp_power(lap).k;
  const bool ok = std::abs(zmu) <= 3 && std::abs(zsig) <= 3 && std::abs(k2 - 2) <= 0.15 && std::abs(k1 - 1) <= 0.1;
  return {ok, "lognormal mu' z = " + fmt(zmu, 3) + ", sigma' z = " + fmt(zsig, 3) + " (limit 3), k on Gaussian " +
                  fmt(k2) + " (2 +-0.15), k on Laplace " + fmt(k1) + " (1 +-0.1)"};
}

// 9 -----------------------------------------------------------------------
Verdict ks_machinery() {
  const auto& t = desk_ensemble().fvm.at(0);
  const FitResult f = fit_and_test(t.values(Observable::p_08y), Family::lognormal);
  // Self-consistency: samples drawn from the fitted law itself.
  std::mt19937_64 rng(909);
  std::lognormal_distribution<double> d(f.mu, f.sigma);
  const int reps = 500, n = 10000;
  int pass = 0;
  std::vector<double> v(n);
  for (int r = 0; r < reps; ++r) {
    for (auto& x : v) x = d(rng);
    pass += ks_test(v, f).pass;
  }
  const double rate = static_cast<double>(pass) / reps;
  const bool ok = rate >= 0.92 && rate <= 0.98 && f.ks_pass;
  return {ok, "self-consistency pass rate " + fmt(100 * rate, 3) + "% over " + std::to_string(reps) +
                  " reps (92-98%), p(0.5X,0.8Y,0.5Z) lognormal D+ = " + fmt(f.ks_stat, 3) + " vs critical " +
                  fmt(f.ks_crit, 3) + (f.ks_pass ? " pass" : " reject") + ", N = " + std::to_string(t.size())};
}

// 10 ----------------------------------------------------------------------
Verdict qx_trend() {
  const RunResult r = run_ensemble(desk("sigma2 = [0.125, 0.5, 2.5]\nN = 2000\nsolver = fvm\nseed = 1010\n"));
  std::vector<double> k;
  std::string detail = "k(q_x*)";
  for (const auto& t : r.fvm) {
    const FitResult f = fit_exp_power(t.values(Observable::qx_star));
    k.push_back(f.k);
    detail += " sigma2=" + fmt(t.sigma2()) + ": " + fmt(f.k);
  }
  const bool ok = k[0] >= k[1] && k[1] >= k[2];
  return {ok, detail + " (non-increasing required), N = 2000 per variance"};
}

// 11 ----------------------------------------------------------------------
Verdict cost_scaling() {
  const RunConfig base = desk("sigma2 = [0.5]");
  auto mean_time = [&](int n) {
    const GridSpec g(n, n, n, 40, 85, 25);
    const auto plan = plan_embedding(base.covariance(0.5), g);
    double total = 0.0;
    const int reps = 3;
    for (int r = 0; r < reps; ++r) {
      const std::uint64_t seed = realization_seed(1111, 0, r);
      const auto T = transmissibilities(realization_permeability(plan, seed));
      const auto t0 = clock_type::now();
      checked_anneal(T, base.bc, base.anneal.for_variance(0.5), derive_seed(seed, {1}));
      total += since(t0);
    }
    return total / reps;
  };
  const double t8 = mean_time(8), t16 = mean_time(16);
  const double ratio = t16 / t8;
  const double predicted = flop_report(GridSpec(16, 16, 16, 1, 1, 1)).anneal / flop_report(GridSpec(8, 8, 8, 1, 1, 1)).anneal;
  return {ratio >= predicted / 2 && ratio <= predicted * 2,
          "SA wall clock 8^3 " + fmt(t8, 3) + " s, 16^3 " + fmt(t16, 3) + " s, ratio " + fmt(ratio, 3) +
              " vs predicted x" + fmt(predicted, 3) + " (accepted " + fmt(predicted / 2, 3) + "-" +
              fmt(predicted * 2, 3) + ")"};
}

// 12 ----------------------------------------------------------------------
Verdict reproducibility() {
  const fs::path root = fs::temp_directory_path() / "darcysa_acceptance_repro";
  fs::remove_all(root);
  auto bytes = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  std::string samples[2];
  const int workers[2] = {1, 8};
  for (int i = 0; i < 2; ++i) {
    RunConfig c = desk("N = 4\nseed = 1212\n");
    c.workers = workers[i];
    c.output_dir = (root / ("w" + std::to_string(workers[i]))).string();
    run(c);
    samples[i] = bytes(fs::path(c.output_dir) / "samples.csv");
  }
  fs::remove_all(root);
  const bool ok = !samples[0].empty() && samples[0] == samples[1];
  return {ok, "samples.csv at 1 and 8 workers: " + std::string(ok ? "byte-identical" : "DIFFER") + ", " +
                  std::to_string(samples[0].size()) + " bytes (desk profile, SA, N = 4 per variance)"};
}

}  // namespace

int main() {
  std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, oracle_equivalence}, {2, hand_fixture}, {3, or_invariance}, {5, field_fidelity},
      {6, conservation},       {7, symmetry},     {8, fit_recovery},  {9, ks_machinery},
      {10, qx_trend},          {11, cost_scaling}, {12, reproducibility},
  };
  const char* names[] = {"",
                         "oracle equivalence",
                         "hand-solved fixture",
                         "over-relaxation invariance",
                         "greedy monotonicity",
                         "random-field fidelity",
                         "conservation",
                         "ensemble pressure symmetry",
                         "fit recovery",
                         "KS machinery",
                         "q_x* tail trend",
                         "cost scaling",
                         "reproducibility"};
  std::vector<std::pair<int, Verdict>> results;
  auto report = [&](int id, const Verdict& v, double secs) {
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << names[id] << ": "
              << v.detail << "  [" << fmt(secs, 3) << " s]" << std::endl;
    results.emplace_back(id, v);
  };
  for (auto& [id, f] : criteria) {
    const auto t0 = clock_type::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    report(id, v, since(t0));
    // Criterion 4 is asserted on every annealing run made so far; report it
    // once the runs that feed it are done.
    if (id == 11) {
      report(4, {greedy_runs_checked > 0 && greedy_runs_violating == 0,
                 std::to_string(greedy_runs_checked) + " annealing traces checked, " +
                     std::to_string(greedy_runs_violating) + " with a greedy-phase action increase; final recomputed S"
                     " exceeds the running sum by at most " + fmt(worst_final_excess, 3) + " relative"},
             0.0);
    }
  }
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  int failed = 0;
  for (const auto& [id, v] : results) failed += !v.pass;
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << results.size() - failed << "/" << results.size()
            << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
