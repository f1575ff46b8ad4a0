// darcysa: ensemble runner for annealed Darcy flow in lognormal media.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "darcysa/runner.hpp"

namespace fs = std::filesystem;
using namespace darcysa;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 1;
constexpr int exit_convergence = 2;
constexpr int exit_io = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
  std::optional<std::string> solver;
  std::string profile = "paper";
};

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig load_config(const std::string& path, const Overrides& ov) {
  const std::string text = path.empty() ? std::string{} : slurp(path);
  RunConfig c = parse_config(text, profile_from_string(ov.profile));
  if (ov.seed) c.seed = *ov.seed;
  if (ov.workers) c.workers = *ov.workers;
  if (ov.out) c.output_dir = *ov.out;
  if (ov.solver) c.solver = solver_from_string(*ov.solver);
  c.validate();
  return c;
}

void add_overrides(CLI::App* cmd, Overrides& ov, bool with_solver) {
  cmd->add_option("--seed", ov.seed, "master seed");
  cmd->add_option("--workers", ov.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", ov.out, "output directory");
  if (with_solver)
    cmd->add_option("--solver", ov.solver, "anneal, fvm or both")
        ->check(CLI::IsMember({"anneal", "fvm", "both"}));
  cmd->add_option("--profile", ov.profile, "base preset applied before the config file")
      ->check(CLI::IsMember({"desk", "paper"}));
}

int cmd_run(const std::string& config_path, const Overrides& ov) {
  const RunConfig cfg = load_config(config_path, ov);
  std::cerr << "grid " << cfg.nx << "x" << cfg.ny << "x" << cfg.nz << ", " << cfg.sigma2.size()
            << " variance(s) x " << cfg.realizations << " realizations, solver "
            << to_string(cfg.solver) << ", " << cfg.workers << " worker(s)\n";
  const RunManifest m = run(cfg, &std::cerr);
  flop_report(cfg).print(std::cout);
  std::cout << "wall clock       " << m.wall_seconds << " s\n"
            << "failures         " << m.failures() << " of " << m.outcomes.size() << '\n'
            << "outputs in       " << cfg.output_dir << '\n';
  if (m.budget_exceeded()) {
    std::cerr << "failure fraction " << m.failure_fraction() << " exceeds budget "
              << cfg.failure_budget << '\n';
    return exit_convergence;
  }
  return exit_ok;
}

int cmd_fields(const std::string& config_path, const Overrides& ov) {
  const RunConfig cfg = load_config(config_path, ov);
  const GridSpec g = cfg.grid();
  const fs::path dir = fs::path(cfg.output_dir) / "fields";
  fs::create_directories(dir);
  for (std::size_t s = 0; s < cfg.sigma2.size(); ++s) {
    const EmbeddingPlan plan = plan_embedding(cfg.covariance(cfg.sigma2[s]), g, cfg.max_embedding_steps);
    for (long r = 0; r < cfg.realizations; ++r) {
      const std::uint64_t seed = realization_seed(cfg.seed, s, r);
      const fs::path p = dir / ("field_" + std::to_string(s) + "_" + std::to_string(r) + ".csv");
      std::ofstream os(p);
      if (!os) throw IoError("cannot open " + p.string());
      write_field_csv(os, realization_permeability(plan, seed), seed);
      if (!os) throw IoError("failed while writing " + p.string());
    }
  }
  std::cout << cfg.sigma2.size() * static_cast<std::size_t>(cfg.realizations)
            << " permeability fields written to " << dir.string() << '\n';
  return exit_ok;
}

int cmd_fit(const std::string& samples_path, const std::string& out, std::size_t bins) {
  std::ifstream is(samples_path);
  if (!is) throw IoError("cannot read " + samples_path);
  const auto tables = tables_from_samples(read_samples_csv(is));
  const fs::path dir = out.empty() ? fs::path(samples_path).parent_path() : fs::path(out);
  if (!dir.empty()) fs::create_directories(dir);
  const auto fits = fit_tables(tables);
  {
    std::ofstream os(dir / "fits.csv");
    write_fits_csv(os, fits);
    if (!os) throw IoError("failed while writing fits.csv");
  }
  {
    std::ofstream os(dir / "histograms.csv");
    write_histograms_csv(os, tables, bins);
    if (!os) throw IoError("failed while writing histograms.csv");
  }
  for (const auto& e : fits)
    for (const auto& of : e.fits) {
      std::cout << "sigma2=" << e.sigma2 << ' ' << to_string(of.observable) << ' ';
      if (!of.fit) {
        std::cout << "no fit: " << of.error << '\n';
        continue;
      }
      const FitResult& f = *of.fit;
      std::cout << to_string(f.family) << " mu=" << f.mu << " sigma=" << f.sigma;
      if (f.family == Family::exp_power) std::cout << " k=" << f.k;
      std::cout << " D+=" << f.ks_stat << (f.ks_pass ? " pass" : " FAIL") << '\n';
    }
  return exit_ok;
}

int cmd_report(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot read " + manifest_path);
  const auto kv = read_manifest(is);
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    return it == kv.end() ? std::string("?") : it->second;
  };
  double gen = 0, fvm = 0, sa = 0, worst = -1;
  long n_gen = 0, n_fvm = 0, n_sa = 0, n_oracle = 0;
  std::vector<std::string> failures;
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  for (const auto& [k, v] : kv) {
    if (k.rfind("timing.", 0) == 0) {
      const double t = std::stod(v);
      if (ends_with(k, ".generate")) gen += t, ++n_gen;
      else if (ends_with(k, ".fvm")) fvm += t, ++n_fvm;
      else if (ends_with(k, ".anneal")) sa += t, ++n_sa;
    } else if (k.rfind("oracle.", 0) == 0) {
      worst = std::max(worst, std::stod(v));
      ++n_oracle;
    } else if (k.rfind("failure.", 0) == 0) {
      failures.push_back(k.substr(8) + ": " + v);
    }
  }
  std::cout << "version          " << get("version") << '\n'
            << "grid             " << get("config.grid.nx") << "x" << get("config.grid.ny") << "x"
            << get("config.grid.nz") << '\n'
            << "sigma2           " << get("config.sigma2") << '\n'
            << "solver           " << get("config.solver") << '\n'
            << "realizations     " << get("realizations") << '\n'
            << "failures         " << get("failures") << '\n'
            << "wall clock       " << get("wall_seconds") << " s\n"
            << "predicted flops  fft " << get("flops.fft") << ", fvm " << get("flops.fvm")
            << ", anneal " << get("flops.anneal") << '\n';
  if (n_gen) std::cout << "mean generate    " << gen / n_gen << " s\n";
  if (n_fvm) std::cout << "mean fvm solve   " << fvm / n_fvm << " s\n";
  if (n_sa) std::cout << "mean anneal      " << sa / n_sa << " s\n";
  if (n_oracle) std::cout << "max |p_SA-p_FVM| " << worst << " over " << n_oracle << " realizations\n";
  for (const auto& f : failures) std::cout << "failed " << f << '\n';
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Darcy flow in lognormal permeability fields by simulated annealing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DARCYSA_VERSION);

  Overrides run_ov, fields_ov;
  std::string run_config, fields_config, samples_path, fit_out, manifest_path;
  std::size_t bins = 0;

  auto* run_cmd = app.add_subcommand("run", "run an ensemble and write samples, fits, histograms, manifest");
  run_cmd->add_option("config", run_config, "config file (omit for profile defaults)");
  add_overrides(run_cmd, run_ov, true);

  auto* fields_cmd = app.add_subcommand("fields", "dump permeability realizations only");
  fields_cmd->add_option("config", fields_config, "config file (omit for profile defaults)");
  add_overrides(fields_cmd, fields_ov, false);

  auto* fit_cmd = app.add_subcommand("fit", "re-fit an existing samples.csv");
  fit_cmd->add_option("samples", samples_path, "samples.csv")->required();
  fit_cmd->add_option("--out", fit_out, "output directory (default: next to samples)");
  fit_cmd->add_option("--bins", bins, "histogram bins (0 = Freedman-Diaconis)");

  auto* report_cmd = app.add_subcommand("report", "summarize a run manifest");
  report_cmd->add_option("manifest", manifest_path, "manifest.txt")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_ok : exit_config;
  }

  try {
    if (*run_cmd) return cmd_run(run_config, run_ov);
    if (*fields_cmd) return cmd_fields(fields_config, fields_ov);
    if (*fit_cmd) return cmd_fit(samples_path, fit_out, bins);
    if (*report_cmd) return cmd_report(manifest_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const EmbeddingError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return exit_io;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return exit_io;
  } catch (const StatsError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_io;
  }
  return exit_ok;
}
