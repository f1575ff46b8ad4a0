#pragma once

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <array>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "darcysa/darcy.hpp"

namespace darcysa {

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Observables

/// K_e = exp(sigma^2/2) (mean of a mean-zero lognormal), I_0 = dp/ly,
/// A = lx*lz.
struct NormalizationSpec {
  double k_e = 1.0;
  double i0 = 1.0;
  double area = 1.0;

  static NormalizationSpec from(double sigma2, const GridSpec& g, const BoundaryConditions& bc) {
    return {std::exp(0.5 * sigma2), bc.delta_p() / g.ly(), g.lx() * g.lz()};
  }
};

enum class Observable { p_center, p_08y, qx_star, qy_star, Qy_star };

inline constexpr std::array<Observable, 5> all_observables{
    Observable::p_center, Observable::p_08y, Observable::qx_star, Observable::qy_star,
    Observable::Qy_star};

inline const char* to_string(Observable o) {
  switch (o) {
    case Observable::p_center: return "p_center";
    case Observable::p_08y: return "p_08Y";
    case Observable::qx_star: return "qx_star";
    case Observable::qy_star: return "qy_star";
    case Observable::Qy_star: return "Qy_star";
  }
  return "?";
}

inline Observable observable_from_string(const std::string& s) {
  for (auto o : all_observables)
    if (s == to_string(o)) return o;
  throw StatsError("unknown observable '" + s + "'");
}

struct ObservableSample {
  std::int64_t realization_id = 0;
  double sigma2 = 0.0;
  double p_center = 0.0;
  double p_08y = 0.0;
  double qx_star = 0.0;
  double qy_star = 0.0;
  double Qy_star = 0.0;
  double conservation_dev = 0.0;

  double get(Observable o) const {
    switch (o) {
      case Observable::p_center: return p_center;
      case Observable::p_08y: return p_08y;
      case Observable::qx_star: return qx_star;
      case Observable::qy_star: return qy_star;
      case Observable::Qy_star: return Qy_star;
    }
    return 0.0;
  }
};

inline const std::array<double, 3> center_point{0.5, 0.5, 0.5};
inline const std::array<double, 3> point_08y{0.5, 0.8, 0.5};

/// Point pressures at (0.5X,0.5Y,0.5Z) and (0.5X,0.8Y,0.5Z), normalised
/// centre velocities q* = q/(K_e I_0), and the normalised total flow
/// Q_y* = mean_j Q_y(j) / (K_e I_0 A) with its relative spread over layers.
inline ObservableSample extract(const PressureState& p, const Transmissibilities& T,
                                const NormalizationSpec& norm, double sigma2 = 0.0,
                                std::int64_t realization_id = 0) {
  const GridSpec& g = p.grid;
  const FaceFluxes flux = face_flux(p, T);
  const CellIndex c = locate(center_point, g);
  const auto q = cell_velocity(flux, c);

  const std::vector<double> layers = flux.y_layer_totals();
  const double n = static_cast<double>(layers.size());
  const double mean = std::accumulate(layers.begin(), layers.end(), 0.0) / n;
  double var = 0.0;
  for (double v : layers) var += (v - mean) * (v - mean);
  var /= n;

  ObservableSample s;
  s.realization_id = realization_id;
  s.sigma2 = sigma2;
  s.p_center = p.at(c);
  s.p_08y = p.at(locate(point_08y, g));
  s.qx_star = q[0] / (norm.k_e * norm.i0);
  s.qy_star = q[1] / (norm.k_e * norm.i0);
  s.Qy_star = mean / (norm.k_e * norm.i0 * norm.area);
  s.conservation_dev = mean != 0.0 ? std::sqrt(var) / std::abs(mean) : std::sqrt(var);
  return s;
}

// ---------------------------------------------------------------------------
// Histograms

struct HistogramBin {
  double left;
  double right;
  double density;
};

struct Histogram {
  std::vector<HistogramBin> bins;
  bool degenerate = false;  // all samples identical
};

/// Quantile with linear interpolation between order statistics.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw StatsError("quantile of an empty sample");
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Freedman-Diaconis bin count, ceil(range / (2 IQR n^{-1/3})); Sturges
/// when the IQR vanishes.
inline std::size_t freedman_diaconis_bins(const std::vector<double>& sorted) {
  const double range = sorted.back() - sorted.front();
  if (range == 0.0) return 1;
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  const double n = static_cast<double>(sorted.size());
  if (iqr <= 0.0) return static_cast<std::size_t>(std::ceil(std::log2(n)) + 1.0);
  const double h = 2.0 * iqr * std::pow(n, -1.0 / 3.0);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(range / h)));
}

/// Density-normalised histogram; `bins` = 0 selects Freedman-Diaconis.
inline Histogram histogram(std::vector<double> samples, std::size_t bins = 0) {
  if (samples.size() < 2) throw StatsError("histogram needs at least 2 samples");
  std::sort(samples.begin(), samples.end());
  const double lo = samples.front(), hi = samples.back();
  const double n = static_cast<double>(samples.size());
  Histogram h;
  if (lo == hi) {
    h.degenerate = true;
    h.bins.push_back({lo, hi, std::numeric_limits<double>::infinity()});
    return h;
  }
  if (bins == 0) bins = freedman_diaconis_bins(samples);
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : samples) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    counts[std::min(b, bins - 1)]++;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    const double left = lo + width * static_cast<double>(b);
    const double right = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
    h.bins.push_back({left, right, static_cast<double>(counts[b]) / (n * width)});
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parametric fits

enum class Family { lognormal, exp_power };

inline const char* to_string(Family f) {
  return f == Family::lognormal ? "lognormal" : "exp_power";
}

inline Family family_from_string(const std::string& s) {
  if (s == "lognormal") return Family::lognormal;
  if (s == "exp_power") return Family::exp_power;
  throw StatsError("unknown family '" + s + "'");
}

/// Lognormal (mu', sigma' on log x) or exponential power
///   g(x) = exp(-(|x-mu''|/sigma'')^k) / (2 sigma'' Gamma(1+1/k)).
struct FitResult {
  Family family = Family::lognormal;
  double mu = 0.0;
  double sigma = 1.0;
  double k = 2.0;  // exponential power only
  double loglik = 0.0;
  bool degenerate = false;
  double ks_stat = std::numeric_limits<double>::quiet_NaN();
  double ks_crit = std::numeric_limits<double>::quiet_NaN();
  bool ks_pass = false;

  double pdf(double x) const {
    if (family == Family::lognormal) {
      if (x <= 0.0) return 0.0;
      const double z = (std::log(x) - mu) / sigma;
      return std::exp(-0.5 * z * z) / (x * std::sqrt(2.0 * M_PI) * sigma);
    }
    const double z = std::abs(x - mu) / sigma;
    return std::exp(-std::pow(z, k)) / (2.0 * sigma * std::tgamma(1.0 + 1.0 / k));
  }

  double cdf(double x) const {
    if (family == Family::lognormal) {
      if (x <= 0.0) return 0.0;
      if (sigma == 0.0) return std::log(x) >= mu ? 1.0 : 0.0;
      return 0.5 * std::erfc(-(std::log(x) - mu) / (sigma * M_SQRT2));
    }
    const double z = (x - mu) / sigma;
    const double half = 0.5 * boost::math::gamma_p(1.0 / k, std::pow(std::abs(z), k));
    return z >= 0.0 ? 0.5 + half : 0.5 - half;
  }
};

/// Maximum-likelihood lognormal fit: mu' = mean(log x), sigma' = population
/// std of log x.
inline FitResult fit_lognormal(const std::vector<double>& samples) {
  if (samples.empty()) throw StatsError("lognormal fit of an empty sample");
  const double n = static_cast<double>(samples.size());
  double sum = 0.0;
  for (double x : samples) {
    if (!(x > 0.0)) {
      std::ostringstream os;
      os << "lognormal fit requires positive samples; got " << x;
      throw StatsError(os.str());
    }
    sum += std::log(x);
  }
  const double mu = sum / n;
  double ss = 0.0, sumlog = 0.0;
  for (double x : samples) {
    const double d = std::log(x) - mu;
    ss += d * d;
    sumlog += std::log(x);
  }
  FitResult f;
  f.family = Family::lognormal;
  f.mu = mu;
  f.sigma = std::sqrt(ss / n);
  f.degenerate = f.sigma == 0.0;
  f.loglik = f.degenerate ? std::numeric_limits<double>::infinity()
                          : -sumlog - n * std::log(std::sqrt(2.0 * M_PI) * f.sigma) - 0.5 * n;
  return f;
}

namespace detail {

struct ExpPowerData {
  const std::vector<double>* x;
  double center;  // location offset
  double scale;   // location scale
};

// Profile likelihood: for fixed (mu, k) the MLE of sigma is
// ((k/n) sum |x-mu|^k)^{1/k}.
inline double exp_power_profile(double mu, double k, const std::vector<double>& x, double* sigma_out) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += std::pow(std::abs(v - mu), k);
  const double sigma = std::pow(k * s / n, 1.0 / k);
  if (sigma_out) *sigma_out = sigma;
  if (!(sigma > 0.0) || !std::isfinite(sigma)) return -std::numeric_limits<double>::infinity();
  return -n * (std::log(2.0 * sigma * std::tgamma(1.0 + 1.0 / k)) + 1.0 / k);
}

inline double exp_power_objective(const gsl_vector* v, void* params) {
  const auto* d = static_cast<const ExpPowerData*>(params);
  const double mu = d->center + d->scale * gsl_vector_get(v, 0);
  const double log_k = gsl_vector_get(v, 1);
  if (log_k < std::log(0.05) || log_k > std::log(50.0)) return std::numeric_limits<double>::max();
  const double ll = exp_power_profile(mu, std::exp(log_k), *d->x, nullptr);
  return std::isfinite(ll) ? -ll : std::numeric_limits<double>::max();
}

}  // namespace detail

/// Numerical exponential-power MLE by Nelder-Mead over (mu, log k) with
/// sigma profiled out. Location is optimised in units of the sample
/// standard deviation about the median, so the fit is scale-equivariant.
inline FitResult fit_exp_power(const std::vector<double>& samples, int max_iterations = 2000) {
  if (samples.size() < 10) throw StatsError("exponential power fit needs at least 10 samples");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double median = quantile_sorted(sorted, 0.5);
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) throw StatsError("exponential power fit of a constant sample");

  detail::ExpPowerData data{&samples, median, sd};
  gsl_multimin_function fn{&detail::exp_power_objective, 2, &data};
  gsl_vector* x0 = gsl_vector_alloc(2);
  gsl_vector* step = gsl_vector_alloc(2);
  gsl_vector_set(x0, 0, (mean - median) / sd);
  gsl_vector_set(x0, 1, std::log(2.0));
  gsl_vector_set(step, 0, 0.2);
  gsl_vector_set(step, 1, 0.3);
  gsl_multimin_fminimizer* m = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 2);
  gsl_multimin_fminimizer_set(m, &fn, x0, step);
  int status = GSL_CONTINUE;
  int iter = 0;
  while (status == GSL_CONTINUE && iter < max_iterations) {
    ++iter;
    if (gsl_multimin_fminimizer_iterate(m) != GSL_SUCCESS) break;
    // |x|^k cusps at each sample stop the simplex shrinking much below 1e-8
    status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(m), 1e-7);
  }
  const double u = gsl_vector_get(m->x, 0);
  const double log_k = gsl_vector_get(m->x, 1);
  gsl_multimin_fminimizer_free(m);
  gsl_vector_free(x0);
  gsl_vector_free(step);

  FitResult f;
  f.family = Family::exp_power;
  f.mu = median + sd * u;
  f.k = std::exp(log_k);
  f.loglik = detail::exp_power_profile(f.mu, f.k, samples, &f.sigma);
  if (status != GSL_SUCCESS) {
    std::ostringstream os;
    os << "exponential power fit did not converge after " << iter << " iterations (mu=" << f.mu
       << ", sigma=" << f.sigma << ", k=" << f.k << ")";
    throw StatsError(os.str());
  }
  return f;
}

// ---------------------------------------------------------------------------
// One-sided Kolmogorov-Smirnov test

struct KsResult {
  double statistic;  // D+ = sup (ECDF - CDF)
  double critical;   // sqrt(ln(1/alpha)/2) / sqrt(n)
  bool pass;
};

/// Asymptotic one-sided critical coefficient: P(sqrt(n) D+ > c) = exp(-2c^2).
inline double ks_one_sided_coefficient(double alpha = 0.05) {
  return std::sqrt(std::log(1.0 / alpha) / 2.0);
}

template <class Cdf>
  requires std::is_invocable_r_v<double, Cdf, double>
inline KsResult ks_test(std::vector<double> samples, Cdf&& cdf, double alpha = 0.05) {
  if (samples.empty()) throw StatsError("KS test of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    d = std::max(d, static_cast<double>(i + 1) / n - cdf(samples[i]));
  const double crit = ks_one_sided_coefficient(alpha) / std::sqrt(n);
  return {d, crit, d <= crit};
}

inline KsResult ks_test(const std::vector<double>& samples, const FitResult& fit,
                        double alpha = 0.05) {
  return ks_test(samples, [&](double x) { return fit.cdf(x); }, alpha);
}

/// Fits `family` and attaches the KS outcome.
inline FitResult fit_and_test(const std::vector<double>& samples, Family family) {
  FitResult f = family == Family::lognormal ? fit_lognormal(samples) : fit_exp_power(samples);
  const KsResult ks = ks_test(samples, f);
  f.ks_stat = ks.statistic;
  f.ks_crit = ks.critical;
  f.ks_pass = ks.pass;
  return f;
}

/// Families fitted per observable: lognormal for the bounded pressures and
/// the main-direction flows, exponential power for the transverse flow.
inline Family default_family(Observable o) {
  return o == Observable::qx_star ? Family::exp_power : Family::lognormal;
}

// ---------------------------------------------------------------------------
// Ensemble accumulation

/// Streaming count/mean/M2 with Chan's pairwise merge.
struct Moments {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.count == 0) return;
    if (count == 0) { *this = o; return; }
    const double na = static_cast<double>(count), nb = static_cast<double>(o.count);
    const double d = o.mean - mean;
    mean += d * nb / (na + nb);
    m2 += o.m2 + d * d * na * nb / (na + nb);
    count += o.count;
  }
  /// Unbiased sample variance.
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
};

/// Ensemble of samples for one (sigma^2, grid) parameter set. Raw samples
/// are retained; statistics computed from them are taken in
/// realization-id order and so do not depend on arrival order.
class EnsembleTable {
 public:
  EnsembleTable(double sigma2, const GridSpec& g) : sigma2_(sigma2), grid_(g) {}

  double sigma2() const { return sigma2_; }
  const GridSpec& grid() const { return grid_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  void add(const ObservableSample& s) {
    if (s.sigma2 != sigma2_) throw StatsError("sample sigma^2 does not match the ensemble");
    samples_.push_back(s);
    sorted_ = false;
    for (std::size_t o = 0; o < all_observables.size(); ++o)
      running_[o].add(s.get(all_observables[o]));
  }

  void merge(const EnsembleTable& other) {
    if (other.sigma2_ != sigma2_ || !(other.grid_ == grid_))
      throw StatsError("cannot merge ensembles from different parameter sets");
    samples_.insert(samples_.end(), other.samples_.begin(), other.samples_.end());
    sorted_ = false;
    for (std::size_t o = 0; o < running_.size(); ++o) running_[o].merge(other.running_[o]);
  }

  const Moments& running(Observable o) const { return running_[static_cast<std::size_t>(o)]; }

  const std::vector<ObservableSample>& samples() const {
    if (!sorted_) {
      std::stable_sort(samples_.begin(), samples_.end(),
                       [](const auto& a, const auto& b) { return a.realization_id < b.realization_id; });
      sorted_ = true;
    }
    return samples_;
  }

  std::vector<double> values(Observable o) const {
    std::vector<double> v;
    v.reserve(samples_.size());
    for (const auto& s : samples()) v.push_back(s.get(o));
    return v;
  }

  /// Order-independent moments computed from the id-sorted samples.
  Moments moments(Observable o) const {
    Moments m;
    for (const auto& s : samples()) m.add(s.get(o));
    return m;
  }

 private:
  double sigma2_;
  GridSpec grid_;
  mutable std::vector<ObservableSample> samples_;
  mutable bool sorted_ = true;
  std::array<Moments, all_observables.size()> running_{};
};

struct ObservableFit {
  Observable observable;
  std::optional<FitResult> fit;  // empty when the fit could not be made
  std::string error;
};

/// Fits every observable with its default family. Fits that cannot be made
/// (too few samples, nonpositive values for a lognormal) are reported with
/// their error instead of aborting the ensemble.
inline std::vector<ObservableFit> fit_ensemble(const EnsembleTable& t) {
  std::vector<ObservableFit> out;
  if (t.empty()) return out;
  for (auto o : all_observables) {
    ObservableFit of{o, std::nullopt, {}};
    try {
      of.fit = fit_and_test(t.values(o), default_family(o));
    } catch (const StatsError& e) {
      of.error = e.what();
    }
    out.push_back(std::move(of));
  }
  return out;
}

}  // namespace darcysa
