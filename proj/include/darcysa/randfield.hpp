#pragma once

#include <fftw3.h>

#include <boost/random/normal_distribution.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "darcysa/grid.hpp"
#include "darcysa/rng.hpp"

namespace darcysa {

enum class KernelModel { exponential, gaussian };

inline const char* to_string(KernelModel m) {
  return m == KernelModel::exponential ? "exponential" : "gaussian";
}

/// Stationary covariance of the log-permeability. With r the
/// anisotropically scaled lag sqrt(sum (h_a/lambda_a)^2):
///   exponential: C = variance * exp(-r)
///   gaussian:    C = variance * exp(-r^2)
struct CovarianceSpec {
  double variance = 1.0;
  std::array<double, 3> corr_len{8.0, 8.0, 5.0};
  KernelModel model = KernelModel::exponential;

  void validate() const {
    if (!(variance >= 0.0) || !std::isfinite(variance))
      throw DomainError("variance must be >= 0");
    for (double l : corr_len)
      if (!(l > 0.0) || !std::isfinite(l)) throw DomainError("correlation lengths must be > 0");
  }

  double operator()(double hx, double hy, double hz) const {
    const double a = hx / corr_len[0], b = hy / corr_len[1], c = hz / corr_len[2];
    const double r2 = a * a + b * b + c * c;
    return model == KernelModel::exponential ? variance * std::exp(-std::sqrt(r2))
                                             : variance * std::exp(-r2);
  }
};

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Plan creation and destruction in FFTW are not thread-safe; execution on
// distinct arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct ComplexBuffer {
  fftw_complex* data = nullptr;
  std::size_t size = 0;
  explicit ComplexBuffer(std::size_t n)
      : data(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))), size(n) {
    if (!data) throw std::bad_alloc();
  }
  ~ComplexBuffer() { fftw_free(data); }
  ComplexBuffer(const ComplexBuffer&) = delete;
  ComplexBuffer& operator=(const ComplexBuffer&) = delete;
};

class FftPlan {
 public:
  FftPlan(const std::array<int, 3>& dims, int sign) {
    ComplexBuffer scratch(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
    std::lock_guard lock(fftw_planner_mutex());
    // Row-major dims (slowest first): z, y, x.
    plan_ = fftw_plan_dft_3d(dims[2], dims[1], dims[0], scratch.data, scratch.data, sign,
                             FFTW_ESTIMATE);
    if (!plan_) throw EmbeddingError("FFTW failed to create a plan");
  }
  ~FftPlan() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  /// In-place transform; the buffer must come from fftw_malloc.
  void execute(ComplexBuffer& buf) const { fftw_execute_dft(plan_, buf.data, buf.data); }

 private:
  fftw_plan plan_ = nullptr;
};

// Next size in 1, 2, 3, 4, 6, 8, 12, 16, 24, ...
inline int next_smooth_size(int m) {
  int p = 1;
  while (p * 2 <= m) p <<= 1;
  return m == p ? (p == 1 ? 2 : p + p / 2) : 2 * p;
}

inline int next_pow2(int v) {
  int p = 1;
  while (p < v) p <<= 1;
  return p;
}

}  // namespace detail

/// Periodic (block-circulant) embedding of the lattice covariance together
/// with its FFT spectrum. Immutable once built and safe to share between
/// threads.
class EmbeddingPlan {
 public:
  const GridSpec& grid() const { return grid_; }
  const CovarianceSpec& covariance() const { return cov_; }
  const std::array<int, 3>& dims() const { return dims_; }
  std::size_t embedding_size() const {
    return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  }
  /// Eigenvalues of the circulant covariance, before clamping.
  const std::vector<double>& eigenvalues() const { return eigenvalues_; }
  double min_eigenvalue() const { return min_eigenvalue_; }
  bool valid() const { return valid_; }
  /// Growth steps taken beyond the minimal embedding.
  int growth_steps() const { return growth_steps_; }

 private:
  friend EmbeddingPlan plan_embedding(const CovarianceSpec&, const GridSpec&, int);
  friend ScalarField sample_log_field(const EmbeddingPlan&, std::uint64_t);
  friend std::pair<ScalarField, ScalarField> sample_log_field_pair(const EmbeddingPlan&, std::uint64_t);

  EmbeddingPlan(const GridSpec& g, const CovarianceSpec& c) : grid_(g), cov_(c) {}

  GridSpec grid_;
  CovarianceSpec cov_;
  std::array<int, 3> dims_{};
  std::vector<double> eigenvalues_;
  std::vector<double> amplitude_;  // sqrt(max(lambda,0) / M)
  double min_eigenvalue_ = 0.0;
  bool valid_ = false;
  int growth_steps_ = 0;
  std::shared_ptr<const detail::FftPlan> fft_;
};

namespace detail {

inline std::vector<double> circulant_spectrum(const CovarianceSpec& c, const GridSpec& g,
                                              const std::array<int, 3>& m) {
  const std::size_t total = static_cast<std::size_t>(m[0]) * m[1] * m[2];
  ComplexBuffer buf(total);
  for (int kz = 0; kz < m[2]; ++kz) {
    const double hz = std::min(kz, m[2] - kz) * g.dz();
    for (int ky = 0; ky < m[1]; ++ky) {
      const double hy = std::min(ky, m[1] - ky) * g.dy();
      for (int kx = 0; kx < m[0]; ++kx) {
        const double hx = std::min(kx, m[0] - kx) * g.dx();
        const std::size_t idx = kx + static_cast<std::size_t>(m[0]) * (ky + static_cast<std::size_t>(m[1]) * kz);
        buf.data[idx][0] = c(hx, hy, hz);
        buf.data[idx][1] = 0.0;
      }
    }
  }
  FftPlan forward(m, FFTW_FORWARD);
  forward.execute(buf);
  std::vector<double> eig(total);
  // The first row is real and even, so the spectrum is real.
  for (std::size_t i = 0; i < total; ++i) eig[i] = buf.data[i][0];
  return eig;
}

}  // namespace detail

/// Builds the circulant embedding. The initial size per axis is the
/// smallest power of two >= 2n. While eigenvalues below -1e-10*variance
/// remain, one axis grows per step, at most `max_steps` steps, through the
/// FFT-friendly sizes 2^a and 3*2^a (64, 96, 128, 192, ...). The axis chosen
/// is the one whose period is shortest in correlation lengths. Doubling all
/// three at once costs 8x memory and usually overshoots.
inline EmbeddingPlan plan_embedding(const CovarianceSpec& c, const GridSpec& g,
                                    int max_steps = 12) {
  c.validate();
  EmbeddingPlan plan(g, c);
  std::array<int, 3> m{detail::next_pow2(2 * g.nx()), detail::next_pow2(2 * g.ny()),
                       detail::next_pow2(2 * g.nz())};
  const double tol = 1e-10 * c.variance;
  for (int attempt = 0;; ++attempt) {
    std::vector<double> eig;
    if (c.variance == 0.0) {
      eig.assign(static_cast<std::size_t>(m[0]) * m[1] * m[2], 0.0);
    } else {
      eig = detail::circulant_spectrum(c, g, m);
    }
    double mn = std::numeric_limits<double>::infinity();
    for (double e : eig) mn = std::min(mn, e);
    if (mn >= -tol) {
      plan.dims_ = m;
      plan.min_eigenvalue_ = mn;
      plan.growth_steps_ = attempt;
      plan.valid_ = true;
      const double total = static_cast<double>(eig.size());
      plan.amplitude_.resize(eig.size());
      for (std::size_t i = 0; i < eig.size(); ++i)
        plan.amplitude_[i] = std::sqrt(std::max(eig[i], 0.0) / total);
      plan.eigenvalues_ = std::move(eig);
      if (c.variance > 0.0) plan.fft_ = std::make_shared<detail::FftPlan>(m, FFTW_BACKWARD);
      return plan;
    }
    if (attempt >= max_steps) {
      std::ostringstream os;
      os << "circulant embedding " << m[0] << "x" << m[1] << "x" << m[2]
         << " has negative eigenvalue " << mn << "; a larger embedding is required";
      throw EmbeddingError(os.str());
    }
    int grow = 0;
    for (int a = 1; a < 3; ++a)
      if (m[a] * g.spacing(a) / c.corr_len[a] < m[grow] * g.spacing(grow) / c.corr_len[grow]) grow = a;
    m[grow] = detail::next_smooth_size(m[grow]);
  }
}

namespace detail {

// Fills `buf` with the embedded field for `seed`. Real and imaginary parts
// are independent fields with the target covariance.
inline void embedded_field(std::uint64_t seed, ComplexBuffer& buf,
                           const std::vector<double>& amplitude, const FftPlan& fft) {
  Rng rng = make_rng(seed);
  // Ziggurat; several times faster than std::normal_distribution, which
  // otherwise dominates the cost on large embeddings.
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < buf.size; ++i) {
    const double a = normal(rng);
    const double b = normal(rng);
    buf.data[i][0] = amplitude[i] * a;
    buf.data[i][1] = amplitude[i] * b;
  }
  fft.execute(buf);
}

// One scratch buffer per thread, reused across samples; large embeddings
// otherwise pay for fresh pages on every call.
inline ComplexBuffer& scratch_buffer(std::size_t n) {
  thread_local std::unique_ptr<ComplexBuffer> buf;
  if (!buf || buf->size != n) {
    buf.reset();
    buf = std::make_unique<ComplexBuffer>(n);
  }
  return *buf;
}

inline void restrict_to_grid(const ComplexBuffer& buf, const std::array<int, 3>& m, int part,
                             ScalarField& out) {
  const GridSpec& g = out.grid;
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        const std::size_t e = i + static_cast<std::size_t>(m[0]) * (j + static_cast<std::size_t>(m[1]) * k);
        out[linearize({i, j, k}, g)] = buf.data[e][part];
      }
}

}  // namespace detail

/// One realization of the mean-zero Gaussian log-permeability field.
/// Deterministic in (plan, seed).
inline ScalarField sample_log_field(const EmbeddingPlan& plan, std::uint64_t seed) {
  if (!plan.valid()) throw EmbeddingError("sampling from an invalid embedding plan");
  ScalarField out(plan.grid(), 0.0);
  if (plan.covariance().variance == 0.0) return out;
  detail::ComplexBuffer& buf = detail::scratch_buffer(plan.embedding_size());
  detail::embedded_field(seed, buf, plan.amplitude_, *plan.fft_);
  detail::restrict_to_grid(buf, plan.dims(), 0, out);
  return out;
}

/// Two independent realizations from one transform. The first equals
/// sample_log_field(plan, seed).
inline std::pair<ScalarField, ScalarField> sample_log_field_pair(const EmbeddingPlan& plan,
                                                                 std::uint64_t seed) {
  if (!plan.valid()) throw EmbeddingError("sampling from an invalid embedding plan");
  std::pair<ScalarField, ScalarField> out{ScalarField(plan.grid(), 0.0), ScalarField(plan.grid(), 0.0)};
  if (plan.covariance().variance == 0.0) return out;
  detail::ComplexBuffer& buf = detail::scratch_buffer(plan.embedding_size());
  detail::embedded_field(seed, buf, plan.amplitude_, *plan.fft_);
  detail::restrict_to_grid(buf, plan.dims(), 0, out.first);
  detail::restrict_to_grid(buf, plan.dims(), 1, out.second);
  return out;
}

/// K = exp(L), cellwise.
inline ScalarField exponentiate(const ScalarField& log_field) {
  static const double max_exponent = std::log(std::numeric_limits<double>::max());
  static const double min_exponent = std::log(std::numeric_limits<double>::min());
  ScalarField out(log_field.grid, 0.0);
  for (std::size_t idx = 0; idx < log_field.size(); ++idx) {
    const double l = log_field[idx];
    if (!std::isfinite(l) || l >= max_exponent || l <= min_exponent) {
      const CellIndex c = delinearize(idx, log_field.grid);
      std::ostringstream os;
      os << "log-permeability " << l << " at cell (" << c.i << "," << c.j << "," << c.k
         << ") cannot be exponentiated to a positive finite permeability";
      throw DomainError(os.str());
    }
    out[idx] = std::exp(l);
  }
  return out;
}

/// CSV dump: one comment header line carrying the lattice and seed, then
/// `i,j,k,value` rows in linear-index order.
inline void write_field_csv(std::ostream& os, const ScalarField& f, std::uint64_t seed) {
  const GridSpec& g = f.grid;
  os << std::setprecision(17);
  os << "# nx=" << g.nx() << " ny=" << g.ny() << " nz=" << g.nz() << " lx=" << g.lx()
     << " ly=" << g.ly() << " lz=" << g.lz() << " seed=" << seed << "\n";
  os << "i,j,k,value\n";
  for (std::size_t idx = 0; idx < f.size(); ++idx) {
    const CellIndex c = delinearize(idx, g);
    os << c.i << ',' << c.j << ',' << c.k << ',' << f[idx] << '\n';
  }
}

struct FieldDump {
  ScalarField field;
  std::uint64_t seed;
};

inline FieldDump read_field_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0)
    throw std::runtime_error("field dump: missing header line");
  int nx = 0, ny = 0, nz = 0;
  double lx = 0, ly = 0, lz = 0;
  std::uint64_t seed = 0;
  std::istringstream hs(line.substr(2));
  std::string tok;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::runtime_error("field dump: malformed header");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "nx") nx = std::stoi(val);
    else if (key == "ny") ny = std::stoi(val);
    else if (key == "nz") nz = std::stoi(val);
    else if (key == "lx") lx = std::stod(val);
    else if (key == "ly") ly = std::stod(val);
    else if (key == "lz") lz = std::stod(val);
    else if (key == "seed") seed = std::stoull(val);
  }
  GridSpec g(nx, ny, nz, lx, ly, lz);
  std::getline(is, line);  // column header
  ScalarField f(g, 0.0);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    int i, j, k;
    double v;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> i >> c1 >> j >> c2 >> k >> c3 >> v))
      throw std::runtime_error("field dump: malformed row '" + line + "'");
    f.at({i, j, k}) = v;
    ++rows;
  }
  if (rows != g.cell_count()) throw std::runtime_error("field dump: row count mismatch");
  return {std::move(f), seed};
}

}  // namespace darcysa
