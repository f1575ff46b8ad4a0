#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "darcysa/darcy.hpp"
#include "darcysa/randfield.hpp"

namespace testkit {

inline darcysa::GridSpec unit_grid(int nx, int ny, int nz) {
  return darcysa::GridSpec(nx, ny, nz, nx, ny, nz);
}

/// Lognormal permeability on `g` with the default 8, 8, 5 correlation lengths.
inline darcysa::ScalarField lognormal_k(const darcysa::GridSpec& g, double sigma2,
                                        std::uint64_t seed) {
  darcysa::CovarianceSpec c;
  c.variance = sigma2;
  return darcysa::exponentiate(darcysa::sample_log_field(darcysa::plan_embedding(c, g), seed));
}

/// Independent iid lognormal K, no spatial correlation.
inline darcysa::ScalarField rough_k(const darcysa::GridSpec& g, double sigma, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  darcysa::ScalarField k(g, 1.0);
  for (auto& v : k.values) v = std::exp(n(rng));
  return k;
}

inline darcysa::PressureState random_state(const darcysa::GridSpec& g, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  darcysa::PressureState p(g, darcysa::BoundaryConditions{});
  for (auto& v : p.values) v = u(rng);
  return p;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testkit
