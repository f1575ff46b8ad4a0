#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "darcysa/grid.hpp"

namespace darcysa {

/// How the permeability of two adjacent cells is combined on their face.
///  harmonic:  T = A/d * 2 Ka Kb / (Ka + Kb)
///  one_sided: T = A/d * K of the upper (higher-index) cell, i.e. the
///             coefficient e^{L_i} multiplying (p_i - p_{i-1}) in the lattice
///             divergence stencil.
/// Boundary faces always use the adjacent cell's K with d = half a cell.
enum class FaceAverage { harmonic, one_sided };

/// Face transmissibilities stored on the "forward" face of each cell:
/// forward(axis)[idx] couples cell idx to its +axis neighbour and is zero
/// on the last layer. Inlet/outlet y-faces are indexed by i + nx*k.
class Transmissibilities {
 public:
  explicit Transmissibilities(const GridSpec& g)
      : grid_(g),
        forward_{std::vector<double>(g.cell_count(), 0.0), std::vector<double>(g.cell_count(), 0.0),
                 std::vector<double>(g.cell_count(), 0.0)},
        inlet_(static_cast<std::size_t>(g.nx()) * g.nz(), 0.0),
        outlet_(static_cast<std::size_t>(g.nx()) * g.nz(), 0.0) {}

  const GridSpec& grid() const { return grid_; }
  const std::vector<double>& forward(Axis a) const { return forward_[static_cast<int>(a)]; }
  std::vector<double>& forward(Axis a) { return forward_[static_cast<int>(a)]; }
  const std::vector<double>& inlet() const { return inlet_; }
  const std::vector<double>& outlet() const { return outlet_; }
  std::vector<double>& inlet() { return inlet_; }
  std::vector<double>& outlet() { return outlet_; }

  /// Transmissibility of an arbitrary face.
  double at(const FaceIndex& f) const {
    if (f.axis == Axis::y && f.lower.j == -1) return inlet_[f.lower.i + grid_.nx() * f.lower.k];
    if (f.axis == Axis::y && f.lower.j == grid_.ny() - 1)
      return outlet_[f.lower.i + grid_.nx() * f.lower.k];
    return forward(f.axis)[linearize(f.lower, grid_)];
  }

 private:
  GridSpec grid_;
  std::array<std::vector<double>, 3> forward_;
  std::vector<double> inlet_;
  std::vector<double> outlet_;
};

inline Transmissibilities transmissibilities(const ScalarField& K,
                                             FaceAverage rule = FaceAverage::harmonic) {
  const GridSpec& g = K.grid;
  for (std::size_t idx = 0; idx < K.size(); ++idx)
    if (!(K[idx] > 0.0) || !std::isfinite(K[idx]))
      throw DomainError("permeability must be positive and finite");

  Transmissibilities T(g);
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(g.nx()),
                                          static_cast<std::size_t>(g.nx()) * g.ny()};
  for (int a = 0; a < 3; ++a) {
    const double geom = g.face_area(a) / g.spacing(a);
    auto& fw = T.forward(static_cast<Axis>(a));
    for (int k = 0; k < g.nz(); ++k)
      for (int j = 0; j < g.ny(); ++j)
        for (int i = 0; i < g.nx(); ++i) {
          const int c[3] = {i, j, k};
          if (c[a] + 1 >= g.n(a)) continue;
          const std::size_t lo = linearize({i, j, k}, g);
          const double ka = K[lo], kb = K[lo + stride[a]];
          fw[lo] = rule == FaceAverage::harmonic ? geom * 2.0 * ka * kb / (ka + kb) : geom * kb;
        }
  }
  const double geom_b = g.face_area(1) / (0.5 * g.dy());
  for (int k = 0; k < g.nz(); ++k)
    for (int i = 0; i < g.nx(); ++i) {
      T.inlet()[i + g.nx() * k] = geom_b * K.at({i, 0, k});
      T.outlet()[i + g.nx() * k] = geom_b * K.at({i, g.ny() - 1, k});
    }
  return T;
}

/// Cell pressures together with the fixed boundary heads.
struct PressureState {
  GridSpec grid;
  BoundaryConditions bc;
  std::vector<double> values;

  PressureState(const GridSpec& g, const BoundaryConditions& b, double fill = 0.0)
      : grid(g), bc(b), values(g.cell_count(), fill) {}

  double& operator[](std::size_t idx) { return values[idx]; }
  double operator[](std::size_t idx) const { return values[idx]; }
  double at(const CellIndex& c) const { return values[linearize(c, grid)]; }
};

/// Weighted neighbour sum and total weight over the faces incident to one
/// cell; boundary faces contribute the fixed head.
struct IncidentSums {
  double weighted = 0.0;  // sum_f T_f * p_neighbour(f)
  double total = 0.0;     // sum_f T_f
};

inline IncidentSums incident_sums(const std::vector<double>& p, const BoundaryConditions& bc,
                                  const Transmissibilities& T, int i, int j, int k,
                                  std::size_t idx) {
  const GridSpec& g = T.grid();
  const std::size_t sx = 1, sy = g.nx(), sz = static_cast<std::size_t>(g.nx()) * g.ny();
  const auto& tx = T.forward(Axis::x);
  const auto& ty = T.forward(Axis::y);
  const auto& tz = T.forward(Axis::z);
  IncidentSums s;
  auto add = [&](double t, double nb) {
    s.weighted += t * nb;
    s.total += t;
  };
  if (i > 0) add(tx[idx - sx], p[idx - sx]);
  if (i + 1 < g.nx()) add(tx[idx], p[idx + sx]);
  if (j > 0) add(ty[idx - sy], p[idx - sy]);
  else add(T.inlet()[i + g.nx() * k], bc.inlet_pressure);
  if (j + 1 < g.ny()) add(ty[idx], p[idx + sy]);
  else add(T.outlet()[i + g.nx() * k], bc.outlet_pressure);
  if (k > 0) add(tz[idx - sz], p[idx - sz]);
  if (k + 1 < g.nz()) add(tz[idx], p[idx + sz]);
  return s;
}

inline IncidentSums incident_sums(const PressureState& p, const Transmissibilities& T,
                                  const CellIndex& c) {
  return incident_sums(p.values, p.bc, T, c.i, c.j, c.k, linearize(c, p.grid));
}

/// S = 1/2 sum over all faces (interior and Dirichlet) of T_f (p_a - p_b)^2.
inline double action(const PressureState& p, const Transmissibilities& T) {
  const GridSpec& g = p.grid;
  const std::size_t sx = 1, sy = g.nx(), sz = static_cast<std::size_t>(g.nx()) * g.ny();
  const auto& tx = T.forward(Axis::x);
  const auto& ty = T.forward(Axis::y);
  const auto& tz = T.forward(Axis::z);
  double s = 0.0;
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        const std::size_t idx = linearize({i, j, k}, g);
        const double v = p[idx];
        if (i + 1 < g.nx()) { const double d = v - p[idx + sx]; s += tx[idx] * d * d; }
        if (j + 1 < g.ny()) { const double d = v - p[idx + sy]; s += ty[idx] * d * d; }
        if (k + 1 < g.nz()) { const double d = v - p[idx + sz]; s += tz[idx] * d * d; }
        if (j == 0) { const double d = p.bc.inlet_pressure - v; s += T.inlet()[i + g.nx() * k] * d * d; }
        if (j == g.ny() - 1) { const double d = v - p.bc.outlet_pressure; s += T.outlet()[i + g.nx() * k] * d * d; }
      }
  return 0.5 * s;
}

/// Change in S when the pressure at one cell moves from its current value
/// to `new_value`: 1/2 (new-old) (D (new+old) - 2 W) with D, W the incident
/// sums.
inline double local_action_delta(const IncidentSums& s, double old_value, double new_value) {
  return 0.5 * (new_value - old_value) * (s.total * (new_value + old_value) - 2.0 * s.weighted);
}

inline double local_action_delta(const PressureState& p, const Transmissibilities& T,
                                 const CellIndex& c, double new_value) {
  return local_action_delta(incident_sums(p, T, c), p.at(c), new_value);
}

/// Value of p at `c` minimising S with every other cell fixed.
inline double local_minimizer(const PressureState& p, const Transmissibilities& T,
                              const CellIndex& c) {
  const IncidentSums s = incident_sums(p, T, c);
  return s.weighted / s.total;
}

/// Net in-flux per cell, r = b - A p.
inline std::vector<double> residual_vector(const PressureState& p, const Transmissibilities& T) {
  const GridSpec& g = p.grid;
  std::vector<double> r(g.cell_count());
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        const std::size_t idx = linearize({i, j, k}, g);
        const IncidentSums s = incident_sums(p.values, p.bc, T, i, j, k, idx);
        r[idx] = s.weighted - s.total * p[idx];
      }
  return r;
}

/// Norm of the Dirichlet source vector b of the equivalent linear system.
inline double boundary_source_norm(const GridSpec& g, const BoundaryConditions& bc,
                                   const Transmissibilities& T) {
  double s = 0.0;
  for (int k = 0; k < g.nz(); ++k)
    for (int i = 0; i < g.nx(); ++i) {
      const std::size_t b = i + static_cast<std::size_t>(g.nx()) * k;
      if (g.ny() == 1) {
        const double v = T.inlet()[b] * bc.inlet_pressure + T.outlet()[b] * bc.outlet_pressure;
        s += v * v;
      } else {
        const double vi = T.inlet()[b] * bc.inlet_pressure;
        const double vo = T.outlet()[b] * bc.outlet_pressure;
        s += vi * vi + vo * vo;
      }
    }
  return std::sqrt(s);
}

/// Mass-balance residual ||b - A p|| / ||b||. When ||b|| = 0 (both heads
/// zero) the unnormalised norm is returned.
inline double residual(const PressureState& p, const Transmissibilities& T) {
  double rr = 0.0;
  for (double v : residual_vector(p, T)) rr += v * v;
  const double bn = boundary_source_norm(p.grid, p.bc, T);
  return bn > 0.0 ? std::sqrt(rr) / bn : std::sqrt(rr);
}

/// Face fluxes Q_f = T_f (p_lower - p_upper), positive along +axis.
/// y-faces include both Dirichlet layers: layer jf = 0 is the inlet face,
/// jf = ny the outlet face. No-flow faces are absent (identically zero).
struct FaceFluxes {
  GridSpec grid;
  std::vector<double> x;  // forward x-face of each cell (0 on the last layer)
  std::vector<double> y;  // index i + nx*(jf + (ny+1)*k)
  std::vector<double> z;  // forward z-face of each cell (0 on the last layer)

  double y_face(int i, int jf, int k) const {
    return y[i + static_cast<std::size_t>(grid.nx()) * (jf + static_cast<std::size_t>(grid.ny() + 1) * k)];
  }

  /// Q_y(jf): total flow through the cross-section at face layer jf.
  std::vector<double> y_layer_totals() const {
    std::vector<double> q(grid.ny() + 1, 0.0);
    for (int k = 0; k < grid.nz(); ++k)
      for (int jf = 0; jf <= grid.ny(); ++jf)
        for (int i = 0; i < grid.nx(); ++i) q[jf] += y_face(i, jf, k);
    return q;
  }
};

inline FaceFluxes face_flux(const PressureState& p, const Transmissibilities& T) {
  const GridSpec& g = p.grid;
  FaceFluxes f{g, std::vector<double>(g.cell_count(), 0.0),
               std::vector<double>(static_cast<std::size_t>(g.nx()) * (g.ny() + 1) * g.nz(), 0.0),
               std::vector<double>(g.cell_count(), 0.0)};
  const std::size_t sx = 1, sy = g.nx(), sz = static_cast<std::size_t>(g.nx()) * g.ny();
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        const std::size_t idx = linearize({i, j, k}, g);
        auto yslot = [&](int jf) {
          return i + static_cast<std::size_t>(g.nx()) * (jf + static_cast<std::size_t>(g.ny() + 1) * k);
        };
        if (i + 1 < g.nx()) f.x[idx] = T.forward(Axis::x)[idx] * (p[idx] - p[idx + sx]);
        if (k + 1 < g.nz()) f.z[idx] = T.forward(Axis::z)[idx] * (p[idx] - p[idx + sz]);
        if (j == 0) f.y[yslot(0)] = T.inlet()[i + g.nx() * k] * (p.bc.inlet_pressure - p[idx]);
        if (j + 1 < g.ny()) f.y[yslot(j + 1)] = T.forward(Axis::y)[idx] * (p[idx] - p[idx + sy]);
        else f.y[yslot(g.ny())] = T.outlet()[i + g.nx() * k] * (p[idx] - p.bc.outlet_pressure);
      }
  return f;
}

/// Cell-centre Darcy velocity: mean of the two incident face fluxes along
/// each axis divided by the face area (a no-flow face counts as zero).
inline std::array<double, 3> cell_velocity(const FaceFluxes& f, const CellIndex& c) {
  const GridSpec& g = f.grid;
  const std::size_t idx = linearize(c, g);
  const double qx_lo = c.i > 0 ? f.x[idx - 1] : 0.0;
  const double qx_hi = f.x[idx];
  const double qz_lo = c.k > 0 ? f.z[idx - static_cast<std::size_t>(g.nx()) * g.ny()] : 0.0;
  const double qz_hi = f.z[idx];
  const double qy_lo = f.y_face(c.i, c.j, c.k);
  const double qy_hi = f.y_face(c.i, c.j + 1, c.k);
  return {0.5 * (qx_lo + qx_hi) / g.face_area(0), 0.5 * (qy_lo + qy_hi) / g.face_area(1),
          0.5 * (qz_lo + qz_hi) / g.face_area(2)};
}

}  // namespace darcysa
