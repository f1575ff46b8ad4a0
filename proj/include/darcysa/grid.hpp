#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace darcysa {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Rectangular lattice of nx*ny*nz cells covering [0,lx]x[0,ly]x[0,lz].
/// Cell sizes are always derived from counts and extents.
class GridSpec {
 public:
  GridSpec(int nx, int ny, int nz, double lx, double ly, double lz)
      : n_{nx, ny, nz}, l_{lx, ly, lz} {
    const char* names[] = {"nx", "ny", "nz"};
    for (int a = 0; a < 3; ++a) {
      if (n_[a] < 1) throw DomainError(std::string("grid.") + names[a] + " must be ≥ 1");
      if (!(l_[a] > 0.0) || !std::isfinite(l_[a]))
        throw DomainError("domain extents must be positive and finite");
    }
  }

  int nx() const { return n_[0]; }
  int ny() const { return n_[1]; }
  int nz() const { return n_[2]; }
  int n(int axis) const { return n_[axis]; }
  double lx() const { return l_[0]; }
  double ly() const { return l_[1]; }
  double lz() const { return l_[2]; }
  double length(int axis) const { return l_[axis]; }

  double dx() const { return l_[0] / n_[0]; }
  double dy() const { return l_[1] / n_[1]; }
  double dz() const { return l_[2] / n_[2]; }
  double spacing(int axis) const { return l_[axis] / n_[axis]; }

  std::size_t cell_count() const {
    return static_cast<std::size_t>(n_[0]) * n_[1] * n_[2];
  }

  /// Area of a face normal to `axis`.
  double face_area(int axis) const {
    return spacing((axis + 1) % 3) * spacing((axis + 2) % 3);
  }

  bool operator==(const GridSpec&) const = default;

 private:
  std::array<int, 3> n_;
  std::array<double, 3> l_;
};

/// Dirichlet heads on the y=0 (inlet) and y=ly (outlet) faces; all x/z
/// boundaries are no-flow.
struct BoundaryConditions {
  double inlet_pressure = 1.0;
  double outlet_pressure = 0.0;

  double delta_p() const { return inlet_pressure - outlet_pressure; }
  double low() const { return std::min(inlet_pressure, outlet_pressure); }
  double high() const { return std::max(inlet_pressure, outlet_pressure); }

  void validate() const {
    if (!std::isfinite(inlet_pressure) || !std::isfinite(outlet_pressure))
      throw DomainError("boundary pressures must be finite");
  }
};

struct CellIndex {
  int i = 0;
  int j = 0;
  int k = 0;
  bool operator==(const CellIndex&) const = default;
};

enum class Axis { x = 0, y = 1, z = 2 };

/// A face is identified by its normal axis and the cell on its lower side.
/// For y-faces the lower index runs over j = -1 .. ny-1 so that the inlet
/// boundary (j = -1, i.e. the face at y=0) and outlet boundary (j = ny-1,
/// face at y=ly) are both representable.
struct FaceIndex {
  Axis axis = Axis::x;
  CellIndex lower;
  bool operator==(const FaceIndex&) const = default;
};

/// x-fastest linear index: i + nx*(j + ny*k).
inline std::size_t linearize(const CellIndex& c, const GridSpec& g) {
  if (c.i < 0 || c.i >= g.nx() || c.j < 0 || c.j >= g.ny() || c.k < 0 || c.k >= g.nz())
    throw DomainError("cell index (" + std::to_string(c.i) + "," + std::to_string(c.j) + "," +
                      std::to_string(c.k) + ") out of range");
  return static_cast<std::size_t>(c.i) +
         static_cast<std::size_t>(g.nx()) * (static_cast<std::size_t>(c.j) +
                                             static_cast<std::size_t>(g.ny()) * c.k);
}

inline CellIndex delinearize(std::size_t idx, const GridSpec& g) {
  if (idx >= g.cell_count()) throw DomainError("linear index out of range");
  const auto nx = static_cast<std::size_t>(g.nx());
  const auto ny = static_cast<std::size_t>(g.ny());
  return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny),
          static_cast<int>(idx / (nx * ny))};
}

inline bool is_boundary_face(const FaceIndex& f, const GridSpec& g) {
  return f.axis == Axis::y && (f.lower.j == -1 || f.lower.j == g.ny() - 1);
}

inline std::size_t interior_face_count(const GridSpec& g, Axis a) {
  const std::size_t nx = g.nx(), ny = g.ny(), nz = g.nz();
  switch (a) {
    case Axis::x: return (nx - 1) * ny * nz;
    case Axis::y: return nx * (ny - 1) * nz;
    case Axis::z: return nx * ny * (nz - 1);
  }
  return 0;
}

inline std::size_t boundary_face_count(const GridSpec& g) {
  return 2 * static_cast<std::size_t>(g.nx()) * g.nz();
}

/// All interior x, y and z faces followed by the inlet and outlet y-faces.
inline std::vector<FaceIndex> faces(const GridSpec& g) {
  std::vector<FaceIndex> out;
  out.reserve(interior_face_count(g, Axis::x) + interior_face_count(g, Axis::y) +
              interior_face_count(g, Axis::z) + boundary_face_count(g));
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i + 1 < g.nx(); ++i) out.push_back({Axis::x, {i, j, k}});
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j + 1 < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) out.push_back({Axis::y, {i, j, k}});
  for (int k = 0; k + 1 < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) out.push_back({Axis::z, {i, j, k}});
  for (int k = 0; k < g.nz(); ++k)
    for (int i = 0; i < g.nx(); ++i) out.push_back({Axis::y, {i, -1, k}});
  for (int k = 0; k < g.nz(); ++k)
    for (int i = 0; i < g.nx(); ++i) out.push_back({Axis::y, {i, g.ny() - 1, k}});
  return out;
}

/// Cell containing the point (fx*lx, fy*ly, fz*lz). Equivalently the cell
/// with the nearest center, where a point equidistant from two centers
/// (i.e. lying on a shared face) goes to the upper cell. fx = 1 maps to the
/// last cell. For the 50x70x50 lattice, (0.5, 0.5, 0.5) -> (25, 35, 25) and
/// (0.5, 0.8, 0.5) -> (25, 56, 25).
inline CellIndex locate(const std::array<double, 3>& fractional, const GridSpec& g) {
  std::array<int, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double f = fractional[a];
    if (!(f >= 0.0 && f <= 1.0)) throw DomainError("fractional coordinate outside [0,1]");
    // Absorb representation error such as 0.57*100 = 56.999999999999993.
    const double pos = f * g.n(a);
    int c = static_cast<int>(std::floor(pos + 1e-9 * std::max(1.0, pos)));
    idx[a] = std::min(c, g.n(a) - 1);
  }
  return {idx[0], idx[1], idx[2]};
}

inline std::array<double, 3> cell_center_fraction(const CellIndex& c, const GridSpec& g) {
  return {(c.i + 0.5) / g.nx(), (c.j + 0.5) / g.ny(), (c.k + 0.5) / g.nz()};
}

/// Cell-centered scalar values (log-permeability, permeability or pressure).
struct ScalarField {
  GridSpec grid;
  std::vector<double> values;

  explicit ScalarField(const GridSpec& g, double fill = 0.0)
      : grid(g), values(g.cell_count(), fill) {}
  ScalarField(const GridSpec& g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.cell_count())
      throw DomainError("field size does not match grid");
  }

  double& operator[](std::size_t idx) { return values[idx]; }
  double operator[](std::size_t idx) const { return values[idx]; }
  double& at(const CellIndex& c) { return values[linearize(c, grid)]; }
  double at(const CellIndex& c) const { return values[linearize(c, grid)]; }
  std::size_t size() const { return values.size(); }
};

}  // namespace darcysa
