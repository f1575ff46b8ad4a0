#pragma once

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <sstream>
#include <stdexcept>
#include <vector>

#include "darcysa/darcy.hpp"

namespace darcysa {

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double achieved)
      : std::runtime_error(what), achieved_residual(achieved) {}
  double achieved_residual;
};

/// 7-point finite-volume system A p = b for the cell pressures.
struct LinearSystem {
  GridSpec grid;
  BoundaryConditions bc;
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd b;
};

inline LinearSystem assemble(const Transmissibilities& T, const BoundaryConditions& bc) {
  const GridSpec& g = T.grid();
  const auto n = static_cast<Eigen::Index>(g.cell_count());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(7 * g.cell_count());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(g.nx()),
                                          static_cast<std::size_t>(g.nx()) * g.ny()};
  for (int k = 0; k < g.nz(); ++k)
    for (int j = 0; j < g.ny(); ++j)
      for (int i = 0; i < g.nx(); ++i) {
        const std::size_t idx = linearize({i, j, k}, g);
        const int c[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          if (c[a] + 1 >= g.n(a)) continue;
          const double t = T.forward(static_cast<Axis>(a))[idx];
          const auto lo = static_cast<Eigen::Index>(idx);
          const auto hi = static_cast<Eigen::Index>(idx + stride[a]);
          trip.emplace_back(lo, lo, t);
          trip.emplace_back(hi, hi, t);
          trip.emplace_back(lo, hi, -t);
          trip.emplace_back(hi, lo, -t);
        }
        const auto row = static_cast<Eigen::Index>(idx);
        if (j == 0) {
          const double t = T.inlet()[i + g.nx() * k];
          trip.emplace_back(row, row, t);
          b[row] += t * bc.inlet_pressure;
        }
        if (j == g.ny() - 1) {
          const double t = T.outlet()[i + g.nx() * k];
          trip.emplace_back(row, row, t);
          b[row] += t * bc.outlet_pressure;
        }
      }
  LinearSystem sys{g, bc, Eigen::SparseMatrix<double>(n, n), std::move(b)};
  sys.A.setFromTriplets(trip.begin(), trip.end());
  sys.A.makeCompressed();
  return sys;
}

inline double relative_residual(const LinearSystem& sys, const Eigen::VectorXd& p) {
  const double bn = sys.b.norm();
  const double rn = (sys.A * p - sys.b).norm();
  return bn > 0.0 ? rn / bn : rn;
}

/// Jacobi-preconditioned conjugate gradient to ||Ap - b|| / ||b|| <= rel_tol.
inline PressureState solve_linear(const LinearSystem& sys, double rel_tol = 1e-10,
                                  int max_iterations = 0) {
  PressureState out(sys.grid, sys.bc, 0.0);
  if (sys.b.norm() == 0.0) return out;  // both heads zero: p = 0 exactly

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  // The recursive CG residual drifts from the true one; leave headroom.
  cg.setTolerance(0.25 * rel_tol);
  cg.setMaxIterations(max_iterations > 0 ? max_iterations
                                         : static_cast<int>(10 * sys.A.rows() + 100));
  cg.compute(sys.A);
  // Start from the mean head; exact for the uniform-head case.
  Eigen::VectorXd guess =
      Eigen::VectorXd::Constant(sys.A.rows(), 0.5 * (sys.bc.inlet_pressure + sys.bc.outlet_pressure));
  Eigen::VectorXd x = cg.solveWithGuess(sys.b, guess);
  const double achieved = relative_residual(sys, x);
  if (!(achieved <= rel_tol)) {
    std::ostringstream os;
    os << "conjugate gradient reached relative residual " << achieved << " after "
       << cg.iterations() << " iterations (target " << rel_tol << ")";
    throw SolverError(os.str(), achieved);
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) out.values[static_cast<std::size_t>(i)] = x[i];
  return out;
}

inline PressureState reference_solution(const ScalarField& K, const BoundaryConditions& bc,
                                        FaceAverage rule = FaceAverage::harmonic,
                                        double rel_tol = 1e-10) {
  return solve_linear(assemble(transmissibilities(K, rule), bc), rel_tol);
}

}  // namespace darcysa
