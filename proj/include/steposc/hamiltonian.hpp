#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Sparse>

#include "steposc/grid.hpp"
#include "steposc/model.hpp"

namespace steposc::fd {

enum class StepMode { excluded_nodes, penalty };

inline constexpr double kPenaltyPotential = 1e28;

/// Five-point discretization of -1/2 Laplacian + V1(q1) + V2(q2) with Dirichlet
/// outer boundary. Nodes in the closed step {q1 <= w1, q2 <= w2} are either removed
/// (excluded_nodes) or carry the penalty potential.
struct DiscreteHamiltonian {
  Grid2D grid;
  StepMode mode = StepMode::excluded_nodes;
  Eigen::SparseMatrix<double> matrix;
  /// Grid node -> unknown index, -1 for removed nodes.
  std::vector<int> dof_of_node;
  std::vector<int> node_of_dof;
  /// Diagonal potential per unknown (penalty included).
  std::vector<double> potential;

  int dimension() const { return static_cast<int>(node_of_dof.size()); }

  /// Expands an unknown vector to a full-grid field (zero on removed nodes).
  Eigen::VectorXd to_field(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
    for (int d = 0; d < dimension(); ++d) f[node_of_dof[d]] = x[d];
    return f;
  }

  Eigen::VectorXd from_field(const Eigen::Ref<const Eigen::VectorXd>& f) const {
    Eigen::VectorXd x(dimension());
    for (int d = 0; d < dimension(); ++d) x[d] = f[node_of_dof[d]];
    return x;
  }

  /// Leading-order (Thomas-Fermi) estimate of the number of levels below E.
  double estimated_count(double E) const {
    double n = 0.0;
    for (double v : potential) {
      if (v < E) n += E - v;
    }
    return n * grid.cell_area() / (2.0 * std::numbers::pi);
  }
};

inline bool in_closed_step(const StepRegion& step, double q1, double q2, double h1, double h2) {
  return q1 <= step.q1_wall + 1e-9 * h1 && q2 <= step.q2_wall + 1e-9 * h2;
}

inline DiscreteHamiltonian build_hamiltonian(const Grid2D& grid, const Potential& v1, const Potential& v2,
                                             const StepRegion& step,
                                             StepMode mode = StepMode::excluded_nodes) {
  DiscreteHamiltonian H;
  H.grid = grid;
  H.mode = mode;
  const int n1 = grid.x1.n;
  const int n2 = grid.x2.n;
  const double h1 = grid.x1.h;
  const double h2 = grid.x2.h;
  H.dof_of_node.assign(grid.size(), -1);

  std::vector<double> pot1(n1), pot2(n2);
  for (int j = 0; j < n1; ++j) pot1[j] = v1(grid.x1.node(j));
  for (int j = 0; j < n2; ++j) pot2[j] = v2(grid.x2.node(j));

  for (int j2 = 0; j2 < n2; ++j2) {
    for (int j1 = 0; j1 < n1; ++j1) {
      const bool blocked = in_closed_step(step, grid.x1.node(j1), grid.x2.node(j2), h1, h2);
      if (blocked && mode == StepMode::excluded_nodes) continue;
      const auto node = grid.index(j1, j2);
      H.dof_of_node[node] = H.dimension();
      H.node_of_dof.push_back(static_cast<int>(node));
      H.potential.push_back(blocked ? kPenaltyPotential : pot1[j1] + pot2[j2]);
    }
  }

  const double c1 = 0.5 / (h1 * h1);
  const double c2 = 0.5 / (h2 * h2);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(H.dimension()) * 5);
  for (int d = 0; d < H.dimension(); ++d) {
    const int node = H.node_of_dof[d];
    const int j1 = node % n1;
    const int j2 = node / n1;
    trip.emplace_back(d, d, 2.0 * c1 + 2.0 * c2 + H.potential[d]);
    auto link = [&](int k1, int k2, double c) {
      if (k1 < 0 || k1 >= n1 || k2 < 0 || k2 >= n2) return;
      const int other = H.dof_of_node[grid.index(k1, k2)];
      if (other >= 0) trip.emplace_back(d, other, -c);
    };
    link(j1 - 1, j2, c1);
    link(j1 + 1, j2, c1);
    link(j1, j2 - 1, c2);
    link(j1, j2 + 1, c2);
  }
  H.matrix.resize(H.dimension(), H.dimension());
  H.matrix.setFromTriplets(trip.begin(), trip.end());
  H.matrix.makeCompressed();
  return H;
}

}  // namespace steposc::fd
