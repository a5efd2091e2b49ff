#pragma once

#include "cranio/common.hpp"
#include "cranio/meshgen.hpp"

#include <Eigen/SparseCore>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cranio {

/// exp(2 - 2 / (1 - t^2)) on [0, 1), zero from 1 on.
double contact_shape(double t);
/// Derivative of contact_shape.
double contact_shape_derivative(double t);

enum class ContactProfile { smooth, constant };
ContactProfile contact_profile_from_string(const std::string& name);
std::string to_string(ContactProfile p);

struct ElectrodeFrame {
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 t1 = Vec3::UnitX(), t2 = Vec3::UnitY();
  double radius = 0.0;

  double footprint(const Vec3& y) const { return Vec2(t1.dot(y - center), t2.dot(y - center)).norm() / radius; }
};

/// What the solver needs from a head mesh.
struct FemMesh {
  std::vector<Vec3> nodes;
  std::vector<Tet> tets;
  std::vector<Tri> boundary;
  std::vector<int> region;  // 0 or electrode index + 1, per boundary triangle
  std::vector<ElectrodeFrame> electrodes;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int electrode_count() const { return static_cast<int>(electrodes.size()); }
  /// Sorted node ids of the triangles tagged with electrode m.
  std::vector<int> electrode_nodes(int m) const;
};

FemMesh fem_mesh(const HeadMesh& mesh);

/// zeta(y) = zeta_m * shape(|Q_m y| / R_m) on E_m, zero elsewhere.
struct ContactField {
  ContactProfile profile = ContactProfile::smooth;
  Eigen::VectorXd coefficients;
  std::vector<ElectrodeFrame> frames;

  double shape(int m, const Vec3& y) const;
  double value(int m, const Vec3& y) const { return coefficients(m) * shape(m, y); }
};

ContactField build_contact_field(const FemMesh& mesh, const Eigen::VectorXd& coefficients, ContactProfile profile);

/// Nodal values of the contact field (zero off the electrodes).
Eigen::VectorXd nodal_contact(const FemMesh& mesh, const ContactField& zeta);

/// Three interior points per tagged boundary triangle.
struct BoundaryQuadrature {
  struct Point {
    int triangle;
    int electrode;
    Vec3 x;
    std::array<double, 3> phi;  // hat function values of the triangle's nodes
    double weight;
  };
  std::vector<Point> points;
};
BoundaryQuadrature electrode_quadrature(const FemMesh& mesh);

/// Orthonormal basis of the mean-free subspace of R^M (M x (M - 1)).
Eigen::MatrixXd mean_free_basis(int M);

/// Columns I^(j) = e_1 - e_{j+1}, j = 1..M-1.
Eigen::MatrixXd current_patterns(int M);

struct ForwardSolution {
  Eigen::VectorXd u;  // nodal potential
  Eigen::VectorXd U;  // electrode potentials, mean free
};

/// Assembled and factorized system over (u, beta) with U = basis * beta.
class ForwardSystem {
 public:
  ForwardSystem(const FemMesh& mesh, const Eigen::VectorXd& sigma, const ContactField& zeta);

  int node_count() const { return n_; }
  int electrode_count() const { return M_; }
  const Eigen::SparseMatrix<double>& matrix() const { return A_; }
  const Eigen::MatrixXd& basis() const { return basis_; }

  /// One solve per column of `patterns` (M x P).
  std::vector<ForwardSolution> solve(const Eigen::MatrixXd& patterns) const;
  ForwardSolution solve(const Eigen::VectorXd& pattern) const;

  /// Relative residual max|A x - b| / max|b| of a solution.
  double residual(const ForwardSolution& s, const Eigen::VectorXd& pattern) const;

 private:
  struct Factor;
  int n_ = 0, M_ = 0;
  Eigen::MatrixXd basis_;
  Eigen::SparseMatrix<double> A_;
  std::shared_ptr<const Factor> factor_;
};

std::vector<ForwardSolution> solve_patterns(const ForwardSystem& system, const Eigen::MatrixXd& patterns);

/// [U(I^(1)); ...; U(I^(P))].
Eigen::VectorXd stacked_measurement(const std::vector<ForwardSolution>& solutions);

/// Net currents int_{E_m} zeta (U_m - u) dS recovered from a solution.
Eigen::VectorXd electrode_currents(const FemMesh& mesh, const ContactField& zeta, const ForwardSolution& s);

/// Number of pattern solves performed so far in this process.
long forward_solve_count();

/// Convenience: assemble, solve the standard patterns, stack.
struct ForwardRun {
  std::vector<ForwardSolution> solutions;
  Eigen::VectorXd measurement;
};
ForwardRun run_forward(const FemMesh& mesh, const Eigen::VectorXd& sigma, const ContactField& zeta);

/// Instrumentation hook called after every run_forward, possibly from
/// several threads at once. Pass an empty function to remove it.
using ForwardObserver =
    std::function<void(const FemMesh&, const ContactField&, const ForwardSystem&, const ForwardRun&)>;
void set_forward_observer(ForwardObserver observer);

}  // namespace cranio
