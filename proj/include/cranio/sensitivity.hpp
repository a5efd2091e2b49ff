#pragma once

#include "cranio/forward.hpp"
#include "cranio/meshgen.hpp"

#include <Eigen/SparseCore>

#include <functional>
#include <vector>

namespace cranio {

// Measurement rows follow stacked_measurement: row i * M + m holds electrode
// m of pattern i.

/// Rows c_m with sum_j c_mj I^(j) = e_m - 1/M, so that the solution for the
/// auxiliary pattern pairing with electrode m is sum_j c_mj u^(j).
Eigen::MatrixXd pattern_combinations(int M);

/// -int phi_k grad u^(i) . grad u~_m over the head, per conductivity node k.
/// With a transfer T (head nodes x storage nodes) the columns refer to the
/// storage nodes instead: J = J_head * T.
Eigen::MatrixXd d_sigma(const FemMesh& mesh, const std::vector<ForwardSolution>& solutions,
                        const Eigen::SparseMatrix<double>* transfer = nullptr);

/// -int_{E_m} shape (U_m - u)(U~_m - u~) dS, one column per electrode.
Eigen::MatrixXd d_zeta(const FemMesh& mesh, const ContactField& zeta, const std::vector<ForwardSolution>& solutions);

/// Area-weighted vertex normals of the boundary triangulation (zero at
/// interior nodes).
std::vector<Vec3> boundary_normals(const FemMesh& mesh);

struct ShiftField {
  std::vector<int> nodes;       // electrode nodes
  std::vector<Vec3> a;          // normalized tangential field at those nodes
  Vec3 direction;               // theta-hat or phi-hat at the centre
  double magnitude = 0.0;       // |tangential part at the centre|
};

struct ElectrodeShifts {
  std::vector<ShiftField> theta, phi;
};

/// Tangent vectors by central differences of r(beta(theta, phi)) beta(theta,
/// phi), extended as constants over each electrode and normalized to the
/// tangential magnitude at the centre.
ElectrodeShifts build_shift_fields(const FemMesh& mesh, const ElectrodeLayout& layout, const RadiusFunction& radius,
                                   double angle_step = 1e-5);

/// Per-node surface gradient of a nodal boundary field restricted to the
/// triangles of each electrode (area-weighted average of triangle gradients).
std::vector<Vec3> surface_gradient(const FemMesh& mesh, const Eigen::VectorXd& field);

struct AngleBlocks {
  Eigen::MatrixXd theta, phi;
};

/// int_{E_m} a_m . Grad(zeta) (U_m - u)(U~_m - u~) dS for both angle families.
AngleBlocks d_angles(const FemMesh& mesh, const ContactField& zeta, const std::vector<ForwardSolution>& solutions,
                     const ElectrodeShifts& shifts);

/// Default steps 0.05 sqrt(variance), clipped to [1e-4, 1e-2].
Eigen::VectorXd default_shape_steps(const Eigen::VectorXd& alpha_variances);

/// Central differences of a measurement map in alpha; the 2 n evaluations run
/// concurrently. A component with zero step gives a zero column.
Eigen::MatrixXd d_shape(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& measurement,
                        const Eigen::VectorXd& alpha, const Eigen::VectorXd& steps);

struct JacobianBlocks {
  Eigen::MatrixXd sigma, zeta, alpha, theta, phi;
};

/// [sigma | zeta | alpha | theta | phi]; empty blocks are skipped.
Eigen::MatrixXd assemble_jacobian(const JacobianBlocks& blocks);

}  // namespace cranio
