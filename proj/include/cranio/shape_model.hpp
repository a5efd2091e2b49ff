#pragma once

#include "cranio/common.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace cranio {

/// Barycentric stencil of a direction inside one grid triangle.
struct GridStencil {
  int triangle = -1;
  std::array<int, 3> vertex{};
  std::array<double, 3> weight{};
};

/// Geodesic triangulation of the closed upper unit hemisphere, obtained by
/// repeatedly splitting the four octant triangles around the north pole.
/// Vertices of coarser levels are a prefix of the vertex list of finer ones.
class HemisphereGrid {
 public:
  static HemisphereGrid geodesic(int level);

  int level() const { return level_; }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Tri>& triangles() const { return levels_.back(); }
  std::size_t size() const { return vertices_.size(); }
  double polar(int i) const;
  double azimuth(int i) const;

  /// Gnomonic barycentric location of a direction (normalised internally).
  GridStencil locate(const Vec3& direction) const;

  /// First-order surface FEM matrices on the polyhedral hemisphere.
  Eigen::SparseMatrix<double> mass_matrix() const;
  Eigen::SparseMatrix<double> stiffness_matrix() const;
  /// mass + stiffness, i.e. the discrete H1 inner product.
  const Eigen::SparseMatrix<double>& h1_matrix() const;

  bool same_as(const HemisphereGrid& other) const;

 private:
  int level_ = 0;
  std::vector<Vec3> vertices_;
  std::vector<std::vector<Tri>> levels_;  // child c of triangle t is 4t+c one level down
  std::shared_ptr<const Eigen::SparseMatrix<double>> h1_;
};

using GridPtr = std::shared_ptr<const HemisphereGrid>;

/// Nodal field on a hemisphere grid. Radial functions (head radii) are grid
/// functions with strictly positive values; perturbations may take any sign.
struct GridFunction {
  GridPtr grid;
  Eigen::VectorXd values;
};
using RadialFunction = GridFunction;

void require_positive_radius(const RadialFunction& r);
void require_same_grid(const GridFunction& f, const HemisphereGrid& grid);

double h1_inner(const GridFunction& a, const GridFunction& b);

struct LibraryConfig {
  int n = 50;
  Vec3 semi_axes{0.095, 0.075, 0.09};
  int max_degree = 7;
  double decay = 2.0;
  double pointwise_sd = 0.005;
  int grid_level = 5;
  /// Scales every mode amplitude; 0 reproduces the base profile exactly.
  double amplitude_scale = 1.0;
};

LibraryConfig library_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LibraryConfig& c);

/// Radius of the ellipsoidal cap with the given semi-axes in direction x.
double ellipsoid_radius(const Vec3& semi_axes, const Vec3& direction);

/// Synthetic head library: base ellipsoid cap plus random combinations of
/// real spherical harmonics with amplitudes decaying like (degree+1)^-decay.
std::vector<RadialFunction> generate_library(const LibraryConfig& config, std::uint64_t seed);

/// Gram matrix R_ij = (rho_i, rho_j)_{H1}.
Eigen::MatrixXd h1_gram(std::span<const GridFunction> perturbations, const HemisphereGrid& grid);

class ShapeModel {
 public:
  ShapeModel() = default;
  ShapeModel(GridPtr grid, Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd eigenvalues,
             int library_size);

  const GridPtr& grid() const { return grid_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Column k holds the nodal values of basis function k.
  const Eigen::MatrixXd& basis() const { return basis_; }
  /// Nonzero eigenvalues of the Gram matrix, non-increasing.
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  int library_size() const { return library_size_; }
  int retained() const { return static_cast<int>(basis_.cols()); }

  ShapeModel truncated(int retained) const;

  /// Nodal radius for coefficients alpha (missing trailing entries are zero).
  Eigen::VectorXd nodal_radius(const Eigen::VectorXd& alpha) const;
  /// Interpolated radius in one direction; throws on non-positive radius.
  double radius(const Vec3& direction, const Eigen::VectorXd& alpha) const;
  /// Pointwise prior standard deviation of the radius for coefficient
  /// variances `variances` (one per retained basis function).
  Eigen::VectorXd radius_std(const Eigen::VectorXd& variances) const;

 private:
  GridPtr grid_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd eigenvalues_;
  int library_size_ = 0;
};

/// Optimal H1 basis from the Gram matrix: w_k = v_k / sqrt(lambda_k).
ShapeModel principal_basis(const Eigen::MatrixXd& gram, std::span<const GridFunction> perturbations,
                           int retained, const RadialFunction& mean);

/// Mean removal, Gram assembly and basis extraction in one go.
ShapeModel build_shape_model(std::span<const RadialFunction> library, int retained);

/// Relative squared representation error e(n~).
double representation_error(std::span<const double> eigenvalues, int retained);
double representation_error(const Eigen::VectorXd& eigenvalues, int retained);

Eigen::VectorXd project_coefficients(const GridFunction& perturbation, const ShapeModel& model);

/// Diagonal sample covariance lambda_k / (n - 1) of the retained coefficients.
Eigen::VectorXd sample_covariance(const ShapeModel& model);

std::vector<Vec3> evaluate_surface(const ShapeModel& model, const Eigen::VectorXd& alpha,
                                   std::span<const Vec3> directions);

nlohmann::json to_json(const ShapeModel& model);
ShapeModel shape_model_from_json(const nlohmann::json& j);
void save_shape_model(const ShapeModel& model, const std::string& path);
ShapeModel load_shape_model(const std::string& path);

}  // namespace cranio
