#pragma once

#include "cranio/forward.hpp"
#include "cranio/meshgen.hpp"
#include "cranio/shape_model.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace cranio {

struct Inclusion {
  enum class Shape { ball, cylinder };
  Shape shape = Shape::ball;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  double height = 0.0;         // cylinders only
  Vec3 axis = Vec3::UnitX();  // cylinders only, unit length
  double value = 0.0;          // S/m
  bool contains(const Vec3& x) const;
  double volume() const;
};

struct PhantomSpec {
  double background = 0.2;
  std::vector<Inclusion> inclusions;
  void validate() const;
  /// Conductivity at a point (the last inclusion containing it wins).
  double value(const Vec3& x) const;
};

nlohmann::json to_json(const PhantomSpec& p);
PhantomSpec phantom_from_json(const nlohmann::json& j);

/// Nodal values by node membership.
Eigen::VectorXd rasterize_phantom(const PhantomSpec& spec, const std::vector<Vec3>& nodes);

/// Fraction of each inclusion's volume that lies outside a tet mesh,
/// estimated on a regular sample grid.
std::vector<double> inclusion_outside_fraction(const PhantomSpec& spec, const HeadMesh& head);

struct TargetConfig {
  int shape_modes = 10;      // n0
  double alpha_scale = 1.0;  // target alpha ~ N(0, alpha_scale Gamma_alpha)
  double theta_sd = 0.03;
  double phi_sd = 0.03;
  double contact_mean = 100.0;  // S/m^2
  double contact_sd = 10.0;
  int max_attempts = 100;
};

nlohmann::json to_json(const TargetConfig& c);
TargetConfig target_config_from_json(const nlohmann::json& j);

struct TargetDraw {
  Eigen::VectorXd alpha, theta, phi, zeta;
  std::uint64_t seed = 0;
  int attempts = 0;
};

nlohmann::json to_json(const TargetDraw& t);
TargetDraw target_from_json(const nlohmann::json& j);

/// Electrodes on the crown (footprint above the base plane) and pairwise
/// disjoint including the extension factor mu.
bool layout_admissible(const ShapeModel& model, const Eigen::VectorXd& alpha, const ElectrodeLayout& layout,
                       double mu);

/// Random target around the intended layout. Shape coefficients use the
/// first shape_modes basis functions of `model`.
TargetDraw draw_target(const ShapeModel& model, const ElectrodeLayout& intended, const TargetConfig& config,
                       std::uint64_t seed, double mu = 1.5);

struct SimulationConfig {
  MeshOptions mesh;  // finer than the reconstruction mesh
  ContactProfile profile = ContactProfile::constant;
  double noise_level = 1e-3;
};

struct Simulation {
  HeadMesh mesh;
  Eigen::VectorXd sigma;
  Eigen::VectorXd clean;
  Eigen::VectorXd data;
  double noise_sd = 0.0;
};

/// Gaussian noise with standard deviation level * range(clean), deterministic
/// in the seed.
Eigen::VectorXd add_noise(const Eigen::VectorXd& clean, double level, std::uint64_t seed, double* sd = nullptr);

Simulation simulate_measurements(const ShapeModel& model, const ElectrodeLayout& intended, const TargetDraw& target,
                                 const PhantomSpec& phantom, const SimulationConfig& config, std::uint64_t seed);

}  // namespace cranio
