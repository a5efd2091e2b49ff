#pragma once

#include "cranio/forward.hpp"
#include "cranio/meshgen.hpp"
#include "cranio/sensitivity.hpp"
#include "cranio/shape_model.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cranio {

enum class InversionMode { full, fixed_alpha, fixed_geometry };
InversionMode inversion_mode_from_string(const std::string& name);
std::string to_string(InversionMode mode);

struct PriorConfig {
  double sigma_sd = 0.1;        // S/m
  double sigma_length = 0.033;  // m
  // parameters of the distribution the contacts are believed to come from;
  // Gamma_zeta = (2 contact_sd zeta_bar / contact_mean)^2 I
  double contact_mean = 100.0;
  double contact_sd = 10.0;
  double theta_sd = 0.03;
  double phi_sd = 0.03;
  double alpha_scale = 1.0;  // multiplies the sample covariance of the shape coefficients
};

nlohmann::json to_json(const PriorConfig& c);
PriorConfig prior_config_from_json(const nlohmann::json& j);

/// Gaussian block with lower triangular factor: factor * factor^T = covariance.
struct PriorBlock {
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;
  Eigen::Index size() const { return mean.size(); }
  /// factor^{-1} x
  Eigen::VectorXd whiten(const Eigen::VectorXd& x) const;
};

PriorBlock gaussian_block(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance);
PriorBlock diagonal_block(Eigen::VectorXd mean, const Eigen::VectorXd& variances);

/// sd^2 exp(-|x_i - x_j|^2 / (2 l^2)) with jitter 1e-10 sd^2 on the diagonal.
Eigen::MatrixXd squared_exponential(const std::vector<Vec3>& points, double sd, double length);

struct Priors {
  PriorBlock sigma, zeta, alpha, theta, phi;
};

Priors build_priors(const PriorConfig& config, const std::vector<Vec3>& storage_nodes, double sigma_mean,
                    double zeta_mean, const Eigen::VectorXd& alpha_variances, const ElectrodeLayout& layout);

/// Mean head inflated radially by `inflation` prior standard deviations of
/// the radius plus `margin`, meshed without electrodes.
HeadMesh build_storage_head(const ShapeModel& model, const Eigen::VectorXd& alpha_variances,
                            const MeshOptions& options, double inflation = 3.0, double margin = 0.01);

/// Layout with the centres moved to (theta, phi), radii unchanged.
ElectrodeLayout moved_layout(const ElectrodeLayout& intended, const Eigen::VectorXd& theta, const Eigen::VectorXd& phi);

/// Everything fixed during one reconstruction.
struct InversionProblem {
  ShapeModel model;        // reconstruction model, all retained modes are estimated
  ElectrodeLayout layout;  // intended electrode positions and radii
  MeshOptions mesh;
  HeadMesh storage;
  ContactProfile profile = ContactProfile::smooth;
  double sigma_floor = 1e-6;
};

/// sigma on the storage nodes; the other blocks as in the forward model.
struct Parameters {
  Eigen::VectorXd sigma, zeta, alpha, theta, phi;
};

struct ModelEvaluation {
  HeadMesh head;
  FemMesh fem;
  Eigen::SparseMatrix<double> transfer;  // head nodes x storage nodes
  Eigen::VectorXd sigma_head;
  ContactField zeta;
  ForwardRun run;
  bool remeshed = true;         // false when `head` is a moved copy of an earlier mesh
  double fresh_quality = 0.0;  // min radius ratio of the last freshly generated mesh
};

/// Meshes the head for (alpha, theta, phi), pulls sigma over from the
/// storage head and solves the standard patterns.
ModelEvaluation evaluate_model(const InversionProblem& problem, const Parameters& b);

/// Same, but moves the nodes of `base` to the new geometry when that keeps
/// every electrode inside its patch and the radius ratio above half of the
/// last fresh mesh; otherwise meshes from scratch.
ModelEvaluation evaluate_model(const InversionProblem& problem, const Parameters& b, const ModelEvaluation& base);

/// Jacobian blocks at an evaluation. Blocks not estimated in `mode` are left
/// empty. Only J_alpha performs further forward solves.
JacobianBlocks jacobian_blocks(const InversionProblem& problem, const ModelEvaluation& at, const Parameters& b,
                               InversionMode mode, const Eigen::VectorXd& alpha_steps);

struct HomogeneousFit {
  double sigma = 0.0;
  double zeta = 0.0;
  double misfit = 0.0;  // whitened squared residual
  int iterations = 0;
  bool converged = false;
};

/// Two-parameter fit of constant conductivity and contact on a fixed mesh,
/// Gauss-Newton in the logarithms with difference quotients.
HomogeneousFit homogeneous_fit(const FemMesh& mesh, ContactProfile profile, const Eigen::VectorXd& data,
                               double noise_sd, double zeta_start = 100.0, int max_iterations = 20);

/// Active prior blocks in Jacobian column order.
class StackedPrior {
 public:
  explicit StackedPrior(std::vector<const PriorBlock*> blocks);
  Eigen::Index size() const { return size_; }
  const std::vector<const PriorBlock*>& blocks() const { return blocks_; }
  Eigen::VectorXd mean() const;
  Eigen::VectorXd whiten(const Eigen::VectorXd& deviation) const;
  /// Block-diagonal factor times z.
  Eigen::VectorXd apply(const Eigen::VectorXd& z) const;
  /// J times the block-diagonal factor.
  Eigen::MatrixXd right_apply(const Eigen::MatrixXd& J) const;

 private:
  std::vector<const PriorBlock*> blocks_;
  Eigen::Index size_ = 0;
};

/// argmin_z |A z - y|^2 with A = [J / noise_sd; L^{-1}], y = [residual / noise_sd;
/// L^{-1} deviation], where residual = U(b) - V and deviation = b - b0.
/// Solved in whitened coordinates; whichever of the parameter and data
/// sized normal systems is smaller is factorized.
Eigen::VectorXd gauss_newton_step(const Eigen::MatrixXd& J, const Eigen::VectorXd& residual, double noise_sd,
                                  const StackedPrior& prior, const Eigen::VectorXd& deviation);

struct LineSearchResult {
  bool accepted = false;
  double fraction = 0.0;
  double value = 0.0;
  int trials = 0;
};

/// Tries fractions q, q/2, ..., q/2^halvings of the step and accepts the first
/// strict decrease below `current`. objective(fraction) returns nothing when
/// the trial point is infeasible or cannot be evaluated.
LineSearchResult line_search(const std::function<std::optional<double>(double)>& objective, double current,
                             double q = 0.5, int halvings = 3);

struct SolverConfig {
  InversionMode mode = InversionMode::full;
  double q = 0.5;
  int halvings = 3;
  int max_iterations = 20;
  double relative_decrease = 1e-6;  // stop after two consecutive smaller decreases
  double noise_level = 1e-3;        // varsigma_eta
  bool remesh_trials = false;       // fresh mesh for every line-search trial instead of moving the current one
};

nlohmann::json to_json(const SolverConfig& c);
SolverConfig solver_config_from_json(const nlohmann::json& j);

struct IterationRecord {
  int iteration = 0;
  double objective = 0.0;
  double misfit = 0.0;
  // squared whitened prior terms per block
  double prior_sigma = 0.0, prior_zeta = 0.0, prior_alpha = 0.0, prior_theta = 0.0, prior_phi = 0.0;
  // norms of the accepted update per block
  double step_sigma = 0.0, step_zeta = 0.0, step_alpha = 0.0, step_theta = 0.0, step_phi = 0.0;
  double fraction = 0.0;
  double seconds = 0.0;
  long solves = 0;
  bool remeshed = true;  // mesh of the accepted point generated from scratch
};

struct Reconstruction {
  InversionMode mode = InversionMode::full;
  Parameters parameters;
  Parameters initial;
  Priors priors;
  HomogeneousFit homogeneous;
  double noise_sd = 0.0;
  std::vector<IterationRecord> history;
  std::string stop_reason;
  ModelEvaluation final;
};

/// Objective value split into its parts.
struct ObjectiveParts {
  double misfit = 0.0;
  double sigma = 0.0, zeta = 0.0, alpha = 0.0, theta = 0.0, phi = 0.0;
  double total() const { return misfit + sigma + zeta + alpha + theta + phi; }
};

ObjectiveParts objective(const Eigen::VectorXd& prediction, const Eigen::VectorXd& data, double noise_sd,
                         const Parameters& b, const Priors& priors, InversionMode mode);

/// Noise standard deviation varsigma_eta * (max - min) of a measurement.
double noise_sd(const Eigen::VectorXd& measurement, double level);

Reconstruction reconstruct(const InversionProblem& problem, const Eigen::VectorXd& data, const PriorConfig& priors,
                           const SolverConfig& solver);

}  // namespace cranio
