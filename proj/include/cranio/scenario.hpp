#pragma once

#include "cranio/inversion.hpp"
#include "cranio/io.hpp"
#include "cranio/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace cranio {

/// Everything one end-to-end run needs. Lengths in metres.
struct RunConfig {
  std::string name = "custom";
  LibraryConfig library;
  std::uint64_t library_seed = 1;
  int model_modes = 10;          // retained for the targets (n0)
  int reconstructed_modes = 5;   // n~
  nlohmann::json layout;         // belts or explicit electrodes
  MeshOptions reconstruction_mesh;
  MeshOptions simulation_mesh;
  MeshOptions storage_mesh;
  TargetConfig target;
  PhantomSpec phantom;
  double noise_level = 1e-3;
  PriorConfig priors;
  SolverConfig solver;
  ContactProfile profile = ContactProfile::smooth;
  std::vector<double> slice_levels = {0.02, 0.03, 0.04, 0.05, 0.06, 0.07};
  double slice_spacing = 0.001;

  ElectrodeLayout electrode_layout() const;
};

/// Version-1 schema; unknown keys anywhere are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::string& path);

/// Packaged configurations test1, test2, test3 and the desk-scale variant
/// desk (16 electrodes, coarser meshes).
RunConfig scenario_config(const std::string& name);
std::vector<std::string> scenario_names();

ShapeModel scenario_model(const RunConfig& c);

struct SimulationRun {
  TargetDraw target;
  Simulation simulation;
};

SimulationRun run_simulation(const RunConfig& c, const ShapeModel& model, std::uint64_t seed);

/// Problem with the reconstruction model and a storage head sized from the
/// prior (alpha_scale included).
InversionProblem make_problem(const RunConfig& c, const ShapeModel& model);

/// Relative L2 error of a storage-head conductivity against the phantom,
/// over the storage nodes inside the target head, lumped-mass weighted.
double relative_l2_error(const HeadMesh& storage, const Eigen::VectorXd& sigma, const PhantomSpec& phantom,
                         const HeadMesh& target_head);

struct Extremes {
  Vec3 max_point, min_point;
  double max_value = 0.0, min_value = 0.0;
};

/// Locations of the largest positive and negative deviations from `background`.
Extremes deviation_extremes(const std::vector<Vec3>& nodes, const Eigen::VectorXd& field, double background);

nlohmann::json state_to_json(const Reconstruction& r);
Parameters parameters_from_json(const nlohmann::json& j);
Table history_table(const std::vector<IterationRecord>& history);

/// Target vs reconstruction tables; angles relative to the intended layout,
/// alpha padded with NaN to the longer length.
struct ComparisonTables {
  Table zeta, alpha, theta, phi;
};
ComparisonTables compare_parameters(const TargetDraw& target, const Parameters& reconstructed,
                                    const ElectrodeLayout& intended);

/// Writes state.json, history.csv, head/storage conductivity VTK and the
/// reconstructed surface VTK into dir (created if needed); returns the file names.
std::vector<std::string> write_reconstruction(const std::string& dir, const Reconstruction& r,
                                              const InversionProblem& problem);

/// Writes data.csv, clean.csv, target.json and target VTK files into dir.
std::vector<std::string> write_simulation(const std::string& dir, const SimulationRun& s, const RunConfig& c);

/// Simulate, reconstruct in all three modes, write slices and a report.json
/// into dir. A failing stage is recorded in the report instead of aborting.
nlohmann::json run_scenario(const RunConfig& c, std::uint64_t seed, const std::string& dir,
                            const std::vector<InversionMode>& modes = {InversionMode::full, InversionMode::fixed_alpha,
                                                                       InversionMode::fixed_geometry});

/// Rebuilds report tables from a run directory (target.json + state files).
nlohmann::json build_report(const std::string& dir);

}  // namespace cranio
