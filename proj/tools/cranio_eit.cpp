#include "cranio/checks.hpp"
#include "cranio/scenario.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>

using namespace cranio;
namespace fs = std::filesystem;

namespace {

// a packaged scenario name or a config file
RunConfig resolve_config(const std::string& what) {
  for (const std::string& n : scenario_names())
    if (what == n) return scenario_config(n);
  return load_run_config(what);
}

ShapeModel model_for(const RunConfig& c, const std::string& model_path) {
  if (!model_path.empty()) return load_shape_model(model_path);
  return scenario_model(c);
}

int cmd_shape_model(const std::string& config, const std::string& out) {
  const RunConfig c = resolve_config(config);
  const ShapeModel m = scenario_model(c);
  save_shape_model(m, out);
  std::cout << "retained " << m.retained() << " of " << m.library_size() << " library heads\n";
  std::cout << "representation error e(n):";
  for (int n = 1; n <= m.retained(); ++n) std::cout << ' ' << representation_error(m.eigenvalues(), n);
  std::cout << '\n';
  return 0;
}

int cmd_meshgen(const std::string& config, const std::string& model_path, const std::string& which,
                const std::string& out) {
  const RunConfig c = resolve_config(config);
  const ShapeModel m = model_for(c, model_path);
  MeshOptions o = which == "simulation" ? c.simulation_mesh : which == "storage" ? c.storage_mesh : c.reconstruction_mesh;
  HeadMesh h;
  if (which == "storage") {
    const ShapeModel r = m.truncated(c.reconstructed_modes);
    h = build_storage_head(r, sample_covariance(r) * c.priors.alpha_scale, o);
  } else {
    h = build_head_mesh(m, Eigen::VectorXd::Zero(m.retained()), c.electrode_layout(), o);
  }
  fs::create_directories(out);
  write_vtk((fs::path(out) / "head.vtk").string(), vtk_tets(h.nodes, h.tets));
  VtkMesh s = vtk_triangles(h.nodes, h.boundary());
  Eigen::VectorXd region(h.boundary_region().size());
  for (std::size_t i = 0; i < h.boundary_region().size(); ++i) region(i) = h.boundary_region()[i];
  s.cell_data["electrode"] = region;
  write_vtk((fs::path(out) / "surface.vtk").string(), s);
  nlohmann::json q = to_json(mesh_quality(h));
  q["nodes"] = h.nodes.size();
  q["tets"] = h.tets.size();
  q["options"] = to_json(o);
  write_json((fs::path(out) / "quality.json").string(), q);
  std::cout << h.nodes.size() << " nodes, " << h.tets.size() << " tets, min radius ratio "
            << q["min_radius_ratio"].get<double>() << '\n';
  return 0;
}

int cmd_forward(const std::string& config, const std::string& model_path, const std::string& profile,
                const std::string& out) {
  const RunConfig c = resolve_config(config);
  const ShapeModel m = model_for(c, model_path);
  const ElectrodeLayout layout = c.electrode_layout();
  const HeadMesh h = build_head_mesh(m, Eigen::VectorXd::Zero(m.retained()), layout, c.reconstruction_mesh);
  const FemMesh f = fem_mesh(h);
  const Eigen::VectorXd sigma = rasterize_phantom(c.phantom, f.nodes);
  const ContactField z = build_contact_field(
      f, Eigen::VectorXd::Constant(layout.size(), c.target.contact_mean), contact_profile_from_string(profile));
  const ForwardSystem sys(f, sigma, z);
  const Eigen::MatrixXd P = current_patterns(layout.size());
  const std::vector<ForwardSolution> sol = solve_patterns(sys, P);
  double current_error = 0, sum_error = 0, residual = 0;
  for (int j = 0; j < P.cols(); ++j) {
    const Eigen::VectorXd I = electrode_currents(f, z, sol[j]);
    current_error = std::max(current_error, (I - P.col(j)).cwiseAbs().maxCoeff() / P.col(j).cwiseAbs().maxCoeff());
    sum_error = std::max(sum_error, std::abs(sol[j].U.sum()));
    residual = std::max(residual, sys.residual(sol[j], P.col(j)));
  }
  fs::create_directories(out);
  write_csv((fs::path(out) / "measurement.csv").string(), measurement_table(stacked_measurement(sol), layout.size()));
  write_json((fs::path(out) / "checks.json").string(), {{"current_recovery", current_error},
                                                        {"sum_of_potentials", sum_error},
                                                        {"relative_residual", residual},
                                                        {"nodes", f.node_count()}});
  std::cout << "current recovery " << current_error << ", sum U " << sum_error << ", residual " << residual << '\n';
  return 0;
}

int cmd_simulate(const std::string& config, const std::string& model_path, std::uint64_t seed,
                 const std::string& out) {
  const RunConfig c = resolve_config(config);
  const ShapeModel m = model_for(c, model_path);
  const SimulationRun s = run_simulation(c, m, seed);
  write_simulation(out, s, c);
  write_csv((fs::path(out) / "slices_target.csv").string(),
            slice_table(s.simulation.mesh.nodes, s.simulation.mesh.tets, s.simulation.sigma, c.slice_levels,
                        c.slice_spacing));
  std::cout << "simulated " << s.simulation.data.size() << " voltages, noise sd " << s.simulation.noise_sd << '\n';
  return 0;
}

int cmd_reconstruct(const std::string& data, const std::string& config, const std::string& model_path,
                    const std::string& mode, const std::string& out) {
  const RunConfig c = resolve_config(config);
  const ShapeModel m = model_for(c, model_path);
  const Eigen::VectorXd v = measurement_from_table(read_csv(data));
  const InversionProblem p = make_problem(c, m);
  SolverConfig sv = c.solver;
  sv.mode = inversion_mode_from_string(mode);
  const Reconstruction r = reconstruct(p, v, c.priors, sv);
  write_reconstruction(out, r, p);
  write_csv((fs::path(out) / "slices.csv").string(),
            slice_table(r.final.fem.nodes, r.final.fem.tets, r.final.sigma_head, c.slice_levels, c.slice_spacing));
  std::cout << to_string(sv.mode) << ": " << r.history.size() - 1 << " iterations, " << r.stop_reason << '\n';
  return 0;
}

int cmd_check_derivatives(const std::string& config, const std::string& model_path, int k, int layers) {
  const RunConfig c = resolve_config(config);
  const ShapeModel m = model_for(c, model_path);
  DerivativeCheckOptions o;
  o.mesh.k = k;
  o.mesh.layers = layers;
  const std::vector<DerivativeCheck> rows = check_derivatives(m, c.electrode_layout(), o);
  int failed = 0;
  std::printf("%-6s %6s %12s %12s %10s\n", "block", "column", "step", "value", "status");
  for (const DerivativeCheck& r : rows) {
    std::printf("%-6s %6d %12.4g %12.4g %10s\n", r.block.c_str(), r.column, r.step, r.value,
                r.passed() ? "ok" : "EXCEEDED");
    failed += !r.passed();
  }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Head EIT with uncertain geometry: shape model, meshing, forward model and reconstruction"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log", level, "log level (debug, info, warn, error)");

  std::string config, out, model, mode = "full", data, profile = "smooth", run, name, which = "reconstruction";
  std::uint64_t seed = 1;
  int k = 3, layers = 3;

  auto* shape = app.add_subcommand("shape-model", "principal component shape model");
  auto* build = shape->add_subcommand("build", "build the model from the synthetic library");
  shape->require_subcommand(1);
  build->add_option("--config", config, "config file or scenario name")->required();
  build->add_option("--out", out, "model JSON")->required();

  auto* meshgen = app.add_subcommand("meshgen", "mesh the mean head");
  meshgen->add_option("--config", config)->required();
  meshgen->add_option("--model", model, "shape model JSON (default: rebuilt from config)");
  meshgen->add_option("--mesh", which, "reconstruction, simulation or storage")
      ->check(CLI::IsMember({"reconstruction", "simulation", "storage"}));
  meshgen->add_option("--out", out)->required();

  auto* forward = app.add_subcommand("forward", "forward solve on the mean head with the phantom");
  forward->add_option("--config", config)->required();
  forward->add_option("--model", model);
  forward->add_option("--profile", profile)->check(CLI::IsMember({"smooth", "constant"}));
  forward->add_option("--out", out)->required();

  auto* simulate = app.add_subcommand("simulate", "draw a target and simulate noisy data");
  simulate->add_option("--config", config)->required();
  simulate->add_option("--model", model);
  simulate->add_option("--seed", seed);
  simulate->add_option("--out", out)->required();

  auto* recon = app.add_subcommand("reconstruct", "Gauss-Newton reconstruction");
  recon->add_option("--data", data, "measurement CSV")->required();
  recon->add_option("--config", config)->required();
  recon->add_option("--model", model);
  recon->add_option("--mode", mode)->check(CLI::IsMember({"full", "fixed-alpha", "fixed-geometry", "fixed_alpha",
                                                          "fixed_geometry"}));
  recon->add_option("--out", out)->required();

  auto* check = app.add_subcommand("check-derivatives", "compare Jacobian blocks with difference quotients");
  check->add_option("--config", config)->required();
  check->add_option("--model", model);
  check->add_option("--k", k, "surface subdivision level");
  check->add_option("--layers", layers);

  auto* scenario = app.add_subcommand("run-scenario", "simulate and reconstruct in all three modes");
  scenario->add_option("--name", name, "test1, test2, test3 or desk");
  scenario->add_option("--config", config, "config file instead of a packaged scenario");
  scenario->add_option("--seed", seed);
  scenario->add_option("--out", out)->required();

  auto* report = app.add_subcommand("report", "comparison tables for a run directory");
  report->add_option("--run", run)->required();
  report->add_option("--out", out, "report JSON (default: <run>/comparison.json)");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(level));

  try {
    if (build->parsed()) return cmd_shape_model(config, out);
    if (meshgen->parsed()) return cmd_meshgen(config, model, which, out);
    if (forward->parsed()) return cmd_forward(config, model, profile, out);
    if (simulate->parsed()) return cmd_simulate(config, model, seed, out);
    if (recon->parsed()) return cmd_reconstruct(data, config, model, mode, out);
    if (check->parsed()) return cmd_check_derivatives(config, model, k, layers);
    if (scenario->parsed()) {
      if (name.empty() == config.empty()) throw InvalidInput("give exactly one of --name and --config");
      const RunConfig c = name.empty() ? load_run_config(config) : scenario_config(name);
      const nlohmann::json r = run_scenario(c, seed, out);
      std::cout << r.dump(2) << '\n';
      return 0;
    }
    if (report->parsed()) {
      const nlohmann::json r = build_report(run);
      write_json(out.empty() ? (fs::path(run) / "comparison.json").string() : out, r);
      std::cout << r.dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
