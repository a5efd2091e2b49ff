#include "cranio/scenario.hpp"
#include "cranio/transfer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <limits>

namespace cranio {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& what) {
  if (!j.is_object()) throw InvalidInput(what + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw InvalidInput("unknown " + what + " key '" + key + "'");
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

MeshOptions mesh(int k, int layers) {
  MeshOptions o;
  o.k = k;
  o.layers = layers;
  return o;
}

json belts(std::initializer_list<Belt> list, double radius) {
  json b = json::array();
  for (const Belt& x : list) b.push_back({{"count", x.count}, {"theta", x.theta}, {"phase", x.phase}});
  return json{{"belts", b}, {"radius", radius}};
}

Inclusion ball(Vec3 c, double r, double value) {
  Inclusion i;
  i.center = c;
  i.radius = r;
  i.value = value;
  return i;
}

std::string rel(const fs::path& p, const fs::path& base) { return fs::relative(p, base).generic_string(); }

json comparison_files(const fs::path& dir, const ComparisonTables& t,
                      std::vector<std::string>& manifest, const fs::path& root) {
  json out;
  const std::pair<const char*, const Table*> items[] = {
      {"zeta", &t.zeta}, {"alpha", &t.alpha}, {"theta", &t.theta}, {"phi", &t.phi}};
  for (const auto& [name, table] : items) {
    const fs::path p = dir / ("compare_" + std::string(name) + ".csv");
    write_csv(p.string(), *table);
    manifest.push_back(rel(p, root));
    out[name] = rel(p, root);
  }
  return out;
}

}  // namespace

ElectrodeLayout RunConfig::electrode_layout() const { return layout_from_json(layout); }

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"version", "name", "shape_model", "layout", "meshes", "target", "phantom", "simulation", "priors",
                 "solver", "reconstruction", "slices"},
             "config");
  if (j.value("version", 0) != 1) throw InvalidInput("config version must be 1");
  RunConfig c;
  c.name = j.value("name", c.name);
  if (j.contains("shape_model")) {
    const json& s = j.at("shape_model");
    check_keys(s, {"library", "seed", "modes"}, "shape_model");
    if (s.contains("library")) c.library = library_config_from_json(s.at("library"));
    c.library_seed = s.value("seed", c.library_seed);
    c.model_modes = s.value("modes", c.model_modes);
  }
  if (!j.contains("layout")) throw InvalidInput("config needs a layout");
  {
    const json& l = j.at("layout");
    if (l.contains("belts")) {
      check_keys(l, {"belts", "radius"}, "layout");
      for (const auto& b : l.at("belts")) check_keys(b, {"count", "theta", "phase"}, "belt");
    } else {
      check_keys(l, {"electrodes"}, "layout");
      for (const auto& e : l.at("electrodes")) check_keys(e, {"theta", "phi", "radius"}, "electrode");
    }
    c.layout = l;
    c.electrode_layout();  // validates
  }
  c.reconstruction_mesh = mesh(4, 4);
  c.simulation_mesh = mesh(5, 6);
  c.storage_mesh = mesh(4, 5);
  if (j.contains("meshes")) {
    const json& m = j.at("meshes");
    check_keys(m, {"reconstruction", "simulation", "storage"}, "meshes");
    if (m.contains("reconstruction")) c.reconstruction_mesh = mesh_options_from_json(m.at("reconstruction"));
    if (m.contains("simulation")) c.simulation_mesh = mesh_options_from_json(m.at("simulation"));
    if (m.contains("storage")) c.storage_mesh = mesh_options_from_json(m.at("storage"));
  }
  if (j.contains("target")) c.target = target_config_from_json(j.at("target"));
  if (j.contains("phantom")) c.phantom = phantom_from_json(j.at("phantom"));
  if (j.contains("simulation")) {
    const json& s = j.at("simulation");
    check_keys(s, {"noise_level"}, "simulation");
    c.noise_level = s.value("noise_level", c.noise_level);
  }
  if (j.contains("priors")) c.priors = prior_config_from_json(j.at("priors"));
  if (j.contains("solver")) c.solver = solver_config_from_json(j.at("solver"));
  if (j.contains("reconstruction")) {
    const json& r = j.at("reconstruction");
    check_keys(r, {"modes", "profile"}, "reconstruction");
    c.reconstructed_modes = r.value("modes", c.reconstructed_modes);
    if (r.contains("profile")) c.profile = contact_profile_from_string(r.at("profile").get<std::string>());
  }
  if (j.contains("slices")) {
    const json& s = j.at("slices");
    check_keys(s, {"levels", "spacing"}, "slices");
    if (s.contains("levels")) c.slice_levels = s.at("levels").get<std::vector<double>>();
    c.slice_spacing = s.value("spacing", c.slice_spacing);
  }
  if (c.reconstructed_modes < 0 || c.reconstructed_modes > c.model_modes)
    throw InvalidInput("reconstructed modes must not exceed the model modes");
  if (c.target.shape_modes > c.model_modes) throw InvalidInput("target shape modes exceed the model modes");
  if (c.noise_level < 0) throw InvalidInput("noise level must be non-negative");
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"version", 1},
              {"name", c.name},
              {"shape_model", {{"library", to_json(c.library)}, {"seed", c.library_seed}, {"modes", c.model_modes}}},
              {"layout", c.layout},
              {"meshes",
               {{"reconstruction", to_json(c.reconstruction_mesh)},
                {"simulation", to_json(c.simulation_mesh)},
                {"storage", to_json(c.storage_mesh)}}},
              {"target", to_json(c.target)},
              {"phantom", to_json(c.phantom)},
              {"simulation", {{"noise_level", c.noise_level}}},
              {"priors", to_json(c.priors)},
              {"solver", to_json(c.solver)},
              {"reconstruction", {{"modes", c.reconstructed_modes}, {"profile", to_string(c.profile)}}},
              {"slices", {{"levels", c.slice_levels}, {"spacing", c.slice_spacing}}}};
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json(path)); }

std::vector<std::string> scenario_names() { return {"test1", "test2", "test3", "desk"}; }

RunConfig scenario_config(const std::string& name) {
  RunConfig c;
  c.name = name;
  c.reconstruction_mesh = mesh(4, 4);
  c.simulation_mesh = mesh(5, 6);
  c.storage_mesh = mesh(4, 5);
  c.phantom.background = 0.2;
  const Vec3 cm(0.01, 0.01, 0.01);
  if (name == "test1" || name == "desk") {
    c.layout = name == "desk" ? belts({{10, 1.2, 0.0}, {6, 0.7, 0.3}}, 0.0075)
                              : belts({{16, 1.25, 0.0}, {10, 0.85, M_PI / 10}, {6, 0.42, 0.0}}, 0.0075);
    c.phantom.inclusions = {ball(Vec3(-2, -2, 6).cwiseProduct(cm), 0.015, 2.0),
                            ball(Vec3(3, 3, 3).cwiseProduct(cm), 0.02, 0.02)};
  } else if (name == "test2") {
    c.layout = belts({{16, 1.25, 0.0}, {10, 0.85, M_PI / 10}, {6, 0.42, 0.0}}, 0.0075);
    c.target.theta_sd = c.target.phi_sd = 0.04;
    c.target.contact_sd = 20.0;
    c.priors.theta_sd = c.priors.phi_sd = 0.04;
    c.priors.contact_sd = 20.0;
    Inclusion cyl;
    cyl.shape = Inclusion::Shape::cylinder;
    cyl.center = Vec3(1, 3, 3).cwiseProduct(cm);
    cyl.radius = 0.015;
    cyl.height = 0.07;
    cyl.axis = Vec3::UnitX();  // normal of the coronal plane
    cyl.value = 0.02;
    c.phantom.inclusions = {cyl};
  } else if (name == "test3") {
    c.layout = belts({{14, 1.15, 0.0}, {8, 0.65, M_PI / 8}}, 0.01);
    c.target.theta_sd = c.target.phi_sd = 0.02;
    c.priors.theta_sd = c.priors.phi_sd = 0.02;
    c.target.alpha_scale = 2.0;
    c.priors.alpha_scale = 2.0;
    c.phantom.inclusions = {ball(Vec3(-5, 0, 5).cwiseProduct(cm), 0.015, 2.0),
                            ball(Vec3(4, -2, 3).cwiseProduct(cm), 0.015, 2.0)};
  } else {
    throw InvalidInput("unknown scenario '" + name + "'");
  }
  return run_config_from_json(to_json(c));
}

ShapeModel scenario_model(const RunConfig& c) {
  return build_shape_model(generate_library(c.library, c.library_seed), c.model_modes);
}

SimulationRun run_simulation(const RunConfig& c, const ShapeModel& model, std::uint64_t seed) {
  SimulationRun s;
  const ElectrodeLayout layout = c.electrode_layout();
  s.target = draw_target(model, layout, c.target, seed, c.simulation_mesh.mu);
  SimulationConfig sc;
  sc.mesh = c.simulation_mesh;
  sc.noise_level = c.noise_level;
  s.simulation = simulate_measurements(model, layout, s.target, c.phantom, sc, seed);
  return s;
}

InversionProblem make_problem(const RunConfig& c, const ShapeModel& model) {
  InversionProblem p;
  p.model = model.truncated(c.reconstructed_modes);
  p.layout = c.electrode_layout();
  p.mesh = c.reconstruction_mesh;
  p.profile = c.profile;
  p.storage = build_storage_head(p.model, sample_covariance(p.model) * c.priors.alpha_scale, c.storage_mesh);
  return p;
}

double relative_l2_error(const HeadMesh& storage, const Eigen::VectorXd& sigma, const PhantomSpec& phantom,
                         const HeadMesh& target_head) {
  if (sigma.size() != static_cast<Eigen::Index>(storage.nodes.size()))
    throw InvalidInput("conductivity does not match the storage head");
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(sigma.size());
  for (const Tet& t : storage.tets) {
    const double v = std::abs(signed_volume(storage.nodes[t[0]], storage.nodes[t[1]], storage.nodes[t[2]],
                                            storage.nodes[t[3]])) / 4;
    for (int i : t) mass(i) += v;
  }
  const TetLocator loc(target_head.nodes, target_head.tets);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < storage.nodes.size(); ++i) {
    if (loc.locate(storage.nodes[i]).tet < 0) continue;
    const double truth = phantom.value(storage.nodes[i]);
    num += mass(i) * (sigma(i) - truth) * (sigma(i) - truth);
    den += mass(i) * truth * truth;
  }
  if (den == 0) throw InvalidInput("no storage node lies inside the target head");
  return std::sqrt(num / den);
}

Extremes deviation_extremes(const std::vector<Vec3>& nodes, const Eigen::VectorXd& field, double background) {
  if (field.size() != static_cast<Eigen::Index>(nodes.size()) || nodes.empty())
    throw InvalidInput("field does not match the nodes");
  Eigen::Index imax, imin;
  Extremes e;
  e.max_value = field.maxCoeff(&imax) - background;
  e.min_value = field.minCoeff(&imin) - background;
  e.max_point = nodes[imax];
  e.min_point = nodes[imin];
  return e;
}

json state_to_json(const Reconstruction& r) {
  const HomogeneousFit& h = r.homogeneous;
  return json{{"mode", to_string(r.mode)},
              {"sigma", vec_json(r.parameters.sigma)},
              {"zeta", vec_json(r.parameters.zeta)},
              {"alpha", vec_json(r.parameters.alpha)},
              {"theta", vec_json(r.parameters.theta)},
              {"phi", vec_json(r.parameters.phi)},
              {"homogeneous",
               {{"sigma", h.sigma}, {"zeta", h.zeta}, {"misfit", h.misfit}, {"iterations", h.iterations},
                {"converged", h.converged}}},
              {"noise_sd", r.noise_sd},
              {"iterations", static_cast<int>(r.history.size()) - 1},
              {"objective", r.history.empty() ? 0.0 : r.history.back().objective},
              {"stop_reason", r.stop_reason}};
}

Parameters parameters_from_json(const json& j) {
  Parameters p;
  p.sigma = vec_from(j.at("sigma"));
  p.zeta = vec_from(j.at("zeta"));
  p.alpha = vec_from(j.at("alpha"));
  p.theta = vec_from(j.at("theta"));
  p.phi = vec_from(j.at("phi"));
  if (p.theta.size() != p.zeta.size() || p.phi.size() != p.zeta.size())
    throw InvalidInput("state electrode vectors differ in length");
  return p;
}

Table history_table(const std::vector<IterationRecord>& history) {
  Table t;
  t.header = {"iteration",  "objective",  "misfit",     "prior_sigma", "prior_zeta", "prior_alpha", "prior_theta",
              "prior_phi",  "step_sigma", "step_zeta",  "step_alpha",  "step_theta", "step_phi",    "fraction",
              "seconds",    "solves",     "remeshed"};
  for (const IterationRecord& r : history)
    t.rows.push_back({double(r.iteration), r.objective, r.misfit, r.prior_sigma, r.prior_zeta, r.prior_alpha,
                      r.prior_theta, r.prior_phi, r.step_sigma, r.step_zeta, r.step_alpha, r.step_theta, r.step_phi,
                      r.fraction, r.seconds, double(r.solves), double(r.remeshed)});
  return t;
}

ComparisonTables compare_parameters(const TargetDraw& target, const Parameters& rec, const ElectrodeLayout& intended) {
  const int M = intended.size();
  if (target.zeta.size() != M || rec.zeta.size() != M || target.theta.size() != M || rec.theta.size() != M ||
      target.phi.size() != M || rec.phi.size() != M)
    throw InvalidInput("electrode counts of target, reconstruction and layout differ");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ComparisonTables t;
  t.zeta.header = {"electrode", "reconstructed", "target"};
  t.theta.header = {"electrode", "reconstructed", "target"};
  t.phi.header = {"electrode", "reconstructed", "target"};
  for (int m = 0; m < M; ++m) {
    t.zeta.rows.push_back({double(m + 1), rec.zeta(m), target.zeta(m)});
    t.theta.rows.push_back({double(m + 1), rec.theta(m) - intended.theta[m], target.theta(m) - intended.theta[m]});
    // azimuth differences wrapped to (-pi, pi]
    auto wrap = [](double a) { return std::remainder(a, 2 * M_PI); };
    t.phi.rows.push_back({double(m + 1), wrap(rec.phi(m) - intended.phi[m]), wrap(target.phi(m) - intended.phi[m])});
  }
  t.alpha.header = {"index", "reconstructed", "target"};
  const Eigen::Index n = std::max(rec.alpha.size(), target.alpha.size());
  for (Eigen::Index k = 0; k < n; ++k)
    t.alpha.rows.push_back({double(k + 1), k < rec.alpha.size() ? rec.alpha(k) : nan,
                            k < target.alpha.size() ? target.alpha(k) : nan});
  return t;
}

std::vector<std::string> write_reconstruction(const std::string& dir, const Reconstruction& r,
                                              const InversionProblem& problem) {
  fs::create_directories(dir);
  const fs::path d(dir);
  std::vector<std::string> files;
  write_json((d / "state.json").string(), state_to_json(r));
  files.push_back("state.json");
  write_csv((d / "history.csv").string(), history_table(r.history));
  files.push_back("history.csv");

  VtkMesh head = vtk_tets(r.final.fem.nodes, r.final.fem.tets);
  head.point_data["sigma"] = r.final.sigma_head;
  write_vtk((d / "head_sigma.vtk").string(), head);
  files.push_back("head_sigma.vtk");

  VtkMesh storage = vtk_tets(problem.storage.nodes, problem.storage.tets);
  storage.point_data["sigma"] = r.parameters.sigma;
  write_vtk((d / "storage_sigma.vtk").string(), storage);
  files.push_back("storage_sigma.vtk");

  VtkMesh surface = vtk_triangles(r.final.fem.nodes, r.final.fem.boundary);
  Eigen::VectorXd region(r.final.fem.region.size());
  for (std::size_t i = 0; i < r.final.fem.region.size(); ++i) region(i) = r.final.fem.region[i];
  surface.cell_data["electrode"] = region;
  write_vtk((d / "geometry.vtk").string(), surface);
  files.push_back("geometry.vtk");
  return files;
}

std::vector<std::string> write_simulation(const std::string& dir, const SimulationRun& s, const RunConfig& c) {
  fs::create_directories(dir);
  const fs::path d(dir);
  const int M = static_cast<int>(s.target.zeta.size());
  write_csv((d / "data.csv").string(), measurement_table(s.simulation.data, M));
  write_csv((d / "clean.csv").string(), measurement_table(s.simulation.clean, M));
  json t = to_json(s.target);
  t["noise_sd"] = s.simulation.noise_sd;
  t["noise_level"] = c.noise_level;
  t["phantom"] = to_json(c.phantom);
  t["layout"] = to_json(c.electrode_layout());
  write_json((d / "target.json").string(), t);

  VtkMesh vol = vtk_tets(s.simulation.mesh.nodes, s.simulation.mesh.tets);
  vol.point_data["sigma"] = s.simulation.sigma;
  write_vtk((d / "target_sigma.vtk").string(), vol);
  VtkMesh surface = vtk_triangles(s.simulation.mesh.nodes, s.simulation.mesh.boundary());
  Eigen::VectorXd region(s.simulation.mesh.boundary_region().size());
  for (std::size_t i = 0; i < s.simulation.mesh.boundary_region().size(); ++i)
    region(i) = s.simulation.mesh.boundary_region()[i];
  surface.cell_data["electrode"] = region;
  write_vtk((d / "target_geometry.vtk").string(), surface);
  return {"data.csv", "clean.csv", "target.json", "target_sigma.vtk", "target_geometry.vtk"};
}

json run_scenario(const RunConfig& c, std::uint64_t seed, const std::string& dir,
                  const std::vector<InversionMode>& modes) {
  const fs::path root(dir);
  fs::create_directories(root);
  json report{{"name", c.name}, {"seed", seed}, {"config", to_json(c)}};
  std::vector<std::string> manifest;
  write_json((root / "config.json").string(), to_json(c));
  manifest.push_back("config.json");

  auto finish = [&]() {
    report["manifest"] = manifest;
    write_json((root / "report.json").string(), report);
    return report;
  };

  ShapeModel model;
  SimulationRun sim;
  try {
    model = scenario_model(c);
    sim = run_simulation(c, model, seed);
    for (const std::string& f : write_simulation(dir, sim, c)) manifest.push_back(f);
    write_csv((root / "slices_target.csv").string(),
              slice_table(sim.simulation.mesh.nodes, sim.simulation.mesh.tets, sim.simulation.sigma, c.slice_levels,
                          c.slice_spacing));
    manifest.push_back("slices_target.csv");
    report["simulation"] = {{"status", "ok"},
                            {"nodes", sim.simulation.mesh.nodes.size()},
                            {"tets", sim.simulation.mesh.tets.size()},
                            {"noise_sd", sim.simulation.noise_sd},
                            {"target_attempts", sim.target.attempts}};
  } catch (const std::exception& e) {
    spdlog::error("simulation failed: {}", e.what());
    report["simulation"] = {{"status", "failed"}, {"error", e.what()}};
    return finish();
  }

  InversionProblem problem;
  try {
    problem = make_problem(c, model);
  } catch (const std::exception& e) {
    report["storage"] = {{"status", "failed"}, {"error", e.what()}};
    return finish();
  }
  report["storage"] = {{"status", "ok"}, {"nodes", problem.storage.nodes.size()}};

  for (InversionMode mode : modes) {
    const std::string name = to_string(mode);
    json& out = report["reconstructions"][name];
    try {
      SolverConfig sv = c.solver;
      sv.mode = mode;
      const Reconstruction r = reconstruct(problem, sim.simulation.data, c.priors, sv);
      const fs::path sub = root / name;
      for (const std::string& f : write_reconstruction(sub.string(), r, problem))
        manifest.push_back(rel(sub / f, root));
      const fs::path slices = root / ("slices_" + name + ".csv");
      write_csv(slices.string(),
                slice_table(r.final.fem.nodes, r.final.fem.tets, r.final.sigma_head, c.slice_levels, c.slice_spacing));
      manifest.push_back(rel(slices, root));
      const ComparisonTables cmp = compare_parameters(sim.target, r.parameters, problem.layout);
      out["comparisons"] = comparison_files(sub, cmp, manifest, root);

      const Extremes ex = deviation_extremes(r.final.fem.nodes, r.final.sigma_head, r.homogeneous.sigma);
      json incl = json::array();
      for (const Inclusion& inc : c.phantom.inclusions) {
        const Vec3& p = inc.value > c.phantom.background ? ex.max_point : ex.min_point;
        incl.push_back({{"value", inc.value}, {"extreme_distance", (p - inc.center).norm()}});
      }
      out["status"] = "ok";
      out["iterations"] = static_cast<int>(r.history.size()) - 1;
      out["stop_reason"] = r.stop_reason;
      out["objective"] = r.history.back().objective;
      out["relative_l2_error"] = relative_l2_error(problem.storage, r.parameters.sigma, c.phantom, sim.simulation.mesh);
      out["inclusions"] = incl;
      out["seconds"] = r.history.back().seconds;
    } catch (const std::exception& e) {
      spdlog::error("{} reconstruction failed: {}", name, e.what());
      out = {{"status", "failed"}, {"error", e.what()}};
    }
  }
  return finish();
}

json build_report(const std::string& dir) {
  const fs::path root(dir);
  const json tj = read_json((root / "target.json").string());
  const TargetDraw target = target_from_json(tj);
  const ElectrodeLayout intended = layout_from_json(tj.at("layout"));
  json report{{"run", dir}};
  std::vector<std::string> manifest;
  for (const InversionMode mode : {InversionMode::full, InversionMode::fixed_alpha, InversionMode::fixed_geometry}) {
    const std::string name = to_string(mode);
    const fs::path state = root / name / "state.json";
    if (!fs::exists(state)) continue;
    const json sj = read_json(state.string());
    const ComparisonTables cmp = compare_parameters(target, parameters_from_json(sj), intended);
    json& out = report["reconstructions"][name];
    out["comparisons"] = comparison_files(root / name, cmp, manifest, root);
    out["iterations"] = sj.at("iterations");
    out["stop_reason"] = sj.at("stop_reason");
    out["objective"] = sj.at("objective");
  }
  if (!report.contains("reconstructions")) throw InvalidInput("no reconstruction states under " + dir);
  report["manifest"] = manifest;
  return report;
}

}  // namespace cranio
