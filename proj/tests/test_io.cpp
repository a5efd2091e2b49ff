#include "cranio/io.hpp"
#include "cranio/scenario.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace cranio;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cranio_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_or_both_nan(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

// small enough to run the whole pipeline in a test
RunConfig tiny_config() {
  RunConfig c = scenario_config("desk");
  c.name = "tiny";
  c.library.n = 12;
  c.model_modes = 4;
  c.reconstructed_modes = 2;
  c.layout = {{"belts", {{{"count", 5}, {"theta", 1.1}, {"phase", 0.0}}, {{"count", 3}, {"theta", 0.5}, {"phase", 0.4}}}},
              {"radius", 0.0075}};
  c.reconstruction_mesh.k = 3;
  c.reconstruction_mesh.layers = 3;
  c.simulation_mesh.k = 4;
  c.simulation_mesh.layers = 4;
  c.storage_mesh.k = 3;
  c.storage_mesh.layers = 3;
  c.target.shape_modes = 4;
  c.solver.max_iterations = 2;
  c.slice_levels = {0.03, 0.06};
  c.slice_spacing = 0.01;
  return run_config_from_json(to_json(c));
}

// drop wall-clock fields before comparing runs
void strip_timings(nlohmann::json& j) {
  if (j.is_object()) {
    j.erase("seconds");
    for (auto& [_, v] : j.items()) strip_timings(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_timings(v);
  }
}

}  // namespace

TEST(Vtk, TetraRoundTripWithFields) {
  const HeadMesh h = coarse_head();
  VtkMesh m = vtk_tets(h.nodes, h.tets);
  Eigen::VectorXd f(h.nodes.size());
  for (std::size_t i = 0; i < h.nodes.size(); ++i) f(i) = h.nodes[i].z() * 1e3 + 1.0 / 3;
  f(0) = std::numeric_limits<double>::quiet_NaN();
  m.point_data["sigma"] = f;
  m.cell_data["id"] = Eigen::VectorXd::LinSpaced(h.tets.size(), 0, h.tets.size() - 1);
  const fs::path p = scratch("vtk") / "m.vtk";
  write_vtk(p.string(), m);
  const VtkMesh r = read_vtk(p.string());
  ASSERT_EQ(r.points.size(), m.points.size());
  ASSERT_EQ(r.cells, m.cells);
  for (std::size_t i = 0; i < r.points.size(); ++i) EXPECT_EQ(r.points[i], m.points[i]);
  for (Eigen::Index i = 0; i < f.size(); ++i) EXPECT_TRUE(same_or_both_nan(r.point_data.at("sigma")(i), f(i))) << i;
  EXPECT_EQ(r.cell_data.at("id"), m.cell_data.at("id"));
}

TEST(Vtk, TrianglesAndMalformedFiles) {
  const HeadMesh h = coarse_head();
  const VtkMesh s = vtk_triangles(h.nodes, h.boundary());
  const fs::path d = scratch("vtk_bad");
  write_vtk((d / "s.vtk").string(), s);
  EXPECT_EQ(read_vtk((d / "s.vtk").string()).cells.size(), h.boundary().size());

  write_text(d / "bad.vtk", "# vtk DataFile Version 3.0\nx\nBINARY\n");
  EXPECT_THROW(read_vtk((d / "bad.vtk").string()), InvalidInput);
  write_text(d / "short.vtk",
             "# vtk DataFile Version 3.0\nx\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 3 double\n0 0 0\n1 0 0\n");
  EXPECT_THROW(read_vtk((d / "short.vtk").string()), InvalidInput);
  VtkMesh wrong = s;
  wrong.point_data["f"] = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(write_vtk((d / "w.vtk").string(), wrong), InvalidInput);
  EXPECT_THROW(read_vtk((d / "missing.vtk").string()), InvalidInput);
}

TEST(Csv, RoundTripAndErrors) {
  Table t;
  t.header = {"a", "b"};
  t.rows = {{1.0, 0.1}, {-2.5e-17, std::numeric_limits<double>::quiet_NaN()}, {1.0 / 3, 1e300}};
  const fs::path d = scratch("csv");
  write_csv((d / "t.csv").string(), t);
  const Table r = read_csv((d / "t.csv").string());
  EXPECT_EQ(r.header, t.header);
  ASSERT_EQ(r.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_TRUE(same_or_both_nan(r.rows[i][j], t.rows[i][j])) << i << ' ' << j;
  EXPECT_EQ(r.values("b")(2), 1e300);
  EXPECT_THROW(r.column("c"), InvalidInput);

  write_text(d / "ragged.csv", "a,b\n1,2\n3\n");
  EXPECT_THROW(read_csv((d / "ragged.csv").string()), InvalidInput);
  write_text(d / "text.csv", "a,b\n1,x\n");
  EXPECT_THROW(read_csv((d / "text.csv").string()), InvalidInput);
}

TEST(Csv, MeasurementTableRoundTrip) {
  const int M = 6;
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(M * (M - 1), -1.0, 1.0);
  const Table t = measurement_table(v, M);
  EXPECT_EQ(t.header, (std::vector<std::string>{"pattern", "electrode", "voltage"}));
  EXPECT_EQ(t.rows[M].at(0), 2.0);
  EXPECT_EQ(t.rows[M].at(1), 1.0);
  const fs::path p = scratch("meas") / "m.csv";
  write_csv(p.string(), t);
  EXPECT_EQ(measurement_from_table(read_csv(p.string())), v);
  EXPECT_THROW(measurement_table(v, M + 1), InvalidInput);
}

TEST(Slices, LinearFieldIsExactInsideAndNanOutside) {
  const HeadMesh h = coarse_head();
  Eigen::VectorXd f(h.nodes.size());
  for (std::size_t i = 0; i < h.nodes.size(); ++i) f(i) = 1 + 2 * h.nodes[i].x() - h.nodes[i].y();
  const Table t = slice_table(h.nodes, h.tets, f, {0.02, 0.05}, 0.01, 0.11);
  EXPECT_EQ(t.header, (std::vector<std::string>{"z", "x", "y", "value"}));
  EXPECT_EQ(t.rows.size(), 2u * 23 * 23);
  int inside = 0, outside = 0;
  for (const auto& r : t.rows) {
    if (std::isnan(r[3])) {
      ++outside;
      continue;
    }
    ++inside;
    EXPECT_NEAR(r[3], 1 + 2 * r[1] - r[2], 1e-12);
  }
  EXPECT_GT(inside, 100);
  EXPECT_GT(outside, 100);
  // a point well outside any head
  for (const auto& r : t.rows)
    if (std::abs(r[1]) > 0.105 && std::abs(r[2]) > 0.105) EXPECT_TRUE(std::isnan(r[3]));
}

TEST(Config, ScenarioExamples) {
  const RunConfig t1 = scenario_config("test1");
  EXPECT_EQ(t1.electrode_layout().size(), 32);
  EXPECT_EQ(t1.electrode_layout().radius[0], 0.0075);
  EXPECT_EQ(t1.phantom.inclusions.size(), 2u);
  const RunConfig t3 = scenario_config("test3");
  EXPECT_EQ(t3.electrode_layout().size(), 22);
  EXPECT_EQ(t3.electrode_layout().radius[5], 0.01);
  EXPECT_EQ(t3.target.theta_sd, 0.02);
  EXPECT_EQ(t3.priors.phi_sd, 0.02);
  EXPECT_EQ(t3.priors.alpha_scale, 2.0);
  EXPECT_EQ(t3.target.alpha_scale, 2.0);
  const RunConfig t2 = scenario_config("test2");
  EXPECT_EQ(t2.phantom.inclusions[0].shape, Inclusion::Shape::cylinder);
  EXPECT_EQ(t2.phantom.inclusions[0].height, 0.07);
  EXPECT_EQ(scenario_config("desk").electrode_layout().size(), 16);
  for (const RunConfig& c : {t1, t2, t3}) {
    EXPECT_EQ(c.library.n, 50);
    EXPECT_EQ(c.model_modes, 10);
    EXPECT_EQ(c.reconstructed_modes, 5);
    EXPECT_EQ(c.noise_level, 1e-3);
    EXPECT_EQ(c.phantom.background, 0.2);
    EXPECT_EQ(c.slice_levels, (std::vector<double>{0.02, 0.03, 0.04, 0.05, 0.06, 0.07}));
  }
  EXPECT_THROW(scenario_config("test4"), InvalidInput);
}

TEST(Config, UnknownKeysAreRejectedAtEveryLevel) {
  const nlohmann::json good = to_json(scenario_config("test1"));
  EXPECT_NO_THROW(run_config_from_json(good));
  const std::vector<nlohmann::json::json_pointer> sections = {
      nlohmann::json::json_pointer(""),          nlohmann::json::json_pointer("/shape_model"),
      nlohmann::json::json_pointer("/layout"),   nlohmann::json::json_pointer("/meshes/simulation"),
      nlohmann::json::json_pointer("/target"),   nlohmann::json::json_pointer("/priors"),
      nlohmann::json::json_pointer("/solver"),   nlohmann::json::json_pointer("/phantom"),
      nlohmann::json::json_pointer("/slices"),   nlohmann::json::json_pointer("/reconstruction")};
  for (const auto& ptr : sections) {
    nlohmann::json bad = good;
    ASSERT_TRUE(bad.contains(ptr)) << ptr.to_string();
    bad[ptr]["surprise"] = 1;
    EXPECT_THROW(run_config_from_json(bad), InvalidInput) << ptr.to_string();
  }
  nlohmann::json inc = good;
  inc["phantom"]["inclusions"][0]["colour"] = "red";
  EXPECT_THROW(run_config_from_json(inc), InvalidInput);
  nlohmann::json version = good;
  version["version"] = 2;
  EXPECT_THROW(run_config_from_json(version), InvalidInput);
}

TEST(Config, PackagedFilesMatchScenarios) {
  for (const std::string n : {"test1", "test2", "test3"}) {
    const fs::path p = fs::path(CRANIO_SOURCE_DIR) / "configs" / (n + ".json");
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(to_json(load_run_config(p.string())), to_json(scenario_config(n))) << n;
  }
}

TEST(Compare, IdenticalInputsGiveZeroDifferences) {
  const ElectrodeLayout l = layout8();
  TargetDraw t;
  t.alpha = Eigen::VectorXd::LinSpaced(10, -1, 1);
  t.theta = Eigen::Map<const Eigen::VectorXd>(l.theta.data(), 8);
  t.phi = Eigen::Map<const Eigen::VectorXd>(l.phi.data(), 8);
  t.zeta = Eigen::VectorXd::Constant(8, 100.0);
  Parameters p;
  p.alpha = t.alpha.head(5);
  p.theta = t.theta;
  p.phi = t.phi;
  p.zeta = t.zeta;
  const ComparisonTables c = compare_parameters(t, p, l);
  for (const auto& r : c.theta.rows) {
    EXPECT_EQ(r[1], 0.0);
    EXPECT_EQ(r[2], 0.0);
  }
  for (const auto& r : c.phi.rows) EXPECT_EQ(r[1], r[2]);
  for (const auto& r : c.zeta.rows) EXPECT_EQ(r[1], r[2]);
  ASSERT_EQ(c.alpha.rows.size(), 10u);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(c.alpha.rows[k][1], c.alpha.rows[k][2]);
  for (int k = 5; k < 10; ++k) {
    EXPECT_TRUE(std::isnan(c.alpha.rows[k][1]));
    EXPECT_EQ(c.alpha.rows[k][2], t.alpha(k));
  }

  // azimuth differences wrap across the branch cut
  Parameters q = p;
  q.phi(0) += 2 * M_PI - 0.01;
  EXPECT_NEAR(compare_parameters(t, q, l).phi.rows[0][1], -0.01, 1e-12);
  q.zeta.resize(7);
  EXPECT_THROW(compare_parameters(t, q, l), InvalidInput);
}

TEST(Scenario, TinyRunIsDeterministicAndReparses) {
  const RunConfig c = tiny_config();
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  nlohmann::json ra = run_scenario(c, 3, a.string());
  nlohmann::json rb = run_scenario(c, 3, b.string());
  for (const char* mode : {"full", "fixed_alpha", "fixed_geometry"})
    EXPECT_EQ(ra["reconstructions"][mode]["status"], "ok") << mode << ' ' << ra["reconstructions"][mode].dump();
  strip_timings(ra);
  strip_timings(rb);
  EXPECT_EQ(ra, rb);

  // the report is self-contained and every file re-parses
  for (const std::string f : ra.at("manifest")) {
    const fs::path p = a / f;
    ASSERT_TRUE(fs::exists(p)) << f;
    const std::string ext = p.extension().string();
    if (ext == ".json") EXPECT_NO_THROW(read_json(p.string())) << f;
    else if (ext == ".csv") EXPECT_NO_THROW(read_csv(p.string())) << f;
    else if (ext == ".vtk") EXPECT_NO_THROW(read_vtk(p.string())) << f;
    else ADD_FAILURE() << "unexpected file " << f;
  }
  EXPECT_EQ(to_json(load_run_config((a / "config.json").string())), to_json(c));
  EXPECT_EQ(measurement_from_table(read_csv((a / "data.csv").string())),
            measurement_from_table(read_csv((b / "data.csv").string())));
  const Table slices = read_csv((a / "slices_full.csv").string());
  EXPECT_EQ(slices.rows.size(), 2u * 23 * 23);

  const nlohmann::json rep = build_report(a.string());
  EXPECT_EQ(rep["reconstructions"].size(), 3u);
  EXPECT_EQ(rep["reconstructions"]["full"]["iterations"], ra["reconstructions"]["full"]["iterations"]);
}
