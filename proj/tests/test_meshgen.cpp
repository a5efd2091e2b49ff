#include "cranio/meshgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>

using namespace cranio;

namespace {

ElectrodeLayout test1_layout() { return belt_layout({{16, 1.25, 0.0}, {10, 0.85, M_PI / 10}, {6, 0.42, 0.0}}, 0.0075); }

// sparse enough for the coarsest surface level
ElectrodeLayout coarse_layout() { return belt_layout({{5, 1.1, 0.0}, {3, 0.5, 0.4}}, 0.0075); }

const ShapeModel& small_model() {
  static const ShapeModel model = [] {
    LibraryConfig c;
    c.n = 12;
    return build_shape_model(generate_library(c, 7), 5);
  }();
  return model;
}

RadiusFunction sphere(double r) {
  return [r](const Vec3&) { return r; };
}

double tagged_area(const SurfaceMesh& s, int m) {
  double a = 0;
  for (std::size_t t = 0; t < s.triangles.size(); ++t)
    if (s.region[t] == m + 1) {
      const Tri& T = s.triangles[t];
      a += triangle_area(s.vertices[T[0]], s.vertices[T[1]], s.vertices[T[2]]);
    }
  return a;
}

// every directed edge appears once and its reverse appears once
void expect_closed(const std::vector<Tri>& tris) {
  std::map<std::pair<int, int>, int> count;
  for (const Tri& t : tris)
    for (int e = 0; e < 3; ++e) count[{t[e], t[(e + 1) % 3]}]++;
  for (const auto& [edge, c] : count) {
    ASSERT_EQ(c, 1);
    ASSERT_EQ(count.count({edge.second, edge.first}), 1u);
  }
}

// connected components of the triangles carrying `tag`, through shared edges
int components(const SurfaceMesh& s, int tag) {
  std::vector<int> tris;
  for (std::size_t t = 0; t < s.triangles.size(); ++t)
    if (s.region[t] == tag) tris.push_back(static_cast<int>(t));
  std::vector<int> parent(tris.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> root = [&](int i) { return parent[i] == i ? i : parent[i] = root(parent[i]); };
  std::map<std::pair<int, int>, int> owner;
  for (std::size_t i = 0; i < tris.size(); ++i) {
    const Tri& T = s.triangles[tris[i]];
    for (int e = 0; e < 3; ++e) {
      auto key = std::minmax(T[e], T[(e + 1) % 3]);
      auto it = owner.find(key);
      if (it == owner.end())
        owner[key] = static_cast<int>(i);
      else
        parent[root(static_cast<int>(i))] = root(it->second);
    }
  }
  std::set<int> roots;
  for (std::size_t i = 0; i < tris.size(); ++i) roots.insert(root(static_cast<int>(i)));
  return static_cast<int>(roots.size());
}

}  // namespace

TEST(Surface, LevelTwoIsRejected) { EXPECT_THROW(subdivide_initial_surface(2, sphere(0.1)), InvalidInput); }

TEST(Surface, CrownTriangleCountAndClosure) {
  const SurfaceMesh s = subdivide_initial_surface(3, small_model(), Eigen::VectorXd::Zero(5));
  EXPECT_EQ(s.crown_triangle_count, 256);
  expect_closed(s.triangles);
  // flat base
  for (std::size_t v = s.crown_vertex_count; v < s.vertices.size(); ++v) EXPECT_NEAR(s.vertices[v].z(), 0.0, 1e-15);
}

TEST(Surface, MeanHeadMatchesModelRadius) {
  LibraryConfig c;
  c.n = 12;
  const ShapeModel model = build_shape_model(generate_library(c, 7), 5);
  const SurfaceMesh s = subdivide_initial_surface(5, model, Eigen::VectorXd::Zero(5));
  double worst = 0;
  for (int v = 0; v < s.crown_vertex_count; ++v) {
    const Vec3 d = s.base_direction[v];
    const double r = model.radius(d, Eigen::VectorXd::Zero(5));
    worst = std::max(worst, std::abs(s.vertices[v].norm() - r));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Tangent, ProjectionExamples) {
  const SurfaceMesh s = subdivide_initial_surface(4, sphere(0.1));
  const Vec3 x = crown_ray_hit(s, Vec3(0.3, 0.2, 0.9).normalized());
  const TangentFrame q = tangent_projection(s, x);
  EXPECT_LT(q(x).norm(), 1e-15);
  EXPECT_LT(q(x + 0.01 * q.normal).norm(), 1e-15);
  EXPECT_NEAR(q(x + 0.004 * q.t1).norm(), 0.004, 1e-15);
  EXPECT_NEAR(q(x + 0.003 * (q.t1 + q.t2).normalized()).norm(), 0.003, 1e-15);
  EXPECT_NEAR(q.t1.dot(q.normal), 0.0, 1e-14);
  EXPECT_NEAR(q.t1.cross(q.t2).dot(q.normal), 1.0, 1e-14);
  EXPECT_THROW(tangent_projection(s, 1.1 * x), InvalidInput);
}

TEST(Tangent, DiskTestDoesNotDependOnFrame) {
  const SurfaceMesh s = subdivide_initial_surface(4, sphere(0.1));
  const Vec3 x = crown_ray_hit(s, Vec3(0.1, -0.4, 0.8).normalized());
  const TangentFrame a = tangent_projection(s, x, 0), b = tangent_projection(s, x, 1);
  for (int v = 0; v < s.crown_vertex_count; ++v)
    EXPECT_NEAR(a(s.vertices[v]).norm(), b(s.vertices[v]).norm(), 1e-14);
}

TEST(Electrodes, SingleElectrodeArea) {
  ElectrodeLayout lay;
  lay.theta = {0.7};
  lay.phi = {1.0};
  lay.radius = {0.0075};
  const SurfaceMesh base = subdivide_initial_surface(4, small_model(), Eigen::VectorXd::Zero(5));
  const SurfaceMesh s = insert_electrodes(base, lay);
  const double disk = M_PI * 0.0075 * 0.0075;
  EXPECT_NEAR(tagged_area(s, 0) / disk, 1.0, 0.05);
  expect_closed(s.triangles);
  EXPECT_EQ(components(s, 1), 1);
}

TEST(Electrodes, Test1LayoutDisjointAndConnected) {
  const SurfaceMesh base = subdivide_initial_surface(4, small_model(), Eigen::VectorXd::Zero(5));
  const SurfaceMesh s = insert_electrodes(base, test1_layout());
  ASSERT_EQ(s.electrode_count(), 32);
  expect_closed(s.triangles);
  // no vertex shared by two electrodes and each tag connected
  std::map<int, int> vertex_tag;
  for (std::size_t t = 0; t < s.triangles.size(); ++t) {
    if (s.region[t] == 0) continue;
    for (int v : s.triangles[t]) {
      auto [it, fresh] = vertex_tag.emplace(v, s.region[t]);
      EXPECT_EQ(it->second, s.region[t]);
    }
  }
  const double disk = M_PI * 0.0075 * 0.0075;
  for (int m = 0; m < 32; ++m) {
    EXPECT_EQ(components(s, m + 1), 1) << "electrode " << m + 1;
    EXPECT_NEAR(tagged_area(s, m) / disk, 1.0, 0.05) << "electrode " << m + 1;
  }
}

TEST(Electrodes, RejectsBadExtensionAndOverlap) {
  const SurfaceMesh base = subdivide_initial_surface(4, small_model(), Eigen::VectorXd::Zero(5));
  ElectrodeLayout one;
  one.theta = {0.7};
  one.phi = {1.0};
  one.radius = {0.0075};
  EXPECT_THROW(insert_electrodes(base, one, 1.0), InvalidInput);

  ElectrodeLayout two = one;
  two.theta.push_back(0.72);
  two.phi.push_back(1.05);
  two.radius.push_back(0.0075);
  try {
    insert_electrodes(base, two);
    FAIL() << "overlap not detected";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("1 and 2"), std::string::npos) << e.what();
  }

  ElectrodeLayout rim = one;
  rim.theta = {1.52};
  try {
    insert_electrodes(base, rim);
    FAIL() << "rim crossing not detected";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("rim"), std::string::npos) << e.what();
  }
}

TEST(Volume, UnitHemisphere) {
  const HeadMesh h = tetrahedralize(subdivide_initial_surface(4, sphere(1.0)), 4);
  EXPECT_EQ(mesh_quality(h).negative_volumes, 0);
  EXPECT_NEAR(h.volume() / (2 * M_PI / 3), 1.0, 0.03);
  EXPECT_THROW(tetrahedralize(subdivide_initial_surface(3, sphere(1.0)), 0), InvalidInput);
}

TEST(Volume, BoundaryMatchesSurface) {
  MeshOptions o;
  o.k = 3;
  const HeadMesh h = build_head_mesh(small_model(), Eigen::VectorXd::Zero(5), coarse_layout(), o);
  // boundary faces of the tet mesh: faces owned by one tet
  std::map<std::array<int, 3>, int> faces;
  for (const Tet& t : h.tets) {
    static const int f[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
    for (const auto& ff : f) {
      std::array<int, 3> key = {t[ff[0]], t[ff[1]], t[ff[2]]};
      std::sort(key.begin(), key.end());
      faces[key]++;
    }
  }
  std::set<std::array<int, 3>> boundary;
  for (const auto& [key, c] : faces) {
    ASSERT_LE(c, 2);
    if (c == 1) boundary.insert(key);
  }
  std::set<std::array<int, 3>> surface;
  for (const Tri& t : h.boundary()) {
    std::array<int, 3> key = {t[0], t[1], t[2]};
    std::sort(key.begin(), key.end());
    surface.insert(key);
  }
  EXPECT_EQ(boundary, surface);
  EXPECT_EQ(h.boundary_region().size(), h.boundary().size());
  // surface nodes keep their coordinates
  for (std::size_t v = 0; v < h.surface.vertices.size(); ++v) EXPECT_EQ(h.nodes[v], h.surface.vertices[v]);
}

TEST(Volume, Deterministic) {
  MeshOptions o;
  o.k = 3;
  const HeadMesh a = build_head_mesh(small_model(), Eigen::VectorXd::Zero(5), coarse_layout(), o);
  const HeadMesh b = build_head_mesh(small_model(), Eigen::VectorXd::Zero(5), coarse_layout(), o);
  ASSERT_EQ(a.nodes.size(), b.nodes.size());
  EXPECT_EQ(a.tets, b.tets);
  for (std::size_t i = 0; i < a.nodes.size(); ++i) EXPECT_EQ(a.nodes[i], b.nodes[i]);
  EXPECT_EQ(a.surface.region, b.surface.region);
}

TEST(Quality, RegularTetrahedron) {
  const std::vector<Vec3> p = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
  EXPECT_NEAR(radius_ratio(p[0], p[1], p[2], p[3]), 1.0, 1e-14);
  const QualityReport q = mesh_quality(p, {Tet{0, 1, 2, 3}});
  EXPECT_NEAR(q.min_radius_ratio, 1.0, 1e-14);
  EXPECT_NEAR(q.min_dihedral_deg, std::acos(1.0 / 3) * 180 / M_PI, 1e-10);
}

TEST(Quality, DefaultMeanHeadFloor) {
  const HeadMesh h = build_head_mesh(small_model(), Eigen::VectorXd::Zero(5), test1_layout(), MeshOptions{});
  const QualityReport q = mesh_quality(h);
  EXPECT_EQ(q.negative_volumes, 0);
  // regression floor of the radial layering with electrode refinement
  EXPECT_GT(q.min_radius_ratio, 0.01);
  EXPECT_GT(q.mean_radius_ratio, 0.2);
  int total = 0;
  for (int c : q.histogram_counts) total += c;
  EXPECT_EQ(total, static_cast<int>(h.tets.size()));
}

TEST(Volume, PaperSizedMesh) {
  MeshOptions o;
  o.k = 5;
  const HeadMesh h = build_head_mesh(small_model(), Eigen::VectorXd::Zero(5), test1_layout(), o);
  EXPECT_EQ(mesh_quality(h).negative_volumes, 0);
  EXPECT_GT(h.node_count(), 15000u);
  EXPECT_LT(h.node_count(), 30000u);
  EXPECT_GT(h.tets.size(), 60000u);
  EXPECT_LT(h.tets.size(), 140000u);
}

TEST(Reposition, IdentityKeepsGeometry) {
  MeshOptions o;
  o.k = 3;
  const Eigen::VectorXd alpha = Eigen::VectorXd::Zero(5);
  const HeadMesh a = build_head_mesh(small_model(), alpha, coarse_layout(), o);
  const HeadMesh b = reposition(a, small_model(), alpha, coarse_layout());
  double worst = 0;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) worst = std::max(worst, (a.nodes[i] - b.nodes[i]).norm());
  EXPECT_LT(worst, 1e-14);
}

TEST(Reposition, TaggedAreaIsStableUnderAngleShift) {
  MeshOptions o;
  o.k = 4;
  const Eigen::VectorXd alpha = Eigen::VectorXd::Zero(5);
  const ElectrodeLayout lay = test1_layout();
  const HeadMesh h = build_head_mesh(small_model(), alpha, lay, o);
  double change[2];
  const double steps[2] = {0.01, 0.005};
  for (int s = 0; s < 2; ++s) {
    ElectrodeLayout moved = lay;
    for (int m = 0; m < lay.size(); ++m) {
      moved.theta[m] += steps[s];
      moved.phi[m] += steps[s];
    }
    const HeadMesh g = reposition(h, small_model(), alpha, moved);
    change[s] = 0;
    for (int m = 0; m < lay.size(); ++m)
      change[s] = std::max(change[s], std::abs(tagged_area(g.surface, m) / tagged_area(h.surface, m) - 1));
  }
  // elastic electrodes keep their size up to small curvature effects
  EXPECT_LT(change[0], 2e-3);
  EXPECT_LT(change[1], change[0]);
}

TEST(Reposition, ShapeChangeMovesSurface) {
  MeshOptions o;
  o.k = 3;
  const HeadMesh h = build_head_mesh(small_model(), Eigen::VectorXd::Zero(5), coarse_layout(), o);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(5);
  alpha(0) = 2 * std::sqrt(small_model().eigenvalues()(0) / (small_model().library_size() - 1));
  const HeadMesh g = reposition(h, small_model(), alpha, coarse_layout());
  const HeadMesh fresh = build_head_mesh(small_model(), alpha, coarse_layout(), o);
  // crown base vertices sit on the new surface exactly as in a fresh build
  for (int v = 0; v < h.surface.crown_vertex_count; ++v) {
    const int fv = g.surface.base_to_final[v], ff = fresh.surface.base_to_final[v];
    if (fv < 0 || ff < 0) continue;
    EXPECT_LT((g.nodes[fv] - fresh.nodes[ff]).norm(), 1e-14);
  }
  EXPECT_EQ(mesh_quality(g).negative_volumes, 0);
}

TEST(Layout, JsonRoundTrip) {
  const ElectrodeLayout a = test1_layout();
  const ElectrodeLayout b = layout_from_json(nlohmann::json::parse(to_json(a).dump()));
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_EQ(a.radius, b.radius);
  EXPECT_THROW(mesh_options_from_json(nlohmann::json{{"levels", 3}}), InvalidInput);
}
