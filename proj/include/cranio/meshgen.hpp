#pragma once

#include "cranio/common.hpp"
#include "cranio/shape_model.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cranio {

/// Electrode centres given by polar/azimuthal angles of their directions.
struct ElectrodeLayout {
  std::vector<double> theta;
  std::vector<double> phi;
  std::vector<double> radius;

  int size() const { return static_cast<int>(theta.size()); }
  Vec3 direction(int m) const;
  void validate() const;
};

struct Belt {
  int count = 0;
  double theta = 0.0;
  double phase = 0.0;
};

/// Rings of equally spaced electrodes; numbering starts at the lowest belt
/// and runs in the direction of increasing azimuth.
ElectrodeLayout belt_layout(const std::vector<Belt>& belts, double radius);

nlohmann::json to_json(const ElectrodeLayout& layout);
ElectrodeLayout layout_from_json(const nlohmann::json& j);

using RadiusFunction = std::function<double(const Vec3& direction)>;

/// Radius of the model surface S(.; alpha) through barycentric interpolation.
RadiusFunction model_radius(const ShapeModel& model, const Eigen::VectorXd& alpha);

struct MeshOptions {
  int k = 4;
  int layers = 4;
  double mu = 1.5;
  /// Steiner rings inside each electrode; the spacing is R / rings.
  int rings = 4;
  /// Height of the layering centre above the base plane, relative to the
  /// mean rim radius.
  double center_height = 0.5;
};

nlohmann::json to_json(const MeshOptions& o);
MeshOptions mesh_options_from_json(const nlohmann::json& j);

/// Extended-electrode patch: the base triangles S_m that meet the extended
/// footprint, retriangulated in the tangent plane at the centre.
struct ElectrodePatch {
  Vec3 center;
  Vec3 normal;
  Vec3 t1, t2;
  int frame_axis = 0;  // 0: first axis from e1, 1: from e2
  double radius = 0.0;
  int hit_triangle = -1;               // base triangle hit by the centre ray
  std::vector<int> base_triangles;     // S_m
  std::vector<int> boundary;           // base vertex loop, counter-clockwise
  std::vector<int> steiner;            // final vertex ids of inserted points
  std::vector<Vec2> steiner_point;     // their tangent-plane coordinates
  std::vector<int> steiner_triangle;   // base triangle each one was lifted to
  std::vector<int> triangles;          // final triangle ids of the patch
  std::vector<int> nodes;              // final vertex ids of tagged triangles

  Vec2 project(const Vec3& y) const { return Vec2(t1.dot(y - center), t2.dot(y - center)); }
};

/// Closed head surface: crown of a star-shaped head plus a flat base disk.
struct SurfaceMesh {
  int k = 0;
  GridPtr crown_grid;
  // base surface before electrode insertion; crown vertices carry the grid
  // numbering, base-disk vertices follow
  std::vector<Vec3> base_vertices;
  std::vector<Tri> base_triangles;  // 4 * 4^k crown triangles first
  std::vector<Vec3> base_direction;  // crown: grid direction, disk: rim direction
  std::vector<double> disk_scale;    // disk vertices: fraction of the rim radius, crown: -1
  int crown_vertex_count = 0;
  int crown_triangle_count = 0;

  // final surface
  std::vector<Vec3> vertices;
  std::vector<Tri> triangles;
  std::vector<int> region;             // 0 or electrode index + 1
  std::vector<int> vertex_base;        // base vertex id or -1 for Steiner points
  std::vector<int> base_to_final;      // -1 for base vertices removed by insertion
  std::vector<ElectrodePatch> electrodes;

  std::vector<Vec3> base_normals;      // area-weighted vertex normals of the base surface

  int electrode_count() const { return static_cast<int>(electrodes.size()); }
  bool is_crown_triangle(int base_triangle) const { return base_triangle < crown_triangle_count; }
};

SurfaceMesh subdivide_initial_surface(int k, const RadiusFunction& radius);
SurfaceMesh subdivide_initial_surface(int k, const ShapeModel& model, const Eigen::VectorXd& alpha);

/// Tangent plane at a crown point of the base surface.
struct TangentFrame {
  Vec3 origin;
  Vec3 normal;
  Vec3 t1, t2;
  int axis = 0;
  int triangle = -1;
  Vec2 operator()(const Vec3& y) const { return Vec2(t1.dot(y - origin), t2.dot(y - origin)); }
};

/// Q_x for a point x on the crown. axis < 0 picks the first frame axis
/// automatically (projection of e1, or e2 when e1 is nearly normal).
TangentFrame tangent_projection(const SurfaceMesh& surface, const Vec3& x, int axis = -1);

/// Point where the ray along `direction` leaves the crown of the base surface.
Vec3 crown_ray_hit(const SurfaceMesh& surface, const Vec3& direction, int* triangle = nullptr);

SurfaceMesh insert_electrodes(const SurfaceMesh& surface, const ElectrodeLayout& layout, double mu = 1.5,
                              int rings = 4);

struct HeadMesh {
  std::vector<Vec3> nodes;
  std::vector<Tet> tets;
  SurfaceMesh surface;  // boundary; surface vertex i is node i
  int layers = 0;
  Vec3 center = Vec3::Zero();
  double center_height = 0.5;

  std::size_t node_count() const { return nodes.size(); }
  const std::vector<Tri>& boundary() const { return surface.triangles; }
  const std::vector<int>& boundary_region() const { return surface.region; }
  int electrode_count() const { return surface.electrode_count(); }
  double volume() const;
};

HeadMesh tetrahedralize(const SurfaceMesh& surface, int layers, double center_height = 0.5);

/// Full pipeline: subdivide, insert electrodes, tetrahedralize.
HeadMesh build_head_mesh(const ShapeModel& model, const Eigen::VectorXd& alpha, const ElectrodeLayout& layout,
                         const MeshOptions& options);
/// Same pipeline for an arbitrary radius function (no electrodes when the
/// layout is empty).
HeadMesh build_head_mesh(const RadiusFunction& radius, const ElectrodeLayout& layout, const MeshOptions& options);

/// Moves every node of `mesh` to the geometry defined by (radius, layout)
/// while keeping the connectivity. Used for finite differences in shape
/// and electrode angles, where remeshing from scratch would make the
/// quotient jump with the discrete topology.
HeadMesh reposition(const HeadMesh& mesh, const RadiusFunction& radius, const ElectrodeLayout& layout);
HeadMesh reposition(const HeadMesh& mesh, const ShapeModel& model, const Eigen::VectorXd& alpha,
                    const ElectrodeLayout& layout);

struct QualityReport {
  double min_radius_ratio = 0.0;
  double mean_radius_ratio = 0.0;
  double min_dihedral_deg = 0.0;
  double max_dihedral_deg = 0.0;
  double min_volume = 0.0;
  double max_volume = 0.0;
  int negative_volumes = 0;
  std::vector<double> histogram_edges;
  std::vector<int> histogram_counts;
};

double radius_ratio(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);
QualityReport mesh_quality(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets, int bins = 10);
QualityReport mesh_quality(const HeadMesh& mesh, int bins = 10);
nlohmann::json to_json(const QualityReport& q);

}  // namespace cranio
