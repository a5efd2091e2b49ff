#include "cranio/meshgen.hpp"

#include "cranio/cdt.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

namespace cranio {

using nlohmann::json;

Vec3 ElectrodeLayout::direction(int m) const {
  const double t = theta.at(m), p = phi.at(m);
  return Vec3(std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t));
}

void ElectrodeLayout::validate() const {
  if (phi.size() != theta.size() || radius.size() != theta.size())
    throw InvalidInput("electrode layout arrays differ in length");
  for (int m = 0; m < size(); ++m) {
    if (!(theta[m] > 0 && theta[m] < M_PI / 2))
      throw InvalidInput("electrode " + std::to_string(m + 1) + " polar angle outside (0, pi/2)");
    if (!std::isfinite(phi[m])) throw InvalidInput("electrode " + std::to_string(m + 1) + " azimuth is not finite");
    if (!(radius[m] > 0)) throw InvalidInput("electrode " + std::to_string(m + 1) + " radius must be positive");
  }
}

ElectrodeLayout belt_layout(const std::vector<Belt>& belts, double radius) {
  ElectrodeLayout l;
  for (const Belt& b : belts) {
    if (b.count < 1) throw InvalidInput("belt needs at least one electrode");
    for (int i = 0; i < b.count; ++i) {
      double p = b.phase + 2 * M_PI * i / b.count;
      p = std::fmod(p, 2 * M_PI);
      if (p < 0) p += 2 * M_PI;
      l.theta.push_back(b.theta);
      l.phi.push_back(p);
      l.radius.push_back(radius);
    }
  }
  l.validate();
  return l;
}

json to_json(const ElectrodeLayout& layout) {
  json e = json::array();
  for (int m = 0; m < layout.size(); ++m)
    e.push_back({{"theta", layout.theta[m]}, {"phi", layout.phi[m]}, {"radius", layout.radius[m]}});
  return json{{"electrodes", e}};
}

ElectrodeLayout layout_from_json(const json& j) {
  ElectrodeLayout l;
  if (j.contains("belts")) {
    std::vector<Belt> belts;
    for (const auto& b : j.at("belts"))
      belts.push_back({b.at("count").get<int>(), b.at("theta").get<double>(), b.value("phase", 0.0)});
    return belt_layout(belts, j.at("radius").get<double>());
  }
  for (const auto& e : j.at("electrodes")) {
    l.theta.push_back(e.at("theta").get<double>());
    l.phi.push_back(e.at("phi").get<double>());
    l.radius.push_back(e.at("radius").get<double>());
  }
  l.validate();
  return l;
}

RadiusFunction model_radius(const ShapeModel& model, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd nodal = model.nodal_radius(alpha);
  GridPtr grid = model.grid();
  return [nodal, grid](const Vec3& d) {
    const GridStencil s = grid->locate(d);
    const double r = s.weight[0] * nodal[s.vertex[0]] + s.weight[1] * nodal[s.vertex[1]] + s.weight[2] * nodal[s.vertex[2]];
    if (!(r > 0)) throw NumericalError("degenerate shape: non-positive radius");
    return r;
  };
}

json to_json(const MeshOptions& o) {
  return json{{"k", o.k}, {"layers", o.layers}, {"mu", o.mu}, {"rings", o.rings}, {"center_height", o.center_height}};
}

MeshOptions mesh_options_from_json(const json& j) {
  for (const auto& [key, _] : j.items())
    if (key != "k" && key != "layers" && key != "mu" && key != "rings" && key != "center_height")
      throw InvalidInput("unknown mesh key '" + key + "'");
  MeshOptions o;
  o.k = j.value("k", o.k);
  o.layers = j.value("layers", o.layers);
  o.mu = j.value("mu", o.mu);
  o.rings = j.value("rings", o.rings);
  o.center_height = j.value("center_height", o.center_height);
  return o;
}

namespace {

void compute_base_normals(SurfaceMesh& s) {
  s.base_normals.assign(s.base_vertices.size(), Vec3::Zero());
  for (const Tri& t : s.base_triangles) {
    const Vec3 n = (s.base_vertices[t[1]] - s.base_vertices[t[0]]).cross(s.base_vertices[t[2]] - s.base_vertices[t[0]]);
    for (int v : t) s.base_normals[v] += n;
  }
  for (Vec3& n : s.base_normals) n.normalize();
}

void place_base_vertices(SurfaceMesh& s, const RadiusFunction& radius) {
  for (std::size_t i = 0; i < s.base_vertices.size(); ++i) {
    const Vec3& d = s.base_direction[i];
    if (s.disk_scale[i] < 0) {
      s.base_vertices[i] = radius(d) * d;
    } else {
      s.base_vertices[i] = s.disk_scale[i] == 0.0 ? Vec3::Zero() : Vec3(s.disk_scale[i] * radius(d) * d);
    }
  }
  compute_base_normals(s);
}

// barycentric coordinates of the intersection of the ray along d with the
// plane through a, b, c (scaled by the ray parameter)
Vec3 ray_weights(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  Eigen::Matrix3d m;
  m << a, b, c;
  return m.partialPivLu().solve(d);
}

std::array<double, 3> barycentric2d(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& p) {
  const double det = orient2d(a, b, c);
  return {orient2d(p, b, c) / det, orient2d(a, p, c) / det, orient2d(a, b, p) / det};
}

bool triangle_meets_disk(const Vec2& a, const Vec2& b, const Vec2& c, double rho) {
  const Vec2 o(0, 0);
  const auto w = barycentric2d(a, b, c, o);
  if (w[0] >= 0 && w[1] >= 0 && w[2] >= 0) return true;
  auto seg = [&](const Vec2& p, const Vec2& q) {
    const Vec2 e = q - p;
    const double t = std::clamp(-p.dot(e) / e.squaredNorm(), 0.0, 1.0);
    return (p + t * e).norm();
  };
  return std::min({seg(a, b), seg(b, c), seg(c, a)}) < rho;
}

TangentFrame frame_at(const SurfaceMesh& s, const Vec3& x, int triangle, const Vec3& weights, int axis) {
  const Tri& t = s.base_triangles[triangle];
  Vec3 n = weights[0] * s.base_normals[t[0]] + weights[1] * s.base_normals[t[1]] + weights[2] * s.base_normals[t[2]];
  n.normalize();
  TangentFrame f;
  f.origin = x;
  f.normal = n;
  f.triangle = triangle;
  if (axis < 0) axis = std::abs(n.x()) > 0.9 ? 1 : 0;
  f.axis = axis;
  const Vec3 e = axis == 0 ? Vec3::UnitX() : Vec3::UnitY();
  f.t1 = (e - e.dot(n) * n).normalized();
  f.t2 = n.cross(f.t1);
  return f;
}

// crown hit plus barycentric weights
Vec3 crown_hit(const SurfaceMesh& s, const Vec3& direction, int& triangle, Vec3& weights) {
  const Vec3 d = direction.normalized();
  const GridStencil st = s.crown_grid->locate(d);
  triangle = st.triangle;
  const Tri& t = s.base_triangles[triangle];
  const Vec3 mu = ray_weights(s.base_vertices[t[0]], s.base_vertices[t[1]], s.base_vertices[t[2]], d);
  const double sum = mu.sum();
  if (!(sum > 0)) throw NumericalError("ray does not meet the crown");
  weights = mu / sum;
  return d / sum;
}

// lift a tangent-plane point onto the base triangles of a patch; `fixed`
// pins the triangle (extended as a plane) so that repositioning is smooth
Vec3 lift(const SurfaceMesh& s, const ElectrodePatch& p, const Vec2& q, int* chosen, int fixed = -1) {
  int best = -1;
  double best_min = -1e300;
  std::array<double, 3> best_w{};
  auto consider = [&](int bt) {
    const Tri& t = s.base_triangles[bt];
    const auto w = barycentric2d(p.project(s.base_vertices[t[0]]), p.project(s.base_vertices[t[1]]),
                                 p.project(s.base_vertices[t[2]]), q);
    const double m = std::min({w[0], w[1], w[2]});
    if (m > best_min) {
      best_min = m;
      best = bt;
      best_w = w;
    }
  };
  if (fixed >= 0)
    consider(fixed);
  else
    for (int bt : p.base_triangles) consider(bt);
  if (best < 0 || best_min < -0.25) throw NumericalError("cannot lift an electrode point back to the surface");
  if (chosen) *chosen = best;
  const Tri& t = s.base_triangles[best];
  return best_w[0] * s.base_vertices[t[0]] + best_w[1] * s.base_vertices[t[1]] + best_w[2] * s.base_vertices[t[2]];
}

double distance_to_polygon(const std::vector<Vec2>& poly, const Vec2& q) {
  double d = 1e300;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2 e = poly[(i + 1) % poly.size()] - a;
    const double t = std::clamp((q - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    d = std::min(d, (a + t * e - q).norm());
  }
  return d;
}

bool inside_polygon(const std::vector<Vec2>& poly, const Vec2& q) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if ((poly[i].y() > q.y()) != (poly[j].y() > q.y()) &&
        q.x() < (poly[j].x() - poly[i].x()) * (q.y() - poly[i].y()) / (poly[j].y() - poly[i].y()) + poly[i].x())
      in = !in;
  }
  return in;
}

// Moves every fill point (outside the electrode disk) to the centroid of its
// neighbours when that keeps the incident triangles positively oriented.
bool smooth_fill(std::vector<Vec2>& pts, int nb, const std::vector<Tri>& tris, double R) {
  const int n = static_cast<int>(pts.size());
  std::vector<std::vector<int>> star(n);
  std::vector<std::set<int>> nbr(n);
  for (int t = 0; t < static_cast<int>(tris.size()); ++t)
    for (int e = 0; e < 3; ++e) {
      star[tris[t][e]].push_back(t);
      nbr[tris[t][e]].insert(tris[t][(e + 1) % 3]);
      nbr[tris[t][e]].insert(tris[t][(e + 2) % 3]);
    }
  bool moved = false;
  for (int i = nb; i < n; ++i) {
    if (pts[i].norm() <= R * (1 + 1e-9)) continue;
    Vec2 c = Vec2::Zero();
    for (int j : nbr[i]) c += pts[j];
    c /= static_cast<double>(nbr[i].size());
    if (c.norm() <= R * 1.05) continue;
    const Vec2 old = pts[i];
    pts[i] = c;
    bool ok = true;
    for (int t : star[i])
      if (orient2d(pts[tris[t][0]], pts[tris[t][1]], pts[tris[t][2]]) <= 0) ok = false;
    if (!ok) {
      pts[i] = old;
      continue;
    }
    if ((c - old).norm() > 1e-3 * R) moved = true;
  }
  return moved;
}

// Concentric rings: spacing R / rings up to the electrode rim, then
// geometrically coarsening towards the size of the patch boundary edges so
// that the fill between the electrode and the polygon stays well shaped.
std::vector<Vec2> steiner_points(const std::vector<Vec2>& poly, double R, int rings) {
  const double h = R / rings;
  double edge = 0.0, reach = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    edge += (poly[(i + 1) % poly.size()] - poly[i]).norm();
    reach = std::max(reach, poly[i].norm());
  }
  edge /= poly.size();
  std::vector<Vec2> pts = {Vec2(0, 0)};
  int index = 0;
  auto ring = [&](double r, double spacing) {
    const int n = std::max(6, static_cast<int>(std::lround(2 * M_PI * r / spacing)));
    const double offset = (++index % 2) ? M_PI / n : 0.0;
    for (int i = 0; i < n; ++i) {
      const double a = offset + 2 * M_PI * i / n;
      const Vec2 q(r * std::cos(a), r * std::sin(a));
      if (r > R * (1 + 1e-12)) {
        if (!inside_polygon(poly, q) || distance_to_polygon(poly, q) < 0.5 * spacing) continue;
      }
      pts.push_back(q);
    }
  };
  double r = 0.0;
  for (int j = 1; j <= rings; ++j) ring(r = j * h, h);
  double spacing = h;
  while (true) {
    spacing = std::min(spacing * 1.25, std::max(h, edge));
    r += spacing;
    if (r > reach) break;
    ring(r, spacing);
  }
  return pts;
}

}  // namespace

SurfaceMesh subdivide_initial_surface(int k, const RadiusFunction& radius) {
  if (k < 3) throw InvalidInput("surface subdivision level must be at least 3 (got " + std::to_string(k) + ")");
  SurfaceMesh s;
  s.k = k;
  s.crown_grid = std::make_shared<const HemisphereGrid>(HemisphereGrid::geodesic(k));
  const HemisphereGrid& g = *s.crown_grid;
  const int nv = static_cast<int>(g.size());
  s.crown_vertex_count = nv;
  s.crown_triangle_count = static_cast<int>(g.triangles().size());

  std::vector<int> disk_id(nv, -1);
  for (int i = 0; i < nv; ++i) {
    s.base_direction.push_back(g.vertices()[i]);
    s.disk_scale.push_back(-1.0);
  }
  for (int i = 0; i < nv; ++i) {
    if (g.vertices()[i].z() <= 1e-12) {
      disk_id[i] = i;  // rim vertices are shared
      continue;
    }
    disk_id[i] = static_cast<int>(s.base_direction.size());
    const double az = g.azimuth(i);
    s.base_direction.emplace_back(std::cos(az), std::sin(az), 0.0);
    s.disk_scale.push_back(g.polar(i) / (M_PI / 2));
  }
  s.base_vertices.resize(s.base_direction.size());
  s.base_triangles = g.triangles();
  for (const Tri& t : g.triangles()) s.base_triangles.push_back({disk_id[t[0]], disk_id[t[2]], disk_id[t[1]]});
  place_base_vertices(s, radius);

  s.vertices = s.base_vertices;
  s.triangles = s.base_triangles;
  s.region.assign(s.triangles.size(), 0);
  s.vertex_base.resize(s.vertices.size());
  std::iota(s.vertex_base.begin(), s.vertex_base.end(), 0);
  s.base_to_final = s.vertex_base;
  return s;
}

SurfaceMesh subdivide_initial_surface(int k, const ShapeModel& model, const Eigen::VectorXd& alpha) {
  return subdivide_initial_surface(k, model_radius(model, alpha));
}

Vec3 crown_ray_hit(const SurfaceMesh& surface, const Vec3& direction, int* triangle) {
  int t;
  Vec3 w;
  const Vec3 x = crown_hit(surface, direction, t, w);
  if (triangle) *triangle = t;
  return x;
}

TangentFrame tangent_projection(const SurfaceMesh& surface, const Vec3& x, int axis) {
  if (!(x.z() >= -1e-12)) throw InvalidInput("point below the base plane is not on the crown");
  int t;
  Vec3 w;
  const Vec3 hit = crown_hit(surface, x, t, w);
  if ((hit - x).norm() > 1e-9 + 1e-6 * x.norm())
    throw InvalidInput("point is not on the crown surface (distance " + std::to_string((hit - x).norm()) + " m)");
  return frame_at(surface, x, t, w, axis);
}

SurfaceMesh insert_electrodes(const SurfaceMesh& surface, const ElectrodeLayout& layout, double mu, int rings) {
  if (!(mu > 1.0)) throw InvalidInput("extension factor mu must exceed 1");
  if (rings < 1) throw InvalidInput("electrode patches need at least one ring");
  if (!surface.electrodes.empty()) throw InvalidInput("surface already carries electrodes");
  layout.validate();
  const int M = layout.size();
  SurfaceMesh s = surface;

  std::map<std::pair<int, int>, int> edge_owner;
  for (std::size_t t = 0; t < s.base_triangles.size(); ++t)
    for (int e = 0; e < 3; ++e) edge_owner[{s.base_triangles[t][e], s.base_triangles[t][(e + 1) % 3]}] = static_cast<int>(t);

  std::vector<int> triangle_owner(s.base_triangles.size(), -1);
  std::vector<std::vector<Tri>> local_triangles(M);
  s.electrodes.resize(M);

  for (int m = 0; m < M; ++m) {
    ElectrodePatch& p = s.electrodes[m];
    int hit;
    Vec3 w;
    const Vec3 x = crown_hit(s, layout.direction(m), hit, w);
    const TangentFrame f = frame_at(s, x, hit, w, -1);
    p.center = x;
    p.normal = f.normal;
    p.t1 = f.t1;
    p.t2 = f.t2;
    p.frame_axis = f.axis;
    p.radius = layout.radius[m];
    p.hit_triangle = hit;
    const double rho = mu * p.radius;

    std::set<int> member;
    std::queue<int> todo;
    todo.push(hit);
    member.insert(hit);
    while (!todo.empty()) {
      const int t = todo.front();
      todo.pop();
      const Tri& T = s.base_triangles[t];
      if (!s.is_crown_triangle(t))
        throw InvalidInput("electrode " + std::to_string(m + 1) + " crosses the crown rim");
      const Vec2 a = p.project(s.base_vertices[T[0]]), b = p.project(s.base_vertices[T[1]]),
                 c = p.project(s.base_vertices[T[2]]);
      if (orient2d(a, b, c) <= 0)
        throw NumericalError("tangent projection is not injective on the footprint of electrode " + std::to_string(m + 1));
      for (int e = 0; e < 3; ++e) {
        auto it = edge_owner.find({T[(e + 1) % 3], T[e]});
        if (it == edge_owner.end()) continue;
        const int nb = it->second;
        if (member.count(nb)) continue;
        const Tri& N = s.base_triangles[nb];
        if (triangle_meets_disk(p.project(s.base_vertices[N[0]]), p.project(s.base_vertices[N[1]]),
                                p.project(s.base_vertices[N[2]]), rho)) {
          member.insert(nb);
          todo.push(nb);
        }
      }
    }
    p.base_triangles.assign(member.begin(), member.end());
    for (int t : p.base_triangles) {
      if (triangle_owner[t] >= 0) {
        std::ostringstream os;
        os << "extended footprints of electrodes " << triangle_owner[t] + 1 << " and " << m + 1 << " overlap";
        throw InvalidInput(os.str());
      }
      triangle_owner[t] = m;
    }

    // boundary loop of S_m
    std::map<int, int> next;
    int edges = 0;
    for (int t : p.base_triangles) {
      const Tri& T = s.base_triangles[t];
      for (int e = 0; e < 3; ++e) {
        const int a = T[e], b = T[(e + 1) % 3];
        auto it = edge_owner.find({b, a});
        if (it != edge_owner.end() && member.count(it->second)) continue;
        if (next.count(a))
          throw NumericalError("footprint of electrode " + std::to_string(m + 1) + " is pinched at a vertex");
        next[a] = b;
        ++edges;
      }
    }
    const int start = next.begin()->first;
    int v = start;
    do {
      p.boundary.push_back(v);
      v = next.at(v);
    } while (v != start && static_cast<int>(p.boundary.size()) <= edges);
    if (static_cast<int>(p.boundary.size()) != edges)
      throw NumericalError("footprint of electrode " + std::to_string(m + 1) + " is not simply connected");

    std::vector<Vec2> pts;
    for (int b : p.boundary) pts.push_back(p.project(s.base_vertices[b]));
    const std::vector<Vec2> inner = steiner_points(pts, p.radius, rings);
    pts.insert(pts.end(), inner.begin(), inner.end());
    p.steiner_point = inner;
    const int nb = static_cast<int>(p.boundary.size());
    local_triangles[m] = triangulate_polygon(pts, nb);
    // the graded fill between the electrode rim and the coarse patch boundary
    // leaves obtuse triangles; a few smoothing passes on the fill points
    // (never on the rings that resolve the electrode) remove most of them
    for (int pass = 0; pass < 5; ++pass) {
      if (!smooth_fill(pts, nb, local_triangles[m], p.radius)) break;
      local_triangles[m] = triangulate_polygon(pts, nb);
    }
    p.steiner_point.assign(pts.begin() + nb, pts.end());
  }

  // removed base vertices: interior vertices of the patches
  std::vector<char> removed(s.base_vertices.size(), 0);
  for (const ElectrodePatch& p : s.electrodes) {
    std::set<int> on_loop(p.boundary.begin(), p.boundary.end());
    for (int t : p.base_triangles)
      for (int v : s.base_triangles[t])
        if (!on_loop.count(v)) removed[v] = 1;
  }
  s.vertices.clear();
  s.vertex_base.clear();
  s.base_to_final.assign(s.base_vertices.size(), -1);
  for (std::size_t v = 0; v < s.base_vertices.size(); ++v) {
    if (removed[v]) continue;
    s.base_to_final[v] = static_cast<int>(s.vertices.size());
    s.vertices.push_back(s.base_vertices[v]);
    s.vertex_base.push_back(static_cast<int>(v));
  }
  for (ElectrodePatch& p : s.electrodes) {
    for (const Vec2& q : p.steiner_point) {
      p.steiner.push_back(static_cast<int>(s.vertices.size()));
      int tri;
      s.vertices.push_back(lift(s, p, q, &tri));
      p.steiner_triangle.push_back(tri);
      s.vertex_base.push_back(-1);
    }
  }

  s.triangles.clear();
  s.region.clear();
  for (std::size_t t = 0; t < s.base_triangles.size(); ++t) {
    if (triangle_owner[t] >= 0) continue;
    const Tri& T = s.base_triangles[t];
    s.triangles.push_back({s.base_to_final[T[0]], s.base_to_final[T[1]], s.base_to_final[T[2]]});
    s.region.push_back(0);
  }
  for (int m = 0; m < M; ++m) {
    ElectrodePatch& p = s.electrodes[m];
    const int nb = static_cast<int>(p.boundary.size());
    auto final_id = [&](int local) { return local < nb ? s.base_to_final[p.boundary[local]] : p.steiner[local - nb]; };
    std::set<int> nodes;
    for (const Tri& lt : local_triangles[m]) {
      const Tri T = {final_id(lt[0]), final_id(lt[1]), final_id(lt[2])};
      const Vec2 c = (p.project(s.vertices[T[0]]) + p.project(s.vertices[T[1]]) + p.project(s.vertices[T[2]])) / 3.0;
      const bool tagged = c.norm() < p.radius;
      p.triangles.push_back(static_cast<int>(s.triangles.size()));
      s.triangles.push_back(T);
      s.region.push_back(tagged ? m + 1 : 0);
      if (tagged) nodes.insert(T.begin(), T.end());
    }
    if (nodes.empty()) throw NumericalError("electrode " + std::to_string(m + 1) + " received no surface triangles");
    p.nodes.assign(nodes.begin(), nodes.end());
  }
  return s;
}

double HeadMesh::volume() const {
  double v = 0.0;
  for (const Tet& t : tets) v += signed_volume(nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]);
  return v;
}

namespace {

// prism split used between consecutive layers: lower surface id goes to the
// inner layer on every shared side face, which keeps neighbours conforming
std::array<Tet, 3> prism_tets(const Tri& tri, int inner_offset, int outer_offset) {
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return tri[a] < tri[b]; });
  // reference prism: ccw triangle in the plane, outer layer at height one
  const Vec3 ref[3] = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  auto node = [&](int local, bool outer) { return tri[order[local]] + (outer ? outer_offset : inner_offset); };
  auto refpos = [&](int local, bool outer) { return Vec3(ref[order[local]] + Vec3(0, 0, outer ? 1.0 : 0.0)); };
  const std::array<std::array<std::pair<int, bool>, 4>, 3> pattern = {{
      {{{0, false}, {1, false}, {2, false}, {2, true}}},
      {{{0, false}, {1, false}, {1, true}, {2, true}}},
      {{{0, false}, {0, true}, {1, true}, {2, true}}},
  }};
  std::array<Tet, 3> out;
  for (int i = 0; i < 3; ++i) {
    Tet t;
    Vec3 r[4];
    for (int j = 0; j < 4; ++j) {
      t[j] = node(pattern[i][j].first, pattern[i][j].second);
      r[j] = refpos(pattern[i][j].first, pattern[i][j].second);
    }
    if (signed_volume(r[0], r[1], r[2], r[3]) < 0) std::swap(t[0], t[1]);
    out[i] = t;
  }
  return out;
}

Vec3 layering_center(const SurfaceMesh& s, double center_height) {
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < s.crown_vertex_count; ++i) {
    if (s.base_direction[i].z() <= 1e-12) {
      sum += s.base_vertices[i].norm();
      ++count;
    }
  }
  return Vec3(0, 0, center_height * sum / count);
}

// Scale of layer q about the centre (q = 0 is the surface). Layers thin out
// towards the surface where the electrode refinement sits.
double layer_scale(int q, int L) {
  const double t = static_cast<double>(q) / L;
  return 1.0 - t * t;
}

void place_layers(HeadMesh& h) {
  const int V = static_cast<int>(h.surface.vertices.size());
  const int L = h.layers;
  h.center = layering_center(h.surface, h.center_height);
  h.nodes.resize(static_cast<std::size_t>(L) * V + 1);
  for (int q = 0; q < L; ++q) {
    const double s = layer_scale(q, L);
    for (int v = 0; v < V; ++v)
      h.nodes[q * V + v] = q == 0 ? h.surface.vertices[v] : Vec3(h.center + s * (h.surface.vertices[v] - h.center));
  }
  h.nodes[static_cast<std::size_t>(L) * V] = h.center;
}

void check_volumes(const HeadMesh& h) {
  for (std::size_t e = 0; e < h.tets.size(); ++e) {
    const Tet& t = h.tets[e];
    if (!(signed_volume(h.nodes[t[0]], h.nodes[t[1]], h.nodes[t[2]], h.nodes[t[3]]) > 0))
      throw NumericalError("inverted element " + std::to_string(e));
  }
}

}  // namespace

HeadMesh tetrahedralize(const SurfaceMesh& surface, int layers, double center_height) {
  if (layers < 1) throw InvalidInput("tetrahedralization needs at least one layer");
  if (!(center_height >= 0 && center_height < 1)) throw InvalidInput("center height must lie in [0, 1)");
  HeadMesh h;
  h.surface = surface;
  h.layers = layers;
  h.center_height = center_height;
  place_layers(h);
  const int V = static_cast<int>(surface.vertices.size());
  const int apex = layers * V;
  h.tets.reserve(surface.triangles.size() * (3 * (layers - 1) + 1));
  for (const Tri& t : surface.triangles) {
    // layer q (0 = surface) sits outside layer q + 1
    for (int q = 0; q + 1 < layers; ++q) {
      const auto tets = prism_tets(t, (q + 1) * V, q * V);
      h.tets.insert(h.tets.end(), tets.begin(), tets.end());
    }
    const int o = (layers - 1) * V;
    h.tets.push_back({t[1] + o, t[0] + o, t[2] + o, apex});
  }
  check_volumes(h);
  return h;
}

HeadMesh build_head_mesh(const RadiusFunction& radius, const ElectrodeLayout& layout, const MeshOptions& options) {
  SurfaceMesh s = subdivide_initial_surface(options.k, radius);
  if (layout.size() > 0) s = insert_electrodes(s, layout, options.mu, options.rings);
  return tetrahedralize(s, options.layers, options.center_height);
}

HeadMesh build_head_mesh(const ShapeModel& model, const Eigen::VectorXd& alpha, const ElectrodeLayout& layout,
                         const MeshOptions& options) {
  return build_head_mesh(model_radius(model, alpha), layout, options);
}

HeadMesh reposition(const HeadMesh& mesh, const RadiusFunction& radius, const ElectrodeLayout& layout) {
  HeadMesh h = mesh;
  SurfaceMesh& s = h.surface;
  if (layout.size() != s.electrode_count()) throw InvalidInput("layout does not match the electrode count of the mesh");
  layout.validate();
  place_base_vertices(s, radius);
  for (std::size_t v = 0; v < s.vertices.size(); ++v)
    if (s.vertex_base[v] >= 0) s.vertices[v] = s.base_vertices[s.vertex_base[v]];
  for (int m = 0; m < s.electrode_count(); ++m) {
    ElectrodePatch& p = s.electrodes[m];
    int hit;
    Vec3 w;
    const Vec3 x = crown_hit(s, layout.direction(m), hit, w);
    if (std::find(p.base_triangles.begin(), p.base_triangles.end(), hit) == p.base_triangles.end())
      throw InvalidInput("electrode " + std::to_string(m + 1) + " moved outside its patch; remesh instead");
    const TangentFrame f = frame_at(s, x, hit, w, p.frame_axis);
    p.center = x;
    p.normal = f.normal;
    p.t1 = f.t1;
    p.t2 = f.t2;
    p.hit_triangle = hit;
    if (std::abs(layout.radius[m] - p.radius) > 1e-15) throw InvalidInput("electrode radii cannot change on reposition");
    for (std::size_t i = 0; i < p.steiner.size(); ++i)
      s.vertices[p.steiner[i]] = lift(s, p, p.steiner_point[i], nullptr, p.steiner_triangle[i]);
  }
  place_layers(h);
  check_volumes(h);
  return h;
}

HeadMesh reposition(const HeadMesh& mesh, const ShapeModel& model, const Eigen::VectorXd& alpha,
                    const ElectrodeLayout& layout) {
  return reposition(mesh, model_radius(model, alpha), layout);
}

double radius_ratio(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const double vol = std::abs(signed_volume(a, b, c, d));
  const double area = triangle_area(a, b, c) + triangle_area(a, b, d) + triangle_area(a, c, d) + triangle_area(b, c, d);
  const double r_in = 3 * vol / area;
  const Vec3 u = b - a, v = c - a, w = d - a;
  const double den = 2 * u.dot(v.cross(w));
  const Vec3 off = (u.squaredNorm() * v.cross(w) + v.squaredNorm() * w.cross(u) + w.squaredNorm() * u.cross(v)) / den;
  return 3 * r_in / off.norm();
}

QualityReport mesh_quality(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets, int bins) {
  QualityReport q;
  if (tets.empty()) return q;
  q.min_radius_ratio = 1e300;
  q.min_dihedral_deg = 1e300;
  q.min_volume = 1e300;
  q.max_volume = -1e300;
  double sum = 0.0;
  std::vector<double> vols(tets.size());
  for (std::size_t e = 0; e < tets.size(); ++e) {
    const Vec3* p[4] = {&nodes[tets[e][0]], &nodes[tets[e][1]], &nodes[tets[e][2]], &nodes[tets[e][3]]};
    const double v = signed_volume(*p[0], *p[1], *p[2], *p[3]);
    vols[e] = v;
    if (v <= 0) ++q.negative_volumes;
    q.min_volume = std::min(q.min_volume, v);
    q.max_volume = std::max(q.max_volume, v);
    const double rr = radius_ratio(*p[0], *p[1], *p[2], *p[3]);
    q.min_radius_ratio = std::min(q.min_radius_ratio, rr);
    sum += rr;
    static const int pairs[6][4] = {{0, 1, 2, 3}, {0, 2, 1, 3}, {0, 3, 1, 2}, {1, 2, 0, 3}, {1, 3, 0, 2}, {2, 3, 0, 1}};
    for (const auto& pr : pairs) {
      const Vec3 edge = (*p[pr[1]] - *p[pr[0]]).normalized();
      Vec3 a = *p[pr[2]] - *p[pr[0]], b = *p[pr[3]] - *p[pr[0]];
      a -= a.dot(edge) * edge;
      b -= b.dot(edge) * edge;
      const double ang = std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) * 180.0 / M_PI;
      q.min_dihedral_deg = std::min(q.min_dihedral_deg, ang);
      q.max_dihedral_deg = std::max(q.max_dihedral_deg, ang);
    }
  }
  q.mean_radius_ratio = sum / tets.size();
  bins = std::max(1, bins);
  q.histogram_counts.assign(bins, 0);
  const double lo = q.min_volume, hi = q.max_volume;
  for (int i = 0; i <= bins; ++i) q.histogram_edges.push_back(lo + (hi - lo) * i / bins);
  for (double v : vols) {
    int b = hi > lo ? static_cast<int>((v - lo) / (hi - lo) * bins) : 0;
    q.histogram_counts[std::clamp(b, 0, bins - 1)]++;
  }
  return q;
}

QualityReport mesh_quality(const HeadMesh& mesh, int bins) { return mesh_quality(mesh.nodes, mesh.tets, bins); }

json to_json(const QualityReport& q) {
  return json{{"min_radius_ratio", q.min_radius_ratio},
              {"mean_radius_ratio", q.mean_radius_ratio},
              {"min_dihedral_deg", q.min_dihedral_deg},
              {"max_dihedral_deg", q.max_dihedral_deg},
              {"min_volume", q.min_volume},
              {"max_volume", q.max_volume},
              {"negative_volumes", q.negative_volumes},
              {"histogram_edges", q.histogram_edges},
              {"histogram_counts", q.histogram_counts}};
}

}  // namespace cranio
