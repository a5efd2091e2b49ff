#include "cranio/shape_model.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace cranio {

HemisphereGrid HemisphereGrid::geodesic(int level) {
  if (level < 0 || level > 9) throw InvalidInput("hemisphere grid level must be in [0, 9]");
  HemisphereGrid g;
  g.level_ = level;
  g.vertices_ = {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(-1, 0, 0), Vec3(0, -1, 0)};
  // octants around the pole, counter-clockwise seen from outside
  g.levels_.push_back({Tri{1, 2, 0}, Tri{2, 3, 0}, Tri{3, 4, 0}, Tri{4, 1, 0}});

  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 p = (g.vertices_[a] + g.vertices_[b]).normalized();
      if (std::abs(p.z()) < 1e-15) p.z() = 0.0;
      g.vertices_.push_back(p);
      const int id = static_cast<int>(g.vertices_.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    const auto& coarse = g.levels_.back();
    std::vector<Tri> fine;
    fine.reserve(4 * coarse.size());
    for (const Tri& t : coarse) {
      const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      fine.push_back({t[0], ab, ca});
      fine.push_back({ab, t[1], bc});
      fine.push_back({ca, bc, t[2]});
      fine.push_back({ab, bc, ca});
    }
    g.levels_.push_back(std::move(fine));
  }
  g.h1_ = std::make_shared<const Eigen::SparseMatrix<double>>(g.mass_matrix() + g.stiffness_matrix());
  return g;
}

double HemisphereGrid::polar(int i) const {
  return std::acos(std::clamp(vertices_.at(i).z(), -1.0, 1.0));
}

double HemisphereGrid::azimuth(int i) const {
  const Vec3& v = vertices_.at(i);
  double phi = std::atan2(v.y(), v.x());
  if (phi < 0) phi += 2 * M_PI;
  return phi;
}

namespace {

// barycentric weights of the point where the ray through d meets the plane
// of triangle (a, b, c); negative entries mean d is outside the cone
std::array<double, 3> gnomonic(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  Eigen::Matrix3d m;
  m << a, b, c;
  const Vec3 mu = m.partialPivLu().solve(d);
  const double s = mu.sum();
  if (!(s > 0)) return {-1e300, -1e300, -1e300};  // antipodal cone
  return {mu[0] / s, mu[1] / s, mu[2] / s};
}

double min3(const std::array<double, 3>& w) { return std::min({w[0], w[1], w[2]}); }

}  // namespace

GridStencil HemisphereGrid::locate(const Vec3& direction) const {
  const double n = direction.norm();
  if (!(n > 0) || !std::isfinite(n)) throw InvalidInput("cannot locate a zero or non-finite direction");
  const Vec3 d = direction / n;
  if (d.z() < -1e-9) throw InvalidInput("direction below the base plane");

  int best = -1;
  std::array<double, 3> best_w{};
  double best_min = -1e300;
  for (int t = 0; t < 4; ++t) {
    const Tri& tri = levels_[0][t];
    const auto w = gnomonic(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]], d);
    if (min3(w) > best_min) {
      best_min = min3(w);
      best = t;
      best_w = w;
    }
  }
  for (std::size_t l = 1; l < levels_.size(); ++l) {
    if (best < 0) throw NumericalError("hemisphere lookup failed");
    const int parent = best;
    best_min = -1e300;
    for (int c = 0; c < 4; ++c) {
      const int t = 4 * parent + c;
      const Tri& tri = levels_[l][t];
      const auto w = gnomonic(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]], d);
      if (min3(w) > best_min) {
        best_min = min3(w);
        best = t;
        best_w = w;
      }
    }
  }
  if (best < 0) throw NumericalError("hemisphere lookup failed");
  const Tri& tri = levels_.back()[best];
  GridStencil s;
  s.triangle = best;
  for (int i = 0; i < 3; ++i) {
    s.vertex[i] = tri[i];
    s.weight[i] = best_w[i];
  }
  return s;
}

Eigen::SparseMatrix<double> HemisphereGrid::mass_matrix() const {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * triangles().size());
  for (const Tri& t : triangles()) {
    const double area = triangle_area(vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) trip.emplace_back(t[i], t[j], area / 12.0 * (i == j ? 2.0 : 1.0));
  }
  Eigen::SparseMatrix<double> m(size(), size());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

Eigen::SparseMatrix<double> HemisphereGrid::stiffness_matrix() const {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * triangles().size());
  for (const Tri& t : triangles()) {
    const Vec3* p[3] = {&vertices_[t[0]], &vertices_[t[1]], &vertices_[t[2]]};
    const double area = triangle_area(*p[0], *p[1], *p[2]);
    // edge opposite to each vertex; grad phi_i . grad phi_j = e_i . e_j / (4 A^2)
    Vec3 e[3];
    for (int i = 0; i < 3; ++i) e[i] = *p[(i + 2) % 3] - *p[(i + 1) % 3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) trip.emplace_back(t[i], t[j], e[i].dot(e[j]) / (4.0 * area));
  }
  Eigen::SparseMatrix<double> k(size(), size());
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

const Eigen::SparseMatrix<double>& HemisphereGrid::h1_matrix() const { return *h1_; }

bool HemisphereGrid::same_as(const HemisphereGrid& other) const {
  if (this == &other) return true;
  if (level_ != other.level_ || vertices_.size() != other.vertices_.size() ||
      triangles() != other.triangles())
    return false;
  for (std::size_t i = 0; i < vertices_.size(); ++i)
    if ((vertices_[i] - other.vertices_[i]).norm() > 1e-12) return false;
  return true;
}

void require_positive_radius(const RadialFunction& r) {
  for (Eigen::Index i = 0; i < r.values.size(); ++i) {
    if (!(r.values[i] > 0)) {
      std::ostringstream os;
      os << "radial function is not positive at grid vertex " << i << " (value " << r.values[i] << ")";
      throw InvalidInput(os.str());
    }
  }
}

void require_same_grid(const GridFunction& f, const HemisphereGrid& grid) {
  if (!f.grid || !f.grid->same_as(grid) || f.values.size() != static_cast<Eigen::Index>(grid.size()))
    throw InvalidInput("grid function is defined on a different hemisphere grid");
}

double h1_inner(const GridFunction& a, const GridFunction& b) {
  if (!a.grid) throw InvalidInput("grid function without grid");
  require_same_grid(b, *a.grid);
  return a.values.dot(a.grid->h1_matrix() * b.values);
}

}  // namespace cranio
