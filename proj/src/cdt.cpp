#include "cranio/cdt.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace cranio {

namespace {

double in_circle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const double ad = adx * adx + ady * ady, bd = bdx * bdx + bdy * bdy, cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

class Builder {
 public:
  Builder(const std::vector<Vec2>& p, int nb) : p_(p), nb_(nb) {
    for (int i = 0; i < nb; ++i) constrained_.insert(std::minmax(i, (i + 1) % nb));
    scale_ = 0.0;
    for (const Vec2& q : p) scale_ = std::max(scale_, q.cwiseAbs().maxCoeff());
  }

  void ear_clip() {
    std::vector<int> poly(nb_);
    for (int i = 0; i < nb_; ++i) poly[i] = i;
    int guard = 0;
    while (poly.size() > 3) {
      const int n = static_cast<int>(poly.size());
      int best = -1;
      double best_quality = -1.0;
      for (int i = 0; i < n; ++i) {
        const int a = poly[(i + n - 1) % n], b = poly[i], c = poly[(i + 1) % n];
        const double o = orient2d(p_[a], p_[b], p_[c]);
        if (o <= 1e-14 * scale_ * scale_) continue;
        bool empty = true;
        for (int j : poly) {
          if (j == a || j == b || j == c) continue;
          if (orient2d(p_[a], p_[b], p_[j]) >= 0 && orient2d(p_[b], p_[c], p_[j]) >= 0 &&
              orient2d(p_[c], p_[a], p_[j]) >= 0) {
            empty = false;
            break;
          }
        }
        if (!empty) continue;
        // prefer well shaped ears
        const double l2 = (p_[a] - p_[b]).squaredNorm() + (p_[b] - p_[c]).squaredNorm() + (p_[c] - p_[a]).squaredNorm();
        const double quality = o / l2;
        if (quality > best_quality) {
          best_quality = quality;
          best = i;
        }
      }
      if (best < 0 || ++guard > 100000) throw NumericalError("polygon triangulation failed: no ear found");
      add({poly[(best + n - 1) % n], poly[best], poly[(best + 1) % n]});
      poly.erase(poly.begin() + best);
    }
    if (orient2d(p_[poly[0]], p_[poly[1]], p_[poly[2]]) <= 0) throw NumericalError("polygon is not counter-clockwise");
    add({poly[0], poly[1], poly[2]});
  }

  void make_delaunay() {
    bool changed = true;
    int sweeps = 0;
    while (changed && sweeps++ < 1000) {
      changed = false;
      for (std::size_t t = 0; t < tri_.size(); ++t) {
        if (!alive_[t]) continue;
        for (int e = 0; e < 3 && alive_[t]; ++e) {
          const int a = tri_[t][e], b = tri_[t][(e + 1) % 3], c = tri_[t][(e + 2) % 3];
          if (try_flip(a, b, c)) changed = true;
        }
      }
    }
  }

  void insert(int ip) {
    const Vec2& q = p_[ip];
    int best = -1;
    double best_min = -1e300;
    std::array<double, 3> best_o{};
    for (std::size_t t = 0; t < tri_.size(); ++t) {
      if (!alive_[t]) continue;
      const Tri& T = tri_[t];
      std::array<double, 3> o;
      for (int e = 0; e < 3; ++e) {
        const Vec2& a = p_[T[e]];
        const Vec2& b = p_[T[(e + 1) % 3]];
        o[e] = orient2d(a, b, q) / (b - a).norm();
      }
      const double m = std::min({o[0], o[1], o[2]});
      if (m > best_min) {
        best_min = m;
        best = static_cast<int>(t);
        best_o = o;
      }
    }
    const double tol = 1e-10 * scale_;
    if (best < 0 || best_min < -tol) {
      std::ostringstream os;
      os << "Steiner point " << ip << " lies outside the polygon";
      throw NumericalError(os.str());
    }
    const Tri T = tri_[best];
    int on_edge = -1;
    for (int e = 0; e < 3; ++e)
      if (std::abs(best_o[e]) <= tol) on_edge = e;
    if (on_edge < 0) {
      remove(best);
      add({T[0], T[1], ip});
      add({T[1], T[2], ip});
      add({T[2], T[0], ip});
      legalize(T[0], T[1], ip);
      legalize(T[1], T[2], ip);
      legalize(T[2], T[0], ip);
      return;
    }
    const int a = T[on_edge], b = T[(on_edge + 1) % 3], c = T[(on_edge + 2) % 3];
    if (constrained_.count(std::minmax(a, b))) throw NumericalError("Steiner point falls on the polygon boundary");
    const int t2 = find(b, a);
    if (t2 < 0) throw NumericalError("edge without neighbour in triangulation");
    const int d = third(t2, b, a);
    remove(best);
    remove(t2);
    add({ip, b, c});
    add({a, ip, c});
    add({b, ip, d});
    add({ip, a, d});
    legalize(b, c, ip);
    legalize(c, a, ip);
    legalize(d, b, ip);
    legalize(a, d, ip);
  }

  std::vector<Tri> result() const {
    std::vector<Tri> out;
    for (std::size_t t = 0; t < tri_.size(); ++t)
      if (alive_[t]) out.push_back(tri_[t]);
    return out;
  }

 private:
  void add(const Tri& t) {
    const int id = static_cast<int>(tri_.size());
    tri_.push_back(t);
    alive_.push_back(true);
    for (int e = 0; e < 3; ++e) edge_[{t[e], t[(e + 1) % 3]}] = id;
  }

  void remove(int id) {
    alive_[id] = false;
    const Tri& t = tri_[id];
    for (int e = 0; e < 3; ++e) edge_.erase({t[e], t[(e + 1) % 3]});
  }

  int find(int a, int b) const {
    auto it = edge_.find({a, b});
    return it == edge_.end() ? -1 : it->second;
  }

  int third(int t, int a, int b) const {
    for (int v : tri_[t])
      if (v != a && v != b) return v;
    return -1;
  }

  // triangle (a, b, c) counter-clockwise; flips edge ab when the opposite
  // vertex violates the empty circle property
  bool try_flip(int a, int b, int c) {
    if (constrained_.count(std::minmax(a, b))) return false;
    const int t1 = find(a, b), t2 = find(b, a);
    if (t1 < 0 || t2 < 0) return false;
    const int d = third(t2, b, a);
    if (in_circle(p_[a], p_[b], p_[c], p_[d]) <= 1e-14 * std::pow(scale_, 4)) return false;
    if (orient2d(p_[a], p_[d], p_[c]) <= 0 || orient2d(p_[d], p_[b], p_[c]) <= 0) return false;
    remove(t1);
    remove(t2);
    add({a, d, c});
    add({d, b, c});
    return true;
  }

  void legalize(int a, int b, int ip) {
    std::vector<std::pair<int, int>> stack = {{a, b}};
    int guard = 0;
    while (!stack.empty()) {
      if (++guard > 100000) throw NumericalError("edge legalization did not terminate");
      const auto [u, v] = stack.back();
      stack.pop_back();
      const int t2 = find(v, u);
      const int t1 = find(u, v);
      if (t2 < 0 || t1 < 0 || third(t1, u, v) != ip) continue;
      const int d = third(t2, v, u);
      if (try_flip(u, v, ip)) {
        stack.push_back({u, d});
        stack.push_back({d, v});
      }
    }
  }

  const std::vector<Vec2>& p_;
  int nb_;
  double scale_;
  std::vector<Tri> tri_;
  std::vector<bool> alive_;
  std::map<std::pair<int, int>, int> edge_;
  std::set<std::pair<int, int>> constrained_;
};

}  // namespace

std::vector<Tri> triangulate_polygon(const std::vector<Vec2>& points, int boundary_count) {
  if (boundary_count < 3 || boundary_count > static_cast<int>(points.size()))
    throw InvalidInput("polygon needs at least three boundary points");
  double area = 0.0;
  for (int i = 0; i < boundary_count; ++i) {
    const Vec2& a = points[i];
    const Vec2& b = points[(i + 1) % boundary_count];
    area += a.x() * b.y() - a.y() * b.x();
  }
  if (area <= 0) throw InvalidInput("polygon must be counter-clockwise");
  Builder b(points, boundary_count);
  b.ear_clip();
  b.make_delaunay();
  for (int i = boundary_count; i < static_cast<int>(points.size()); ++i) b.insert(i);
  return b.result();
}

}  // namespace cranio
