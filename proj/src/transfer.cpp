#include "cranio/transfer.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace cranio {

namespace {

// Closest point to p on triangle abc as barycentric weights.
std::array<double, 3> closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return {1, 0, 0};
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return {0, 1, 0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return {0, 0, 1};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return {1 - v - w, v, w};
}

}  // namespace

TetLocator::TetLocator(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets) : nodes_(nodes), tets_(tets) {
  if (tets.empty()) throw InvalidInput("cannot locate points in an empty mesh");
  lo_ = hi_ = nodes[tets[0][0]];
  double edge = 0.0;
  for (const Tet& t : tets) {
    for (int v : t) {
      lo_ = lo_.cwiseMin(nodes[v]);
      hi_ = hi_.cwiseMax(nodes[v]);
    }
    edge += (nodes[t[1]] - nodes[t[0]]).norm();
  }
  edge /= tets.size();
  // about a few elements per bucket
  cell_ = std::max(2.0 * edge, (hi_ - lo_).maxCoeff() / 200.0);
  for (int d = 0; d < 3; ++d) dims_[d] = std::max(1, static_cast<int>(std::ceil((hi_(d) - lo_(d)) / cell_)) + 1);
  buckets_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], {});
  for (std::size_t e = 0; e < tets.size(); ++e) {
    Vec3 a = nodes[tets[e][0]], b = a;
    for (int v : tets[e]) {
      a = a.cwiseMin(nodes[v]);
      b = b.cwiseMax(nodes[v]);
    }
    std::array<int, 3> i0, i1;
    for (int d = 0; d < 3; ++d) {
      i0[d] = std::clamp(static_cast<int>((a(d) - lo_(d)) / cell_), 0, dims_[d] - 1);
      i1[d] = std::clamp(static_cast<int>((b(d) - lo_(d)) / cell_), 0, dims_[d] - 1);
    }
    for (int k = i0[2]; k <= i1[2]; ++k)
      for (int j = i0[1]; j <= i1[1]; ++j)
        for (int i = i0[0]; i <= i1[0]; ++i) buckets_[bucket(i, j, k)].push_back(static_cast<int>(e));
  }
  // boundary faces: owned by exactly one element
  std::map<std::array<int, 3>, std::pair<int, Tri>> faces;
  for (const Tet& t : tets) {
    static const int f[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
    for (const auto& ff : f) {
      const Tri tri = {t[ff[0]], t[ff[1]], t[ff[2]]};
      std::array<int, 3> key = tri;
      std::sort(key.begin(), key.end());
      auto [it, fresh] = faces.emplace(key, std::make_pair(1, tri));
      if (!fresh) it->second.first++;
    }
  }
  for (const auto& [key, v] : faces)
    if (v.first == 1) boundary_.push_back(v.second);
}

TetLocator::Hit TetLocator::locate(const Vec3& p) const {
  Hit h;
  std::array<int, 3> c;
  for (int d = 0; d < 3; ++d) {
    const double s = (p(d) - lo_(d)) / cell_;
    if (s < 0 || s >= dims_[d]) return h;
    c[d] = static_cast<int>(s);
  }
  double best = -1e300;
  for (int e : buckets_[bucket(c[0], c[1], c[2])]) {
    const Tet& t = tets_[e];
    Eigen::Matrix3d J;
    J.col(0) = nodes_[t[1]] - nodes_[t[0]];
    J.col(1) = nodes_[t[2]] - nodes_[t[0]];
    J.col(2) = nodes_[t[3]] - nodes_[t[0]];
    const Vec3 l = J.inverse() * (p - nodes_[t[0]]);
    const std::array<double, 4> b = {1 - l.sum(), l(0), l(1), l(2)};
    const double m = *std::min_element(b.begin(), b.end());
    if (m > best) {
      best = m;
      h.tet = e;
      h.bary = b;
    }
  }
  if (best < -1e-10) h.tet = -1;
  return h;
}

TetLocator::Surface TetLocator::closest_boundary_point(const Vec3& p) const {
  Surface s;
  s.distance = 1e300;
  for (const Tri& t : boundary_) {
    const auto w = closest_on_triangle(p, nodes_[t[0]], nodes_[t[1]], nodes_[t[2]]);
    const Vec3 q = w[0] * nodes_[t[0]] + w[1] * nodes_[t[1]] + w[2] * nodes_[t[2]];
    const double d = (q - p).norm();
    if (d < s.distance) {
      s.distance = d;
      s.nodes = t;
      s.weight = w;
    }
  }
  return s;
}

Eigen::SparseMatrix<double> transfer_matrix(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets,
                                            const std::vector<Vec3>& points, double band) {
  const TetLocator loc(nodes, tets);
  std::vector<std::vector<Eigen::Triplet<double>>> rows(points.size());
  parallel_for(points.size(), [&](std::size_t i) {
    const TetLocator::Hit h = loc.locate(points[i]);
    if (h.tet >= 0) {
      for (int a = 0; a < 4; ++a)
        if (h.bary[a] != 0.0) rows[i].emplace_back(static_cast<int>(i), tets[h.tet][a], h.bary[a]);
      return;
    }
    const TetLocator::Surface s = loc.closest_boundary_point(points[i]);
    if (s.distance > band) {
      std::ostringstream os;
      os << "point " << i << " lies " << s.distance << " m outside the source mesh (band " << band << " m)";
      throw InvalidInput(os.str());
    }
    for (int a = 0; a < 3; ++a)
      if (s.weight[a] != 0.0) rows[i].emplace_back(static_cast<int>(i), s.nodes[a], s.weight[a]);
  });
  std::vector<Eigen::Triplet<double>> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  Eigen::SparseMatrix<double> T(static_cast<int>(points.size()), static_cast<int>(nodes.size()));
  T.setFromTriplets(all.begin(), all.end());
  return T;
}

Eigen::VectorXd transfer_values(const Eigen::SparseMatrix<double>& T, const Eigen::VectorXd& source, double floor) {
  return (T * source).cwiseMax(floor);
}

}  // namespace cranio
