#pragma once

#include "cranio/forward.hpp"
#include "cranio/meshgen.hpp"
#include "cranio/shape_model.hpp"

#include <cmath>

namespace testing_support {

using namespace cranio;

inline const ShapeModel& small_model() {
  static const ShapeModel model = [] {
    LibraryConfig c;
    c.n = 12;
    return build_shape_model(generate_library(c, 7), 5);
  }();
  return model;
}

// eight electrodes, sparse enough for the coarsest surface level
inline ElectrodeLayout layout8() { return belt_layout({{5, 1.1, 0.0}, {3, 0.5, 0.4}}, 0.0075); }

inline HeadMesh coarse_head(const ElectrodeLayout& layout = layout8(), int k = 3, int layers = 3) {
  MeshOptions o;
  o.k = k;
  o.layers = layers;
  return build_head_mesh(small_model(), Eigen::VectorXd::Zero(small_model().retained()), layout, o);
}

inline HeadMesh sphere_head(double r, const ElectrodeLayout& layout, int k, int layers) {
  MeshOptions o;
  o.k = k;
  o.layers = layers;
  return build_head_mesh([r](const Vec3&) { return r; }, layout, o);
}

// smooth positive conductivity varying across the head
inline Eigen::VectorXd varying_sigma(const FemMesh& m) {
  Eigen::VectorXd s(m.node_count());
  for (int i = 0; i < m.node_count(); ++i) {
    const Vec3& x = m.nodes[i];
    s(i) = 0.2 + 0.1 * std::sin(40 * x.x()) * std::cos(30 * x.y()) + 0.05 * x.z() / 0.1;
  }
  return s;
}

inline double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
}

}  // namespace testing_support
