#include "cranio/sensitivity.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>

namespace cranio {

namespace {

// Values of u on the quadrature points of one triangle.
double at_point(const Eigen::VectorXd& u, const Tri& T, const std::array<double, 3>& phi) {
  return phi[0] * u(T[0]) + phi[1] * u(T[1]) + phi[2] * u(T[2]);
}

// For every quadrature point and every measurement row (i, m'), the product
// (U^(i)_m - u^(i))(U~_m'm - u~_m') on electrode m of the point, weighted by
// factor(point). Returns rows x M.
template <class Factor>
Eigen::MatrixXd boundary_pairing(const FemMesh& mesh, const BoundaryQuadrature& quad,
                                 const std::vector<ForwardSolution>& solutions, Factor&& factor) {
  const int M = mesh.electrode_count();
  const int P = static_cast<int>(solutions.size());
  if (P != M - 1) throw InvalidInput("derivatives need the M - 1 standard pattern solutions");
  const Eigen::MatrixXd C = pattern_combinations(M);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(P * M, M);
  Eigen::VectorXd d(P), dt(M);
  for (const auto& q : quad.points) {
    const double f = factor(q);
    if (f == 0.0) continue;
    const Tri& T = mesh.boundary[q.triangle];
    const int m = q.electrode;
    for (int j = 0; j < P; ++j) d(j) = solutions[j].U(m) - at_point(solutions[j].u, T, q.phi);
    dt = C * d;  // auxiliary solutions are the same combinations
    for (int i = 0; i < P; ++i) out.col(m).segment(i * M, M) += (f * d(i)) * dt;
  }
  return out;
}

}  // namespace

Eigen::MatrixXd pattern_combinations(int M) {
  const Eigen::MatrixXd P = current_patterns(M);
  Eigen::MatrixXd target = Eigen::MatrixXd::Identity(M, M) - Eigen::MatrixXd::Constant(M, M, 1.0 / M);
  // P has full column rank and spans the mean-free space: exact least squares
  const Eigen::MatrixXd X = P.colPivHouseholderQr().solve(target);  // (M-1) x M
  return X.transpose();
}

Eigen::MatrixXd d_sigma(const FemMesh& mesh, const std::vector<ForwardSolution>& solutions,
                        const Eigen::SparseMatrix<double>* transfer) {
  const int M = mesh.electrode_count();
  const int P = static_cast<int>(solutions.size());
  if (P != M - 1) throw InvalidInput("derivatives need the M - 1 standard pattern solutions");
  const int n = mesh.node_count();
  if (transfer && transfer->rows() != n) throw InvalidInput("transfer rows do not match the head mesh nodes");
  const int R = P * M;
  const Eigen::MatrixXd Ct = pattern_combinations(M).transpose();  // P x M

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat H = RowMat::Zero(n, R);
  // nodes are accumulated in element order; chunks own disjoint node sets
  // only by accident, so accumulate per chunk and reduce in order
  const std::size_t ne = mesh.tets.size();
  const std::size_t chunks = std::min<std::size_t>(std::max(1, worker_count()), std::max<std::size_t>(ne, 1));
  std::vector<RowMat> partial(chunks > 1 ? chunks : 0);
  parallel_for(chunks, [&](std::size_t c) {
    RowMat& acc = chunks > 1 ? (partial[c] = RowMat::Zero(n, R)) : H;
    Eigen::Matrix<double, 3, Eigen::Dynamic> G(3, P), Gt(3, M);
    Eigen::MatrixXd Q(P, M);
    for (std::size_t e = ne * c / chunks; e < ne * (c + 1) / chunks; ++e) {
      const Tet& T = mesh.tets[e];
      Eigen::Matrix3d J;
      J.col(0) = mesh.nodes[T[1]] - mesh.nodes[T[0]];
      J.col(1) = mesh.nodes[T[2]] - mesh.nodes[T[0]];
      J.col(2) = mesh.nodes[T[3]] - mesh.nodes[T[0]];
      const double vol = std::abs(J.determinant()) / 6.0;
      const Eigen::Matrix3d Jinv = J.inverse();
      for (int j = 0; j < P; ++j) {
        const Eigen::VectorXd& u = solutions[j].u;
        const Vec3 du(u(T[1]) - u(T[0]), u(T[2]) - u(T[0]), u(T[3]) - u(T[0]));
        G.col(j) = Jinv.transpose() * du;
      }
      Gt.noalias() = G * Ct;
      Q.noalias() = G.transpose() * Gt;  // Q(i, m) = grad u^(i) . grad u~_m
      const double w = -vol / 4.0;
      for (int a = 0; a < 4; ++a) {
        auto row = acc.row(T[a]);
        for (int i = 0; i < P; ++i) row.segment(i * M, M) += w * Q.row(i);
      }
    }
  });
  for (auto& p : partial) H += p;
  if (!transfer) return H.transpose();
  const Eigen::SparseMatrix<double> Tt = transfer->transpose();
  return (Tt * H).transpose();
}

Eigen::MatrixXd d_zeta(const FemMesh& mesh, const ContactField& zeta, const std::vector<ForwardSolution>& solutions) {
  const BoundaryQuadrature quad = electrode_quadrature(mesh);
  return boundary_pairing(mesh, quad, solutions,
                          [&](const BoundaryQuadrature::Point& q) { return -q.weight * zeta.shape(q.electrode, q.x); });
}

std::vector<Vec3> boundary_normals(const FemMesh& mesh) {
  std::vector<Vec3> n(mesh.nodes.size(), Vec3::Zero());
  for (const Tri& t : mesh.boundary) {
    const Vec3 a = (mesh.nodes[t[1]] - mesh.nodes[t[0]]).cross(mesh.nodes[t[2]] - mesh.nodes[t[0]]);
    for (int v : t) n[v] += a;
  }
  for (Vec3& v : n)
    if (v.norm() > 0) v.normalize();
  return n;
}

ElectrodeShifts build_shift_fields(const FemMesh& mesh, const ElectrodeLayout& layout, const RadiusFunction& radius,
                                   double angle_step) {
  if (layout.size() != mesh.electrode_count()) throw InvalidInput("layout does not match the mesh electrodes");
  const std::vector<Vec3> normals = boundary_normals(mesh);
  auto surface_point = [&](double th, double ph) {
    const Vec3 b(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
    return Vec3(radius(b) * b);
  };
  ElectrodeShifts s;
  for (int m = 0; m < layout.size(); ++m) {
    const double th = layout.theta[m], ph = layout.phi[m], h = angle_step;
    const Vec3 dirs[2] = {(surface_point(th + h, ph) - surface_point(th - h, ph)) / (2 * h),
                          (surface_point(th, ph + h) - surface_point(th, ph - h)) / (2 * h)};
    const std::vector<int> nodes = mesh.electrode_nodes(m);
    const Vec3& nc = mesh.electrodes[m].normal;
    for (int family = 0; family < 2; ++family) {
      ShiftField f;
      f.nodes = nodes;
      f.direction = dirs[family];
      const Vec3 center_part = dirs[family] - dirs[family].dot(nc) * nc;
      f.magnitude = center_part.norm();
      for (int v : nodes) {
        const Vec3 t = dirs[family] - dirs[family].dot(normals[v]) * normals[v];
        const double tn = t.norm();
        if (!(tn > 1e-12))
          throw NumericalError("shift field of electrode " + std::to_string(m + 1) + " has no tangential part");
        f.a.push_back(t * (f.magnitude / tn));
      }
      (family == 0 ? s.theta : s.phi).push_back(std::move(f));
    }
  }
  return s;
}

std::vector<Vec3> surface_gradient(const FemMesh& mesh, const Eigen::VectorXd& field) {
  std::vector<Vec3> g(mesh.nodes.size(), Vec3::Zero());
  std::vector<double> w(mesh.nodes.size(), 0.0);
  for (std::size_t k = 0; k < mesh.boundary.size(); ++k) {
    if (mesh.region[k] == 0) continue;
    const Tri& t = mesh.boundary[k];
    const Vec3 &a = mesh.nodes[t[0]], &b = mesh.nodes[t[1]], &c = mesh.nodes[t[2]];
    const Vec3 nrm = (b - a).cross(c - a);
    const double area2 = nrm.norm();
    const Vec3 nu = nrm / area2;
    // gradient of the linear interpolant within the triangle plane
    const Vec3 grad = (field(t[0]) * nu.cross(c - b) + field(t[1]) * nu.cross(a - c) + field(t[2]) * nu.cross(b - a)) /
                      area2;
    for (int v : t) {
      g[v] += 0.5 * area2 * grad;
      w[v] += 0.5 * area2;
    }
  }
  for (std::size_t v = 0; v < g.size(); ++v)
    if (w[v] > 0) g[v] /= w[v];
  return g;
}

AngleBlocks d_angles(const FemMesh& mesh, const ContactField& zeta, const std::vector<ForwardSolution>& solutions,
                     const ElectrodeShifts& shifts) {
  if (zeta.profile != ContactProfile::smooth) throw InvalidInput("angle derivatives require smooth profile");
  const int M = mesh.electrode_count();
  if (static_cast<int>(shifts.theta.size()) != M || static_cast<int>(shifts.phi.size()) != M)
    throw InvalidInput("shift fields do not match the electrode count");
  const std::vector<Vec3> grad = surface_gradient(mesh, nodal_contact(mesh, zeta));
  const BoundaryQuadrature quad = electrode_quadrature(mesh);
  AngleBlocks out;
  for (int family = 0; family < 2; ++family) {
    const auto& fields = family == 0 ? shifts.theta : shifts.phi;
    // nodal a . Grad(zeta), interpolated linearly on each triangle
    Eigen::VectorXd dot = Eigen::VectorXd::Zero(mesh.node_count());
    for (int m = 0; m < M; ++m)
      for (std::size_t i = 0; i < fields[m].nodes.size(); ++i)
        dot(fields[m].nodes[i]) = fields[m].a[i].dot(grad[fields[m].nodes[i]]);
    Eigen::MatrixXd J = boundary_pairing(mesh, quad, solutions, [&](const BoundaryQuadrature::Point& q) {
      return q.weight * at_point(dot, mesh.boundary[q.triangle], q.phi);
    });
    (family == 0 ? out.theta : out.phi) = std::move(J);
  }
  return out;
}

Eigen::VectorXd default_shape_steps(const Eigen::VectorXd& alpha_variances) {
  Eigen::VectorXd e(alpha_variances.size());
  for (int j = 0; j < e.size(); ++j) e(j) = std::clamp(0.05 * std::sqrt(std::max(0.0, alpha_variances(j))), 1e-4, 1e-2);
  return e;
}

Eigen::MatrixXd d_shape(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& measurement,
                        const Eigen::VectorXd& alpha, const Eigen::VectorXd& steps) {
  const int n = static_cast<int>(alpha.size());
  if (steps.size() != n) throw InvalidInput("one finite-difference step per shape parameter is needed");
  std::vector<Eigen::VectorXd> values(2 * n);
  std::vector<int> jobs;
  for (int j = 0; j < n; ++j)
    if (steps(j) != 0.0) {
      if (!(steps(j) > 0)) throw InvalidInput("finite-difference steps must be positive");
      jobs.push_back(2 * j);
      jobs.push_back(2 * j + 1);
    }
  parallel_for(jobs.size(), [&](std::size_t k) {
    const int job = jobs[k], j = job / 2;
    Eigen::VectorXd a = alpha;
    a(j) += (job % 2 == 0 ? 1.0 : -1.0) * steps(j);
    values[job] = measurement(a);
  });
  Eigen::Index rows = 0;
  for (int job : jobs) rows = values[job].size();
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(rows, n);
  for (int j = 0; j < n; ++j)
    if (steps(j) != 0.0) J.col(j) = (values[2 * j] - values[2 * j + 1]) / (2 * steps(j));
  return J;
}

Eigen::MatrixXd assemble_jacobian(const JacobianBlocks& b) {
  const Eigen::MatrixXd* blocks[5] = {&b.sigma, &b.zeta, &b.alpha, &b.theta, &b.phi};
  Eigen::Index rows = -1, cols = 0;
  for (const auto* m : blocks) {
    if (m->size() == 0) continue;
    if (rows >= 0 && m->rows() != rows) throw InvalidInput("Jacobian blocks differ in row count");
    rows = m->rows();
    cols += m->cols();
  }
  if (rows < 0) throw InvalidInput("no Jacobian blocks given");
  Eigen::MatrixXd J(rows, cols);
  Eigen::Index c = 0;
  for (const auto* m : blocks) {
    if (m->size() == 0) continue;
    J.middleCols(c, m->cols()) = *m;
    c += m->cols();
  }
  return J;
}

}  // namespace cranio
