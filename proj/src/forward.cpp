#include "cranio/forward.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <set>

namespace cranio {

namespace {

std::atomic<long> g_solves{0};

}  // namespace

double contact_shape(double t) {
  t = std::abs(t);
  if (t >= 1.0) return 0.0;
  return std::exp(2.0 - 2.0 / (1.0 - t * t));
}

double contact_shape_derivative(double t) {
  const double a = std::abs(t);
  if (a >= 1.0) return 0.0;
  const double d = 1.0 - a * a;
  return contact_shape(a) * (-4.0 * t / (d * d));
}

ContactProfile contact_profile_from_string(const std::string& name) {
  if (name == "smooth") return ContactProfile::smooth;
  if (name == "constant") return ContactProfile::constant;
  throw InvalidInput("unknown contact profile '" + name + "' (expected smooth or constant)");
}

std::string to_string(ContactProfile p) { return p == ContactProfile::smooth ? "smooth" : "constant"; }

std::vector<int> FemMesh::electrode_nodes(int m) const {
  std::set<int> nodes_on;
  for (std::size_t t = 0; t < boundary.size(); ++t)
    if (region[t] == m + 1) nodes_on.insert(boundary[t].begin(), boundary[t].end());
  return {nodes_on.begin(), nodes_on.end()};
}

FemMesh fem_mesh(const HeadMesh& mesh) {
  FemMesh f;
  f.nodes = mesh.nodes;
  f.tets = mesh.tets;
  f.boundary = mesh.boundary();
  f.region = mesh.boundary_region();
  for (const ElectrodePatch& p : mesh.surface.electrodes) {
    ElectrodeFrame e;
    e.center = p.center;
    e.normal = p.normal;
    e.t1 = p.t1;
    e.t2 = p.t2;
    e.radius = p.radius;
    f.electrodes.push_back(e);
  }
  return f;
}

double ContactField::shape(int m, const Vec3& y) const {
  if (profile == ContactProfile::constant) return 1.0;
  return contact_shape(frames[m].footprint(y));
}

ContactField build_contact_field(const FemMesh& mesh, const Eigen::VectorXd& coefficients, ContactProfile profile) {
  if (coefficients.size() != mesh.electrode_count())
    throw InvalidInput("expected " + std::to_string(mesh.electrode_count()) + " contact coefficients, got " +
                       std::to_string(coefficients.size()));
  for (int m = 0; m < coefficients.size(); ++m)
    if (!(coefficients(m) > 0) || !std::isfinite(coefficients(m)))
      throw InvalidInput("contact coefficient of electrode " + std::to_string(m + 1) + " must be positive");
  ContactField z;
  z.profile = profile;
  z.coefficients = coefficients;
  z.frames = mesh.electrodes;
  return z;
}

Eigen::VectorXd nodal_contact(const FemMesh& mesh, const ContactField& zeta) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mesh.node_count());
  for (std::size_t t = 0; t < mesh.boundary.size(); ++t) {
    const int m = mesh.region[t] - 1;
    if (m < 0) continue;
    for (int i : mesh.boundary[t]) v(i) = zeta.value(m, mesh.nodes[i]);
  }
  return v;
}

BoundaryQuadrature electrode_quadrature(const FemMesh& mesh) {
  static const double a = 2.0 / 3.0, b = 1.0 / 6.0;
  static const std::array<std::array<double, 3>, 3> bary = {{{a, b, b}, {b, a, b}, {b, b, a}}};
  BoundaryQuadrature q;
  for (std::size_t t = 0; t < mesh.boundary.size(); ++t) {
    const int m = mesh.region[t] - 1;
    if (m < 0) continue;
    const Tri& T = mesh.boundary[t];
    const Vec3 &p0 = mesh.nodes[T[0]], &p1 = mesh.nodes[T[1]], &p2 = mesh.nodes[T[2]];
    const double w = triangle_area(p0, p1, p2) / 3.0;
    for (const auto& l : bary)
      q.points.push_back({static_cast<int>(t), m, l[0] * p0 + l[1] * p1 + l[2] * p2, l, w});
  }
  return q;
}

Eigen::MatrixXd mean_free_basis(int M) {
  if (M < 2) throw InvalidInput("at least two electrodes are needed");
  // Helmert columns: (1, ..., 1, -k, 0, ...) / sqrt(k (k + 1))
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(M, M - 1);
  for (int k = 1; k < M; ++k) {
    const double s = 1.0 / std::sqrt(static_cast<double>(k) * (k + 1));
    for (int i = 0; i < k; ++i) V(i, k - 1) = s;
    V(k, k - 1) = -k * s;
  }
  return V;
}

Eigen::MatrixXd current_patterns(int M) {
  if (M < 2) throw InvalidInput("at least two electrodes are needed");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(M, M - 1);
  for (int j = 0; j < M - 1; ++j) {
    P(0, j) = 1.0;
    P(j + 1, j) = -1.0;
  }
  return P;
}

struct ForwardSystem::Factor {
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
};

ForwardSystem::ForwardSystem(const FemMesh& mesh, const Eigen::VectorXd& sigma, const ContactField& zeta) {
  n_ = mesh.node_count();
  M_ = mesh.electrode_count();
  if (M_ < 2) throw InvalidInput("the forward problem needs at least two electrodes");
  if (sigma.size() != n_) throw InvalidInput("conductivity has " + std::to_string(sigma.size()) + " values for " +
                                             std::to_string(n_) + " nodes");
  for (int i = 0; i < n_; ++i)
    if (!(sigma(i) > 0) || !std::isfinite(sigma(i)))
      throw InvalidInput("conductivity must be positive (node " + std::to_string(i) + ")");
  if (zeta.coefficients.size() != M_) throw InvalidInput("contact field does not match the electrode count");
  basis_ = mean_free_basis(M_);

  using Trip = Eigen::Triplet<double>;
  // volume stiffness, per element chunk
  const std::size_t ne = mesh.tets.size();
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(ne, 64));
  std::vector<std::vector<Trip>> part(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = ne * c / chunks, end = ne * (c + 1) / chunks;
    auto& out = part[c];
    out.reserve((end - begin) * 16);
    for (std::size_t e = begin; e < end; ++e) {
      const Tet& T = mesh.tets[e];
      Eigen::Matrix3d Jm;
      Jm.col(0) = mesh.nodes[T[1]] - mesh.nodes[T[0]];
      Jm.col(1) = mesh.nodes[T[2]] - mesh.nodes[T[0]];
      Jm.col(2) = mesh.nodes[T[3]] - mesh.nodes[T[0]];
      const double vol = std::abs(Jm.determinant()) / 6.0;
      const Eigen::Matrix3d Jinv = Jm.inverse();
      Eigen::Matrix<double, 3, 4> G;
      G.col(1) = Jinv.row(0).transpose();
      G.col(2) = Jinv.row(1).transpose();
      G.col(3) = Jinv.row(2).transpose();
      G.col(0) = -(G.col(1) + G.col(2) + G.col(3));
      const double s = 0.25 * (sigma(T[0]) + sigma(T[1]) + sigma(T[2]) + sigma(T[3]));
      const Eigen::Matrix4d Ke = s * vol * G.transpose() * G;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out.emplace_back(T[i], T[j], Ke(i, j));
    }
  });
  std::vector<Trip> trips;
  for (auto& p : part) trips.insert(trips.end(), p.begin(), p.end());

  // contact terms: C (n x n), D (n x M), E = diag
  Eigen::VectorXd E = Eigen::VectorXd::Zero(M_);
  const BoundaryQuadrature quad = electrode_quadrature(mesh);
  std::vector<std::map<int, double>> dacc(M_);
  for (const auto& q : quad.points) {
    const double z = zeta.value(q.electrode, q.x) * q.weight;
    if (z == 0.0) continue;
    const Tri& T = mesh.boundary[q.triangle];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) trips.emplace_back(T[i], T[j], z * q.phi[i] * q.phi[j]);
      dacc[q.electrode][T[i]] -= z * q.phi[i];
    }
    E(q.electrode) += z;
  }
  const double emax = E.maxCoeff();
  for (int m = 0; m < M_; ++m)
    if (!(E(m) > 1e-12 * emax))
      throw NumericalError("electrode " + std::to_string(m + 1) +
                           " has no contact: the contact field vanishes on its whole footprint");

  // coupling with beta: (D V) and V^T E V
  for (int m = 0; m < M_; ++m)
    for (const auto& [i, d] : dacc[m])
      for (int k = 0; k < M_ - 1; ++k) {
        const double v = d * basis_(m, k);
        if (v == 0.0) continue;
        trips.emplace_back(i, n_ + k, v);
        trips.emplace_back(n_ + k, i, v);
      }
  const Eigen::MatrixXd EE = basis_.transpose() * E.asDiagonal() * basis_;
  for (int k = 0; k < M_ - 1; ++k)
    for (int l = 0; l < M_ - 1; ++l)
      if (EE(k, l) != 0.0) trips.emplace_back(n_ + k, n_ + l, EE(k, l));

  A_.resize(n_ + M_ - 1, n_ + M_ - 1);
  A_.setFromTriplets(trips.begin(), trips.end());
  // exact symmetry: average with the transpose
  Eigen::SparseMatrix<double> At = A_.transpose();
  A_ = 0.5 * (A_ + At);
  A_.makeCompressed();

  auto f = std::make_shared<Factor>();
  f->ldlt.compute(A_);
  if (f->ldlt.info() != Eigen::Success) throw NumericalError("factorization of the forward system failed");
  if (!(f->ldlt.vectorD().minCoeff() > 0))
    throw NumericalError("forward system is not positive definite");
  factor_ = f;
}

ForwardSolution ForwardSystem::solve(const Eigen::VectorXd& pattern) const {
  if (pattern.size() != M_) throw InvalidInput("current pattern length differs from the electrode count");
  const double total = pattern.sum(), scale = pattern.cwiseAbs().sum();
  if (std::abs(total) > 1e-12 * std::max(scale, 1e-300) && scale > 0)
    throw InvalidInput("current pattern is not mean free (sum " + std::to_string(total) + ")");
  ++g_solves;
  ForwardSolution s;
  if (scale == 0.0) {
    s.u = Eigen::VectorXd::Zero(n_);
    s.U = Eigen::VectorXd::Zero(M_);
    return s;
  }
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n_ + M_ - 1);
  b.tail(M_ - 1) = basis_.transpose() * pattern;
  Eigen::VectorXd x = factor_->ldlt.solve(b);
  // refinement with residuals accumulated in extended precision
  const double bnorm = b.cwiseAbs().maxCoeff();
  for (int sweep = 0; sweep < 4; ++sweep) {
    std::vector<long double> r(b.size());
    for (int i = 0; i < b.size(); ++i) r[i] = b(i);
    for (int k = 0; k < A_.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it)
        r[it.row()] -= static_cast<long double>(it.value()) * x(k);
    Eigen::VectorXd rd(b.size());
    for (int i = 0; i < b.size(); ++i) rd(i) = static_cast<double>(r[i]);
    if (rd.cwiseAbs().maxCoeff() <= 1e-16 * bnorm) break;
    x += factor_->ldlt.solve(rd);
  }
  s.u = x.head(n_);
  s.U = basis_ * x.tail(M_ - 1);
  return s;
}

std::vector<ForwardSolution> ForwardSystem::solve(const Eigen::MatrixXd& patterns) const {
  std::vector<ForwardSolution> out(patterns.cols());
  parallel_for(out.size(), [&](std::size_t j) { out[j] = solve(Eigen::VectorXd(patterns.col(j))); });
  return out;
}

double ForwardSystem::residual(const ForwardSolution& s, const Eigen::VectorXd& pattern) const {
  Eigen::VectorXd x(n_ + M_ - 1), b = Eigen::VectorXd::Zero(n_ + M_ - 1);
  x.head(n_) = s.u;
  x.tail(M_ - 1) = basis_.transpose() * s.U;
  b.tail(M_ - 1) = basis_.transpose() * pattern;
  const double bn = b.cwiseAbs().maxCoeff();
  return (A_ * x - b).cwiseAbs().maxCoeff() / (bn > 0 ? bn : 1.0);
}

std::vector<ForwardSolution> solve_patterns(const ForwardSystem& system, const Eigen::MatrixXd& patterns) {
  return system.solve(patterns);
}

Eigen::VectorXd stacked_measurement(const std::vector<ForwardSolution>& solutions) {
  if (solutions.empty()) throw InvalidInput("no forward solutions to stack");
  const int M = static_cast<int>(solutions.front().U.size());
  Eigen::VectorXd v(M * solutions.size());
  for (std::size_t j = 0; j < solutions.size(); ++j) {
    if (solutions[j].U.size() != M) throw InvalidInput("forward solutions differ in electrode count");
    v.segment(j * M, M) = solutions[j].U;
  }
  return v;
}

Eigen::VectorXd electrode_currents(const FemMesh& mesh, const ContactField& zeta, const ForwardSolution& s) {
  Eigen::VectorXd I = Eigen::VectorXd::Zero(mesh.electrode_count());
  for (const auto& q : electrode_quadrature(mesh).points) {
    const Tri& T = mesh.boundary[q.triangle];
    const double u = q.phi[0] * s.u(T[0]) + q.phi[1] * s.u(T[1]) + q.phi[2] * s.u(T[2]);
    I(q.electrode) += q.weight * zeta.value(q.electrode, q.x) * (s.U(q.electrode) - u);
  }
  return I;
}

long forward_solve_count() { return g_solves.load(); }

namespace {
ForwardObserver observer;
}

void set_forward_observer(ForwardObserver o) { observer = std::move(o); }

ForwardRun run_forward(const FemMesh& mesh, const Eigen::VectorXd& sigma, const ContactField& zeta) {
  const ForwardSystem sys(mesh, sigma, zeta);
  ForwardRun r;
  r.solutions = sys.solve(current_patterns(mesh.electrode_count()));
  r.measurement = stacked_measurement(r.solutions);
  if (observer) observer(mesh, zeta, sys, r);
  return r;
}

}  // namespace cranio
