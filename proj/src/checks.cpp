#include "cranio/checks.hpp"
#include "cranio/forward.hpp"
#include "cranio/sensitivity.hpp"

#include <random>

namespace cranio {

std::vector<DerivativeCheck> check_derivatives(const ShapeModel& model, const ElectrodeLayout& layout,
                                               const DerivativeCheckOptions& o) {
  if (o.alpha_modes < 1 || o.alpha_modes > model.retained()) throw InvalidInput("alpha modes exceed the shape model");
  const ShapeModel small = model.truncated(o.alpha_modes);
  const Eigen::VectorXd alpha = Eigen::VectorXd::Zero(o.alpha_modes);
  const HeadMesh head = build_head_mesh(small, alpha, layout, o.mesh);
  const FemMesh mesh = fem_mesh(head);
  const int M = mesh.electrode_count();

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Eigen::VectorXd sigma(mesh.node_count());
  for (int i = 0; i < mesh.node_count(); ++i) sigma(i) = 0.15 + 0.1 * uni(rng);
  Eigen::VectorXd zc(M);
  for (int m = 0; m < M; ++m) zc(m) = 80 + 40 * uni(rng);
  const ContactField zeta = build_contact_field(mesh, zc, ContactProfile::smooth);
  const ForwardRun run = run_forward(mesh, sigma, zeta);

  auto measure = [&](const FemMesh& f, const Eigen::VectorXd& s, const Eigen::VectorXd& c) {
    return run_forward(f, s, build_contact_field(f, c, ContactProfile::smooth)).measurement;
  };
  auto rel = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm() / b.norm(); };

  std::vector<DerivativeCheck> out;
  const Eigen::MatrixXd Js = d_sigma(mesh, run.solutions);
  for (int c = 0; c < o.sigma_columns; ++c) {
    const int k = static_cast<int>(uni(rng) * mesh.node_count()) % mesh.node_count();
    const double h = 1e-4;
    Eigen::VectorXd sp = sigma, sm = sigma;
    sp(k) += h;
    sm(k) -= h;
    const Eigen::VectorXd fd = (measure(mesh, sp, zc) - measure(mesh, sm, zc)) / (2 * h);
    out.push_back({"sigma", k, h, rel(Js.col(k), fd), 0.0, 1e-5});
  }
  const Eigen::MatrixXd Jz = d_zeta(mesh, zeta, run.solutions);
  for (int m = 0; m < M; ++m) {
    const double h = 1e-3 * zc(m);
    Eigen::VectorXd cp = zc, cm = zc;
    cp(m) += h;
    cm(m) -= h;
    const Eigen::VectorXd fd = (measure(mesh, sigma, cp) - measure(mesh, sigma, cm)) / (2 * h);
    out.push_back({"zeta", m, h, rel(Jz.col(m), fd), 0.0, 1e-5});
  }

  const RadiusFunction radius = model_radius(small, alpha);
  const AngleBlocks Ja = d_angles(mesh, zeta, run.solutions, build_shift_fields(mesh, layout, radius));
  for (int which = 0; which < 2; ++which)
    for (int m = 0; m < M; ++m) {
      const double h = 1e-3;
      auto at = [&](double t) {
        ElectrodeLayout l = layout;
        (which == 0 ? l.theta : l.phi)[m] += t;
        return measure(fem_mesh(reposition(head, radius, l)), sigma, zc);
      };
      const Eigen::VectorXd fd = (at(h) - at(-h)) / (2 * h);
      out.push_back({which == 0 ? "theta" : "phi", m, h, rel((which == 0 ? Ja.theta : Ja.phi).col(m), fd), 0.0, 5e-2});
    }

  auto shape_measure = [&](const Eigen::VectorXd& a) {
    return measure(fem_mesh(reposition(head, small, a, layout)), sigma, zc);
  };
  const Eigen::VectorXd eps = 4 * default_shape_steps(sample_covariance(small));
  const Eigen::MatrixXd D1 = d_shape(shape_measure, alpha, eps);
  const Eigen::MatrixXd D2 = d_shape(shape_measure, alpha, eps / 2);
  const Eigen::MatrixXd D4 = d_shape(shape_measure, alpha, eps / 4);
  for (int j = 0; j < o.alpha_modes; ++j)
    out.push_back({"alpha", j, eps(j), (D1.col(j) - D2.col(j)).norm() / (D2.col(j) - D4.col(j)).norm(), 3.5, 4.5});
  return out;
}

}  // namespace cranio
