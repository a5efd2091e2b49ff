#include "cranio/inversion.hpp"
#include "cranio/transfer.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace cranio {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
  for (const auto& [key, _] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw InvalidInput(std::string("unknown ") + what + " key '" + key + "'");
}

Eigen::VectorXd to_vector(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

bool estimates_alpha(InversionMode m) { return m == InversionMode::full; }
bool estimates_angles(InversionMode m) { return m != InversionMode::fixed_geometry; }

std::vector<const PriorBlock*> active_blocks(const Priors& p, InversionMode mode) {
  std::vector<const PriorBlock*> out = {&p.sigma, &p.zeta};
  if (estimates_alpha(mode)) out.push_back(&p.alpha);
  if (estimates_angles(mode)) {
    out.push_back(&p.theta);
    out.push_back(&p.phi);
  }
  return out;
}

std::vector<Eigen::VectorXd*> active_parts(Parameters& b, InversionMode mode) {
  std::vector<Eigen::VectorXd*> out = {&b.sigma, &b.zeta};
  if (estimates_alpha(mode)) out.push_back(&b.alpha);
  if (estimates_angles(mode)) {
    out.push_back(&b.theta);
    out.push_back(&b.phi);
  }
  return out;
}

Eigen::VectorXd pack(const Parameters& b, InversionMode mode) {
  auto parts = active_parts(const_cast<Parameters&>(b), mode);
  Eigen::Index n = 0;
  for (auto* p : parts) n += p->size();
  Eigen::VectorXd out(n);
  n = 0;
  for (auto* p : parts) {
    out.segment(n, p->size()) = *p;
    n += p->size();
  }
  return out;
}

Parameters unpack(const Eigen::VectorXd& x, const Parameters& like, InversionMode mode) {
  Parameters b = like;
  Eigen::Index n = 0;
  for (auto* p : active_parts(b, mode)) {
    *p = x.segment(n, p->size());
    n += p->size();
  }
  return b;
}

bool feasible(const Parameters& b) {
  if (b.sigma.minCoeff() <= 0.0 || b.zeta.minCoeff() <= 0.0) return false;
  return b.theta.minCoeff() > 0.0 && b.theta.maxCoeff() < M_PI / 2;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

}  // namespace

InversionMode inversion_mode_from_string(const std::string& name) {
  if (name == "full") return InversionMode::full;
  if (name == "fixed_alpha" || name == "fixed-alpha") return InversionMode::fixed_alpha;
  if (name == "fixed_geometry" || name == "fixed-geometry") return InversionMode::fixed_geometry;
  throw InvalidInput("unknown reconstruction mode '" + name + "'");
}

std::string to_string(InversionMode mode) {
  switch (mode) {
    case InversionMode::full: return "full";
    case InversionMode::fixed_alpha: return "fixed_alpha";
    case InversionMode::fixed_geometry: return "fixed_geometry";
  }
  return "?";
}

json to_json(const PriorConfig& c) {
  return json{{"sigma_sd", c.sigma_sd},       {"sigma_length", c.sigma_length}, {"contact_mean", c.contact_mean},
              {"contact_sd", c.contact_sd},   {"theta_sd", c.theta_sd},         {"phi_sd", c.phi_sd},
              {"alpha_scale", c.alpha_scale}};
}

PriorConfig prior_config_from_json(const json& j) {
  reject_unknown(j, {"sigma_sd", "sigma_length", "contact_mean", "contact_sd", "theta_sd", "phi_sd", "alpha_scale"},
                 "prior");
  PriorConfig c;
  c.sigma_sd = j.value("sigma_sd", c.sigma_sd);
  c.sigma_length = j.value("sigma_length", c.sigma_length);
  c.contact_mean = j.value("contact_mean", c.contact_mean);
  c.contact_sd = j.value("contact_sd", c.contact_sd);
  c.theta_sd = j.value("theta_sd", c.theta_sd);
  c.phi_sd = j.value("phi_sd", c.phi_sd);
  c.alpha_scale = j.value("alpha_scale", c.alpha_scale);
  return c;
}

json to_json(const SolverConfig& c) {
  return json{{"mode", to_string(c.mode)},
              {"q", c.q},
              {"halvings", c.halvings},
              {"max_iterations", c.max_iterations},
              {"relative_decrease", c.relative_decrease},
              {"noise_level", c.noise_level},
              {"remesh_trials", c.remesh_trials}};
}

SolverConfig solver_config_from_json(const json& j) {
  reject_unknown(j, {"mode", "q", "halvings", "max_iterations", "relative_decrease", "noise_level", "remesh_trials"},
                 "solver");
  SolverConfig c;
  if (j.contains("mode")) c.mode = inversion_mode_from_string(j.at("mode").get<std::string>());
  c.q = j.value("q", c.q);
  c.halvings = j.value("halvings", c.halvings);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.relative_decrease = j.value("relative_decrease", c.relative_decrease);
  c.noise_level = j.value("noise_level", c.noise_level);
  c.remesh_trials = j.value("remesh_trials", c.remesh_trials);
  if (!(c.q > 0 && c.q <= 1)) throw InvalidInput("solver q must lie in (0, 1]");
  if (c.halvings < 0 || c.max_iterations < 0) throw InvalidInput("solver counts must be non-negative");
  return c;
}

Eigen::VectorXd PriorBlock::whiten(const Eigen::VectorXd& x) const {
  return factor.triangularView<Eigen::Lower>().solve(x);
}

PriorBlock gaussian_block(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
    throw InvalidInput("covariance size does not match the prior mean");
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) throw NumericalError("prior covariance is not positive definite");
  PriorBlock b;
  b.mean = std::move(mean);
  b.factor = llt.matrixL();
  return b;
}

PriorBlock diagonal_block(Eigen::VectorXd mean, const Eigen::VectorXd& variances) {
  if (variances.size() != mean.size()) throw InvalidInput("variance count does not match the prior mean");
  if (variances.size() > 0 && !(variances.minCoeff() > 0)) throw InvalidInput("prior variances must be positive");
  PriorBlock b;
  b.mean = std::move(mean);
  b.factor = variances.cwiseSqrt().asDiagonal();
  return b;
}

Eigen::MatrixXd squared_exponential(const std::vector<Vec3>& points, double sd, double length) {
  if (!(sd > 0 && length > 0)) throw InvalidInput("kernel scale and length must be positive");
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd K(n, n);
  const double s2 = sd * sd, c = 1.0 / (2 * length * length);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    for (Eigen::Index j = 0; j < n; ++j) K(j, i) = s2 * std::exp(-(points[i] - points[j]).squaredNorm() * c);
    K(i, i) += 1e-10 * s2;
  });
  return K;
}

Priors build_priors(const PriorConfig& c, const std::vector<Vec3>& storage_nodes, double sigma_mean, double zeta_mean,
                    const Eigen::VectorXd& alpha_variances, const ElectrodeLayout& layout) {
  if (!(sigma_mean > 0 && zeta_mean > 0)) throw InvalidInput("prior means must be positive");
  if (!(c.contact_mean > 0 && c.contact_sd > 0)) throw InvalidInput("contact draw parameters must be positive");
  const Eigen::Index N = static_cast<Eigen::Index>(storage_nodes.size());
  const int M = layout.size();
  Priors p;
  p.sigma = gaussian_block(Eigen::VectorXd::Constant(N, sigma_mean),
                           squared_exponential(storage_nodes, c.sigma_sd, c.sigma_length));
  const double zeta_sd = 2 * c.contact_sd * zeta_mean / c.contact_mean;
  p.zeta = diagonal_block(Eigen::VectorXd::Constant(M, zeta_mean), Eigen::VectorXd::Constant(M, zeta_sd * zeta_sd));
  p.alpha = diagonal_block(Eigen::VectorXd::Zero(alpha_variances.size()), c.alpha_scale * alpha_variances);
  p.theta = diagonal_block(to_vector(layout.theta), Eigen::VectorXd::Constant(M, c.theta_sd * c.theta_sd));
  p.phi = diagonal_block(to_vector(layout.phi), Eigen::VectorXd::Constant(M, c.phi_sd * c.phi_sd));
  return p;
}

HeadMesh build_storage_head(const ShapeModel& model, const Eigen::VectorXd& alpha_variances, const MeshOptions& options,
                            double inflation, double margin) {
  Eigen::VectorXd r = model.mean() + inflation * model.radius_std(alpha_variances);
  r.array() += margin;
  const GridPtr grid = model.grid();
  auto radius = [grid, r](const Vec3& d) {
    const GridStencil s = grid->locate(d);
    return s.weight[0] * r[s.vertex[0]] + s.weight[1] * r[s.vertex[1]] + s.weight[2] * r[s.vertex[2]];
  };
  return build_head_mesh(radius, ElectrodeLayout{}, options);
}

ElectrodeLayout moved_layout(const ElectrodeLayout& intended, const Eigen::VectorXd& theta, const Eigen::VectorXd& phi) {
  if (theta.size() != intended.size() || phi.size() != intended.size())
    throw InvalidInput("angle vectors do not match the electrode count");
  ElectrodeLayout l = intended;
  l.theta.assign(theta.data(), theta.data() + theta.size());
  l.phi.assign(phi.data(), phi.data() + phi.size());
  return l;
}

namespace {

void finish_evaluation(const InversionProblem& p, const Parameters& b, ModelEvaluation& e) {
  e.fem = fem_mesh(e.head);
  e.transfer = transfer_matrix(p.storage.nodes, p.storage.tets, e.fem.nodes);
  e.sigma_head = transfer_values(e.transfer, b.sigma, p.sigma_floor);
  e.zeta = build_contact_field(e.fem, b.zeta, p.profile);
  e.run = run_forward(e.fem, e.sigma_head, e.zeta);
}

}  // namespace

ModelEvaluation evaluate_model(const InversionProblem& p, const Parameters& b) {
  ModelEvaluation e;
  e.head = build_head_mesh(p.model, b.alpha, moved_layout(p.layout, b.theta, b.phi), p.mesh);
  e.fresh_quality = mesh_quality(e.head).min_radius_ratio;
  finish_evaluation(p, b, e);
  return e;
}

ModelEvaluation evaluate_model(const InversionProblem& p, const Parameters& b, const ModelEvaluation& base) {
  ModelEvaluation e;
  try {
    e.head = reposition(base.head, p.model, b.alpha, moved_layout(p.layout, b.theta, b.phi));
    if (mesh_quality(e.head).min_radius_ratio < 0.5 * base.fresh_quality)
      throw NumericalError("moved mesh degraded");
  } catch (const std::exception& ex) {
    spdlog::debug("remeshing: {}", ex.what());
    return evaluate_model(p, b);
  }
  e.remeshed = false;
  e.fresh_quality = base.fresh_quality;
  finish_evaluation(p, b, e);
  return e;
}

JacobianBlocks jacobian_blocks(const InversionProblem& p, const ModelEvaluation& at, const Parameters& b,
                               InversionMode mode, const Eigen::VectorXd& alpha_steps) {
  JacobianBlocks J;
  J.sigma = d_sigma(at.fem, at.run.solutions, &at.transfer);
  J.zeta = d_zeta(at.fem, at.zeta, at.run.solutions);
  const ElectrodeLayout layout = moved_layout(p.layout, b.theta, b.phi);
  if (estimates_angles(mode)) {
    const ElectrodeShifts shifts = build_shift_fields(at.fem, layout, model_radius(p.model, b.alpha));
    AngleBlocks a = d_angles(at.fem, at.zeta, at.run.solutions, shifts);
    J.theta = std::move(a.theta);
    J.phi = std::move(a.phi);
  }
  if (estimates_alpha(mode)) {
    // same connectivity, nodes moved; sigma stays attached to the storage head
    auto measure = [&](const Eigen::VectorXd& alpha) {
      const FemMesh f = fem_mesh(reposition(at.head, p.model, alpha, layout));
      const Eigen::SparseMatrix<double> T = transfer_matrix(p.storage.nodes, p.storage.tets, f.nodes);
      const ContactField z = build_contact_field(f, b.zeta, p.profile);
      return run_forward(f, transfer_values(T, b.sigma, p.sigma_floor), z).measurement;
    };
    J.alpha = d_shape(measure, b.alpha, alpha_steps);
  }
  return J;
}

HomogeneousFit homogeneous_fit(const FemMesh& mesh, ContactProfile profile, const Eigen::VectorXd& data,
                               double noise_sd, double zeta_start, int max_iterations) {
  if (!(noise_sd > 0)) throw InvalidInput("noise standard deviation must be positive");
  if (!(zeta_start > 0)) throw InvalidInput("starting contact must be positive");
  const int M = mesh.electrode_count();
  auto predict = [&](const Eigen::Vector2d& p) {
    const Eigen::VectorXd s = Eigen::VectorXd::Constant(mesh.node_count(), std::exp(p(0)));
    const ContactField z = build_contact_field(mesh, Eigen::VectorXd::Constant(M, std::exp(p(1))), profile);
    return run_forward(mesh, s, z).measurement;
  };
  auto residual = [&](const Eigen::Vector2d& p) { return Eigen::VectorXd((predict(p) - data) / noise_sd); };

  // voltages scale roughly like 1/sigma, which gives the starting level
  Eigen::Vector2d p(0.0, std::log(zeta_start));
  const Eigen::VectorXd U1 = predict(p);
  const double inv = U1.dot(data) / U1.squaredNorm();
  if (inv > 0) p(0) = -std::log(inv);

  HomogeneousFit fit;
  Eigen::VectorXd r = residual(p);
  double f = r.squaredNorm();
  double g0 = -1.0;
  const double h = 1e-4;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::MatrixXd J(r.size(), 2);
    for (int k = 0; k < 2; ++k) {
      Eigen::Vector2d a = p, c = p;
      a(k) += h;
      c(k) -= h;
      J.col(k) = (residual(a) - residual(c)) / (2 * h);
    }
    const Eigen::Vector2d g = J.transpose() * r;
    if (g0 < 0) g0 = g.norm();
    fit.iterations = it + 1;
    if (g.norm() <= 1e-8 * g0) {
      fit.converged = true;
      break;
    }
    const Eigen::Matrix2d N = J.transpose() * J;
    const Eigen::Vector2d dp = -N.ldlt().solve(g);
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 10; ++k, t *= 0.5) {
      const Eigen::Vector2d trial = p + t * dp;
      const Eigen::VectorXd rt = residual(trial);
      if (rt.squaredNorm() < f) {
        p = trial;
        r = rt;
        f = rt.squaredNorm();
        moved = true;
        break;
      }
    }
    // no decrease along a Gauss-Newton direction: at the optimum up to roundoff
    if (!moved || dp.norm() < 1e-10) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) spdlog::warn("homogeneous fit did not converge in {} iterations", max_iterations);
  fit.sigma = std::exp(p(0));
  fit.zeta = std::exp(p(1));
  fit.misfit = f;
  return fit;
}

StackedPrior::StackedPrior(std::vector<const PriorBlock*> blocks) : blocks_(std::move(blocks)) {
  for (const auto* b : blocks_) size_ += b->size();
}

Eigen::VectorXd StackedPrior::mean() const {
  Eigen::VectorXd out(size_);
  Eigen::Index o = 0;
  for (const auto* b : blocks_) {
    out.segment(o, b->size()) = b->mean;
    o += b->size();
  }
  return out;
}

Eigen::VectorXd StackedPrior::whiten(const Eigen::VectorXd& x) const {
  if (x.size() != size_) throw InvalidInput("vector does not match the stacked prior");
  Eigen::VectorXd out(size_);
  Eigen::Index o = 0;
  for (const auto* b : blocks_) {
    out.segment(o, b->size()) = b->whiten(x.segment(o, b->size()));
    o += b->size();
  }
  return out;
}

Eigen::VectorXd StackedPrior::apply(const Eigen::VectorXd& z) const {
  if (z.size() != size_) throw InvalidInput("vector does not match the stacked prior");
  Eigen::VectorXd out(size_);
  Eigen::Index o = 0;
  for (const auto* b : blocks_) {
    out.segment(o, b->size()) = b->factor.triangularView<Eigen::Lower>() * z.segment(o, b->size());
    o += b->size();
  }
  return out;
}

Eigen::MatrixXd StackedPrior::right_apply(const Eigen::MatrixXd& J) const {
  if (J.cols() != size_) throw InvalidInput("Jacobian columns do not match the stacked prior");
  Eigen::MatrixXd out(J.rows(), size_);
  Eigen::Index o = 0;
  for (const auto* b : blocks_) {
    out.middleCols(o, b->size()).noalias() = J.middleCols(o, b->size()) * b->factor.triangularView<Eigen::Lower>();
    o += b->size();
  }
  return out;
}

Eigen::VectorXd gauss_newton_step(const Eigen::MatrixXd& J, const Eigen::VectorXd& residual, double noise_sd,
                                  const StackedPrior& prior, const Eigen::VectorXd& deviation) {
  if (!(noise_sd > 0)) throw InvalidInput("noise standard deviation must be positive");
  if (J.rows() != residual.size()) throw InvalidInput("Jacobian rows do not match the residual");
  // with b = b0 + L w the system is (Jw^T Jw + I) z = Jw^T r + w and the step is L z
  const Eigen::MatrixXd Jw = prior.right_apply(J) / noise_sd;
  const Eigen::VectorXd g = Jw.transpose() * (residual / noise_sd) + prior.whiten(deviation);
  Eigen::VectorXd z;
  if (Jw.cols() <= Jw.rows()) {
    Eigen::MatrixXd N = Eigen::MatrixXd::Identity(Jw.cols(), Jw.cols());
    N.selfadjointView<Eigen::Lower>().rankUpdate(Jw.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(N);
    if (llt.info() != Eigen::Success) throw NumericalError("normal equations could not be factorized");
    z = llt.solve(g);
  } else {
    // (Jw^T Jw + I)^{-1} = I - Jw^T (I + Jw Jw^T)^{-1} Jw
    Eigen::MatrixXd K = Eigen::MatrixXd::Identity(Jw.rows(), Jw.rows());
    K.selfadjointView<Eigen::Lower>().rankUpdate(Jw);
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) throw NumericalError("normal equations could not be factorized");
    z = g - Jw.transpose() * llt.solve(Jw * g);
  }
  return prior.apply(z);
}

LineSearchResult line_search(const std::function<std::optional<double>(double)>& objective, double current, double q,
                             int halvings) {
  LineSearchResult res;
  double t = q;
  for (int k = 0; k <= halvings; ++k, t *= 0.5) {
    ++res.trials;
    const std::optional<double> v = objective(t);
    if (v && std::isfinite(*v) && *v < current) {
      res.accepted = true;
      res.fraction = t;
      res.value = *v;
      return res;
    }
  }
  return res;
}

double noise_sd(const Eigen::VectorXd& measurement, double level) {
  if (measurement.size() == 0) throw InvalidInput("empty measurement");
  return level * (measurement.maxCoeff() - measurement.minCoeff());
}

ObjectiveParts objective(const Eigen::VectorXd& prediction, const Eigen::VectorXd& data, double noise_sd,
                         const Parameters& b, const Priors& priors, InversionMode mode) {
  if (prediction.size() != data.size()) throw InvalidInput("prediction and data differ in length");
  ObjectiveParts o;
  o.misfit = ((prediction - data) / noise_sd).squaredNorm();
  auto term = [](const PriorBlock& p, const Eigen::VectorXd& x) { return p.whiten(x - p.mean).squaredNorm(); };
  o.sigma = term(priors.sigma, b.sigma);
  o.zeta = term(priors.zeta, b.zeta);
  if (estimates_alpha(mode)) o.alpha = term(priors.alpha, b.alpha);
  if (estimates_angles(mode)) {
    o.theta = term(priors.theta, b.theta);
    o.phi = term(priors.phi, b.phi);
  }
  return o;
}

Reconstruction reconstruct(const InversionProblem& problem, const Eigen::VectorXd& data, const PriorConfig& config,
                           const SolverConfig& solver) {
  const int M = problem.layout.size();
  if (data.size() != static_cast<Eigen::Index>(M) * (M - 1))
    throw InvalidInput("data length does not match M (M - 1) for the layout");
  const auto start = std::chrono::steady_clock::now();
  const InversionMode mode = solver.mode;
  Reconstruction rec;
  rec.mode = mode;
  rec.noise_sd = noise_sd(data, solver.noise_level);
  if (!(rec.noise_sd > 0)) throw InvalidInput("data range is zero; noise level undefined");

  const Eigen::VectorXd alpha_var = sample_covariance(problem.model) * config.alpha_scale;
  const long solves0 = forward_solve_count();

  // homogeneous start on the mean head with intended electrodes
  Parameters b;
  b.alpha = Eigen::VectorXd::Zero(problem.model.retained());
  b.theta = to_vector(problem.layout.theta);
  b.phi = to_vector(problem.layout.phi);
  {
    const FemMesh mean_head = fem_mesh(build_head_mesh(problem.model, b.alpha, problem.layout, problem.mesh));
    rec.homogeneous = homogeneous_fit(mean_head, problem.profile, data, rec.noise_sd, config.contact_mean);
  }
  rec.priors = build_priors(config, problem.storage.nodes, rec.homogeneous.sigma, rec.homogeneous.zeta,
                            sample_covariance(problem.model), problem.layout);
  b.sigma = rec.priors.sigma.mean;
  b.zeta = rec.priors.zeta.mean;
  rec.initial = b;

  const StackedPrior prior(active_blocks(rec.priors, mode));
  const Eigen::VectorXd steps = default_shape_steps(alpha_var);

  ModelEvaluation current = evaluate_model(problem, b);
  ObjectiveParts F = objective(current.run.measurement, data, rec.noise_sd, b, rec.priors, mode);
  {
    IterationRecord r;
    r.objective = F.total();
    r.misfit = F.misfit;
    r.prior_sigma = F.sigma;
    r.prior_zeta = F.zeta;
    r.prior_alpha = F.alpha;
    r.prior_theta = F.theta;
    r.prior_phi = F.phi;
    r.seconds = seconds_since(start);
    r.solves = forward_solve_count() - solves0;
    rec.history.push_back(r);
  }
  spdlog::info("{}: start F = {:.6g} (sigma {:.4g} S/m, zeta {:.4g} S/m^2)", to_string(mode), F.total(),
               rec.homogeneous.sigma, rec.homogeneous.zeta);

  int small_decreases = 0;
  rec.stop_reason = "iteration limit";
  for (int it = 1; it <= solver.max_iterations; ++it) {
    JacobianBlocks blocks;
    try {
      blocks = jacobian_blocks(problem, current, b, mode, steps);
    } catch (const NumericalError& ex) {
      if (current.remeshed) throw;
      // the moved mesh drifted too far for further moves; F keeps its accepted value
      spdlog::debug("jacobian on a moved mesh failed ({}), remeshing", ex.what());
      current = evaluate_model(problem, b);
      blocks = jacobian_blocks(problem, current, b, mode, steps);
    }
    const Eigen::MatrixXd J = assemble_jacobian(blocks);
    const Eigen::VectorXd x = pack(b, mode);
    const Eigen::VectorXd step =
        gauss_newton_step(J, current.run.measurement - data, rec.noise_sd, prior, x - prior.mean());

    std::map<double, std::pair<ModelEvaluation, ObjectiveParts>> trials;
    auto trial = [&](double t) -> std::optional<double> {
      const Parameters c = unpack(x - t * step, b, mode);
      if (!feasible(c)) return std::nullopt;
      try {
        ModelEvaluation e = solver.remesh_trials ? evaluate_model(problem, c) : evaluate_model(problem, c, current);
        const ObjectiveParts o = objective(e.run.measurement, data, rec.noise_sd, c, rec.priors, mode);
        const double v = o.total();
        trials.emplace(t, std::make_pair(std::move(e), o));
        return v;
      } catch (const std::exception& ex) {
        spdlog::debug("trial at fraction {} failed: {}", t, ex.what());
        return std::nullopt;
      }
    };
    const LineSearchResult ls = line_search(trial, F.total(), solver.q, solver.halvings);
    if (!ls.accepted) {
      rec.stop_reason = "line search found no decrease";
      break;
    }
    const Parameters next = unpack(x - ls.fraction * step, b, mode);
    auto& [eval, parts] = trials.at(ls.fraction);
    if (!(parts.total() < F.total())) throw NumericalError("accepted step did not decrease the objective");
    const double previous = F.total();

    IterationRecord r;
    r.iteration = it;
    r.objective = parts.total();
    r.misfit = parts.misfit;
    r.prior_sigma = parts.sigma;
    r.prior_zeta = parts.zeta;
    r.prior_alpha = parts.alpha;
    r.prior_theta = parts.theta;
    r.prior_phi = parts.phi;
    r.step_sigma = (next.sigma - b.sigma).norm();
    r.step_zeta = (next.zeta - b.zeta).norm();
    r.step_alpha = (next.alpha - b.alpha).norm();
    r.step_theta = (next.theta - b.theta).norm();
    r.step_phi = (next.phi - b.phi).norm();
    r.fraction = ls.fraction;
    r.remeshed = eval.remeshed;
    r.seconds = seconds_since(start);
    r.solves = forward_solve_count() - solves0;
    rec.history.push_back(r);

    b = next;
    current = std::move(eval);
    F = parts;
    spdlog::info("{}: iteration {} F = {:.6g} misfit = {:.6g} fraction {}", to_string(mode), it, F.total(), F.misfit,
                 ls.fraction);

    if ((previous - F.total()) / previous < solver.relative_decrease) {
      if (++small_decreases >= 2) {
        rec.stop_reason = "relative decrease below tolerance";
        break;
      }
    } else {
      small_decreases = 0;
    }
  }
  rec.parameters = b;
  rec.final = std::move(current);
  return rec;
}

}  // namespace cranio
