#include "cranio/simulate.hpp"
#include "cranio/inversion.hpp"
#include "cranio/transfer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace cranio {

using json = nlohmann::json;

namespace {

Vec3 vec3_from_json(const json& j, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw InvalidInput(std::string(what) + " needs three entries");
  return Vec3(v[0], v[1], v[2]);
}

json to_json_vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

void check_keys(const json& j, std::initializer_list<const char*> known, const char* what) {
  for (const auto& [key, _] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw InvalidInput(std::string("unknown ") + what + " key '" + key + "'");
}

}  // namespace

bool Inclusion::contains(const Vec3& x) const {
  const Vec3 d = x - center;
  if (shape == Shape::ball) return d.norm() <= radius;
  const double t = d.dot(axis);
  return std::abs(t) <= 0.5 * height && (d - t * axis).norm() <= radius;
}

double Inclusion::volume() const {
  if (shape == Shape::ball) return 4.0 / 3.0 * M_PI * radius * radius * radius;
  return M_PI * radius * radius * height;
}

void PhantomSpec::validate() const {
  if (!(background > 0)) throw InvalidInput("background conductivity must be positive");
  for (const Inclusion& c : inclusions) {
    if (!(c.value > 0)) throw InvalidInput("inclusion conductivity must be positive");
    if (!(c.radius > 0)) throw InvalidInput("inclusion radius must be positive");
    if (c.shape == Inclusion::Shape::cylinder) {
      if (!(c.height > 0)) throw InvalidInput("cylinder height must be positive");
      if (std::abs(c.axis.norm() - 1.0) > 1e-9) throw InvalidInput("cylinder axis must have unit length");
    }
  }
}

double PhantomSpec::value(const Vec3& x) const {
  double v = background;
  for (const Inclusion& c : inclusions)
    if (c.contains(x)) v = c.value;
  return v;
}

json to_json(const PhantomSpec& p) {
  json inc = json::array();
  for (const Inclusion& c : p.inclusions) {
    json e{{"shape", c.shape == Inclusion::Shape::ball ? "ball" : "cylinder"},
           {"center", {c.center.x(), c.center.y(), c.center.z()}},
           {"radius", c.radius},
           {"value", c.value}};
    if (c.shape == Inclusion::Shape::cylinder) {
      e["height"] = c.height;
      e["axis"] = {c.axis.x(), c.axis.y(), c.axis.z()};
    }
    inc.push_back(e);
  }
  return json{{"background", p.background}, {"inclusions", inc}};
}

PhantomSpec phantom_from_json(const json& j) {
  check_keys(j, {"background", "inclusions"}, "phantom");
  PhantomSpec p;
  p.background = j.value("background", p.background);
  if (j.contains("inclusions"))
    for (const auto& e : j.at("inclusions")) {
      check_keys(e, {"shape", "center", "radius", "height", "axis", "value"}, "inclusion");
      Inclusion c;
      const std::string shape = e.at("shape").get<std::string>();
      if (shape == "ball")
        c.shape = Inclusion::Shape::ball;
      else if (shape == "cylinder")
        c.shape = Inclusion::Shape::cylinder;
      else
        throw InvalidInput("unknown inclusion shape '" + shape + "'");
      c.center = vec3_from_json(e.at("center"), "inclusion center");
      c.radius = e.at("radius").get<double>();
      c.value = e.at("value").get<double>();
      if (c.shape == Inclusion::Shape::cylinder) {
        c.height = e.at("height").get<double>();
        if (e.contains("axis")) c.axis = vec3_from_json(e.at("axis"), "cylinder axis").normalized();
      }
      p.inclusions.push_back(c);
    }
  p.validate();
  return p;
}

Eigen::VectorXd rasterize_phantom(const PhantomSpec& spec, const std::vector<Vec3>& nodes) {
  spec.validate();
  Eigen::VectorXd s(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) s(i) = spec.value(nodes[i]);
  return s;
}

std::vector<double> inclusion_outside_fraction(const PhantomSpec& spec, const HeadMesh& head) {
  const TetLocator loc(head.nodes, head.tets);
  std::vector<double> out;
  const int n = 16;
  for (const Inclusion& c : spec.inclusions) {
    const double ext = c.shape == Inclusion::Shape::ball ? c.radius : std::max(c.radius, 0.5 * c.height);
    int inside = 0, outside = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const Vec3 x = c.center + ext * Vec3(2.0 * (i + 0.5) / n - 1, 2.0 * (j + 0.5) / n - 1, 2.0 * (k + 0.5) / n - 1);
          if (!c.contains(x)) continue;
          (loc.locate(x).tet >= 0 ? inside : outside)++;
        }
    out.push_back(inside + outside > 0 ? double(outside) / (inside + outside) : 0.0);
  }
  return out;
}

json to_json(const TargetConfig& c) {
  return json{{"shape_modes", c.shape_modes}, {"alpha_scale", c.alpha_scale},   {"theta_sd", c.theta_sd},
              {"phi_sd", c.phi_sd},           {"contact_mean", c.contact_mean}, {"contact_sd", c.contact_sd},
              {"max_attempts", c.max_attempts}};
}

TargetConfig target_config_from_json(const json& j) {
  check_keys(j, {"shape_modes", "alpha_scale", "theta_sd", "phi_sd", "contact_mean", "contact_sd", "max_attempts"},
             "target");
  TargetConfig c;
  c.shape_modes = j.value("shape_modes", c.shape_modes);
  c.alpha_scale = j.value("alpha_scale", c.alpha_scale);
  c.theta_sd = j.value("theta_sd", c.theta_sd);
  c.phi_sd = j.value("phi_sd", c.phi_sd);
  c.contact_mean = j.value("contact_mean", c.contact_mean);
  c.contact_sd = j.value("contact_sd", c.contact_sd);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  return c;
}

json to_json(const TargetDraw& t) {
  return json{{"alpha", to_json_vec(t.alpha)}, {"theta", to_json_vec(t.theta)}, {"phi", to_json_vec(t.phi)},
              {"zeta", to_json_vec(t.zeta)},   {"seed", t.seed},                {"attempts", t.attempts}};
}

TargetDraw target_from_json(const json& j) {
  TargetDraw t;
  t.alpha = vector_from_json(j.at("alpha"));
  t.theta = vector_from_json(j.at("theta"));
  t.phi = vector_from_json(j.at("phi"));
  t.zeta = vector_from_json(j.at("zeta"));
  t.seed = j.value("seed", std::uint64_t{0});
  t.attempts = j.value("attempts", 0);
  if (t.theta.size() != t.phi.size() || t.theta.size() != t.zeta.size())
    throw InvalidInput("target electrode vectors differ in length");
  return t;
}

bool layout_admissible(const ShapeModel& model, const Eigen::VectorXd& alpha, const ElectrodeLayout& layout,
                       double mu) {
  const int M = layout.size();
  std::vector<Vec3> centre(M);
  try {
    const RadiusFunction r = model_radius(model, alpha);
    for (int m = 0; m < M; ++m) {
      if (!(layout.theta[m] > 0 && layout.theta[m] < M_PI / 2)) return false;
      const Vec3 d = layout.direction(m);
      const double rm = r(d);
      centre[m] = rm * d;
      if (layout.theta[m] + mu * layout.radius[m] / rm >= M_PI / 2) return false;
    }
  } catch (const NumericalError&) {
    return false;
  }
  for (int i = 0; i < M; ++i)
    for (int j = i + 1; j < M; ++j)
      if ((centre[i] - centre[j]).norm() <= mu * (layout.radius[i] + layout.radius[j])) return false;
  return true;
}

TargetDraw draw_target(const ShapeModel& model, const ElectrodeLayout& intended, const TargetConfig& c,
                       std::uint64_t seed, double mu) {
  if (c.shape_modes < 0 || c.shape_modes > model.retained())
    throw InvalidInput("target shape modes exceed the shape model");
  if (!(c.contact_mean > 0) || c.contact_sd < 0 || c.theta_sd < 0 || c.phi_sd < 0 || c.alpha_scale < 0)
    throw InvalidInput("invalid target distribution parameters");
  const Eigen::VectorXd sd = (sample_covariance(model).head(c.shape_modes) * c.alpha_scale).cwiseSqrt();
  const int M = intended.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TargetDraw t;
  t.seed = seed;
  for (int attempt = 1; attempt <= c.max_attempts; ++attempt) {
    t.alpha.resize(c.shape_modes);
    for (int k = 0; k < c.shape_modes; ++k) t.alpha(k) = sd(k) * normal(rng);
    t.theta.resize(M);
    t.phi.resize(M);
    t.zeta.resize(M);
    for (int m = 0; m < M; ++m) t.theta(m) = intended.theta[m] + c.theta_sd * normal(rng);
    for (int m = 0; m < M; ++m) t.phi(m) = intended.phi[m] + c.phi_sd * normal(rng);
    // truncated below at a tenth of the mean
    for (int m = 0; m < M; ++m) {
      double z;
      do z = c.contact_mean + c.contact_sd * normal(rng);
      while (z < 0.1 * c.contact_mean);
      t.zeta(m) = z;
    }
    t.attempts = attempt;
    if (layout_admissible(model, t.alpha, moved_layout(intended, t.theta, t.phi), mu)) return t;
  }
  throw NumericalError("no admissible target in " + std::to_string(c.max_attempts) + " attempts");
}

Eigen::VectorXd add_noise(const Eigen::VectorXd& clean, double level, std::uint64_t seed, double* sd) {
  if (level < 0) throw InvalidInput("noise level must be non-negative");
  const double s = noise_sd(clean, level);
  if (sd) *sd = s;
  if (level == 0) return clean;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, s);
  Eigen::VectorXd out = clean;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += normal(rng);
  return out;
}

Simulation simulate_measurements(const ShapeModel& model, const ElectrodeLayout& intended, const TargetDraw& target,
                                 const PhantomSpec& phantom, const SimulationConfig& config, std::uint64_t seed) {
  const ElectrodeLayout layout = moved_layout(intended, target.theta, target.phi);
  Simulation s;
  s.mesh = build_head_mesh(model, target.alpha, layout, config.mesh);
  const std::vector<double> outside = inclusion_outside_fraction(phantom, s.mesh);
  for (std::size_t k = 0; k < outside.size(); ++k)
    if (outside[k] > 0)
      spdlog::warn("inclusion {} is clipped by the head: {:.1f}% of its volume lies outside", k + 1,
                   100 * outside[k]);
  const FemMesh fem = fem_mesh(s.mesh);
  s.sigma = rasterize_phantom(phantom, fem.nodes);
  const ContactField zeta = build_contact_field(fem, target.zeta, config.profile);
  s.clean = run_forward(fem, s.sigma, zeta).measurement;
  // noise stream separate from the target stream
  s.data = add_noise(s.clean, config.noise_level, seed ^ 0x9e3779b97f4a7c15ULL, &s.noise_sd);
  return s;
}

}  // namespace cranio
