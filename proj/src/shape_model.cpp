#include "cranio/shape_model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace cranio {

using nlohmann::json;

LibraryConfig library_config_from_json(const json& j) {
  static const std::vector<std::string> known = {"n",          "semi_axes",    "max_degree",     "decay",
                                                 "pointwise_sd", "grid_level", "amplitude_scale"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InvalidInput("unknown shape model key '" + key + "'");
  LibraryConfig c;
  c.n = j.value("n", c.n);
  if (j.contains("semi_axes")) {
    const auto a = j.at("semi_axes").get<std::vector<double>>();
    if (a.size() != 3) throw InvalidInput("semi_axes needs three entries");
    c.semi_axes = Vec3(a[0], a[1], a[2]);
  }
  c.max_degree = j.value("max_degree", c.max_degree);
  c.decay = j.value("decay", c.decay);
  c.pointwise_sd = j.value("pointwise_sd", c.pointwise_sd);
  c.grid_level = j.value("grid_level", c.grid_level);
  c.amplitude_scale = j.value("amplitude_scale", c.amplitude_scale);
  return c;
}

json to_json(const LibraryConfig& c) {
  return json{{"n", c.n},
              {"semi_axes", {c.semi_axes.x(), c.semi_axes.y(), c.semi_axes.z()}},
              {"max_degree", c.max_degree},
              {"decay", c.decay},
              {"pointwise_sd", c.pointwise_sd},
              {"grid_level", c.grid_level},
              {"amplitude_scale", c.amplitude_scale}};
}

double ellipsoid_radius(const Vec3& semi_axes, const Vec3& direction) {
  const Vec3 d = direction.normalized();
  const double q = d.cwiseQuotient(semi_axes).squaredNorm();
  return 1.0 / std::sqrt(q);
}

namespace {

// Real spherical harmonics, orthonormal on the full sphere. For each degree
// the squares sum to (2l+1)/(4 pi) everywhere.
double real_harmonic(int l, int m, double polar, double azimuth) {
  const double p = std::sph_legendre(l, std::abs(m), polar);
  if (m == 0) return p;
  if (m > 0) return std::sqrt(2.0) * p * std::cos(m * azimuth);
  return std::sqrt(2.0) * p * std::sin(-m * azimuth);
}

}  // namespace

std::vector<RadialFunction> generate_library(const LibraryConfig& config, std::uint64_t seed) {
  if (config.n < 2) throw InvalidInput("library needs at least two members");
  if (config.max_degree < 0) throw InvalidInput("max_degree must be non-negative");
  if ((config.semi_axes.array() <= 0).any()) throw InvalidInput("semi-axes must be positive");
  auto grid = std::make_shared<const HemisphereGrid>(HemisphereGrid::geodesic(config.grid_level));
  const int nv = static_cast<int>(grid->size());
  const int L = config.max_degree;
  const int modes = (L + 1) * (L + 1);

  // amplitude per degree; the pointwise variance sum_l a_l^2 (2l+1)/(4 pi) is
  // direction independent, so one scale fixes the pointwise standard deviation
  std::vector<double> amp(L + 1);
  double var = 0.0;
  for (int l = 0; l <= L; ++l) {
    amp[l] = std::pow(l + 1.0, -config.decay);
    var += amp[l] * amp[l] * (2 * l + 1) / (4 * M_PI);
  }
  const double scale = config.amplitude_scale * config.pointwise_sd / std::sqrt(var);

  Eigen::MatrixXd Y(nv, modes);
  Eigen::VectorXd base(nv);
  for (int i = 0; i < nv; ++i) {
    const double th = grid->polar(i), ph = grid->azimuth(i);
    int col = 0;
    for (int l = 0; l <= L; ++l)
      for (int m = -l; m <= l; ++m) Y(i, col++) = real_harmonic(l, m, th, ph);
    base[i] = ellipsoid_radius(config.semi_axes, grid->vertices()[i]);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<RadialFunction> library;
  library.reserve(config.n);
  for (int j = 0; j < config.n; ++j) {
    Eigen::VectorXd c(modes);
    int col = 0;
    for (int l = 0; l <= L; ++l)
      for (int m = -l; m <= l; ++m) c[col++] = scale * amp[l] * normal(rng);
    RadialFunction r{grid, base + Y * c};
    const Eigen::Index worst = [&] {
      Eigen::Index idx;
      r.values.minCoeff(&idx);
      return idx;
    }();
    if (!(r.values[worst] > 0)) {
      std::ostringstream os;
      os << "library member " << j << " has non-positive radius " << r.values[worst] << " at grid vertex " << worst
         << "; reduce the perturbation amplitude";
      throw InvalidInput(os.str());
    }
    library.push_back(std::move(r));
  }
  return library;
}

Eigen::MatrixXd h1_gram(std::span<const GridFunction> perturbations, const HemisphereGrid& grid) {
  const Eigen::Index n = static_cast<Eigen::Index>(perturbations.size());
  Eigen::MatrixXd P(grid.size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    require_same_grid(perturbations[j], grid);
    P.col(j) = perturbations[j].values;
  }
  const Eigen::MatrixXd HP = grid.h1_matrix() * P;
  Eigen::MatrixXd R(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) R(i, j) = R(j, i) = P.col(i).dot(HP.col(j));
  return R;
}

ShapeModel::ShapeModel(GridPtr grid, Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd eigenvalues,
                       int library_size)
    : grid_(std::move(grid)),
      mean_(std::move(mean)),
      basis_(std::move(basis)),
      eigenvalues_(std::move(eigenvalues)),
      library_size_(library_size) {
  if (!grid_) throw InvalidInput("shape model without grid");
  const auto nv = static_cast<Eigen::Index>(grid_->size());
  if (mean_.size() != nv || basis_.rows() != nv) throw InvalidInput("shape model fields do not match the grid");
  if (basis_.cols() > eigenvalues_.size()) throw InvalidInput("more basis functions than eigenvalues");
  for (Eigen::Index k = 0; k < eigenvalues_.size(); ++k) {
    if (!(eigenvalues_[k] > 0)) throw InvalidInput("shape model eigenvalues must be positive");
    if (k > 0 && eigenvalues_[k] > eigenvalues_[k - 1]) throw InvalidInput("shape model eigenvalues must be sorted");
  }
  require_positive_radius(RadialFunction{grid_, mean_});
}

ShapeModel ShapeModel::truncated(int retained) const {
  if (retained < 0 || retained > this->retained())
    throw InvalidInput("cannot truncate a " + std::to_string(this->retained()) + "-term model to " +
                       std::to_string(retained) + " terms");
  return ShapeModel(grid_, mean_, basis_.leftCols(retained), eigenvalues_, library_size_);
}

Eigen::VectorXd ShapeModel::nodal_radius(const Eigen::VectorXd& alpha) const {
  if (alpha.size() > retained())
    throw InvalidInput("got " + std::to_string(alpha.size()) + " shape coefficients for a " +
                       std::to_string(retained()) + "-term model");
  if (!alpha.allFinite()) throw InvalidInput("shape coefficients must be finite");
  return mean_ + basis_.leftCols(alpha.size()) * alpha;
}

double ShapeModel::radius(const Vec3& direction, const Eigen::VectorXd& alpha) const {
  if (alpha.size() > retained()) throw InvalidInput("too many shape coefficients");
  const GridStencil s = grid_->locate(direction);
  double r = 0.0;
  for (int i = 0; i < 3; ++i) {
    double v = mean_[s.vertex[i]];
    for (Eigen::Index k = 0; k < alpha.size(); ++k) v += alpha[k] * basis_(s.vertex[i], k);
    r += s.weight[i] * v;
  }
  if (!(r > 0)) throw NumericalError("degenerate shape: non-positive radius");
  return r;
}

Eigen::VectorXd ShapeModel::radius_std(const Eigen::VectorXd& variances) const {
  if (variances.size() > retained()) throw InvalidInput("too many coefficient variances");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mean_.size());
  for (Eigen::Index k = 0; k < variances.size(); ++k) v += variances[k] * basis_.col(k).array().square().matrix();
  return v.cwiseSqrt();
}

ShapeModel principal_basis(const Eigen::MatrixXd& gram, std::span<const GridFunction> perturbations, int retained,
                           const RadialFunction& mean) {
  const Eigen::Index n = gram.rows();
  if (gram.cols() != n || static_cast<Eigen::Index>(perturbations.size()) != n)
    throw InvalidInput("Gram matrix and perturbation list disagree in size");
  if (n == 0) throw InvalidInput("empty perturbation list");
  if (!mean.grid) throw InvalidInput("mean radial function without grid");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of the Gram matrix failed");
  // Eigen returns ascending order
  const Eigen::VectorXd lam = eig.eigenvalues().reverse();
  const Eigen::MatrixXd vec = eig.eigenvectors().rowwise().reverse();
  const double tol = 1e-12 * gram.trace();
  int rank = 0;
  while (rank < n && lam[rank] > tol) ++rank;
  if (retained < 1 || retained > rank)
    throw InvalidInput("requested " + std::to_string(retained) + " basis functions but the Gram matrix has numerical rank " +
                       std::to_string(rank));

  const HemisphereGrid& grid = *mean.grid;
  Eigen::MatrixXd P(grid.size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    require_same_grid(perturbations[j], grid);
    P.col(j) = perturbations[j].values;
  }
  Eigen::MatrixXd W = vec.leftCols(retained);
  for (int k = 0; k < retained; ++k) {
    W.col(k) /= std::sqrt(lam[k]);
    // fix the sign so that the largest entry is positive; keeps files reproducible
    Eigen::Index idx;
    W.col(k).cwiseAbs().maxCoeff(&idx);
    if (W(idx, k) < 0) W.col(k) = -W.col(k);
  }
  return ShapeModel(mean.grid, mean.values, P * W, lam.head(rank), static_cast<int>(n));
}

ShapeModel build_shape_model(std::span<const RadialFunction> library, int retained) {
  if (library.size() < 2) throw InvalidInput("library needs at least two members");
  const GridPtr grid = library.front().grid;
  if (!grid) throw InvalidInput("library member without grid");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(grid->size());
  for (const auto& r : library) {
    require_same_grid(r, *grid);
    require_positive_radius(r);
    mean += r.values;
  }
  mean /= static_cast<double>(library.size());
  std::vector<GridFunction> rho;
  rho.reserve(library.size());
  for (const auto& r : library) rho.push_back({grid, r.values - mean});
  const Eigen::MatrixXd R = h1_gram(rho, *grid);
  return principal_basis(R, rho, retained, RadialFunction{grid, mean});
}

double representation_error(std::span<const double> eigenvalues, int retained) {
  if (eigenvalues.empty()) throw InvalidInput("empty eigenvalue list");
  if (retained < 0) throw InvalidInput("retained dimension must be non-negative");
  const double total = std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
  if (!(total > 0)) throw InvalidInput("eigenvalues must be positive");
  double tail = 0.0;
  for (std::size_t j = static_cast<std::size_t>(retained); j < eigenvalues.size(); ++j) tail += eigenvalues[j];
  return tail / total;
}

double representation_error(const Eigen::VectorXd& eigenvalues, int retained) {
  return representation_error(std::span<const double>(eigenvalues.data(), eigenvalues.size()), retained);
}

Eigen::VectorXd project_coefficients(const GridFunction& perturbation, const ShapeModel& model) {
  require_same_grid(perturbation, *model.grid());
  return model.basis().transpose() * (model.grid()->h1_matrix() * perturbation.values);
}

Eigen::VectorXd sample_covariance(const ShapeModel& model) {
  if (model.library_size() < 2) throw InvalidInput("sample covariance needs a library of at least two members");
  return model.eigenvalues().head(model.retained()) / (model.library_size() - 1.0);
}

std::vector<Vec3> evaluate_surface(const ShapeModel& model, const Eigen::VectorXd& alpha,
                                   std::span<const Vec3> directions) {
  const Eigen::VectorXd r = model.nodal_radius(alpha);
  std::vector<Vec3> out;
  out.reserve(directions.size());
  for (const Vec3& d : directions) {
    const GridStencil s = model.grid()->locate(d);
    const double rad = s.weight[0] * r[s.vertex[0]] + s.weight[1] * r[s.vertex[1]] + s.weight[2] * r[s.vertex[2]];
    if (!(rad > 0)) throw NumericalError("degenerate shape: non-positive radius");
    out.push_back(rad * d.normalized());
  }
  return out;
}

json to_json(const ShapeModel& model) {
  const HemisphereGrid& g = *model.grid();
  json vertices = json::array(), triangles = json::array(), basis = json::array();
  for (const Vec3& v : g.vertices()) vertices.push_back({v.x(), v.y(), v.z()});
  for (const Tri& t : g.triangles()) triangles.push_back({t[0], t[1], t[2]});
  for (Eigen::Index k = 0; k < model.basis().cols(); ++k)
    basis.push_back(std::vector<double>(model.basis().col(k).data(), model.basis().col(k).data() + model.basis().rows()));
  return json{{"format", "cranio-shape-model"},
              {"version", 1},
              {"grid", {{"level", g.level()}, {"vertices", vertices}, {"triangles", triangles}}},
              {"mean", std::vector<double>(model.mean().data(), model.mean().data() + model.mean().size())},
              {"basis", basis},
              {"eigenvalues",
               std::vector<double>(model.eigenvalues().data(), model.eigenvalues().data() + model.eigenvalues().size())},
              {"n", model.library_size()},
              {"retained", model.retained()}};
}

ShapeModel shape_model_from_json(const json& j) {
  if (j.value("format", "") != "cranio-shape-model" || j.value("version", 0) != 1)
    throw InvalidInput("not a version-1 shape model file");
  const int level = j.at("grid").at("level").get<int>();
  auto grid = std::make_shared<const HemisphereGrid>(HemisphereGrid::geodesic(level));
  const auto& jv = j.at("grid").at("vertices");
  const auto& jt = j.at("grid").at("triangles");
  if (jv.size() != grid->size() || jt.size() != grid->triangles().size())
    throw InvalidInput("shape model grid does not match a geodesic grid of level " + std::to_string(level));
  for (std::size_t i = 0; i < jv.size(); ++i) {
    const Vec3 v(jv[i][0].get<double>(), jv[i][1].get<double>(), jv[i][2].get<double>());
    if ((v - grid->vertices()[i]).norm() > 1e-12) throw InvalidInput("shape model grid vertex " + std::to_string(i) + " differs");
  }
  for (std::size_t t = 0; t < jt.size(); ++t)
    if (jt[t].get<Tri>() != grid->triangles()[t]) throw InvalidInput("shape model grid triangle " + std::to_string(t) + " differs");

  auto vec = [](const json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
  };
  const Eigen::VectorXd mean = vec(j.at("mean"));
  const Eigen::VectorXd lam = vec(j.at("eigenvalues"));
  const auto& jb = j.at("basis");
  Eigen::MatrixXd basis(grid->size(), jb.size());
  for (std::size_t k = 0; k < jb.size(); ++k) {
    const Eigen::VectorXd c = vec(jb[k]);
    if (c.size() != basis.rows()) throw InvalidInput("basis function " + std::to_string(k) + " has wrong length");
    basis.col(k) = c;
  }
  if (j.at("retained").get<int>() != basis.cols()) throw InvalidInput("retained count disagrees with basis");
  return ShapeModel(grid, mean, basis, lam, j.at("n").get<int>());
}

void save_shape_model(const ShapeModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << to_json(model).dump() << '\n';
}

ShapeModel load_shape_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read " + path);
  return shape_model_from_json(json::parse(in));
}

}  // namespace cranio
