#pragma once

#include "cranio/meshgen.hpp"
#include "cranio/shape_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cranio {

struct DerivativeCheck {
  std::string block;
  int column = 0;
  double step = 0.0;
  double value = 0.0;  // relative error, or the Richardson ratio for alpha
  double lower = 0.0, upper = 0.0;
  bool passed() const { return value >= lower && value <= upper; }
};

struct DerivativeCheckOptions {
  MeshOptions mesh;
  int alpha_modes = 2;
  int sigma_columns = 4;
  std::uint64_t seed = 7;
};

/// Analytic Jacobian blocks against difference quotients on the mean head:
/// sigma and zeta by perturbing the coefficients, angles and alpha by moving
/// the nodes of a fixed mesh. Alpha reports the Richardson ratio of
/// successive step halvings.
std::vector<DerivativeCheck> check_derivatives(const ShapeModel& model, const ElectrodeLayout& layout,
                                               const DerivativeCheckOptions& options);

}  // namespace cranio
