#pragma once

#include "cranio/common.hpp"

#include <Eigen/SparseCore>

#include <vector>

namespace cranio {

/// Point location in a tetrahedral mesh through a uniform bucket grid.
class TetLocator {
 public:
  TetLocator(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets);

  struct Hit {
    int tet = -1;                   // containing element, -1 if outside
    std::array<double, 4> bary{};   // barycentric coordinates in that element
  };
  Hit locate(const Vec3& p) const;

  /// Closest point on the mesh boundary: node ids and barycentric weights.
  struct Surface {
    std::array<int, 3> nodes{};
    std::array<double, 3> weight{};
    double distance = 0.0;
  };
  Surface closest_boundary_point(const Vec3& p) const;

 private:
  const std::vector<Vec3>& nodes_;
  const std::vector<Tet>& tets_;
  std::vector<Tri> boundary_;
  Vec3 lo_, hi_;
  double cell_ = 0.0;
  std::array<int, 3> dims_{};
  std::vector<std::vector<int>> buckets_;
  int bucket(int i, int j, int k) const { return (k * dims_[1] + j) * dims_[0] + i; }
};

/// Linear interpolation operator from P1 fields on (nodes, tets) to `points`
/// (rows: points, columns: source nodes). Points outside the source take the
/// value at the closest boundary point when it is within `band`; further
/// away they are an error.
Eigen::SparseMatrix<double> transfer_matrix(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets,
                                            const std::vector<Vec3>& points, double band = 0.02);

/// Applies a transfer and clips to a positivity floor.
Eigen::VectorXd transfer_values(const Eigen::SparseMatrix<double>& T, const Eigen::VectorXd& source, double floor);

}  // namespace cranio
