#pragma once

#include "cranio/common.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace cranio {

nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

/// Legacy ASCII VTK unstructured grid. Cells are tetrahedra (4 ids) or
/// triangles (3 ids); fields are scalar.
struct VtkMesh {
  std::vector<Vec3> points;
  std::vector<std::vector<int>> cells;
  std::map<std::string, Eigen::VectorXd> point_data;
  std::map<std::string, Eigen::VectorXd> cell_data;
};

void write_vtk(const std::string& path, const VtkMesh& mesh, const std::string& title = "cranio-eit");
VtkMesh read_vtk(const std::string& path);

VtkMesh vtk_tets(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets);
VtkMesh vtk_triangles(const std::vector<Vec3>& nodes, const std::vector<Tri>& tris);

/// Plain numeric table with a header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  int column(const std::string& name) const;  // throws when absent
  Eigen::VectorXd values(const std::string& name) const;
};

void write_csv(const std::string& path, const Table& t);
Table read_csv(const std::string& path);

/// Measurement vector as (pattern, electrode, voltage) rows, 1-based.
Table measurement_table(const Eigen::VectorXd& v, int electrodes);
Eigen::VectorXd measurement_from_table(const Table& t);

/// P1 field sampled on horizontal planes on a square grid; columns
/// z, x, y, value with NaN outside the mesh.
Table slice_table(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets, const Eigen::VectorXd& field,
                  const std::vector<double>& levels, double spacing = 0.001, double half_width = 0.11);

}  // namespace cranio
