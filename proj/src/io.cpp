#include "cranio/io.hpp"
#include "cranio/transfer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cranio {

using json = nlohmann::json;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << j.dump(2) << '\n';
}

VtkMesh vtk_tets(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets) {
  VtkMesh m;
  m.points = nodes;
  m.cells.reserve(tets.size());
  for (const Tet& t : tets) m.cells.push_back({t[0], t[1], t[2], t[3]});
  return m;
}

VtkMesh vtk_triangles(const std::vector<Vec3>& nodes, const std::vector<Tri>& tris) {
  VtkMesh m;
  m.points = nodes;
  m.cells.reserve(tris.size());
  for (const Tri& t : tris) m.cells.push_back({t[0], t[1], t[2]});
  return m;
}

void write_vtk(const std::string& path, const VtkMesh& m, const std::string& title) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << std::setprecision(17);
  out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << m.points.size() << " double\n";
  for (const Vec3& p : m.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  std::size_t total = 0;
  for (const auto& c : m.cells) {
    if (c.size() != 3 && c.size() != 4) throw InvalidInput("only triangles and tetrahedra can be written");
    total += c.size() + 1;
  }
  out << "CELLS " << m.cells.size() << ' ' << total << '\n';
  for (const auto& c : m.cells) {
    out << c.size();
    for (int v : c) out << ' ' << v;
    out << '\n';
  }
  out << "CELL_TYPES " << m.cells.size() << '\n';
  for (const auto& c : m.cells) out << (c.size() == 4 ? 10 : 5) << '\n';
  auto fields = [&](const std::map<std::string, Eigen::VectorXd>& data, std::size_t n, const char* kind) {
    if (data.empty()) return;
    out << kind << ' ' << n << '\n';
    for (const auto& [name, v] : data) {
      if (static_cast<std::size_t>(v.size()) != n) throw InvalidInput("field '" + name + "' has the wrong length");
      if (name.find_first_of(" \t\n") != std::string::npos) throw InvalidInput("field names cannot contain spaces");
      out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      for (Eigen::Index i = 0; i < v.size(); ++i) out << v(i) << '\n';
    }
  };
  fields(m.cell_data, m.cells.size(), "CELL_DATA");
  fields(m.point_data, m.points.size(), "POINT_DATA");
  if (!out) throw NumericalError("write to " + path + " failed");
}

VtkMesh read_vtk(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("# vtk DataFile", 0) != 0) throw InvalidInput(path + ": not a legacy VTK file");
  std::getline(in, line);  // title
  std::getline(in, line);
  if (line.rfind("ASCII", 0) != 0) throw InvalidInput(path + ": only ASCII VTK is supported");
  VtkMesh m;
  std::map<std::string, Eigen::VectorXd>* target = nullptr;
  std::size_t count = 0;
  std::string word;
  auto fail = [&](const std::string& what) { throw InvalidInput(path + ": " + what); };
  while (in >> word) {
    if (word == "DATASET") {
      in >> word;
      if (word != "UNSTRUCTURED_GRID") fail("unsupported dataset " + word);
    } else if (word == "POINTS") {
      std::size_t n;
      in >> n >> word;
      m.points.resize(n);
      for (Vec3& p : m.points) in >> p.x() >> p.y() >> p.z();
    } else if (word == "CELLS") {
      std::size_t n, total;
      in >> n >> total;
      m.cells.resize(n);
      for (auto& c : m.cells) {
        int k;
        in >> k;
        c.resize(k);
        for (int& v : c) in >> v;
      }
    } else if (word == "CELL_TYPES") {
      std::size_t n;
      in >> n;
      if (n != m.cells.size()) fail("CELL_TYPES count differs from CELLS");
      for (std::size_t i = 0; i < n; ++i) {
        int t;
        in >> t;
        if (t != 10 && t != 5) fail("unsupported cell type " + std::to_string(t));
      }
    } else if (word == "CELL_DATA") {
      in >> count;
      target = &m.cell_data;
    } else if (word == "POINT_DATA") {
      in >> count;
      target = &m.point_data;
    } else if (word == "SCALARS") {
      if (!target) fail("SCALARS before a data section");
      std::string name, type;
      in >> name >> type;
      std::getline(in, line);  // optional component count
      std::getline(in, line);
      if (line.rfind("LOOKUP_TABLE", 0) != 0) fail("missing LOOKUP_TABLE");
      Eigen::VectorXd v(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::string s;
        if (!(in >> s)) fail("truncated SCALARS " + name);
        try {
          v(i) = std::stod(s);  // handles nan and inf spelled by the writer
        } catch (const std::exception&) {
          fail("bad value '" + s + "' in SCALARS " + name);
        }
      }
      (*target)[name] = v;
    } else {
      fail("unexpected token '" + word + "'");
    }
    if (in.fail()) fail("malformed or truncated section " + word);
  }
  for (const auto& [name, v] : m.point_data)
    if (static_cast<std::size_t>(v.size()) != m.points.size()) fail("point field " + name + " has the wrong length");
  for (const auto& [name, v] : m.cell_data)
    if (static_cast<std::size_t>(v.size()) != m.cells.size()) fail("cell field " + name + " has the wrong length");
  for (const auto& c : m.cells)
    for (int v : c)
      if (v < 0 || static_cast<std::size_t>(v) >= m.points.size()) fail("cell references a missing point");
  return m;
}

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw InvalidInput("table has no column '" + name + "'");
}

Eigen::VectorXd Table::values(const std::string& name) const {
  const int c = column(name);
  Eigen::VectorXd v(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) v(i) = rows[i][c];
  return v;
}

void write_csv(const std::string& path, const Table& t) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
  out << '\n' << std::setprecision(17);
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw InvalidInput("row length does not match the header");
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out << ',';
      if (std::isnan(r[i]))
        out << "nan";
      else
        out << r[i];
    }
    out << '\n';
  }
}

Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(path + ": empty file");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(cell == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell));
      } catch (const std::exception&) {
        throw InvalidInput(path + ":" + std::to_string(lineno) + ": not a number '" + cell + "'");
      }
    }
    if (row.size() != t.header.size())
      throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                         " columns");
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table measurement_table(const Eigen::VectorXd& v, int M) {
  if (M < 2 || v.size() != static_cast<Eigen::Index>(M) * (M - 1))
    throw InvalidInput("measurement length is not M (M - 1)");
  Table t;
  t.header = {"pattern", "electrode", "voltage"};
  for (int i = 0; i < M - 1; ++i)
    for (int m = 0; m < M; ++m) t.rows.push_back({double(i + 1), double(m + 1), v(i * M + m)});
  return t;
}

Eigen::VectorXd measurement_from_table(const Table& t) {
  const int ci = t.column("pattern"), cm = t.column("electrode"), cv = t.column("voltage");
  int M = 0;
  for (const auto& r : t.rows) M = std::max(M, static_cast<int>(r[cm]));
  if (M < 2 || t.rows.size() != static_cast<std::size_t>(M) * (M - 1))
    throw InvalidInput("measurement table does not hold M (M - 1) rows");
  Eigen::VectorXd v = Eigen::VectorXd::Constant(t.rows.size(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : t.rows) {
    const int i = static_cast<int>(r[ci]) - 1, m = static_cast<int>(r[cm]) - 1;
    if (i < 0 || i >= M - 1 || m < 0 || m >= M) throw InvalidInput("measurement index out of range");
    v(i * M + m) = r[cv];
  }
  if (v.hasNaN()) throw InvalidInput("measurement table has missing entries");
  return v;
}

Table slice_table(const std::vector<Vec3>& nodes, const std::vector<Tet>& tets, const Eigen::VectorXd& field,
                  const std::vector<double>& levels, double spacing, double half_width) {
  if (field.size() != static_cast<Eigen::Index>(nodes.size())) throw InvalidInput("field does not match the mesh");
  if (!(spacing > 0 && half_width > 0)) throw InvalidInput("slice grid needs positive spacing and width");
  const TetLocator loc(nodes, tets);
  const int n = static_cast<int>(std::floor(half_width / spacing + 1e-9));
  Table t;
  t.header = {"z", "x", "y", "value"};
  for (double z : levels)
    for (int j = -n; j <= n; ++j)
      for (int i = -n; i <= n; ++i) {
        const Vec3 p(i * spacing, j * spacing, z);
        const TetLocator::Hit h = loc.locate(p);
        double v = std::numeric_limits<double>::quiet_NaN();
        if (h.tet >= 0) {
          v = 0;
          for (int k = 0; k < 4; ++k) v += h.bary[k] * field(tets[h.tet][k]);
        }
        t.rows.push_back({z, p.x(), p.y(), v});
      }
  return t;
}

}  // namespace cranio
