#pragma once

#include "cranio/common.hpp"

#include <vector>

namespace cranio {

/// Constrained Delaunay triangulation of a simple polygon with interior
/// Steiner points. points[0..boundary_count) is the polygon in
/// counter-clockwise order; the remaining points must lie strictly inside.
/// No point is added on the polygon, so the boundary edges survive unchanged.
/// Returned triangles are counter-clockwise.
std::vector<Tri> triangulate_polygon(const std::vector<Vec2>& points, int boundary_count);

/// Twice the signed area of (a, b, c).
inline double orient2d(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

}  // namespace cranio
