#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

#include "cmim/matrix.hpp"

namespace cmim {

struct SimplexPoint {
  double x = 0.0;
  double y = 0.0;
  int true_class = -1;
};

/// Barycentric map of (p1, p2, p3), renormalized, onto the triangle with
/// vertices (0,0), (1,0), (1/2, sqrt(3)/2).
SimplexPoint simplex_point(double p1, double p2, double p3);

/// For every row whose label is one of `classes`, power-transforms the
/// output with alpha, keeps the three selected entries and projects them.
std::vector<SimplexPoint> project_three_classes(const Matrix& probs, std::span<const int> labels,
                                                const std::array<int, 3>& classes, double alpha);

/// CSV: x,y,true_class.
void write_simplex_csv(std::ostream& out, std::span<const SimplexPoint> points);

}  // namespace cmim
