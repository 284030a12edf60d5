#include "cmim/simplex.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

#include "cmim/prob.hpp"

namespace cmim {

SimplexPoint simplex_point(double p1, double p2, double p3) {
  const double total = p1 + p2 + p3;
  if (!(total > 0.0) || p1 < 0.0 || p2 < 0.0 || p3 < 0.0) {
    throw std::domain_error("simplex_point: need non-negative weights with positive sum");
  }
  const double w2 = p2 / total;
  const double w3 = p3 / total;
  // v1 = (0,0) contributes nothing.
  return {w2 + 0.5 * w3, w3 * (std::sqrt(3.0) / 2.0), -1};
}

std::vector<SimplexPoint> project_three_classes(const Matrix& probs, std::span<const int> labels,
                                                const std::array<int, 3>& classes, double alpha) {
  const auto c = static_cast<int>(probs.cols());
  for (int k = 0; k < 3; ++k) {
    if (classes[k] < 0 || classes[k] >= c) {
      throw std::domain_error("simplex: class id " + std::to_string(classes[k]) + " out of range");
    }
    for (int l = 0; l < k; ++l) {
      if (classes[k] == classes[l]) throw std::domain_error("simplex: class ids must be distinct");
    }
  }
  if (labels.size() != probs.rows()) throw ShapeError("simplex: label count != rows");
  std::vector<SimplexPoint> out;
  std::vector<double> t(probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const int y = labels[r];
    if (y != classes[0] && y != classes[1] && y != classes[2]) continue;
    kernels::power_transform(probs.row(r), alpha, t);
    SimplexPoint p = simplex_point(t[static_cast<std::size_t>(classes[0])],
                                   t[static_cast<std::size_t>(classes[1])],
                                   t[static_cast<std::size_t>(classes[2])]);
    p.true_class = y;
    out.push_back(p);
  }
  return out;
}

void write_simplex_csv(std::ostream& out, std::span<const SimplexPoint> points) {
  out << "x,y,true_class\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", p.x, p.y, p.true_class);
    out << buf;
  }
}

}  // namespace cmim
