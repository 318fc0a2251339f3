#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "kpfeat/kpconv.hpp"

namespace kpfeat {

namespace {

#include "kernel_points_table.inc"

template <std::size_t N>
std::vector<Vec3> unit_points(const float (&table)[N][3]) {
  std::vector<Vec3> out;
  out.reserve(N);
  for (const auto& p : table) out.emplace_back(p[0], p[1], p[2]);
  return out;
}

}  // namespace

KernelLayout kernel_dispositions(std::size_t count, double extent) {
  if (!(extent > 0.0) || !std::isfinite(extent)) {
    throw std::invalid_argument("kernel extent must be positive");
  }
  std::vector<Vec3> unit;
  switch (count) {
    case 1: unit = unit_points(kKernelPoints1); break;
    case 15: unit = unit_points(kKernelPoints15); break;
    default:
      throw std::invalid_argument("no kernel disposition table for K = " + std::to_string(count));
  }
  KernelLayout layout;
  layout.extent = extent;
  layout.sigma = extent / kSigmaDivisor;
  layout.points.reserve(unit.size());
  for (const auto& p : unit) {
    if (p.norm() > 1.0) throw std::logic_error("kernel table point outside unit ball");
    layout.points.push_back(p * extent);
  }
  return layout;
}

double correlation(const Vec3& offset, const Vec3& kernel_point, double sigma) {
  return std::max(0.0, 1.0 - (offset - kernel_point).norm() / sigma);
}

}  // namespace kpfeat
