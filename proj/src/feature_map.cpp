#include "mv3d/feature_map.hpp"

#include <algorithm>
#include <stdexcept>

namespace mv3d {

FeatureMap::FeatureMap(int view, int stride, int rows, int cols, Eigen::Index channels)
    : view(view), stride(stride), rows(rows), cols(cols),
      values(RowMatrix::Zero(static_cast<Eigen::Index>(rows) * cols, channels))
{
  if (rows < 1 || cols < 1 || channels < 1 || stride < 1)
    throw std::invalid_argument("feature map dimensions must be positive");
}

double pixel_to_cell(double pixel, int cells, int extent)
{
  const double cell = (pixel + 0.5) * cells / static_cast<double>(extent) - 0.5;
  return std::clamp(cell, 0.0, static_cast<double>(cells - 1));
}

}  // namespace mv3d
