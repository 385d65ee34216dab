#pragma once

#include "mv3d/linear.hpp"

namespace mv3d {

/// Per-view grid of feature vectors at one stride. Cell (r, c) is row r * cols + c.
struct FeatureMap
{
  int view = 0;
  int stride = 1;
  int rows = 0;
  int cols = 0;
  RowMatrix values;  // (rows * cols) x channels

  FeatureMap() = default;
  FeatureMap(int view, int stride, int rows, int cols, Eigen::Index channels);

  Eigen::Index channels() const { return values.cols(); }
  Eigen::Index index(int r, int c) const { return static_cast<Eigen::Index>(r) * cols + c; }
  auto cell(int r, int c) { return values.row(index(r, c)); }
  auto cell(int r, int c) const { return values.row(index(r, c)); }
};

/// Feature-grid coordinate of an image pixel for a map of `cells` cells over
/// `extent` pixels, clamped to the grid. Inverse of cell_center_pixel.
double pixel_to_cell(double pixel, int cells, int extent);

}  // namespace mv3d
