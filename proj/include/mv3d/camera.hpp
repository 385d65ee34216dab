#pragma once

#include <array>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "mv3d/geometry.hpp"
#include "mv3d/raster.hpp"

namespace mv3d {

using Mat4 = Eigen::Matrix4d;

struct Intrinsics
{
  double focal_u = 1.0;
  double focal_v = 1.0;
  double center_u = 0.0;
  double center_v = 0.0;

  auto as_array() const -> std::array<double, 4> { return {focal_u, focal_v, center_u, center_v}; }
  bool operator==(const Intrinsics&) const = default;
};

/// Mean intrinsics used as the virtual camera for intrinsic standardization.
inline constexpr Intrinsics kStandardIntrinsics{432.579, 539.857, 256.0, 256.0};

/// Undistorted pinhole camera. `extrinsics` maps camera coordinates to world
/// coordinates (x right, y down, z along the optical axis).
class CameraModel
{
public:
  CameraModel(const Intrinsics& intrinsics, const Mat4& extrinsics, int width, int height);

  auto intrinsics() const -> const Intrinsics& { return intrinsics_; }
  auto extrinsics() const -> const Mat4& { return extrinsics_; }
  auto rotation() const -> Mat3 { return extrinsics_.topLeftCorner<3, 3>(); }
  auto position() const -> Vec3 { return extrinsics_.topRightCorner<3, 1>(); }
  int width() const { return width_; }
  int height() const { return height_; }

  auto with_extrinsics(const Mat4& extrinsics) const -> CameraModel;
  auto with_intrinsics(const Intrinsics& intrinsics) const -> CameraModel;

  /// Camera-frame coordinates of a world point.
  auto to_camera(const Vec3& world) const -> Vec3;

private:
  Intrinsics intrinsics_;
  Mat4 extrinsics_;
  int width_;
  int height_;
};

struct PixelDepth
{
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// World point seen at pixel (u, v) with camera-frame depth d > 0.
auto unproject(const CameraModel& cam, const PixelDepth& pd) -> Vec3;

/// Throws std::domain_error when the point lies on the camera plane.
auto project(const CameraModel& cam, const Vec3& world) -> PixelDepth;

bool in_frustum(const CameraModel& cam, const Vec3& world, double max_depth);

/// World points C(u_i, v_j, d_k) over an h x w grid of cell-centre pixels and
/// K depths d_k = k * D / K (the k = 0 sample sits at D / (2K)).
class FrustumPointGrid
{
public:
  FrustumPointGrid(int rows, int cols, int depth_bins, double max_depth);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int depth_bins() const { return depth_bins_; }
  double max_depth() const { return max_depth_; }
  std::size_t size() const { return points_.size(); }

  auto point(int row, int col, int k) const -> const Vec3& { return points_[index(row, col, k)]; }
  auto point(int row, int col, int k) -> Vec3& { return points_[index(row, col, k)]; }

  /// Flat index in (row, col, k) order.
  std::size_t index(int row, int col, int k) const
  {
    return (static_cast<std::size_t>(row) * cols_ + col) * depth_bins_ + k;
  }

private:
  int rows_;
  int cols_;
  int depth_bins_;
  double max_depth_;
  std::vector<Vec3> points_;
};

/// Image pixel at the centre of feature cell `cell` for a grid of `cells` over `extent` pixels.
double cell_center_pixel(int cell, int cells, int extent);

/// Depth of bin k in a frustum grid with K bins up to `max_depth`.
double frustum_bin_depth(int k, int depth_bins, double max_depth);

auto frustum_point_grid(const CameraModel& cam, int rows, int cols, double max_depth,
                        int depth_bins) -> FrustumPointGrid;

/// Per-axis affine map taking a pixel of the standardized image to the source
/// pixel it samples: u_src = scale_u * u_std + offset_u (likewise for v).
struct PixelAffine
{
  double scale_u, offset_u, scale_v, offset_v;

  auto apply(double u, double v) const -> std::array<double, 2>
  {
    return {scale_u * u + offset_u, scale_v * v + offset_v};
  }
  auto inverse() const -> PixelAffine;
};

auto standardization_map(const Intrinsics& source, const Intrinsics& standard) -> PixelAffine;

struct StandardizedView
{
  Raster image;
  CameraModel camera;
};

/// Resamples `image` as seen by a virtual camera with `standard` intrinsics and
/// the same pose. Output keeps the source resolution; unseen pixels are zero.
auto standardize_intrinsics(const Raster& image, const CameraModel& cam,
                            const Intrinsics& standard = kStandardIntrinsics) -> StandardizedView;

void to_json(nlohmann::json& j, const CameraModel& cam);
auto camera_from_json(const nlohmann::json& j) -> CameraModel;
auto load_camera(const std::string& path) -> CameraModel;
void save_camera(const std::string& path, const CameraModel& cam);

/// Rigid transform built from a rotation and translation.
auto make_pose(const Mat3& R, const Vec3& t) -> Mat4;

/// Camera-to-world pose at `eye` looking at `target` with the image y axis
/// pointing as close to world -z as possible.
auto look_at(const Vec3& eye, const Vec3& target) -> Mat4;

}  // namespace mv3d
