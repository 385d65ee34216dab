#include "mv3d/camera.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mv3d {

namespace {

constexpr double kPoseTolerance = 1e-6;

void validate_intrinsics(const Intrinsics& k)
{
  if (!(k.focal_u > 0.0 && k.focal_v > 0.0) || !std::isfinite(k.focal_u) ||
      !std::isfinite(k.focal_v) || !std::isfinite(k.center_u) || !std::isfinite(k.center_v))
    throw std::invalid_argument("intrinsics need finite, strictly positive focal lengths");
}

void validate_pose(const Mat4& T)
{
  if (!T.allFinite())
    throw std::invalid_argument("extrinsics must be finite");
  const Mat3 R = T.topLeftCorner<3, 3>();
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > kPoseTolerance ||
      std::abs(R.determinant() - 1.0) > kPoseTolerance)
    throw std::invalid_argument("extrinsic rotation must be orthogonal with determinant +1");
  if ((T.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0.0)
    throw std::invalid_argument("extrinsics must have bottom row [0 0 0 1]");
}

}  // namespace

CameraModel::CameraModel(const Intrinsics& intrinsics, const Mat4& extrinsics, int width,
                         int height)
    : intrinsics_(intrinsics), extrinsics_(extrinsics), width_(width), height_(height)
{
  validate_intrinsics(intrinsics_);
  validate_pose(extrinsics_);
  if (width_ < 1 || height_ < 1)
    throw std::invalid_argument("image size must be at least 1x1");
}

auto CameraModel::with_extrinsics(const Mat4& extrinsics) const -> CameraModel
{
  return CameraModel(intrinsics_, extrinsics, width_, height_);
}

auto CameraModel::with_intrinsics(const Intrinsics& intrinsics) const -> CameraModel
{
  return CameraModel(intrinsics, extrinsics_, width_, height_);
}

auto CameraModel::to_camera(const Vec3& world) const -> Vec3
{
  return rotation().transpose() * (world - position());
}

auto unproject(const CameraModel& cam, const PixelDepth& pd) -> Vec3
{
  if (!(pd.depth > 0.0))
    throw std::invalid_argument("unproject: depth must be positive");
  const auto& k = cam.intrinsics();
  const Vec3 p_cam((pd.u - k.center_u) * pd.depth / k.focal_u,
                   (pd.v - k.center_v) * pd.depth / k.focal_v, pd.depth);
  return cam.rotation() * p_cam + cam.position();
}

auto project(const CameraModel& cam, const Vec3& world) -> PixelDepth
{
  if (!world.allFinite())
    throw std::invalid_argument("project: non-finite point");
  const Vec3 p = cam.to_camera(world);
  if (std::abs(p.z()) < 1e-12)
    throw std::domain_error("project: point lies on the camera plane");
  const auto& k = cam.intrinsics();
  return {k.focal_u * p.x() / p.z() + k.center_u, k.focal_v * p.y() / p.z() + k.center_v, p.z()};
}

bool in_frustum(const CameraModel& cam, const Vec3& world, double max_depth)
{
  const Vec3 p = cam.to_camera(world);
  if (!(p.z() > 1e-12) || p.z() > max_depth)
    return false;
  const auto& k = cam.intrinsics();
  const double u = k.focal_u * p.x() / p.z() + k.center_u;
  const double v = k.focal_v * p.y() / p.z() + k.center_v;
  return u >= 0.0 && v >= 0.0 && u <= cam.width() - 1 && v <= cam.height() - 1;
}

FrustumPointGrid::FrustumPointGrid(int rows, int cols, int depth_bins, double max_depth)
    : rows_(rows), cols_(cols), depth_bins_(depth_bins), max_depth_(max_depth)
{
  if (rows < 1 || cols < 1 || depth_bins < 1 || !(max_depth > 0.0))
    throw std::invalid_argument("frustum grid needs positive dims and depth");
  points_.resize(static_cast<std::size_t>(rows) * cols * depth_bins, Vec3::Zero());
}

double cell_center_pixel(int cell, int cells, int extent)
{
  return (cell + 0.5) * static_cast<double>(extent) / cells - 0.5;
}

double frustum_bin_depth(int k, int depth_bins, double max_depth)
{
  return k == 0 ? max_depth / (2.0 * depth_bins) : k * max_depth / depth_bins;
}

auto frustum_point_grid(const CameraModel& cam, int rows, int cols, double max_depth,
                        int depth_bins) -> FrustumPointGrid
{
  FrustumPointGrid grid(rows, cols, depth_bins, max_depth);
  for (int r = 0; r < rows; ++r) {
    const double v = cell_center_pixel(r, rows, cam.height());
    for (int c = 0; c < cols; ++c) {
      const double u = cell_center_pixel(c, cols, cam.width());
      for (int k = 0; k < depth_bins; ++k)
        grid.point(r, c, k) = unproject(cam, {u, v, frustum_bin_depth(k, depth_bins, max_depth)});
    }
  }
  return grid;
}

auto PixelAffine::inverse() const -> PixelAffine
{
  return {1.0 / scale_u, -offset_u / scale_u, 1.0 / scale_v, -offset_v / scale_v};
}

auto standardization_map(const Intrinsics& source, const Intrinsics& standard) -> PixelAffine
{
  validate_intrinsics(source);
  validate_intrinsics(standard);
  const double su = source.focal_u / standard.focal_u;
  const double sv = source.focal_v / standard.focal_v;
  return {su, source.center_u - su * standard.center_u, sv, source.center_v - sv * standard.center_v};
}

auto standardize_intrinsics(const Raster& image, const CameraModel& cam,
                            const Intrinsics& standard) -> StandardizedView
{
  const PixelAffine map = standardization_map(cam.intrinsics(), standard);
  Raster out(image.width, image.height, image.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto [su, sv] = map.apply(x, y);
      std::span<float> px(&out.at(x, y, 0), static_cast<std::size_t>(out.channels));
      image.sample(su, sv, px);
    }
  }
  return {std::move(out), cam.with_intrinsics(standard)};
}

void to_json(nlohmann::json& j, const CameraModel& cam)
{
  const auto& k = cam.intrinsics();
  std::vector<double> ext;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      ext.push_back(cam.extrinsics()(r, c));
  j = nlohmann::json{{"intrinsics", {k.focal_u, k.focal_v, k.center_u, k.center_v}},
                     {"extrinsics", ext},
                     {"width", cam.width()},
                     {"height", cam.height()}};
}

auto camera_from_json(const nlohmann::json& j) -> CameraModel
{
  const auto intr = j.at("intrinsics").get<std::vector<double>>();
  const auto ext = j.at("extrinsics").get<std::vector<double>>();
  if (intr.size() != 4)
    throw std::invalid_argument("camera json: intrinsics must have 4 entries");
  if (ext.size() != 16)
    throw std::invalid_argument("camera json: extrinsics must have 16 entries");
  Mat4 T;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      T(r, c) = ext[static_cast<std::size_t>(r * 4 + c)];
  return CameraModel({intr[0], intr[1], intr[2], intr[3]}, T, j.at("width").get<int>(),
                     j.at("height").get<int>());
}

auto load_camera(const std::string& path) -> CameraModel
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open camera file " + path);
  return camera_from_json(nlohmann::json::parse(in));
}

void save_camera(const std::string& path, const CameraModel& cam)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write camera file " + path);
  out << nlohmann::json(cam).dump(2) << '\n';
}

auto make_pose(const Mat3& R, const Vec3& t) -> Mat4
{
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = R;
  T.topRightCorner<3, 1>() = t;
  return T;
}

auto look_at(const Vec3& eye, const Vec3& target) -> Mat4
{
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9)
    x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R << x, y, z;
  return make_pose(R, eye);
}

}  // namespace mv3d
