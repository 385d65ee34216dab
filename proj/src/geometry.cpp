#include "mv3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Geometry>

namespace mv3d {

BoxParams Box9DoF::params() const
{
  BoxParams p;
  p << center, size, euler;
  return p;
}

Box9DoF Box9DoF::from_params(const BoxParams& p)
{
  return Box9DoF{p.segment<3>(0), p.segment<3>(3), p.segment<3>(6)};
}

void validate_box(const Box9DoF& box)
{
  if (!box.params().allFinite())
    throw std::invalid_argument("box has non-finite parameters");
  if ((box.size.array() <= 0.0).any())
    throw std::invalid_argument("box size must be strictly positive");
}

auto euler_to_rotation(const Vec3& euler) -> Mat3
{
  if (!euler.allFinite())
    throw std::invalid_argument("euler angles must be finite");
  const Mat3 Rx = Eigen::AngleAxisd(euler.x(), Vec3::UnitX()).toRotationMatrix();
  const Mat3 Ry = Eigen::AngleAxisd(euler.y(), Vec3::UnitY()).toRotationMatrix();
  const Mat3 Rz = Eigen::AngleAxisd(euler.z(), Vec3::UnitZ()).toRotationMatrix();
  return Rz * Ry * Rx;
}

namespace {

// d/dt of the single-axis rotation about `axis` at angle t.
Mat3 axis_rotation_derivative(int axis, double t)
{
  const double c = std::cos(t), s = std::sin(t);
  Mat3 d = Mat3::Zero();
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  d(i, i) = -s;
  d(j, j) = -s;
  d(i, j) = -c;
  d(j, i) = c;
  return d;
}

}  // namespace

auto euler_to_rotation_jacobian(const Vec3& euler) -> std::array<Mat3, 3>
{
  const Mat3 Rx = Eigen::AngleAxisd(euler.x(), Vec3::UnitX()).toRotationMatrix();
  const Mat3 Ry = Eigen::AngleAxisd(euler.y(), Vec3::UnitY()).toRotationMatrix();
  const Mat3 Rz = Eigen::AngleAxisd(euler.z(), Vec3::UnitZ()).toRotationMatrix();
  return {Rz * Ry * axis_rotation_derivative(0, euler.x()),
          Rz * axis_rotation_derivative(1, euler.y()) * Rx,
          axis_rotation_derivative(2, euler.z()) * Ry * Rx};
}

auto rotation_to_euler(const Mat3& R) -> Vec3
{
  const double cp = std::hypot(R(0, 0), R(1, 0));
  const double pitch = std::atan2(-R(2, 0), cp);
  if (cp < 1e-12)
    return {0.0, pitch, std::atan2(-R(0, 1), R(1, 1))};
  return {std::atan2(R(2, 1), R(2, 2)), pitch, std::atan2(R(1, 0), R(0, 0))};
}

auto box_corners(const Box9DoF& box) -> CornerSet
{
  validate_box(box);
  const Mat3 R = euler_to_rotation(box.euler);
  CornerSet corners;
  for (int i = 0; i < 8; ++i) {
    const Vec3 local(0.5 * corner_sign(i, 0) * box.size.x(),
                     0.5 * corner_sign(i, 1) * box.size.y(),
                     0.5 * corner_sign(i, 2) * box.size.z());
    corners[i] = box.center + R * local;
  }
  return corners;
}

auto signed_permutations() -> const std::vector<SignedPermutation>&
{
  static const std::vector<SignedPermutation> all = [] {
    std::vector<SignedPermutation> out;
    std::array<int, 3> perm{0, 1, 2};
    do {
      for (int signs = 0; signs < 8; ++signs) {
        SignedPermutation P = SignedPermutation::Zero();
        for (int col = 0; col < 3; ++col)
          P(perm[col], col) = (signs >> col) & 1 ? -1 : 1;
        out.push_back(P);
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return all;
}

auto corner_relabelling(const SignedPermutation& P) -> std::array<int, 8>
{
  std::array<int, 8> table{};
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3i s(corner_sign(i, 0), corner_sign(i, 1), corner_sign(i, 2));
    const Eigen::Vector3i t = P * s;
    table[i] = (t.x() > 0 ? 1 : 0) | (t.y() > 0 ? 2 : 0) | (t.z() > 0 ? 4 : 0);
  }
  return table;
}

auto reparameterize(const Box9DoF& box, const SignedPermutation& P) -> Box9DoF
{
  Mat3 Pd = P.cast<double>();
  if (Pd.determinant() < 0.0)
    Pd = -Pd;
  const Mat3 R = euler_to_rotation(box.euler) * Pd;
  return Box9DoF{box.center, (Pd.transpose() * box.size).cwiseAbs(), rotation_to_euler(R)};
}

auto box_to_gaussian(const Box9DoF& box) -> GaussianBox
{
  validate_box(box);
  const Mat3 R = euler_to_rotation(box.euler);
  return {box.center, R * box.size.asDiagonal() * R.transpose()};
}

bool box_contains(const Box9DoF& box, const Vec3& p)
{
  const Vec3 local = euler_to_rotation(box.euler).transpose() * (p - box.center);
  return (local.cwiseAbs().array() <= 0.5 * box.size.array()).all();
}

namespace {

using Polygon = std::vector<Vec3>;

struct Plane
{
  Vec3 normal;   // outward
  double offset; // inside iff normal . x <= offset
};

std::vector<Polygon> box_faces(const CornerSet& c)
{
  static constexpr int kFaces[6][4] = {{0, 2, 6, 4}, {1, 3, 7, 5}, {0, 1, 5, 4},
                                       {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 5, 7, 6}};
  std::vector<Polygon> faces;
  for (const auto& f : kFaces)
    faces.push_back({c[f[0]], c[f[1]], c[f[2]], c[f[3]]});
  return faces;
}

std::array<Plane, 6> box_planes(const Box9DoF& box)
{
  const Mat3 R = euler_to_rotation(box.euler);
  std::array<Plane, 6> planes;
  for (int axis = 0; axis < 3; ++axis) {
    const Vec3 n = R.col(axis);
    const double h = 0.5 * box.size[axis];
    planes[2 * axis] = {n, n.dot(box.center) + h};
    planes[2 * axis + 1] = {-n, -n.dot(box.center) + h};
  }
  return planes;
}

// Orders coplanar points counter-clockwise around their centroid about `normal`.
Polygon order_cap(std::vector<Vec3> pts, const Vec3& normal, double tol)
{
  Polygon unique;
  for (const auto& p : pts) {
    const bool seen = std::any_of(unique.begin(), unique.end(),
                                  [&](const Vec3& q) { return (p - q).norm() <= tol; });
    if (!seen)
      unique.push_back(p);
  }
  if (unique.size() < 3)
    return {};
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : unique)
    centroid += p;
  centroid /= static_cast<double>(unique.size());
  const Vec3 u = normal.unitOrthogonal();
  const Vec3 v = normal.cross(u);
  std::sort(unique.begin(), unique.end(), [&](const Vec3& a, const Vec3& b) {
    return std::atan2((a - centroid).dot(v), (a - centroid).dot(u)) <
           std::atan2((b - centroid).dot(v), (b - centroid).dot(u));
  });
  return unique;
}

std::vector<Polygon> clip(const std::vector<Polygon>& faces, const Plane& plane, double tol)
{
  std::vector<Polygon> out;
  std::vector<Vec3> cap;
  bool face_on_plane = false;
  for (const auto& face : faces) {
    Polygon kept;
    std::size_t on_plane = 0;
    const std::size_t n = face.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& a = face[i];
      const Vec3& b = face[(i + 1) % n];
      const double da = plane.normal.dot(a) - plane.offset;
      const double db = plane.normal.dot(b) - plane.offset;
      if (da <= tol) {
        kept.push_back(a);
        if (da >= -tol) {
          cap.push_back(a);
          ++on_plane;
        }
      }
      if ((da < -tol && db > tol) || (da > tol && db < -tol)) {
        const Vec3 x = a + (da / (da - db)) * (b - a);
        kept.push_back(x);
        cap.push_back(x);
      }
    }
    face_on_plane = face_on_plane || on_plane == n;
    if (kept.size() >= 3)
      out.push_back(std::move(kept));
  }
  // A face lying in the plane already closes the polytope there.
  if (!out.empty() && !face_on_plane) {
    Polygon capped = order_cap(std::move(cap), plane.normal, tol);
    if (!capped.empty())
      out.push_back(std::move(capped));
  }
  return out;
}

double polytope_volume(const std::vector<Polygon>& faces)
{
  Vec3 ref = Vec3::Zero();
  std::size_t count = 0;
  for (const auto& f : faces)
    for (const auto& p : f) {
      ref += p;
      ++count;
    }
  if (count == 0)
    return 0.0;
  ref /= static_cast<double>(count);

  double volume = 0.0;
  for (const auto& f : faces) {
    Vec3 area_vec = Vec3::Zero();
    for (std::size_t i = 0; i < f.size(); ++i)
      area_vec += f[i].cross(f[(i + 1) % f.size()]);
    area_vec *= 0.5;
    const double area = area_vec.norm();
    if (area <= 0.0)
      continue;
    const double height = std::abs((area_vec / area).dot(f[0] - ref));
    volume += area * height / 3.0;
  }
  return volume;
}

}  // namespace

auto box_iou_checked(const Box9DoF& a, const Box9DoF& b) -> IouResult
{
  if (!a.params().allFinite() || !b.params().allFinite())
    throw std::invalid_argument("box_iou: non-finite box");
  if (a.size.minCoeff() < kDegenerateSize || b.size.minCoeff() < kDegenerateSize)
    return {0.0, 0.0, true};

  const double scale = std::max(a.size.maxCoeff(), b.size.maxCoeff());
  const double tol = 1e-12 * std::max(1.0, scale + a.center.norm() + b.center.norm());

  std::vector<Polygon> poly = box_faces(box_corners(a));
  for (const auto& plane : box_planes(b)) {
    poly = clip(poly, plane, tol);
    if (poly.empty())
      break;
  }
  const double va = a.volume(), vb = b.volume();
  const double inter = std::clamp(polytope_volume(poly), 0.0, std::min(va, vb));
  const double uni = va + vb - inter;
  return {std::clamp(inter / uni, 0.0, 1.0), inter, false};
}

auto box_iou(const Box9DoF& a, const Box9DoF& b) -> double
{
  return box_iou_checked(a, b).iou;
}

auto nms(std::span<const Detection> dets, double iou_threshold) -> std::vector<Detection>
{
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return dets[i].score > dets[j].score;
  });

  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.category == d.category && box_iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed)
      kept.push_back(d);
  }
  return kept;
}

}  // namespace mv3d
