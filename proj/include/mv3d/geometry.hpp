#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mv3d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using BoxParams = Eigen::Matrix<double, 9, 1>;

/// Oriented 3D box. `size` is (w, l, h) along the box-local x, y, z axes and
/// `euler` is (roll, pitch, yaw) composed as Rz(yaw) * Ry(pitch) * Rx(roll).
struct Box9DoF
{
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  Vec3 euler = Vec3::Zero();

  /// Packs as [x, y, z, w, l, h, roll, pitch, yaw].
  BoxParams params() const;
  static Box9DoF from_params(const BoxParams& p);

  double volume() const { return size.prod(); }
};

/// Throws std::invalid_argument unless sizes are positive and all fields finite.
void validate_box(const Box9DoF& box);

using CornerSet = std::array<Vec3, 8>;

/// Signed permutation matrix acting on box-local axes.
using SignedPermutation = Eigen::Matrix3i;

struct Detection
{
  Box9DoF box;
  double score = 0.0;
  int category = 0;
};

auto euler_to_rotation(const Vec3& euler) -> Mat3;

/// Partial derivatives of euler_to_rotation with respect to roll, pitch, yaw.
auto euler_to_rotation_jacobian(const Vec3& euler) -> std::array<Mat3, 3>;

/// Inverse of euler_to_rotation. At gimbal lock (|pitch| = pi/2) roll is set to 0.
auto rotation_to_euler(const Mat3& R) -> Vec3;

/// Sign of the local half-extent of corner `index` along `axis` (bit `axis` set means +1).
inline int corner_sign(int index, int axis) { return (index >> axis) & 1 ? 1 : -1; }

auto box_corners(const Box9DoF& box) -> CornerSet;

/// All 48 signed permutations; the identity comes first.
auto signed_permutations() -> const std::vector<SignedPermutation>&;

/// Corner relabelling induced by a signed permutation: corner i of the
/// relabelled list is corner `table[i]` of the original.
auto corner_relabelling(const SignedPermutation& P) -> std::array<int, 8>;

/// The same physical box expressed with rotation R*P (sign-corrected to stay
/// proper) and size |P^T size|.
auto reparameterize(const Box9DoF& box, const SignedPermutation& P) -> Box9DoF;

struct GaussianBox
{
  Vec3 mean;
  Mat3 covariance;
};

auto box_to_gaussian(const Box9DoF& box) -> GaussianBox;

struct IouResult
{
  double iou = 0.0;
  double intersection = 0.0;
  bool degenerate = false;
};

/// Exact oriented IoU by clipping the polytope of `a` against the six face
/// half-spaces of `b`.
auto box_iou_checked(const Box9DoF& a, const Box9DoF& b) -> IouResult;
auto box_iou(const Box9DoF& a, const Box9DoF& b) -> double;

/// True if `p` lies inside the closed box.
bool box_contains(const Box9DoF& box, const Vec3& p);

/// Greedy per-category suppression. Output is ordered by (score desc, input index asc).
auto nms(std::span<const Detection> dets, double iou_threshold) -> std::vector<Detection>;

/// Minimal size below which a box is treated as zero-volume.
inline constexpr double kDegenerateSize = 1e-9;

}  // namespace mv3d
