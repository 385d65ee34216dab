#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mv3d/camera.hpp"
#include "mv3d/feature_map.hpp"
#include "mv3d/geometry.hpp"

namespace mv3d {

struct Query
{
  Eigen::VectorXd feature;
  Box9DoF anchor;
};

using ValidityMask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Key points of one query: offsets in the unit box cube and their world positions.
struct KeyPointSet
{
  std::vector<Vec3> offsets;
  std::vector<Vec3> world_points;
};

/// M x N sampling weights (key points x views).
struct AggregationWeights
{
  Eigen::MatrixXd weights;
  bool all_invalid = false;
};

/// Box centre followed by the six face centres (+x, -x, +y, -y, +z, -z).
auto fixed_keypoint_offsets() -> std::vector<Vec3>;

/// Reshapes p(feature) into offsets, three values per point.
auto learnable_keypoint_offsets(const Eigen::VectorXd& query_feature, const LinearParams& p)
    -> std::vector<Vec3>;

/// centre + R * (offset * size) for each offset.
auto keypoints_world(const Box9DoF& box, std::span<const Vec3> offsets) -> std::vector<Vec3>;

/// Bilinear interpolation at feature-grid coordinates (x = column, y = row).
/// Throws std::out_of_range outside [0, cols-1] x [0, rows-1].
auto bilinear_sample(const FeatureMap& fm, double x, double y) -> Eigen::VectorXd;

/// Four intrinsic scalars followed by the top three rows of the extrinsics.
auto camera_descriptor(const CameraModel& cam) -> Eigen::Matrix<double, 16, 1>;

/// Input to the weight network: [query feature, box params, descriptor per view].
auto weight_net_input(const Query& query, std::span<const CameraModel> cams) -> Eigen::VectorXd;

/// Softmax over the valid entries of the M*N logits (row-major in (m, n));
/// invalid entries are exactly zero.
auto aggregation_weights(const Query& query, std::span<const CameraModel> cams,
                         const ValidityMask& validity, const LinearParams& p)
    -> AggregationWeights;

struct ProjectedKeyPoints
{
  ValidityMask valid;               // M x N
  std::vector<PixelDepth> pixels;   // m * N + n; meaningful where valid
};

auto project_keypoints(std::span<const Vec3> points, std::span<const CameraModel> cams,
                       double max_depth) -> ProjectedKeyPoints;

struct AggregationParams
{
  LinearParams offset_net;  // C -> 3 * learnable points
  LinearParams weight_net;  // C + 9 + 16 N -> M N
  double max_depth = 10.0;

  int num_keypoints() const { return 7 + static_cast<int>(offset_net.out() / 3); }

  static auto random(Eigen::Index channels, int learnable_points, int num_views, std::uint64_t seed,
                     double offset_scale = 1.0) -> AggregationParams;
};

struct AggregationResult
{
  Eigen::VectorXd feature;
  AggregationWeights weights;
  KeyPointSet keypoints;
  ProjectedKeyPoints projection;
};

auto aggregate_query(const Query& query, std::span<const FeatureMap> feature_maps,
                     std::span<const CameraModel> cams, const AggregationParams& params)
    -> AggregationResult;

/// Updated features for every query; one feature map per camera.
auto aggregate(std::span<const Query> queries, std::span<const FeatureMap> feature_maps,
               std::span<const CameraModel> cams, const AggregationParams& params)
    -> std::vector<AggregationResult>;

/// K-Means++ seeded Lloyd clustering of the 9 box parameters.
auto generate_anchors(std::span<const Box9DoF> boxes_cam_frame, int k, std::uint64_t seed)
    -> std::vector<Box9DoF>;

inline constexpr int kAnchorsPerView = 50;

}  // namespace mv3d
