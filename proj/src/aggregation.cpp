#include "mv3d/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace mv3d {

auto fixed_keypoint_offsets() -> std::vector<Vec3>
{
  return {Vec3(0, 0, 0),    Vec3(0.5, 0, 0), Vec3(-0.5, 0, 0), Vec3(0, 0.5, 0),
          Vec3(0, -0.5, 0), Vec3(0, 0, 0.5), Vec3(0, 0, -0.5)};
}

auto learnable_keypoint_offsets(const Eigen::VectorXd& query_feature, const LinearParams& p)
    -> std::vector<Vec3>
{
  if (p.out() % 3 != 0)
    throw std::invalid_argument("offset network output must be a multiple of 3");
  const Eigen::VectorXd flat = p.apply(query_feature);
  std::vector<Vec3> offsets;
  for (Eigen::Index i = 0; i < flat.size(); i += 3)
    offsets.emplace_back(flat[i], flat[i + 1], flat[i + 2]);
  return offsets;
}

auto keypoints_world(const Box9DoF& box, std::span<const Vec3> offsets) -> std::vector<Vec3>
{
  validate_box(box);
  const Mat3 R = euler_to_rotation(box.euler);
  std::vector<Vec3> pts;
  pts.reserve(offsets.size());
  for (const auto& o : offsets)
    pts.push_back(box.center + R * o.cwiseProduct(box.size));
  return pts;
}

auto bilinear_sample(const FeatureMap& fm, double x, double y) -> Eigen::VectorXd
{
  if (!(x >= 0.0 && y >= 0.0 && x <= fm.cols - 1 && y <= fm.rows - 1))
    throw std::out_of_range("bilinear_sample: coordinate outside the feature grid");
  const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(fm.cols - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(fm.rows - 2, 0));
  const int x1 = std::min(x0 + 1, fm.cols - 1);
  const int y1 = std::min(y0 + 1, fm.rows - 1);
  const double fx = x - x0, fy = y - y0;
  const Eigen::RowVectorXd top = (1.0 - fx) * fm.cell(y0, x0) + fx * fm.cell(y0, x1);
  const Eigen::RowVectorXd bottom = (1.0 - fx) * fm.cell(y1, x0) + fx * fm.cell(y1, x1);
  return ((1.0 - fy) * top + fy * bottom).transpose();
}

auto camera_descriptor(const CameraModel& cam) -> Eigen::Matrix<double, 16, 1>
{
  Eigen::Matrix<double, 16, 1> d;
  const auto& k = cam.intrinsics();
  d.head<4>() << k.focal_u, k.focal_v, k.center_u, k.center_v;
  for (int r = 0; r < 3; ++r)
    d.segment<4>(4 + 4 * r) = cam.extrinsics().row(r).transpose();
  return d;
}

auto weight_net_input(const Query& query, std::span<const CameraModel> cams) -> Eigen::VectorXd
{
  const Eigen::Index c = query.feature.size();
  Eigen::VectorXd x(c + 9 + 16 * static_cast<Eigen::Index>(cams.size()));
  x.head(c) = query.feature;
  x.segment<9>(c) = query.anchor.params();
  for (std::size_t n = 0; n < cams.size(); ++n)
    x.segment<16>(c + 9 + 16 * static_cast<Eigen::Index>(n)) = camera_descriptor(cams[n]);
  return x;
}

auto aggregation_weights(const Query& query, std::span<const CameraModel> cams,
                         const ValidityMask& validity, const LinearParams& p)
    -> AggregationWeights
{
  const Eigen::Index M = validity.rows(), N = validity.cols();
  if (N != static_cast<Eigen::Index>(cams.size()))
    throw std::invalid_argument("validity mask must have one column per camera");
  if (p.out() != M * N)
    throw std::invalid_argument("weight network output must equal key points x views");

  const Eigen::VectorXd logits = p.apply(weight_net_input(query, cams));
  AggregationWeights out{Eigen::MatrixXd::Zero(M, N), !validity.any()};
  if (out.all_invalid)
    return out;

  double max_logit = -std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < N; ++n)
      if (validity(m, n))
        max_logit = std::max(max_logit, logits[m * N + n]);
  double total = 0.0;
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < N; ++n)
      if (validity(m, n)) {
        out.weights(m, n) = std::exp(logits[m * N + n] - max_logit);
        total += out.weights(m, n);
      }
  out.weights /= total;
  return out;
}

auto project_keypoints(std::span<const Vec3> points, std::span<const CameraModel> cams,
                       double max_depth) -> ProjectedKeyPoints
{
  const auto M = static_cast<Eigen::Index>(points.size());
  const auto N = static_cast<Eigen::Index>(cams.size());
  ProjectedKeyPoints out{ValidityMask::Constant(M, N, false),
                         std::vector<PixelDepth>(static_cast<std::size_t>(M * N))};
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index n = 0; n < N; ++n) {
      const auto& cam = cams[static_cast<std::size_t>(n)];
      const auto& pt = points[static_cast<std::size_t>(m)];
      if (!in_frustum(cam, pt, max_depth))
        continue;
      out.valid(m, n) = true;
      out.pixels[static_cast<std::size_t>(m * N + n)] = project(cam, pt);
    }
  }
  return out;
}

auto AggregationParams::random(Eigen::Index channels, int learnable_points, int num_views,
                               std::uint64_t seed, double offset_scale) -> AggregationParams
{
  const Eigen::Index M = 7 + learnable_points;
  return {LinearParams::random("offset_net", channels, 3 * learnable_points, seed, offset_scale),
          LinearParams::random("weight_net", channels + 9 + 16 * num_views, M * num_views, seed + 1),
          10.0};
}

auto aggregate_query(const Query& query, std::span<const FeatureMap> feature_maps,
                     std::span<const CameraModel> cams, const AggregationParams& params)
    -> AggregationResult
{
  if (feature_maps.size() != cams.size())
    throw std::invalid_argument("need one feature map per camera");
  if (feature_maps.empty())
    throw std::invalid_argument("aggregation needs at least one view");
  const Eigen::Index C = feature_maps.front().channels();

  AggregationResult res;
  res.keypoints.offsets = fixed_keypoint_offsets();
  for (const auto& o : learnable_keypoint_offsets(query.feature, params.offset_net))
    res.keypoints.offsets.push_back(o);
  res.keypoints.world_points = keypoints_world(query.anchor, res.keypoints.offsets);
  res.projection = project_keypoints(res.keypoints.world_points, cams, params.max_depth);
  res.weights = aggregation_weights(query, cams, res.projection.valid, params.weight_net);

  res.feature = Eigen::VectorXd::Zero(C);
  const Eigen::Index M = res.projection.valid.rows(), N = res.projection.valid.cols();
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index n = 0; n < N; ++n) {
      if (!res.projection.valid(m, n))
        continue;
      const auto& fm = feature_maps[static_cast<std::size_t>(n)];
      const auto& cam = cams[static_cast<std::size_t>(n)];
      if (fm.channels() != C)
        throw std::invalid_argument("feature maps disagree in channel count");
      const PixelDepth& pd = res.projection.pixels[static_cast<std::size_t>(m * N + n)];
      const double x = pixel_to_cell(pd.u, fm.cols, cam.width());
      const double y = pixel_to_cell(pd.v, fm.rows, cam.height());
      res.feature += res.weights.weights(m, n) * bilinear_sample(fm, x, y);
    }
  }
  return res;
}

auto aggregate(std::span<const Query> queries, std::span<const FeatureMap> feature_maps,
               std::span<const CameraModel> cams, const AggregationParams& params)
    -> std::vector<AggregationResult>
{
  std::vector<AggregationResult> out;
  out.reserve(queries.size());
  for (const auto& q : queries)
    out.push_back(aggregate_query(q, feature_maps, cams, params));
  return out;
}

auto generate_anchors(std::span<const Box9DoF> boxes_cam_frame, int k, std::uint64_t seed)
    -> std::vector<Box9DoF>
{
  const auto n = static_cast<int>(boxes_cam_frame.size());
  if (k < 1 || k > n)
    throw std::invalid_argument("generate_anchors: need 1 <= k <= number of boxes");

  std::vector<BoxParams> pts;
  for (const auto& b : boxes_cam_frame)
    pts.push_back(b.params());

  std::mt19937_64 rng(seed);
  std::vector<BoxParams> centroids;
  centroids.push_back(pts[std::uniform_int_distribution<int>(0, n - 1)(rng)]);
  std::vector<double> d2(static_cast<std::size_t>(n));
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids)
        best = std::min(best, (pts[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    int pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        if (d2[i] > 0.0 && r < d2[i]) {
          pick = i;
          break;
        }
        r -= d2[i];
      }
      while (d2[pick] == 0.0 && pick > 0)
        --pick;
    }
    centroids.push_back(pts[pick]);
  }

  std::vector<int> label(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if ((pts[i] - centroids[c]).squaredNorm() < (pts[i] - centroids[best]).squaredNorm())
          best = c;
      label[i] = best;
    }
    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      BoxParams sum = BoxParams::Zero();
      int count = 0;
      for (int i = 0; i < n; ++i)
        if (label[i] == c) {
          sum += pts[i];
          ++count;
        }
      if (count == 0)
        continue;
      const BoxParams next = sum / count;
      moved = std::max(moved, (next - centroids[c]).norm());
      centroids[c] = next;
    }
    if (moved < 1e-6)
      break;
  }

  std::vector<Box9DoF> anchors;
  for (const auto& c : centroids) {
    Box9DoF b = Box9DoF::from_params(c);
    b.size = b.size.cwiseMax(1e-3);
    anchors.push_back(b);
  }
  return anchors;
}

}  // namespace mv3d
