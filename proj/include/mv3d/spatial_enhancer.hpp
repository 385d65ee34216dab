#pragma once

#include <cstdint>

#include "mv3d/camera.hpp"
#include "mv3d/feature_map.hpp"

namespace mv3d {

/// Embedding per (row, col, depth bin). Image position embeddings use a single bin.
struct PositionEmbeddingGrid
{
  int rows = 0;
  int cols = 0;
  int depth_bins = 1;
  RowMatrix values;  // (rows * cols * depth_bins) x channels

  Eigen::Index index(int r, int c, int k = 0) const
  {
    return (static_cast<Eigen::Index>(r) * cols + c) * depth_bins + k;
  }
  auto at(int r, int c, int k = 0) const { return values.row(index(r, c, k)); }
};

/// Per-pixel categorical distribution over the frustum depth bins.
struct DepthDistribution
{
  int rows = 0;
  int cols = 0;
  RowMatrix probs;  // (rows * cols) x K

  int bins() const { return static_cast<int>(probs.cols()); }
};

struct SpatialEnhancerParams
{
  LinearParams point_embed;   // 3 -> C
  LinearParams depth_fuse;    // C_img + C_depth -> hidden
  LinearParams depth_head;    // hidden -> K
  LinearParams feature_fuse;  // C_img + C_depth + C -> C_out

  static auto random(Eigen::Index img_channels, Eigen::Index depth_channels, Eigen::Index embed_dims,
                     int depth_bins, std::uint64_t seed) -> SpatialEnhancerParams;
};

auto point_position_embedding(const FrustumPointGrid& grid, const LinearParams& p)
    -> PositionEmbeddingGrid;

/// Softmax over the depth axis of head(fuse([I, D])).
auto depth_distribution(const FeatureMap& img, const FeatureMap& dep, const LinearParams& fuse,
                        const LinearParams& head) -> DepthDistribution;

/// Depth-weighted sum of point embeddings per pixel.
auto image_position_embedding(const PositionEmbeddingGrid& ppe, const DepthDistribution& dt)
    -> PositionEmbeddingGrid;

/// Linear map of [I, D, IPE] per pixel.
auto fuse_features(const FeatureMap& img, const FeatureMap& dep, const PositionEmbeddingGrid& ipe,
                   const LinearParams& p) -> FeatureMap;

struct EnhancedView
{
  PositionEmbeddingGrid ppe;
  DepthDistribution depth;
  PositionEmbeddingGrid ipe;
  FeatureMap features;
};

/// Full pass for one view and one stride level.
auto enhance_view(const FeatureMap& img, const FeatureMap& dep, const CameraModel& cam,
                  const SpatialEnhancerParams& params, double max_depth, int depth_bins)
    -> EnhancedView;

/// Cosine similarity of every pixel's embedding with the one at (ref_row, ref_col).
/// Pixels with a zero embedding get 0.
auto ipe_correlation_map(const PositionEmbeddingGrid& ipe, int ref_row, int ref_col)
    -> Eigen::MatrixXd;

}  // namespace mv3d
