#include "mv3d/spatial_enhancer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mv3d {

auto SpatialEnhancerParams::random(Eigen::Index img_channels, Eigen::Index depth_channels,
                                   Eigen::Index embed_dims, int depth_bins, std::uint64_t seed)
    -> SpatialEnhancerParams
{
  return {LinearParams::random("point_embed", 3, embed_dims, seed),
          LinearParams::random("depth_fuse", img_channels + depth_channels, embed_dims, seed + 1),
          LinearParams::random("depth_head", embed_dims, depth_bins, seed + 2),
          LinearParams::random("feature_fuse", img_channels + depth_channels + embed_dims,
                               img_channels, seed + 3)};
}

auto point_position_embedding(const FrustumPointGrid& grid, const LinearParams& p)
    -> PositionEmbeddingGrid
{
  if (p.in() != 3)
    throw std::invalid_argument("point embedding must take 3D points");
  RowMatrix pts(static_cast<Eigen::Index>(grid.size()), 3);
  for (int r = 0; r < grid.rows(); ++r)
    for (int c = 0; c < grid.cols(); ++c)
      for (int k = 0; k < grid.depth_bins(); ++k)
        pts.row(static_cast<Eigen::Index>(grid.index(r, c, k))) = grid.point(r, c, k).transpose();
  return {grid.rows(), grid.cols(), grid.depth_bins(), p.apply_rows(pts)};
}

namespace {

void require_aligned(const FeatureMap& a, const FeatureMap& b)
{
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument("feature maps are not spatially aligned");
}

RowMatrix concat_cols(std::initializer_list<const RowMatrix*> parts)
{
  Eigen::Index cols = 0;
  const Eigen::Index rows = (*parts.begin())->rows();
  for (const auto* p : parts)
    cols += p->cols();
  RowMatrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.middleCols(at, p->cols()) = *p;
    at += p->cols();
  }
  return out;
}

}  // namespace

auto depth_distribution(const FeatureMap& img, const FeatureMap& dep, const LinearParams& fuse,
                        const LinearParams& head) -> DepthDistribution
{
  require_aligned(img, dep);
  RowMatrix logits = head.apply_rows(fuse.apply_rows(concat_cols({&img.values, &dep.values})));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return {img.rows, img.cols, std::move(logits)};
}

auto image_position_embedding(const PositionEmbeddingGrid& ppe, const DepthDistribution& dt)
    -> PositionEmbeddingGrid
{
  if (ppe.rows != dt.rows || ppe.cols != dt.cols || ppe.depth_bins != dt.bins())
    throw std::invalid_argument("point embeddings and depth distribution disagree in shape");
  PositionEmbeddingGrid ipe{ppe.rows, ppe.cols, 1,
                            RowMatrix::Zero(static_cast<Eigen::Index>(ppe.rows) * ppe.cols,
                                            ppe.values.cols())};
  for (int r = 0; r < ppe.rows; ++r) {
    for (int c = 0; c < ppe.cols; ++c) {
      const Eigen::Index px = static_cast<Eigen::Index>(r) * ppe.cols + c;
      const auto block = ppe.values.middleRows(ppe.index(r, c, 0), ppe.depth_bins);
      ipe.values.row(px) = dt.probs.row(px) * block;
    }
  }
  return ipe;
}

auto fuse_features(const FeatureMap& img, const FeatureMap& dep, const PositionEmbeddingGrid& ipe,
                   const LinearParams& p) -> FeatureMap
{
  require_aligned(img, dep);
  if (ipe.rows != img.rows || ipe.cols != img.cols || ipe.depth_bins != 1)
    throw std::invalid_argument("image position embedding does not match the feature map");
  FeatureMap out(img.view, img.stride, img.rows, img.cols, p.out());
  out.values = p.apply_rows(concat_cols({&img.values, &dep.values, &ipe.values}));
  return out;
}

auto enhance_view(const FeatureMap& img, const FeatureMap& dep, const CameraModel& cam,
                  const SpatialEnhancerParams& params, double max_depth, int depth_bins)
    -> EnhancedView
{
  const FrustumPointGrid grid = frustum_point_grid(cam, img.rows, img.cols, max_depth, depth_bins);
  EnhancedView view;
  view.ppe = point_position_embedding(grid, params.point_embed);
  view.depth = depth_distribution(img, dep, params.depth_fuse, params.depth_head);
  view.ipe = image_position_embedding(view.ppe, view.depth);
  view.features = fuse_features(img, dep, view.ipe, params.feature_fuse);
  return view;
}

auto ipe_correlation_map(const PositionEmbeddingGrid& ipe, int ref_row, int ref_col)
    -> Eigen::MatrixXd
{
  if (ref_row < 0 || ref_col < 0 || ref_row >= ipe.rows || ref_col >= ipe.cols)
    throw std::out_of_range("reference pixel outside the embedding grid");
  const Eigen::RowVectorXd ref = ipe.at(ref_row, ref_col, 0);
  const double ref_norm = ref.norm();
  if (ref_norm == 0.0)
    throw std::invalid_argument("reference embedding has zero norm");

  Eigen::MatrixXd sim(ipe.rows, ipe.cols);
  for (int r = 0; r < ipe.rows; ++r) {
    for (int c = 0; c < ipe.cols; ++c) {
      const auto e = ipe.at(r, c, 0);
      const double n = e.norm();
      sim(r, c) = n == 0.0 ? 0.0 : std::clamp(e.dot(ref) / (n * ref_norm), -1.0, 1.0);
    }
  }
  sim(ref_row, ref_col) = 1.0;
  return sim;
}

}  // namespace mv3d
