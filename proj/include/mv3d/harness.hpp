#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mv3d/aggregation.hpp"
#include "mv3d/camera.hpp"
#include "mv3d/evaluation.hpp"
#include "mv3d/feature_map.hpp"
#include "mv3d/losses.hpp"
#include "mv3d/spatial_enhancer.hpp"

namespace mv3d {

struct RunConfig
{
  int embed_dims = 32;
  double max_depth = 10.0;
  int depth_bins = 64;
  int fixed_keypoints = 7;
  int learnable_keypoints = 9;
  int anchors_per_view = 50;
  LossWeights loss_weights;
  double nms_threshold = 0.4;
  double ap_threshold = 0.25;
  double learning_rate = 1e-3;
  int steps = 20000;
  double grad_clip = 10.0;  // cap on the fit step's gradient norm, 0 disables
  int trace_every = 100;  // record every n-th fit step; the last is always kept
  std::uint64_t seed = 0;
  SizeThresholds size_thresholds;

  // Synthetic scene layout.
  int image_width = 512;
  int image_height = 512;
  int feature_stride = 8;
  int min_boxes = 1;
  int max_boxes = 10;
  int min_cameras = 2;
  int max_cameras = 8;
  int num_categories = 5;
  double room_x = 6.0;
  double room_y = 6.0;
  double room_z = 3.0;

  // Fit initialisation noise.
  double center_jitter = 0.3;
  double size_jitter = 0.3;
  double angle_jitter = 0.5;
  double symmetry_probability = 0.5;

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
auto load_config(const std::string& path) -> RunConfig;

/// Deterministic per-task seed derived from a root seed.
auto derive_seed(std::uint64_t root, std::uint64_t index) -> std::uint64_t;

struct SceneObject
{
  Box9DoF box;
  int category = 0;
};

struct SceneSample
{
  std::string scene_id;
  std::uint64_t seed = 0;
  std::vector<CameraModel> cameras;
  std::vector<SceneObject> objects;
};

auto gen_scene(const RunConfig& config, std::uint64_t seed) -> SceneSample;

auto scene_to_json(const SceneSample& scene) -> nlohmann::json;
auto scene_from_json(const nlohmann::json& j) -> SceneSample;

struct RenderedView
{
  FeatureMap features;           // instance signatures
  FeatureMap depth;              // 1 channel, depth of the visible instance centre
  std::vector<int> instance_id;  // per cell, -1 for background
};

/// Unit-norm signature of each instance, seeded by the scene.
auto instance_signatures(const SceneSample& scene, int channels) -> std::vector<Eigen::VectorXd>;

/// Paints each feature cell with the signature of the nearest box hit by the
/// ray through the cell centre, or zeros.
auto render_feature_maps(const SceneSample& scene, const RunConfig& config)
    -> std::vector<RenderedView>;

/// Distance along the ray to the first intersection with the box, or a negative value.
double ray_box_hit(const Box9DoF& box, const Vec3& origin, const Vec3& dir);

struct FitStep
{
  int step = 0;
  double loss = 0.0;
  Box9DoF box;
  double grad_norm = 0.0;
};

struct FitTrace
{
  Box9DoF gt;
  Box9DoF init;
  std::vector<FitStep> steps;

  auto final_box() const -> const Box9DoF& { return steps.back().box; }
};

struct FitOptions
{
  bool perturb = true;
  /// -1 draws the symmetry as configured; otherwise index into signed_permutations().
  int forced_symmetry = -1;
};

/// Random initial box around `gt` drawn with the configured jitter.
auto perturb_box(const Box9DoF& gt, const RunConfig& config, std::uint64_t seed, int forced_symmetry)
    -> Box9DoF;

/// Fixed-step gradient descent from `init` towards `gt`, recording every
/// `trace_every`-th step and the last one. Geometric losses step
/// the rotation on SO(3) with the world-frame angular gradient; l1 steps the
/// raw parameters.
auto fit_box(const Box9DoF& init, const Box9DoF& gt, BoxLossKind kind, const RunConfig& config)
    -> FitTrace;

/// One trace per ground-truth box, run concurrently; output in box order.
auto fit_boxes(const SceneSample& scene, BoxLossKind kind, const RunConfig& config,
               const FitOptions& options = {}) -> std::vector<FitTrace>;

void write_trace_csv(std::ostream& out, const std::vector<FitTrace>& traces);

/// Minimal SVG line chart of one or more series.
void write_svg_chart(std::ostream& out, const std::vector<std::vector<double>>& series,
                     const std::vector<std::string>& labels, const std::string& title);

struct HeatmapResult
{
  Eigen::MatrixXd similarity;
  int ref_row = 0;
  int ref_col = 0;
  double spearman = 0.0;  // similarity vs ray distance to the reference
};

/// Runs the spatial enhancer on one view and correlates its position
/// embeddings with the one at the reference cell.
auto pe_heatmap(const SceneSample& scene, int view, const RunConfig& config, int ref_row = -1,
                int ref_col = -1) -> HeatmapResult;

/// Spearman rank correlation with average ranks for ties.
auto spearman(const std::vector<double>& x, const std::vector<double>& y) -> double;

void write_heatmap_pgm(const std::string& path, const Eigen::MatrixXd& sim);
void write_heatmap_csv(std::ostream& out, const Eigen::MatrixXd& sim);

struct RecoveryEntry
{
  int instance = 0;
  int best_match = -1;   // signature with the highest cosine, -1 if nothing was sampled
  double own_cosine = 0.0;
  double best_cosine = 0.0;
  AggregationResult aggregation;
};

/// Aggregates rendered features with one query per ground-truth box and
/// compares the result against every instance signature.
auto signature_recovery(const SceneSample& scene, const RunConfig& config)
    -> std::vector<RecoveryEntry>;

auto scene_ground_truth(const SceneSample& scene, const SizeThresholds& t) -> SceneGroundTruth;

auto run_eval(const std::string& dets_path, const std::string& gts_path, const RunConfig& config,
              bool apply_nms) -> MetricsReport;

}  // namespace mv3d
