#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mv3d/geometry.hpp"

namespace mv3d {

enum class SizeClass
{
  small,
  medium,
  large,
};

auto to_string(SizeClass s) -> std::string;
auto parse_size_class(const std::string& name) -> SizeClass;

/// small < small_max <= medium < medium_max <= large, in cubic metres.
struct SizeThresholds
{
  double small_max = 0.01;
  double medium_max = 0.5;
};

auto classify_size(double volume, const SizeThresholds& t) -> SizeClass;

struct GroundTruthObject
{
  Box9DoF box;
  int category = 0;
  std::string subset;
  SizeClass size_class = SizeClass::medium;
};

struct SceneGroundTruth
{
  std::string scene_id;
  std::string subset;
  std::vector<GroundTruthObject> objects;
};

using GroundTruthSet = std::vector<SceneGroundTruth>;

struct SceneDetections
{
  std::string scene_id;
  std::vector<Detection> detections;
};

enum class MatchState
{
  true_positive,
  false_positive,
  ignored,
};

/// Greedy score-ordered matching. `order` lists detection indices by (score
/// desc, index asc); `states` is indexed like the input detections.
struct MatchResult
{
  std::vector<std::size_t> order;
  std::vector<MatchState> states;
  std::vector<int> matched_gt;  // -1 when unmatched

  /// TP flags in score order, ignored detections dropped.
  auto ranked_flags() const -> std::vector<bool>;
};

auto match_detections(std::span<const Detection> dets, std::span<const Box9DoF> gts,
                      double iou_threshold) -> MatchResult;

/// As above, with some ground truths marked ignorable: a detection that can
/// only match an ignored ground truth is itself ignored.
auto match_detections(std::span<const Detection> dets, std::span<const Box9DoF> gts,
                      const std::vector<bool>& gt_ignored, double iou_threshold) -> MatchResult;

/// All-point interpolated AP of a ranked TP/FP list.
auto average_precision(const std::vector<bool>& ranked_tp, int num_gt) -> double;

struct ApEntry
{
  std::string split;
  std::string category;
  double ap = 0.0;
  int num_gt = 0;
  int num_det = 0;
};

struct MetricsReport
{
  double overall = 0.0;
  std::map<int, double> per_category;
  std::map<std::string, double> per_size;
  std::map<std::string, double> per_subset;
  std::vector<ApEntry> rows;
};

/// Per-category AP and macro means over categories, size classes and scene
/// subsets. In a size split, ground truths of other sizes are ignorable and
/// unmatched detections count only if their own volume falls in the split.
auto metrics_report(std::span<const SceneDetections> dets, const GroundTruthSet& gts,
                    double iou_threshold, const SizeThresholds& thresholds = {}) -> MetricsReport;

void write_report_csv(std::ostream& out, const MetricsReport& report);

auto box_from_json(const nlohmann::json& j) -> Box9DoF;
auto box_to_json(const Box9DoF& box) -> nlohmann::json;

/// One scene per line: {scene_id, subset?, boxes: [{center, size, euler, category, score?}]}.
/// Errors carry the offending line number.
auto load_ground_truth(const std::string& path, const SizeThresholds& thresholds) -> GroundTruthSet;
auto load_detections(const std::string& path) -> std::vector<SceneDetections>;
auto parse_ground_truth(std::istream& in, const SizeThresholds& thresholds) -> GroundTruthSet;
auto parse_detections(std::istream& in) -> std::vector<SceneDetections>;

void write_detections(std::ostream& out, std::span<const SceneDetections> scenes);

}  // namespace mv3d
