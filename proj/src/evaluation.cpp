#include "mv3d/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mv3d {

auto to_string(SizeClass s) -> std::string
{
  switch (s) {
  case SizeClass::small: return "small";
  case SizeClass::medium: return "medium";
  case SizeClass::large: return "large";
  }
  return "?";
}

auto parse_size_class(const std::string& name) -> SizeClass
{
  if (name == "small")
    return SizeClass::small;
  if (name == "medium")
    return SizeClass::medium;
  if (name == "large")
    return SizeClass::large;
  throw std::invalid_argument("unknown size class '" + name + "'");
}

auto classify_size(double volume, const SizeThresholds& t) -> SizeClass
{
  if (volume < t.small_max)
    return SizeClass::small;
  if (volume < t.medium_max)
    return SizeClass::medium;
  return SizeClass::large;
}

auto MatchResult::ranked_flags() const -> std::vector<bool>
{
  std::vector<bool> flags;
  for (std::size_t idx : order)
    if (states[idx] != MatchState::ignored)
      flags.push_back(states[idx] == MatchState::true_positive);
  return flags;
}

auto match_detections(std::span<const Detection> dets, std::span<const Box9DoF> gts,
                      double iou_threshold) -> MatchResult
{
  return match_detections(dets, gts, std::vector<bool>(gts.size(), false), iou_threshold);
}

auto match_detections(std::span<const Detection> dets, std::span<const Box9DoF> gts,
                      const std::vector<bool>& gt_ignored, double iou_threshold) -> MatchResult
{
  if (gt_ignored.size() != gts.size())
    throw std::invalid_argument("match_detections: ignore mask size mismatch");
  MatchResult res;
  res.order.resize(dets.size());
  std::iota(res.order.begin(), res.order.end(), 0);
  std::stable_sort(res.order.begin(), res.order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  res.states.assign(dets.size(), MatchState::false_positive);
  res.matched_gt.assign(dets.size(), -1);

  std::vector<char> taken(gts.size(), 0);
  for (std::size_t idx : res.order) {
    // Prefer ground truths that count; fall back to ignorable ones.
    for (const bool want_ignored : {false, true}) {
      int best = -1;
      double best_iou = iou_threshold;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g] || gt_ignored[g] != want_ignored)
          continue;
        const double iou = box_iou(dets[idx].box, gts[g]);
        if (iou >= best_iou && (best < 0 || iou > best_iou)) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = 1;
        res.matched_gt[idx] = best;
        res.states[idx] = want_ignored ? MatchState::ignored : MatchState::true_positive;
        break;
      }
    }
  }
  return res;
}

auto average_precision(const std::vector<bool>& ranked_tp, int num_gt) -> double
{
  if (num_gt <= 0 || ranked_tp.empty())
    return 0.0;
  const std::size_t n = ranked_tp.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ranked_tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / num_gt;
  }
  for (std::size_t i = n - 1; i-- > 0;)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

namespace {

struct CategoryResult
{
  double ap = 0.0;
  int num_gt = 0;
  int num_det = 0;
};

struct Split
{
  std::string name;
  std::function<bool(const SceneGroundTruth&)> scene_filter;
  std::function<bool(const GroundTruthObject&)> gt_counts;
  std::function<bool(const Detection&)> det_counts;  // applied to unmatched detections
};

struct JoinedScene
{
  const SceneGroundTruth* gt;
  const SceneDetections* dets;
};

CategoryResult evaluate_category(int category, const std::vector<JoinedScene>& scenes,
                                 const Split& split, double iou_threshold)
{
  struct Ranked
  {
    double score;
    std::size_t scene;
    std::size_t det;
    bool tp;
  };
  std::vector<Ranked> ranked;
  CategoryResult res;

  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& scene = scenes[s];
    if (!split.scene_filter(*scene.gt))
      continue;
    std::vector<Box9DoF> boxes;
    std::vector<bool> ignored;
    for (const auto& obj : scene.gt->objects) {
      if (obj.category != category)
        continue;
      boxes.push_back(obj.box);
      ignored.push_back(!split.gt_counts(obj));
      res.num_gt += ignored.back() ? 0 : 1;
    }
    std::vector<Detection> dets;
    if (scene.dets)
      for (const auto& d : scene.dets->detections)
        if (d.category == category)
          dets.push_back(d);

    const MatchResult m = match_detections(dets, boxes, ignored, iou_threshold);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      MatchState st = m.states[i];
      if (st == MatchState::false_positive && !split.det_counts(dets[i]))
        st = MatchState::ignored;
      if (st == MatchState::ignored)
        continue;
      ranked.push_back({dets[i].score, s, i, st == MatchState::true_positive});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score)
      return a.score > b.score;
    if (a.scene != b.scene)
      return a.scene < b.scene;
    return a.det < b.det;
  });
  std::vector<bool> flags;
  for (const auto& r : ranked)
    flags.push_back(r.tp);
  res.num_det = static_cast<int>(ranked.size());
  res.ap = average_precision(flags, res.num_gt);
  return res;
}

}  // namespace

auto metrics_report(std::span<const SceneDetections> dets, const GroundTruthSet& gts,
                    double iou_threshold, const SizeThresholds& thresholds) -> MetricsReport
{
  // Scenes that only appear in the detections are evaluated against an empty ground truth.
  std::vector<SceneGroundTruth> extra;
  std::map<std::string, const SceneDetections*> det_by_scene;
  for (const auto& d : dets)
    det_by_scene[d.scene_id] = &d;
  std::set<std::string> gt_ids;
  for (const auto& g : gts)
    gt_ids.insert(g.scene_id);
  for (const auto& d : dets)
    if (!gt_ids.count(d.scene_id))
      extra.push_back({d.scene_id, "", {}});

  std::vector<JoinedScene> scenes;
  for (const auto& g : gts) {
    auto it = det_by_scene.find(g.scene_id);
    scenes.push_back({&g, it == det_by_scene.end() ? nullptr : it->second});
  }
  for (const auto& e : extra)
    scenes.push_back({&e, det_by_scene.at(e.scene_id)});

  std::set<int> categories;
  std::set<std::string> subsets;
  for (const auto& g : gts) {
    for (const auto& o : g.objects)
      categories.insert(o.category);
    if (!g.subset.empty())
      subsets.insert(g.subset);
  }
  for (const auto& d : dets)
    for (const auto& det : d.detections)
      categories.insert(det.category);

  std::vector<Split> splits;
  splits.push_back({"overall", [](const auto&) { return true; }, [](const auto&) { return true; },
                    [](const auto&) { return true; }});
  for (const SizeClass sc : {SizeClass::small, SizeClass::medium, SizeClass::large}) {
    // Unmatched detections count against the split their own size falls into.
    splits.push_back({"size:" + to_string(sc), [](const auto&) { return true; },
                      [sc](const GroundTruthObject& o) { return o.size_class == sc; },
                      [sc, thresholds](const Detection& d) {
                        return classify_size(d.box.volume(), thresholds) == sc;
                      }});
  }
  for (const auto& sub : subsets)
    splits.push_back({"subset:" + sub, [sub](const SceneGroundTruth& s) { return s.subset == sub; },
                      [](const auto&) { return true; }, [](const auto&) { return true; }});

  MetricsReport report;
  for (const auto& split : splits) {
    double sum = 0.0;
    int counted = 0, total_gt = 0, total_det = 0;
    std::vector<ApEntry> rows;
    for (int c : categories) {
      const CategoryResult r = evaluate_category(c, scenes, split, iou_threshold);
      rows.push_back({split.name, std::to_string(c), r.ap, r.num_gt, r.num_det});
      total_gt += r.num_gt;
      total_det += r.num_det;
      if (r.num_gt > 0) {
        sum += r.ap;
        ++counted;
      }
      if (split.name == "overall")
        report.per_category[c] = r.ap;
    }
    const double macro = counted > 0 ? sum / counted : 0.0;
    report.rows.push_back({split.name, "all", macro, total_gt, total_det});
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    if (split.name == "overall")
      report.overall = macro;
    else if (split.name.rfind("size:", 0) == 0)
      report.per_size[split.name.substr(5)] = macro;
    else
      report.per_subset[split.name.substr(7)] = macro;
  }
  return report;
}

void write_report_csv(std::ostream& out, const MetricsReport& report)
{
  out << "split,category,ap,num_gt,num_det\n";
  char buf[64];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.ap);
    out << r.split << ',' << r.category << ',' << buf << ',' << r.num_gt << ',' << r.num_det << '\n';
  }
}

auto box_from_json(const nlohmann::json& j) -> Box9DoF
{
  auto vec3 = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 3)
      throw std::invalid_argument(std::string("field '") + key + "' must have 3 entries");
    return Vec3(v[0], v[1], v[2]);
  };
  Box9DoF b{vec3("center"), vec3("size"), vec3("euler")};
  validate_box(b);
  return b;
}

auto box_to_json(const Box9DoF& box) -> nlohmann::json
{
  return {{"center", {box.center.x(), box.center.y(), box.center.z()}},
          {"size", {box.size.x(), box.size.y(), box.size.z()}},
          {"euler", {box.euler.x(), box.euler.y(), box.euler.z()}}};
}

namespace {

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn)
{
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::ifstream open_input(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  return in;
}

}  // namespace

auto parse_ground_truth(std::istream& in, const SizeThresholds& thresholds) -> GroundTruthSet
{
  GroundTruthSet out;
  for_each_line(in, [&](const nlohmann::json& j) {
    SceneGroundTruth scene{j.at("scene_id").get<std::string>(), j.value("subset", std::string{}), {}};
    for (const auto& b : j.at("boxes")) {
      GroundTruthObject obj;
      obj.box = box_from_json(b);
      obj.category = b.at("category").get<int>();
      if (obj.category < 0)
        throw std::invalid_argument("category ids must be nonnegative");
      obj.subset = b.value("subset", scene.subset);
      obj.size_class = b.contains("size_class")
                           ? parse_size_class(b.at("size_class").get<std::string>())
                           : classify_size(obj.box.volume(), thresholds);
      scene.objects.push_back(std::move(obj));
    }
    out.push_back(std::move(scene));
  });
  return out;
}

auto parse_detections(std::istream& in) -> std::vector<SceneDetections>
{
  std::vector<SceneDetections> out;
  for_each_line(in, [&](const nlohmann::json& j) {
    SceneDetections scene{j.at("scene_id").get<std::string>(), {}};
    for (const auto& b : j.at("boxes")) {
      Detection d{box_from_json(b), b.value("score", 1.0), b.at("category").get<int>()};
      if (!(d.score >= 0.0 && d.score <= 1.0))
        throw std::invalid_argument("detection score must lie in [0, 1]");
      scene.detections.push_back(d);
    }
    out.push_back(std::move(scene));
  });
  return out;
}

auto load_ground_truth(const std::string& path, const SizeThresholds& thresholds) -> GroundTruthSet
{
  auto in = open_input(path);
  try {
    return parse_ground_truth(in, thresholds);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

auto load_detections(const std::string& path) -> std::vector<SceneDetections>
{
  auto in = open_input(path);
  try {
    return parse_detections(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_detections(std::ostream& out, std::span<const SceneDetections> scenes)
{
  for (const auto& s : scenes) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& d : s.detections) {
      auto b = box_to_json(d.box);
      b["category"] = d.category;
      b["score"] = d.score;
      boxes.push_back(std::move(b));
    }
    out << nlohmann::json{{"scene_id", s.scene_id}, {"boxes", boxes}}.dump() << '\n';
  }
}

}  // namespace mv3d
