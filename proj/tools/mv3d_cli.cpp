// Command-line front end for scene generation, rendering, fitting and evaluation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mv3d/harness.hpp"

namespace fs = std::filesystem;
using namespace mv3d;

namespace {

struct Common
{
  std::string config_path;
  std::uint64_t seed = 0;
  std::string scene_path;
};

auto load_run_config(const Common& c) -> RunConfig
{
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  cfg.validate();
  return cfg;
}

// First scene of a JSON or JSON-lines file, or a freshly generated one.
auto obtain_scene(const Common& c, const RunConfig& cfg) -> SceneSample
{
  if (c.scene_path.empty())
    return gen_scene(cfg, c.seed);
  std::ifstream in(c.scene_path);
  if (!in)
    throw std::runtime_error("cannot open scene " + c.scene_path);
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos)
      return scene_from_json(nlohmann::json::parse(line));
  throw std::runtime_error("no scene in " + c.scene_path);
}

// Writes to the file, or stdout for an empty path or "-".
class Output
{
public:
  explicit Output(const std::string& path)
  {
    if (path.empty() || path == "-")
      return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_)
      throw std::runtime_error("cannot write " + path);
  }
  auto stream() -> std::ostream& { return file_ ? *file_ : std::cout; }

private:
  std::unique_ptr<std::ofstream> file_;
};

void add_common(CLI::App* sub, Common& c, bool with_scene)
{
  sub->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "scene seed");
  if (with_scene)
    sub->add_option("--scene", c.scene_path, "scene JSON (generated from --seed when absent)")
        ->check(CLI::ExistingFile);
}

int cmd_gen_scene(const Common& c, int count, const std::string& out_path)
{
  const RunConfig cfg = load_run_config(c);
  std::vector<SceneSample> scenes(static_cast<std::size_t>(count));
  std::vector<std::thread> pool;
  const unsigned workers = std::max(1U, std::min<unsigned>(count, std::thread::hardware_concurrency()));
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < scenes.size(); i += workers)
        scenes[i] = gen_scene(cfg, c.seed + i);
    });
  for (auto& t : pool)
    t.join();
  Output out(out_path);
  for (const auto& s : scenes)
    out.stream() << scene_to_json(s).dump() << '\n';
  return 0;
}

int cmd_render(const Common& c, const std::string& out_dir)
{
  const RunConfig cfg = load_run_config(c);
  const SceneSample scene = obtain_scene(c, cfg);
  fs::create_directories(out_dir);
  const auto views = render_feature_maps(scene, cfg);
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& rv = views[v];
    const int rows = rv.features.rows, cols = rv.features.cols;
    Raster feat(cols, rows, 3), depth(cols, rows, 1), ids(cols, rows, 1);
    for (int r = 0; r < rows; ++r) {
      for (int col = 0; col < cols; ++col) {
        const auto f = rv.features.cell(r, col);
        for (int ch = 0; ch < 3 && ch < f.size(); ++ch)
          feat.at(col, r, ch) = static_cast<float>(std::clamp(127.5 * (f(ch) + 1.0), 0.0, 255.0));
        depth.at(col, r) =
            static_cast<float>(std::clamp(255.0 * rv.depth.cell(r, col)(0) / cfg.max_depth, 0.0, 255.0));
        const int id = rv.instance_id[static_cast<std::size_t>(rv.features.index(r, col))];
        ids.at(col, r) = static_cast<float>(id < 0 ? 0 : std::min(255, id + 1));
      }
    }
    const std::string stem = out_dir + "/view_" + std::to_string(v);
    write_pnm(stem + "_features.ppm", feat);
    write_pnm(stem + "_depth.pgm", depth);
    write_pnm(stem + "_instances.pgm", ids);
    save_camera(stem + "_camera.json", scene.cameras[v]);
  }
  std::cerr << "rendered " << views.size() << " views of " << scene.scene_id << " to " << out_dir << '\n';
  return 0;
}

int cmd_standardize(const std::string& in_path, const std::string& cam_path, const std::string& out_path,
                    const std::string& out_cam_path)
{
  const Raster image = read_pnm(in_path);
  const CameraModel cam = load_camera(cam_path);
  if (cam.width() != image.width || cam.height() != image.height)
    throw std::runtime_error("camera size does not match image " + in_path);
  const StandardizedView sv = standardize_intrinsics(image, cam);
  write_pnm(out_path, sv.image);
  save_camera(out_cam_path, sv.camera);
  return 0;
}

struct FitArgs
{
  std::string loss = "wd";
  std::string out;
  std::string svg;
  bool no_perturb = false;
  int symmetry = -1;
  double lr = 0.0;
  int steps = 0;
};

int cmd_fit(const Common& c, const FitArgs& a)
{
  RunConfig cfg = load_run_config(c);
  if (a.lr > 0.0)
    cfg.learning_rate = a.lr;
  if (a.steps > 0)
    cfg.steps = a.steps;
  cfg.validate();
  const BoxLossKind kind = parse_box_loss_kind(a.loss);
  const SceneSample scene = obtain_scene(c, cfg);
  if (a.symmetry >= static_cast<int>(signed_permutations().size()))
    throw std::invalid_argument("--symmetry must index one of the 48 reparameterizations");
  const auto traces = fit_boxes(scene, kind, cfg, {!a.no_perturb, a.symmetry});

  Output out(a.out);
  write_trace_csv(out.stream(), traces);
  if (!a.svg.empty()) {
    std::vector<std::vector<double>> series;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      std::vector<double> s;
      for (const auto& st : traces[i].steps)
        s.push_back(st.loss);
      series.push_back(std::move(s));
      labels.push_back("box " + std::to_string(i));
    }
    std::ofstream svg(a.svg);
    if (!svg)
      throw std::runtime_error("cannot write " + a.svg);
    write_svg_chart(svg, series, labels, to_string(kind) + " loss per step");
  }
  for (std::size_t i = 0; i < traces.size(); ++i)
    std::fprintf(stderr, "box %zu: final loss %.6g, IoU %.4f\n", i, traces[i].steps.back().loss,
                 box_iou(traces[i].final_box(), traces[i].gt));
  return 0;
}

int cmd_eval(const Common& c, const std::string& dets, const std::string& gts, double iou, bool use_nms,
             double nms_threshold, const std::string& out_path)
{
  RunConfig cfg = load_run_config(c);
  if (iou > 0.0)
    cfg.ap_threshold = iou;
  if (nms_threshold > 0.0)
    cfg.nms_threshold = nms_threshold;
  cfg.validate();
  const MetricsReport report = run_eval(dets, gts, cfg, use_nms);
  Output out(out_path);
  write_report_csv(out.stream(), report);
  std::fprintf(stderr, "overall AP@%.2f: %.4f\n", cfg.ap_threshold, report.overall);
  return 0;
}

int cmd_pe_heatmap(const Common& c, int view, int ref_row, int ref_col, const std::string& pgm,
                   const std::string& csv)
{
  const RunConfig cfg = load_run_config(c);
  const SceneSample scene = obtain_scene(c, cfg);
  const HeatmapResult h = pe_heatmap(scene, view, cfg, ref_row, ref_col);
  if (!pgm.empty())
    write_heatmap_pgm(pgm, h.similarity);
  Output out(csv);
  write_heatmap_csv(out.stream(), h.similarity);
  std::fprintf(stderr, "reference cell (%d, %d), spearman(similarity, ray distance) = %.4f\n", h.ref_row,
               h.ref_col, h.spearman);
  return 0;
}

int cmd_aggregate_demo(const Common& c, const std::string& out_path)
{
  const RunConfig cfg = load_run_config(c);
  const SceneSample scene = obtain_scene(c, cfg);
  const auto entries = signature_recovery(scene, cfg);
  Output out(out_path);
  out.stream() << "instance,best_match,own_cosine,best_cosine\n";
  int recovered = 0;
  char buf[128];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f\n", e.instance, e.best_match, e.own_cosine,
                  e.best_cosine);
    out.stream() << buf;
    recovered += e.best_match == e.instance;
  }
  std::fprintf(stderr, "%d of %zu signatures recovered\n", recovered, entries.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Multi-view 3D detection toolkit: synthetic scenes, box fitting and evaluation"};
  app.require_subcommand(1);

  Common common;

  auto* gen = app.add_subcommand("gen-scene", "write synthetic scenes as JSON lines");
  add_common(gen, common, false);
  int count = 1;
  std::string gen_out;
  gen->add_option("--count", count, "number of scenes, seeded seed, seed+1, ...")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output file (stdout by default)");

  auto* render = app.add_subcommand("render", "render oracle feature, depth and instance maps");
  add_common(render, common, true);
  std::string render_dir = "render";
  render->add_option("--out-dir", render_dir, "output directory");

  auto* stdz = app.add_subcommand("standardize", "warp an image to the standard intrinsics");
  std::string std_in, std_cam, std_out = "standardized.ppm", std_out_cam = "standardized_camera.json";
  stdz->add_option("--in", std_in, "input PPM/PGM")->required()->check(CLI::ExistingFile);
  stdz->add_option("--cam", std_cam, "input camera JSON")->required()->check(CLI::ExistingFile);
  stdz->add_option("--out", std_out, "output image");
  stdz->add_option("--out-cam", std_out_cam, "output camera JSON");

  auto* fit = app.add_subcommand("fit", "fit perturbed boxes back to the ground truth");
  add_common(fit, common, true);
  FitArgs fa;
  fit->add_option("--loss", fa.loss, "box loss")->check(CLI::IsMember({"l1", "ccd", "pcd", "wd"}));
  fit->add_option("--out", fa.out, "trace CSV (stdout by default)");
  fit->add_option("--svg", fa.svg, "loss curve SVG");
  fit->add_flag("--no-perturb", fa.no_perturb, "start from the ground truth");
  fit->add_option("--symmetry", fa.symmetry, "force this reparameterization index (1-47)")
      ->check(CLI::Range(0, 47));
  fit->add_option("--lr", fa.lr, "override the learning rate")->check(CLI::PositiveNumber);
  fit->add_option("--steps", fa.steps, "override the step count")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "AP report of detections against ground truth");
  add_common(eval, common, false);
  std::string dets, gts, eval_out;
  double iou = 0.0, nms_threshold = 0.0;
  bool use_nms = false;
  eval->add_option("--dets", dets, "detections JSON lines")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gts, "ground truth JSON lines")->required()->check(CLI::ExistingFile);
  eval->add_option("--iou", iou, "IoU threshold for a true positive")->check(CLI::Range(1e-9, 1.0));
  eval->add_flag("--nms", use_nms, "apply NMS to the detections first");
  eval->add_option("--nms-threshold", nms_threshold, "NMS IoU threshold")->check(CLI::Range(1e-9, 1.0));
  eval->add_option("--out", eval_out, "report CSV (stdout by default)");

  auto* heat = app.add_subcommand("pe-heatmap", "position-embedding similarity map of one view");
  add_common(heat, common, true);
  int view = 0, ref_row = -1, ref_col = -1;
  std::string heat_pgm, heat_csv;
  heat->add_option("--view", view, "camera index")->check(CLI::NonNegativeNumber);
  heat->add_option("--ref-row", ref_row, "reference feature row (centre by default)");
  heat->add_option("--ref-col", ref_col, "reference feature column (centre by default)");
  heat->add_option("--out-pgm", heat_pgm, "heatmap image");
  heat->add_option("--out", heat_csv, "heatmap CSV (stdout by default)");

  auto* agg = app.add_subcommand("aggregate-demo", "aggregate rendered features at every ground-truth box");
  add_common(agg, common, true);
  std::string agg_out;
  agg->add_option("--out", agg_out, "CSV (stdout by default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen)
      return cmd_gen_scene(common, count, gen_out);
    if (*render)
      return cmd_render(common, render_dir);
    if (*stdz)
      return cmd_standardize(std_in, std_cam, std_out, std_out_cam);
    if (*fit)
      return cmd_fit(common, fa);
    if (*eval)
      return cmd_eval(common, dets, gts, iou, use_nms, nms_threshold, eval_out);
    if (*heat)
      return cmd_pe_heatmap(common, view, ref_row, ref_col, heat_pgm, heat_csv);
    if (*agg)
      return cmd_aggregate_demo(common, agg_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
