#include "mv3d/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <thread>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

namespace mv3d {

void RunConfig::validate() const
{
  auto require = [](bool ok, const char* what) {
    if (!ok)
      throw std::invalid_argument(std::string("invalid config: ") + what);
  };
  require(embed_dims >= 1, "embed_dims must be positive");
  require(max_depth > 0.0, "max_depth must be positive");
  require(depth_bins >= 1, "depth_bins must be positive");
  require(fixed_keypoints == 7, "fixed_keypoints is the box centre plus six face centres (7)");
  require(learnable_keypoints >= 0, "learnable_keypoints must be nonnegative");
  require(anchors_per_view >= 1, "anchors_per_view must be positive");
  require(loss_weights.cls >= 0.0 && loss_weights.center >= 0.0 && loss_weights.box >= 0.0,
          "loss weights must be nonnegative");
  require(nms_threshold > 0.0 && nms_threshold <= 1.0, "nms_threshold must lie in (0, 1]");
  require(ap_threshold > 0.0 && ap_threshold <= 1.0, "ap_threshold must lie in (0, 1]");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(steps >= 1, "steps must be positive");
  require(grad_clip >= 0.0, "grad_clip must be nonnegative");
  require(trace_every >= 1, "trace_every must be positive");
  require(size_thresholds.small_max > 0.0 && size_thresholds.small_max < size_thresholds.medium_max,
          "size thresholds must satisfy 0 < small_max < medium_max");
  require(image_width >= 1 && image_height >= 1, "image size must be positive");
  require(feature_stride >= 1 && image_width % feature_stride == 0 &&
              image_height % feature_stride == 0,
          "feature_stride must divide the image size");
  require(min_boxes >= 1 && min_boxes <= max_boxes, "need 1 <= min_boxes <= max_boxes");
  require(min_cameras >= 1 && min_cameras <= max_cameras, "need 1 <= min_cameras <= max_cameras");
  require(num_categories >= 1, "num_categories must be positive");
  require(room_x > 2.0 && room_y > 2.0 && room_z > 1.0, "room is too small");
  require(center_jitter >= 0.0 && angle_jitter >= 0.0, "jitter must be nonnegative");
  require(size_jitter >= 0.0 && size_jitter < 1.0, "size_jitter must lie in [0, 1)");
  require(symmetry_probability >= 0.0 && symmetry_probability <= 1.0,
          "symmetry_probability must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const RunConfig& c)
{
  j = nlohmann::json{
      {"embed_dims", c.embed_dims},
      {"max_depth", c.max_depth},
      {"depth_bins", c.depth_bins},
      {"fixed_keypoints", c.fixed_keypoints},
      {"learnable_keypoints", c.learnable_keypoints},
      {"anchors_per_view", c.anchors_per_view},
      {"lambda_cls", c.loss_weights.cls},
      {"lambda_center", c.loss_weights.center},
      {"lambda_box", c.loss_weights.box},
      {"nms_threshold", c.nms_threshold},
      {"ap_threshold", c.ap_threshold},
      {"learning_rate", c.learning_rate},
      {"steps", c.steps},
      {"grad_clip", c.grad_clip},
      {"trace_every", c.trace_every},
      {"seed", c.seed},
      {"size_small_max", c.size_thresholds.small_max},
      {"size_medium_max", c.size_thresholds.medium_max},
      {"image_width", c.image_width},
      {"image_height", c.image_height},
      {"feature_stride", c.feature_stride},
      {"min_boxes", c.min_boxes},
      {"max_boxes", c.max_boxes},
      {"min_cameras", c.min_cameras},
      {"max_cameras", c.max_cameras},
      {"num_categories", c.num_categories},
      {"room_x", c.room_x},
      {"room_y", c.room_y},
      {"room_z", c.room_z},
      {"center_jitter", c.center_jitter},
      {"size_jitter", c.size_jitter},
      {"angle_jitter", c.angle_jitter},
      {"symmetry_probability", c.symmetry_probability},
  };
}

void from_json(const nlohmann::json& j, RunConfig& c)
{
  const RunConfig d;
  const nlohmann::json defaults = d;
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key))
      throw std::invalid_argument("unknown config field '" + key + "'");
  c.embed_dims = j.value("embed_dims", d.embed_dims);
  c.max_depth = j.value("max_depth", d.max_depth);
  c.depth_bins = j.value("depth_bins", d.depth_bins);
  c.fixed_keypoints = j.value("fixed_keypoints", d.fixed_keypoints);
  c.learnable_keypoints = j.value("learnable_keypoints", d.learnable_keypoints);
  c.anchors_per_view = j.value("anchors_per_view", d.anchors_per_view);
  c.loss_weights.cls = j.value("lambda_cls", d.loss_weights.cls);
  c.loss_weights.center = j.value("lambda_center", d.loss_weights.center);
  c.loss_weights.box = j.value("lambda_box", d.loss_weights.box);
  c.nms_threshold = j.value("nms_threshold", d.nms_threshold);
  c.ap_threshold = j.value("ap_threshold", d.ap_threshold);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.steps = j.value("steps", d.steps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.trace_every = j.value("trace_every", d.trace_every);
  c.seed = j.value("seed", d.seed);
  c.size_thresholds.small_max = j.value("size_small_max", d.size_thresholds.small_max);
  c.size_thresholds.medium_max = j.value("size_medium_max", d.size_thresholds.medium_max);
  c.image_width = j.value("image_width", d.image_width);
  c.image_height = j.value("image_height", d.image_height);
  c.feature_stride = j.value("feature_stride", d.feature_stride);
  c.min_boxes = j.value("min_boxes", d.min_boxes);
  c.max_boxes = j.value("max_boxes", d.max_boxes);
  c.min_cameras = j.value("min_cameras", d.min_cameras);
  c.max_cameras = j.value("max_cameras", d.max_cameras);
  c.num_categories = j.value("num_categories", d.num_categories);
  c.room_x = j.value("room_x", d.room_x);
  c.room_y = j.value("room_y", d.room_y);
  c.room_z = j.value("room_z", d.room_z);
  c.center_jitter = j.value("center_jitter", d.center_jitter);
  c.size_jitter = j.value("size_jitter", d.size_jitter);
  c.angle_jitter = j.value("angle_jitter", d.angle_jitter);
  c.symmetry_probability = j.value("symmetry_probability", d.symmetry_probability);
}

auto load_config(const std::string& path) -> RunConfig
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open config " + path);
  RunConfig c = nlohmann::json::parse(in).get<RunConfig>();
  c.validate();
  return c;
}

auto derive_seed(std::uint64_t root, std::uint64_t index) -> std::uint64_t
{
  // splitmix64 finaliser over the combined key
  std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Scenes

auto gen_scene(const RunConfig& config, std::uint64_t seed) -> SceneSample
{
  config.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  SceneSample scene;
  scene.scene_id = "scene_" + std::to_string(seed);
  scene.seed = seed;

  const int num_cams = uniform_int(config.min_cameras, config.max_cameras);
  const double ring = 0.45 * std::min(config.room_x, config.room_y);
  const double phase = uniform(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < num_cams; ++i) {
    const double angle = phase + 2.0 * std::numbers::pi * i / num_cams + uniform(-0.2, 0.2);
    const Vec3 eye(ring * std::cos(angle), ring * std::sin(angle), uniform(1.2, 0.7 * config.room_z));
    const Vec3 target(uniform(-0.5, 0.5), uniform(-0.5, 0.5), uniform(0.5, 1.0));
    scene.cameras.emplace_back(kStandardIntrinsics, look_at(eye, target), config.image_width,
                               config.image_height);
  }

  const int num_boxes = uniform_int(config.min_boxes, config.max_boxes);
  const double reach_x = 0.5 * config.room_x - 1.2;
  const double reach_y = 0.5 * config.room_y - 1.2;
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts && static_cast<int>(scene.objects.size()) < num_boxes;
       ++attempt) {
    Box9DoF box;
    box.size = Vec3(uniform(0.3, 1.5), uniform(0.3, 1.5), uniform(0.3, 1.5));
    box.euler = Vec3(uniform(-0.3, 0.3), uniform(-0.3, 0.3), uniform(-std::numbers::pi, std::numbers::pi));
    box.center = Vec3(uniform(-reach_x, reach_x), uniform(-reach_y, reach_y),
                      uniform(0.5 * box.size.z(), config.room_z - 0.5 * box.size.z()));
    const int category = uniform_int(0, config.num_categories - 1);

    const bool visible = std::any_of(scene.cameras.begin(), scene.cameras.end(), [&](const auto& cam) {
      return in_frustum(cam, box.center, config.max_depth);
    });
    const double radius = 0.5 * box.size.norm();
    const bool clear_of_cameras =
        std::none_of(scene.cameras.begin(), scene.cameras.end(), [&](const auto& cam) {
          return (cam.position() - box.center).norm() < radius + 0.5;
        });
    const bool disjoint = std::none_of(scene.objects.begin(), scene.objects.end(), [&](const auto& o) {
      return box_iou_checked(o.box, box).intersection > 0.0;
    });
    if (visible && clear_of_cameras && disjoint)
      scene.objects.push_back({box, category});
  }
  if (scene.objects.empty())
    throw std::runtime_error("gen_scene: could not place any box; check the room layout");
  return scene;
}

auto scene_to_json(const SceneSample& scene) -> nlohmann::json
{
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : scene.cameras)
    cams.push_back(c);
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    auto b = box_to_json(o.box);
    b["category"] = o.category;
    boxes.push_back(std::move(b));
  }
  return {{"scene_id", scene.scene_id},
          {"seed", scene.seed},
          {"subset", "synthetic"},
          {"cameras", cams},
          {"boxes", boxes}};
}

auto scene_from_json(const nlohmann::json& j) -> SceneSample
{
  SceneSample s;
  s.scene_id = j.at("scene_id").get<std::string>();
  s.seed = j.value("seed", std::uint64_t{0});
  for (const auto& c : j.at("cameras"))
    s.cameras.push_back(camera_from_json(c));
  for (const auto& b : j.at("boxes"))
    s.objects.push_back({box_from_json(b), b.at("category").get<int>()});
  return s;
}

auto scene_ground_truth(const SceneSample& scene, const SizeThresholds& t) -> SceneGroundTruth
{
  SceneGroundTruth g{scene.scene_id, "synthetic", {}};
  for (const auto& o : scene.objects)
    g.objects.push_back({o.box, o.category, "synthetic", classify_size(o.box.volume(), t)});
  return g;
}

// ---------------------------------------------------------------------------
// Oracle rendering

double ray_box_hit(const Box9DoF& box, const Vec3& origin, const Vec3& dir)
{
  const Mat3 R = euler_to_rotation(box.euler);
  const Vec3 o = R.transpose() * (origin - box.center);
  const Vec3 d = R.transpose() * dir;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double h = 0.5 * box.size[a];
    if (std::abs(d[a]) < 1e-15) {
      if (std::abs(o[a]) > h)
        return -1.0;
      continue;
    }
    double t0 = (-h - o[a]) / d[a];
    double t1 = (h - o[a]) / d[a];
    if (t0 > t1)
      std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_far < std::max(t_near, 0.0))
    return -1.0;
  return std::max(t_near, 0.0);
}

auto instance_signatures(const SceneSample& scene, int channels) -> std::vector<Eigen::VectorXd>
{
  std::mt19937_64 rng(derive_seed(scene.seed, 0x51637));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> sigs;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    Eigen::VectorXd s(channels);
    for (int c = 0; c < channels; ++c)
      s[c] = normal(rng);
    sigs.push_back(s.normalized());
  }
  return sigs;
}

auto render_feature_maps(const SceneSample& scene, const RunConfig& config)
    -> std::vector<RenderedView>
{
  const auto sigs = instance_signatures(scene, config.embed_dims);
  std::vector<RenderedView> views;
  for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
    const CameraModel& cam = scene.cameras[v];
    const int rows = cam.height() / config.feature_stride;
    const int cols = cam.width() / config.feature_stride;
    RenderedView out{FeatureMap(static_cast<int>(v), config.feature_stride, rows, cols, config.embed_dims),
                     FeatureMap(static_cast<int>(v), config.feature_stride, rows, cols, 1),
                     std::vector<int>(static_cast<std::size_t>(rows) * cols, -1)};
    const auto& k = cam.intrinsics();
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double u = cell_center_pixel(c, cols, cam.width());
        const double px_v = cell_center_pixel(r, rows, cam.height());
        const Vec3 dir = cam.rotation() * Vec3((u - k.center_u) / k.focal_u, (px_v - k.center_v) / k.focal_v, 1.0);
        int nearest = -1;
        double nearest_t = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < scene.objects.size(); ++i) {
          const double t = ray_box_hit(scene.objects[i].box, cam.position(), dir);
          if (t >= 0.0 && t < nearest_t) {
            nearest_t = t;
            nearest = static_cast<int>(i);
          }
        }
        if (nearest < 0)
          continue;
        out.instance_id[static_cast<std::size_t>(out.features.index(r, c))] = nearest;
        out.features.cell(r, c) = sigs[static_cast<std::size_t>(nearest)].transpose();
        out.depth.cell(r, c)(0) = cam.to_camera(scene.objects[static_cast<std::size_t>(nearest)].box.center).z();
      }
    }
    views.push_back(std::move(out));
  }
  return views;
}

// ---------------------------------------------------------------------------
// Box fitting

auto perturb_box(const Box9DoF& gt, const RunConfig& config, std::uint64_t seed, int forced_symmetry)
    -> Box9DoF
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Box9DoF b = gt;
  for (int a = 0; a < 3; ++a)
    b.center[a] += config.center_jitter * normal(rng);
  for (int a = 0; a < 3; ++a)
    b.size[a] *= 1.0 + config.size_jitter * (2.0 * unit(rng) - 1.0);
  for (int a = 0; a < 3; ++a)
    b.euler[a] += config.angle_jitter * normal(rng);

  const auto& perms = signed_permutations();
  int symmetry = 0;
  const bool draw = unit(rng) < config.symmetry_probability;
  const int drawn = 1 + static_cast<int>(unit(rng) * (static_cast<double>(perms.size()) - 1.0));
  if (forced_symmetry >= 0)
    symmetry = forced_symmetry;
  else if (draw)
    symmetry = std::min(drawn, static_cast<int>(perms.size()) - 1);
  if (symmetry > 0)
    b = reparameterize(b, perms[static_cast<std::size_t>(symmetry)]);
  return b;
}

namespace {

constexpr double kMinFitSize = 1e-3;

double clip_scale(double norm, double clip)
{
  return clip > 0.0 && norm > clip ? clip / norm : 1.0;
}

double quantize(double x)
{
  constexpr double kGrid = 4294967296.0;  // 2^32
  return std::nearbyint(x * kGrid) / kGrid;
}

// The labelling of the physical box whose rotation is closest to the
// identity, snapped to a 2^-32 grid. Equivalent labellings of one box map to
// the same bits, so fits with symmetric losses do not depend on how the
// initial box happened to be labelled.
struct Labelled
{
  Box9DoF box;
  SignedPermutation applied;
};

auto canonical_labelling(const Box9DoF& box) -> Labelled
{
  const auto& perms = signed_permutations();
  const Mat3 R = euler_to_rotation(box.euler);
  std::size_t best = 0;
  double best_trace = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < perms.size(); ++k) {
    if (perms[k].cast<double>().determinant() < 0.0)
      continue;
    const double tr = (R * perms[k].cast<double>()).trace();
    if (tr > best_trace + 1e-9) {
      best_trace = tr;
      best = k;
    }
  }
  Box9DoF out = reparameterize(box, perms[best]);
  for (int a = 0; a < 3; ++a) {
    out.center[a] = quantize(out.center[a]);
    out.size[a] = quantize(out.size[a]);
    out.euler[a] = quantize(out.euler[a]);
  }
  return {out, perms[best]};
}

}  // namespace

auto fit_box(const Box9DoF& init, const Box9DoF& gt, BoxLossKind kind, const RunConfig& config)
    -> FitTrace
{
  FitTrace trace{gt, init, {}};
  trace.steps.reserve(static_cast<std::size_t>(config.steps / config.trace_every + 2));
  const double lr = config.learning_rate;

  if (kind == BoxLossKind::l1) {
    Box9DoF box = init;
    for (int s = 0; s < config.steps; ++s) {
      const LossValueGrad l = l1_box_loss(box, gt);
      const double norm = l.grad.norm();
      if (s + 1 == config.steps || s % config.trace_every == 0)
        trace.steps.push_back({s, l.value, box, norm});
      box = Box9DoF::from_params(box.params() - lr * clip_scale(norm, config.grad_clip) * l.grad.head<9>());
      box.size = box.size.cwiseMax(kMinFitSize);
    }
    return trace;
  }

  // Geometric losses only see the physical boxes, so both are fitted in their
  // canonical labelling and reported in the labelling of `init`.
  const Labelled start = canonical_labelling(init);
  const Box9DoF target = canonical_labelling(gt).box;
  const SignedPermutation back = start.applied.transpose();
  Box9DoF box = start.box;
  for (int s = 0; s < config.steps; ++s) {
    const GeometricLoss l = box_loss_geometric(kind, box, target);
    const Vec3 omega = angular_gradient(box, l.grad);
    Eigen::Matrix<double, 9, 1> g;
    g << l.grad.center, l.grad.size, omega;
    const double norm = g.norm();
    if (s + 1 == config.steps || s % config.trace_every == 0)
      trace.steps.push_back({s, l.value, reparameterize(box, back), norm});
    const double rate = lr * clip_scale(norm, config.grad_clip);
    box.center -= rate * l.grad.center;
    box.size = (box.size - rate * l.grad.size).cwiseMax(kMinFitSize);
    const double angle = rate * omega.norm();
    if (angle > 0.0) {
      const Mat3 step = Eigen::AngleAxisd(-angle, omega.normalized()).toRotationMatrix();
      box.euler = rotation_to_euler(step * euler_to_rotation(box.euler));
    }
  }
  return trace;
}

auto fit_boxes(const SceneSample& scene, BoxLossKind kind, const RunConfig& config,
               const FitOptions& options) -> std::vector<FitTrace>
{
  config.validate();
  const std::size_t n = scene.objects.size();
  std::vector<FitTrace> traces(n);
  const std::uint64_t root = derive_seed(config.seed, scene.seed);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const Box9DoF& gt = scene.objects[i].box;
      const Box9DoF init =
          options.perturb ? perturb_box(gt, config, derive_seed(root, i), options.forced_symmetry) : gt;
      traces[i] = fit_box(init, gt, kind, config);
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(n, std::max(1U, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w)
    pool.emplace_back(worker);
  worker();
  for (auto& t : pool)
    t.join();
  return traces;
}

void write_trace_csv(std::ostream& out, const std::vector<FitTrace>& traces)
{
  out << "instance,step,loss,grad_norm,cx,cy,cz,w,l,h,roll,pitch,yaw\n";
  char buf[512];
  for (std::size_t i = 0; i < traces.size(); ++i) {
    for (const auto& st : traces[i].steps) {
      const BoxParams p = st.box.params();
      std::snprintf(buf, sizeof(buf),
                    "%zu,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, st.step,
                    st.loss, st.grad_norm, p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]);
      out << buf;
    }
  }
}

void write_svg_chart(std::ostream& out, const std::vector<std::vector<double>>& series,
                     const std::vector<std::string>& labels, const std::string& title)
{
  constexpr double W = 640, H = 360, L = 60, R = 20, T = 40, B = 40;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  double ymax = 0.0;
  std::size_t xmax = 1;
  for (const auto& s : series) {
    for (double v : s)
      if (std::isfinite(v))
        ymax = std::max(ymax, v);
    xmax = std::max(xmax, s.size() > 1 ? s.size() - 1 : 1);
  }
  if (ymax <= 0.0)
    ymax = 1.0;
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf), "<text x=\"%g\" y=\"24\" font-size=\"14\">%s</text>\n", L,
                title.c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                L, H - B, W - R, H - B, L, T, L, H - B);
  out << buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"4\" y=\"%g\" font-size=\"10\">%.3g</text>\n", T + 4, ymax);
  out << buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"%g\" y=\"%g\" font-size=\"10\">%zu</text>\n", W - R - 20,
                H - B + 14, xmax);
  out << buf;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < series[k].size(); ++i) {
      const double v = std::isfinite(series[k][i]) ? series[k][i] : ymax;
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", L + (W - L - R) * i / xmax,
                    H - B - (H - T - B) * std::clamp(v / ymax, 0.0, 1.0));
      out << buf;
    }
    out << "\"/>\n";
    if (k < labels.size()) {
      std::snprintf(buf, sizeof(buf),
                    "<text x=\"%g\" y=\"%g\" font-size=\"11\" fill=\"%s\">%s</text>\n", W - R - 120,
                    T + 14.0 * (k + 1), color, labels[k].c_str());
      out << buf;
    }
  }
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Position-embedding correlation

auto spearman(const std::vector<double>& x, const std::vector<double>& y) -> double
{
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("spearman: need two equally sized samples of length >= 2");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]])
        ++j;
      const double avg = 0.5 * static_cast<double>(i + j);
      for (std::size_t k = i; k <= j; ++k)
        r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

auto pe_heatmap(const SceneSample& scene, int view, const RunConfig& config, int ref_row,
                int ref_col) -> HeatmapResult
{
  if (view < 0 || view >= static_cast<int>(scene.cameras.size()))
    throw std::out_of_range("pe_heatmap: no such view");
  const auto rendered = render_feature_maps(scene, config);
  const auto& rv = rendered[static_cast<std::size_t>(view)];
  const CameraModel& cam = scene.cameras[static_cast<std::size_t>(view)];

  const auto params = SpatialEnhancerParams::random(config.embed_dims, 1, config.embed_dims,
                                                    config.depth_bins, derive_seed(config.seed, 0xe3b));
  const EnhancedView ev = enhance_view(rv.features, rv.depth, cam, params, config.max_depth, config.depth_bins);

  HeatmapResult res;
  res.ref_row = ref_row >= 0 ? ref_row : rv.features.rows / 2;
  res.ref_col = ref_col >= 0 ? ref_col : rv.features.cols / 2;
  res.similarity = ipe_correlation_map(ev.ipe, res.ref_row, res.ref_col);

  const auto& k = cam.intrinsics();
  auto ray = [&](int r, int c) {
    const double u = cell_center_pixel(c, rv.features.cols, cam.width());
    const double v = cell_center_pixel(r, rv.features.rows, cam.height());
    return Vec3(cam.rotation() * Vec3((u - k.center_u) / k.focal_u, (v - k.center_v) / k.focal_v, 1.0))
        .normalized();
  };
  const Vec3 ref_ray = ray(res.ref_row, res.ref_col);
  std::vector<double> sims, dists;
  for (int r = 0; r < rv.features.rows; ++r)
    for (int c = 0; c < rv.features.cols; ++c) {
      if (r == res.ref_row && c == res.ref_col)
        continue;
      sims.push_back(res.similarity(r, c));
      dists.push_back((ray(r, c) - ref_ray).norm());
    }
  res.spearman = spearman(sims, dists);
  return res;
}

void write_heatmap_pgm(const std::string& path, const Eigen::MatrixXd& sim)
{
  Raster img(static_cast<int>(sim.cols()), static_cast<int>(sim.rows()), 1);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      img.at(c, r) = static_cast<float>(127.5 * (sim(r, c) + 1.0));
  write_pnm(path, img);
}

void write_heatmap_csv(std::ostream& out, const Eigen::MatrixXd& sim)
{
  out << "row,col,similarity\n";
  char buf[96];
  for (Eigen::Index r = 0; r < sim.rows(); ++r)
    for (Eigen::Index c = 0; c < sim.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%td,%td,%.9f\n", r, c, sim(r, c));
      out << buf;
    }
}

// ---------------------------------------------------------------------------

auto signature_recovery(const SceneSample& scene, const RunConfig& config)
    -> std::vector<RecoveryEntry>
{
  const auto rendered = render_feature_maps(scene, config);
  std::vector<FeatureMap> maps;
  for (const auto& v : rendered)
    maps.push_back(v.features);
  const auto sigs = instance_signatures(scene, config.embed_dims);
  // Small learnable offsets keep every key point inside the anchor box. The
  // weight net sees raw intrinsics in the hundreds, so it is scaled down to
  // keep the softmax from collapsing onto a single sample.
  auto params = AggregationParams::random(config.embed_dims, config.learnable_keypoints,
                                          static_cast<int>(scene.cameras.size()),
                                          derive_seed(config.seed, 0xa66), 0.4);
  params.weight_net = LinearParams::random("weight_net", params.weight_net.in(), params.weight_net.out(),
                                           derive_seed(config.seed, 0xa68), 1e-2);
  params.max_depth = config.max_depth;

  std::mt19937_64 rng(derive_seed(scene.seed, 0xa67));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<RecoveryEntry> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    Eigen::VectorXd feature(config.embed_dims);
    for (auto& x : feature)
      x = normal(rng);
    const Query q{feature.normalized(), scene.objects[i].box};
    const AggregationResult r = aggregate_query(q, maps, scene.cameras, params);
    RecoveryEntry e{static_cast<int>(i), -1, 0.0, -std::numeric_limits<double>::infinity(), r};
    const double norm = r.feature.norm();
    if (norm > 0.0) {
      for (std::size_t s = 0; s < sigs.size(); ++s) {
        const double cos = r.feature.dot(sigs[s]) / norm;
        if (s == i)
          e.own_cosine = cos;
        if (cos > e.best_cosine) {
          e.best_cosine = cos;
          e.best_match = static_cast<int>(s);
        }
      }
    } else {
      e.best_cosine = 0.0;
    }
    out.push_back(e);
  }
  return out;
}

auto run_eval(const std::string& dets_path, const std::string& gts_path, const RunConfig& config,
              bool apply_nms) -> MetricsReport
{
  auto dets = load_detections(dets_path);
  const auto gts = load_ground_truth(gts_path, config.size_thresholds);
  if (apply_nms)
    for (auto& scene : dets)
      scene.detections = nms(scene.detections, config.nms_threshold);
  return metrics_report(dets, gts, config.ap_threshold, config.size_thresholds);
}

}  // namespace mv3d
