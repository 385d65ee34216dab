#include "mv3d/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mv3d {

auto parse_box_loss_kind(std::string_view name) -> BoxLossKind
{
  if (name == "l1")
    return BoxLossKind::l1;
  if (name == "ccd")
    return BoxLossKind::ccd;
  if (name == "pcd")
    return BoxLossKind::pcd;
  if (name == "wd")
    return BoxLossKind::wd;
  throw std::invalid_argument("unknown box loss '" + std::string(name) +
                              "' (expected l1, ccd, pcd or wd)");
}

auto to_string(BoxLossKind kind) -> std::string
{
  switch (kind) {
  case BoxLossKind::l1: return "l1";
  case BoxLossKind::ccd: return "ccd";
  case BoxLossKind::pcd: return "pcd";
  case BoxLossKind::wd: return "wd";
  }
  return "?";
}

auto to_param_gradient(const Box9DoF& box, const BoxGradient& g) -> BoxParams
{
  const auto dR = euler_to_rotation_jacobian(box.euler);
  BoxParams out;
  out << g.center, g.size, g.rotation.cwiseProduct(dR[0]).sum(),
      g.rotation.cwiseProduct(dR[1]).sum(), g.rotation.cwiseProduct(dR[2]).sum();
  return out;
}

auto angular_gradient(const Box9DoF& box, const BoxGradient& g) -> Vec3
{
  const Mat3 R = euler_to_rotation(box.euler);
  const Mat3 M = g.rotation * R.transpose();
  const Mat3 A = M - M.transpose();
  return {A(2, 1), A(0, 2), A(1, 0)};
}

namespace {

LossValueGrad to_value_grad(const Box9DoF& pred, const GeometricLoss& g)
{
  return {g.value, to_param_gradient(pred, g.grad)};
}

// Local half-extent offset of corner i.
Vec3 corner_offset(const Box9DoF& box, int i)
{
  return {0.5 * corner_sign(i, 0) * box.size.x(), 0.5 * corner_sign(i, 1) * box.size.y(),
          0.5 * corner_sign(i, 2) * box.size.z()};
}

// Back-propagates per-corner gradients to centre, size and rotation.
BoxGradient corner_backward(const Box9DoF& box, const std::array<Vec3, 8>& dcorner)
{
  const Mat3 R = euler_to_rotation(box.euler);
  BoxGradient g;
  for (int i = 0; i < 8; ++i) {
    g.center += dcorner[i];
    const Vec3 local_grad = R.transpose() * dcorner[i];
    for (int a = 0; a < 3; ++a)
      g.size[a] += 0.5 * corner_sign(i, a) * local_grad[a];
    g.rotation += dcorner[i] * corner_offset(box, i).transpose();
  }
  return g;
}

// d|a - b| / da, zero at coincidence.
Vec3 unit_or_zero(const Vec3& diff)
{
  const double n = diff.norm();
  return n > 0.0 ? Vec3(diff / n) : Vec3::Zero();
}

}  // namespace

auto l1_box_loss(const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad
{
  validate_box(pred);
  validate_box(gt);
  const BoxParams diff = pred.params() - gt.params();
  BoxParams grad = diff.unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
  return {diff.cwiseAbs().mean(), grad / 9.0};
}

auto corner_chamfer_geometric(const Box9DoF& pred, const Box9DoF& gt) -> GeometricLoss
{
  const CornerSet p = box_corners(pred);
  const CornerSet g = box_corners(gt);
  std::array<Vec3, 8> dcorner;
  dcorner.fill(Vec3::Zero());
  double value = 0.0;

  for (int i = 0; i < 8; ++i) {
    int best = 0;
    for (int j = 1; j < 8; ++j)
      if ((p[i] - g[j]).squaredNorm() < (p[i] - g[best]).squaredNorm())
        best = j;
    value += (p[i] - g[best]).norm() / 8.0;
    dcorner[i] += unit_or_zero(p[i] - g[best]) / 8.0;
  }
  for (int j = 0; j < 8; ++j) {
    int best = 0;
    for (int i = 1; i < 8; ++i)
      if ((g[j] - p[i]).squaredNorm() < (g[j] - p[best]).squaredNorm())
        best = i;
    value += (g[j] - p[best]).norm() / 8.0;
    dcorner[best] += unit_or_zero(p[best] - g[j]) / 8.0;
  }
  return {value, corner_backward(pred, dcorner)};
}

auto corner_chamfer_loss(const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad
{
  return to_value_grad(pred, corner_chamfer_geometric(pred, gt));
}

auto permutation_corner_geometric(const Box9DoF& pred, const Box9DoF& gt) -> GeometricLoss
{
  const CornerSet p = box_corners(pred);
  const CornerSet g = box_corners(gt);

  double best_value = std::numeric_limits<double>::infinity();
  std::array<int, 8> best_table{};
  for (const auto& P : signed_permutations()) {
    const auto table = corner_relabelling(P);
    double value = 0.0;
    for (int i = 0; i < 8; ++i)
      value += (p[i] - g[table[i]]).norm();
    value /= 8.0;
    if (value < best_value) {
      best_value = value;
      best_table = table;
    }
  }

  std::array<Vec3, 8> dcorner;
  for (int i = 0; i < 8; ++i)
    dcorner[i] = unit_or_zero(p[i] - g[best_table[i]]) / 8.0;
  return {best_value, corner_backward(pred, dcorner)};
}

auto permutation_corner_loss(const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad
{
  return to_value_grad(pred, permutation_corner_geometric(pred, gt));
}

auto wasserstein_geometric(const Box9DoF& pred, const Box9DoF& gt, double eps) -> GeometricLoss
{
  const GaussianBox gp = box_to_gaussian(pred);
  const GaussianBox gg = box_to_gaussian(gt);
  const Vec3 dmu = gp.mean - gg.mean;
  const Mat3 dsigma = gp.covariance - gg.covariance;
  const double a = dmu.norm();
  const double b = dsigma.norm();
  const double value = std::sqrt(a + b + eps);

  const double outer = 0.5 / value;
  const Mat3 R = euler_to_rotation(pred.euler);
  const Mat3 E = b > 0.0 ? Mat3(dsigma / b) : Mat3::Zero();

  BoxGradient g;
  g.center = outer * unit_or_zero(dmu);
  for (int k = 0; k < 3; ++k)
    g.size[k] = outer * R.col(k).dot(E * R.col(k));
  g.rotation = outer * 2.0 * E * R * pred.size.asDiagonal();
  return {value, g};
}

auto wasserstein_loss(const Box9DoF& pred, const Box9DoF& gt, double eps) -> LossValueGrad
{
  return to_value_grad(pred, wasserstein_geometric(pred, gt, eps));
}

auto center_loss(const Vec3& pred, const Vec3& gt) -> LossValueGrad
{
  const Vec3 d = pred - gt;
  return {d.squaredNorm(), 2.0 * d};
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x)
{
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x)
{
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double focal_positive(double x, const FocalParams& fp, double* grad)
{
  const double p = sigmoid(x);
  const double q = 1.0 - p;  // sigmoid(-x)
  const double log_p = -softplus(-x);
  if (grad)
    *grad = fp.alpha * std::pow(q, fp.gamma) * (fp.gamma * p * log_p - q);
  return -fp.alpha * std::pow(q, fp.gamma) * log_p;
}

double focal_negative(double x, const FocalParams& fp, double* grad)
{
  const double p = sigmoid(x);
  const double q = 1.0 - p;
  const double log_q = -softplus(x);
  if (grad)
    *grad = (1.0 - fp.alpha) * std::pow(p, fp.gamma) * (p - fp.gamma * q * log_q);
  return -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * log_q;
}

}  // namespace

auto focal_loss(const Eigen::VectorXd& logits, std::optional<int> target, FocalParams fp)
    -> LossValueGrad
{
  if (!logits.allFinite())
    throw std::invalid_argument("focal_loss: non-finite logits");
  if (target && (*target < 0 || *target >= logits.size()))
    throw std::invalid_argument("focal_loss: target class out of range");
  LossValueGrad out{0.0, Eigen::VectorXd::Zero(logits.size())};
  for (Eigen::Index c = 0; c < logits.size(); ++c) {
    double g = 0.0;
    out.value += (target && *target == c) ? focal_positive(logits[c], fp, &g)
                                           : focal_negative(logits[c], fp, &g);
    out.grad[c] = g;
  }
  return out;
}

auto focal_class_cost(const Eigen::VectorXd& logits, int cls, FocalParams fp) -> double
{
  if (cls < 0 || cls >= logits.size())
    throw std::invalid_argument("focal_class_cost: class out of range");
  return focal_positive(logits[cls], fp, nullptr) - focal_negative(logits[cls], fp, nullptr);
}

auto box_loss(BoxLossKind kind, const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad
{
  switch (kind) {
  case BoxLossKind::l1: return l1_box_loss(pred, gt);
  case BoxLossKind::ccd: return corner_chamfer_loss(pred, gt);
  case BoxLossKind::pcd: return permutation_corner_loss(pred, gt);
  case BoxLossKind::wd: return wasserstein_loss(pred, gt);
  }
  throw std::invalid_argument("unknown box loss kind");
}

auto box_loss_geometric(BoxLossKind kind, const Box9DoF& pred, const Box9DoF& gt) -> GeometricLoss
{
  switch (kind) {
  case BoxLossKind::ccd: return corner_chamfer_geometric(pred, gt);
  case BoxLossKind::pcd: return permutation_corner_geometric(pred, gt);
  case BoxLossKind::wd: return wasserstein_geometric(pred, gt);
  case BoxLossKind::l1: break;
  }
  throw std::invalid_argument("l1 loss is defined on raw parameters only");
}

auto total_loss(const PredictionOutput& pred, const Box9DoF& gt_box, std::optional<int> gt_class,
                const LossWeights& w, BoxLossKind kind) -> LossValueGrad
{
  const LossValueGrad cls = focal_loss(pred.logits, gt_class);
  LossValueGrad out{w.cls * cls.value, Eigen::VectorXd::Zero(9 + pred.logits.size())};
  out.grad.tail(pred.logits.size()) = w.cls * cls.grad;
  if (!gt_class)
    return out;

  const LossValueGrad center = center_loss(pred.box.center, gt_box.center);
  const LossValueGrad box = box_loss(kind, pred.box, gt_box);
  out.value += w.center * center.value + w.box * box.value;
  out.grad.head<3>() += w.center * center.grad;
  out.grad.head<9>() += w.box * box.grad;
  return out;
}

}  // namespace mv3d
