#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "mv3d/geometry.hpp"

namespace mv3d {

/// Loss value and its gradient. Box losses differentiate the 9 predicted
/// parameters in Box9DoF::params() order; focal loss differentiates the logits.
struct LossValueGrad
{
  double value = 0.0;
  Eigen::VectorXd grad;
};

struct LossWeights
{
  double cls = 1.0;
  double center = 0.8;
  double box = 1.0;
};

enum class BoxLossKind
{
  l1,
  ccd,
  pcd,
  wd,
};

/// Accepts "l1", "ccd", "pcd", "wd"; throws std::invalid_argument otherwise.
auto parse_box_loss_kind(std::string_view name) -> BoxLossKind;
auto to_string(BoxLossKind kind) -> std::string;

/// Gradient of a geometric box loss with respect to the centre, the size and
/// the full rotation matrix. Independent of the Euler chart.
struct BoxGradient
{
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Zero();
  Mat3 rotation = Mat3::Zero();
};

struct GeometricLoss
{
  double value = 0.0;
  BoxGradient grad;
};

/// Chains a BoxGradient through euler_to_rotation.
auto to_param_gradient(const Box9DoF& box, const BoxGradient& g) -> BoxParams;

/// World-frame angular gradient: d/dw L(exp([w]x) R) at w = 0.
auto angular_gradient(const Box9DoF& box, const BoxGradient& g) -> Vec3;

/// Mean absolute difference of the raw parameters.
auto l1_box_loss(const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad;

/// Symmetric mean nearest-corner distance.
auto corner_chamfer_loss(const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad;
auto corner_chamfer_geometric(const Box9DoF& pred, const Box9DoF& gt) -> GeometricLoss;

/// Minimum over the 48 corner relabellings of gt of the mean corner distance.
auto permutation_corner_loss(const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad;
auto permutation_corner_geometric(const Box9DoF& pred, const Box9DoF& gt) -> GeometricLoss;

inline constexpr double kWassersteinEps = 1e-8;

/// sqrt(|mu_gt - mu_pred| + |Sigma_gt - Sigma_pred|_F + eps) with Sigma = R diag(size) R^T.
auto wasserstein_loss(const Box9DoF& pred, const Box9DoF& gt, double eps = kWassersteinEps)
    -> LossValueGrad;
auto wasserstein_geometric(const Box9DoF& pred, const Box9DoF& gt, double eps = kWassersteinEps)
    -> GeometricLoss;

/// Squared Euclidean distance; gradient with respect to the predicted centre.
auto center_loss(const Vec3& pred, const Vec3& gt) -> LossValueGrad;

struct FocalParams
{
  double gamma = 2.0;
  double alpha = 0.25;
};

/// Sigmoid focal loss summed over classes. `target` is the positive class, or
/// nullopt for background.
auto focal_loss(const Eigen::VectorXd& logits, std::optional<int> target, FocalParams fp = {})
    -> LossValueGrad;

/// Extra focal loss from labelling class `cls` positive instead of background.
auto focal_class_cost(const Eigen::VectorXd& logits, int cls, FocalParams fp = {}) -> double;

auto box_loss(BoxLossKind kind, const Box9DoF& pred, const Box9DoF& gt) -> LossValueGrad;

/// Geometric form of ccd, pcd and wd. Throws for l1, which has no chart-free form.
auto box_loss_geometric(BoxLossKind kind, const Box9DoF& pred, const Box9DoF& gt) -> GeometricLoss;

struct PredictionOutput
{
  Box9DoF box;
  Eigen::VectorXd logits;
};

/// w.cls * focal + w.center * center + w.box * box. The gradient stacks the 9
/// box parameters followed by the logits.
auto total_loss(const PredictionOutput& pred, const Box9DoF& gt_box, std::optional<int> gt_class,
                const LossWeights& w, BoxLossKind kind) -> LossValueGrad;

}  // namespace mv3d
