#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mv3d/losses.hpp"

namespace mv3d {

/// P x G assignment costs (predictions x ground truths).
using CostMatrix = Eigen::MatrixXd;

/// (prediction, ground truth) pairs sorted by prediction index.
using Assignment = std::vector<std::pair<int, int>>;

struct GroundTruthBox
{
  Box9DoF box;
  int category = 0;
};

/// cost[p][g] = w.cls * focal_class_cost + w.center * squared centre distance + w.box * box loss.
auto cost_matrix(std::span<const PredictionOutput> preds, std::span<const GroundTruthBox> gts,
                 const LossWeights& w, BoxLossKind kind) -> CostMatrix;

/// Minimum-cost assignment of min(P, G) pairs. Among optimal assignments the
/// lexicographically smallest pair list is returned.
auto hungarian(const CostMatrix& cost) -> Assignment;

auto assignment_cost(const CostMatrix& cost, const Assignment& a) -> double;

struct MatchedLoss
{
  Assignment assignment;
  std::vector<LossValueGrad> per_prediction;  // gradient: 9 box params then logits
  double total = 0.0;
};

/// Hungarian matching followed by total_loss on matched pairs; unmatched
/// predictions get the background classification loss only.
auto matched_loss(std::span<const PredictionOutput> preds, std::span<const GroundTruthBox> gts,
                  const LossWeights& w, BoxLossKind kind) -> MatchedLoss;

}  // namespace mv3d
