#include "mv3d/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mv3d {

auto cost_matrix(std::span<const PredictionOutput> preds, std::span<const GroundTruthBox> gts,
                 const LossWeights& w, BoxLossKind kind) -> CostMatrix
{
  CostMatrix cost(static_cast<Eigen::Index>(preds.size()), static_cast<Eigen::Index>(gts.size()));
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double cls = focal_class_cost(preds[p].logits, gts[g].category);
      const double center = center_loss(preds[p].box.center, gts[g].box.center).value;
      const double box = box_loss(kind, preds[p].box, gts[g].box).value;
      cost(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) =
          w.cls * cls + w.center * center + w.box * box;
    }
  }
  return cost;
}

namespace {

// Shortest augmenting path with potentials; requires rows <= cols.
// Returns the column matched to each row.
std::vector<int> solve_rows_le_cols(const Eigen::MatrixXd& a)
{
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j])
          continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0)
      row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// Optimal cost of matching min(rows, cols) pairs of a rectangular matrix.
double optimal_cost(const Eigen::MatrixXd& a)
{
  if (a.rows() == 0 || a.cols() == 0)
    return 0.0;
  const bool transpose = a.rows() > a.cols();
  const Eigen::MatrixXd b = transpose ? Eigen::MatrixXd(a.transpose()) : a;
  const auto match = solve_rows_le_cols(b);
  double total = 0.0;
  for (std::size_t r = 0; r < match.size(); ++r)
    total += b(static_cast<Eigen::Index>(r), match[r]);
  return total;
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& a, const std::vector<int>& rows,
                          const std::vector<int>& cols)
{
  Eigen::MatrixXd s(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a(rows[r], cols[c]);
  return s;
}

}  // namespace

auto hungarian(const CostMatrix& cost) -> Assignment
{
  if (!cost.allFinite())
    throw std::invalid_argument("hungarian: cost matrix must be finite");
  const int P = static_cast<int>(cost.rows());
  const int G = static_cast<int>(cost.cols());
  const int pairs = std::min(P, G);
  if (pairs == 0)
    return {};

  const double best = optimal_cost(cost);
  const double tol = 1e-9 * std::max(1.0, cost.cwiseAbs().maxCoeff() * pairs);

  // Fix pairs greedily in lexicographic order, keeping each choice only if an
  // optimal completion still exists.
  Assignment out;
  std::vector<char> col_used(static_cast<std::size_t>(G), 0);
  double fixed_cost = 0.0;
  for (int p = 0; p < P && static_cast<int>(out.size()) < pairs; ++p) {
    std::vector<int> rest_rows;
    for (int r = p + 1; r < P; ++r)
      rest_rows.push_back(r);
    const int needed_after = pairs - static_cast<int>(out.size()) - 1;

    bool placed = false;
    for (int g = 0; g < G && !placed; ++g) {
      if (col_used[g])
        continue;
      std::vector<int> rest_cols;
      for (int c = 0; c < G; ++c)
        if (!col_used[c] && c != g)
          rest_cols.push_back(c);
      if (std::min(rest_rows.size(), rest_cols.size()) != static_cast<std::size_t>(needed_after))
        continue;
      const double total = fixed_cost + cost(p, g) +
                           optimal_cost(submatrix(cost, rest_rows, rest_cols));
      if (total <= best + tol) {
        out.emplace_back(p, g);
        col_used[g] = 1;
        fixed_cost += cost(p, g);
        placed = true;
      }
    }
  }
  return out;
}

auto assignment_cost(const CostMatrix& cost, const Assignment& a) -> double
{
  double total = 0.0;
  for (const auto& [p, g] : a)
    total += cost(p, g);
  return total;
}

auto matched_loss(std::span<const PredictionOutput> preds, std::span<const GroundTruthBox> gts,
                  const LossWeights& w, BoxLossKind kind) -> MatchedLoss
{
  MatchedLoss out;
  std::vector<int> match(preds.size(), -1);
  if (!gts.empty() && !preds.empty()) {
    out.assignment = hungarian(cost_matrix(preds, gts, w, kind));
    for (const auto& [p, g] : out.assignment)
      match[static_cast<std::size_t>(p)] = g;
  }
  for (std::size_t p = 0; p < preds.size(); ++p) {
    const int g = match[p];
    LossValueGrad l = g >= 0 ? total_loss(preds[p], gts[static_cast<std::size_t>(g)].box,
                                          gts[static_cast<std::size_t>(g)].category, w, kind)
                             : total_loss(preds[p], preds[p].box, std::nullopt, w, kind);
    out.total += l.value;
    out.per_prediction.push_back(std::move(l));
  }
  return out;
}

}  // namespace mv3d
