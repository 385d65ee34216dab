#pragma once
// Independent reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mv3d/geometry.hpp"

namespace mv3d::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi)
{
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Box9DoF random_box(std::mt19937_64& rng, double center_range = 1.0, double min_size = 0.2,
                          double max_size = 2.0)
{
  Box9DoF b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = uniform(rng, -center_range, center_range);
    b.size[a] = uniform(rng, min_size, max_size);
  }
  b.euler = Vec3(uniform(rng, -3.0, 3.0), uniform(rng, -1.4, 1.4), uniform(rng, -3.0, 3.0));
  return b;
}

// Rotation composed from elementary axis rotations, yaw applied last.
inline Mat3 reference_rotation(const Vec3& euler)
{
  auto rx = [](double a) {
    Mat3 m;
    m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return m;
  };
  auto ry = [](double a) {
    Mat3 m;
    m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return m;
  };
  auto rz = [](double a) {
    Mat3 m;
    m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return m;
  };
  return rz(euler[2]) * ry(euler[1]) * rx(euler[0]);
}

inline bool inside(const Box9DoF& b, const Vec3& p)
{
  const Vec3 local = reference_rotation(b.euler).transpose() * (p - b.center);
  return std::abs(local.x()) <= 0.5 * b.size.x() && std::abs(local.y()) <= 0.5 * b.size.y() &&
         std::abs(local.z()) <= 0.5 * b.size.z();
}

// Uniform samples inside `a`, counted when they also fall inside `b`.
inline double monte_carlo_iou(const Box9DoF& a, const Box9DoF& b, int samples, std::mt19937_64& rng)
{
  const Mat3 R = reference_rotation(a.euler);
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec3 local(uniform(rng, -0.5, 0.5) * a.size.x(), uniform(rng, -0.5, 0.5) * a.size.y(),
                     uniform(rng, -0.5, 0.5) * a.size.z());
    hits += inside(b, a.center + R * local);
  }
  const double va = a.size.prod(), vb = b.size.prod();
  const double inter = va * hits / samples;
  return inter / (va + vb - inter);
}

// Minimum over all injective row -> column maps (or column -> row when rows > cols).
inline double brute_force_assignment(const Eigen::MatrixXd& c)
{
  const bool flip = c.rows() > c.cols();
  const Eigen::MatrixXd m = flip ? Eigen::MatrixXd(c.transpose()) : c;
  const int rows = static_cast<int>(m.rows()), cols = static_cast<int>(m.cols());
  if (rows == 0)
    return 0.0;
  std::vector<int> perm(static_cast<std::size_t>(cols));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int r = 0; r < rows; ++r)
      total += m(r, perm[static_cast<std::size_t>(r)]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// All-point interpolated AP from precision/recall pairs, integrating the
// upper envelope of the precision curve.
inline double reference_ap(const std::vector<bool>& ranked_tp, int num_gt)
{
  if (num_gt <= 0 || ranked_tp.empty())
    return 0.0;
  std::vector<double> prec, rec;
  int tp = 0;
  for (std::size_t i = 0; i < ranked_tp.size(); ++i) {
    tp += ranked_tp[i];
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / num_gt);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    const double envelope = *std::max_element(prec.begin() + static_cast<long>(i), prec.end());
    ap += (rec[i] - prev_recall) * envelope;
    prev_recall = rec[i];
  }
  return ap;
}

// Central differences of a scalar function of the 9 box parameters.
template <class F>
BoxParams finite_difference(F&& f, const BoxParams& x, double h = 1e-5)
{
  BoxParams g;
  for (int k = 0; k < 9; ++k) {
    BoxParams a = x, b = x;
    a[k] += h;
    b[k] -= h;
    g[k] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// Pairs whose active corner match or permutation changes within this margin
// are treated as ties. A central-difference step h moves a corner by roughly
// h times the box extent, so the margin has to sit well above h = 1e-5.
inline constexpr double kTieMargin = 1e-4;

inline bool gradient_close(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double rel = 1e-4)
{
  return (analytic - numeric).cwiseAbs().maxCoeff() <= rel * std::max(1.0, numeric.cwiseAbs().maxCoeff());
}

inline std::array<Vec3, 8> reference_corners(const Box9DoF& b)
{
  const Mat3 R = reference_rotation(b.euler);
  std::array<Vec3, 8> c;
  for (int i = 0; i < 8; ++i) {
    const Vec3 sign((i & 1) ? 1 : -1, (i & 2) ? 1 : -1, (i & 4) ? 1 : -1);
    c[static_cast<std::size_t>(i)] = b.center + R * (0.5 * sign.cwiseProduct(b.size));
  }
  return c;
}

// Mean corner distance under each of the 48 signed-permutation relabellings
// of the ground-truth corners, sorted ascending.
inline std::vector<double> permutation_corner_values(const Box9DoF& pred, const Box9DoF& gt)
{
  const auto p = reference_corners(pred);
  const auto g = reference_corners(gt);
  std::vector<double> values;
  std::array<int, 3> axes{0, 1, 2};
  do {
    for (int signs = 0; signs < 8; ++signs) {
      double total = 0.0;
      for (int i = 0; i < 8; ++i) {
        // sign vector of corner i, permuted and flipped
        int j = 0;
        for (int col = 0; col < 3; ++col) {
          const int s = ((i >> col) & 1) ? 1 : -1;
          const int flip = ((signs >> col) & 1) ? -1 : 1;
          if (s * flip > 0)
            j |= 1 << axes[static_cast<std::size_t>(col)];
        }
        total += (p[static_cast<std::size_t>(i)] - g[static_cast<std::size_t>(j)]).norm();
      }
      values.push_back(total / 8.0);
    }
  } while (std::next_permutation(axes.begin(), axes.end()));
  std::sort(values.begin(), values.end());
  return values;
}

// Symmetric chamfer distance between corner sets and the smallest gap between
// a nearest and a second-nearest corner (a tie indicator).
inline std::pair<double, double> chamfer_value_and_margin(const Box9DoF& pred, const Box9DoF& gt)
{
  const auto p = reference_corners(pred);
  const auto g = reference_corners(gt);
  double value = 0.0, margin = std::numeric_limits<double>::infinity();
  auto one_way = [&](const std::array<Vec3, 8>& from, const std::array<Vec3, 8>& to) {
    for (const auto& a : from) {
      std::array<double, 8> d;
      for (std::size_t j = 0; j < 8; ++j)
        d[j] = (a - to[j]).norm();
      std::sort(d.begin(), d.end());
      value += d[0] / 8.0;
      margin = std::min(margin, d[1] - d[0]);
    }
  };
  one_way(p, g);
  one_way(g, p);
  return {value, margin};
}

// Hausdorff-style distance between two unordered corner sets.
inline double corner_set_distance(const CornerSet& a, const CornerSet& b)
{
  double worst = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b)
      best = std::min(best, (p - q).norm());
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace mv3d::testing
