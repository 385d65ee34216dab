#include <doctest.h>

#include <numbers>
#include <random>

#include "mv3d/losses.hpp"
#include "support.hpp"

using namespace mv3d;
using testing::finite_difference;
using testing::gradient_close;
using testing::random_box;

namespace {

double value_at(BoxLossKind kind, const BoxParams& x, const Box9DoF& gt)
{
  return box_loss(kind, Box9DoF::from_params(x), gt).value;
}

Box9DoF nearby(const Box9DoF& gt, std::mt19937_64& rng, double scale)
{
  Box9DoF b = gt;
  for (int a = 0; a < 3; ++a) {
    b.center[a] += testing::uniform(rng, -scale, scale);
    b.size[a] *= 1.0 + testing::uniform(rng, -0.3, 0.3);
    b.euler[a] += testing::uniform(rng, -scale, scale);
  }
  return b;
}

}  // namespace

TEST_SUITE("losses")
{
  TEST_CASE("loss kind names")
  {
    CHECK(parse_box_loss_kind("wd") == BoxLossKind::wd);
    CHECK(parse_box_loss_kind("pcd") == BoxLossKind::pcd);
    CHECK(to_string(BoxLossKind::ccd) == "ccd");
    CHECK_THROWS_AS(parse_box_loss_kind("giou"), std::invalid_argument);
  }

  TEST_CASE("all box losses vanish at the ground truth")
  {
    std::mt19937_64 rng(1);
    const Box9DoF b = random_box(rng);
    CHECK(l1_box_loss(b, b).value == 0.0);
    CHECK(corner_chamfer_loss(b, b).value < 1e-12);
    CHECK(permutation_corner_loss(b, b).value < 1e-12);
    CHECK(wasserstein_loss(b, b).value == doctest::Approx(1e-4));
    CHECK(wasserstein_loss(b, b).grad.norm() == 0.0);
  }

  TEST_CASE("L1 by hand")
  {
    Box9DoF a, b;
    b.center.x() = 0.9;
    b.euler.z() = -0.9;
    const auto l = l1_box_loss(a, b);
    CHECK(l.value == doctest::Approx(0.2));
    CHECK(l.grad[0] == doctest::Approx(-1.0 / 9.0));
    CHECK(l.grad[8] == doctest::Approx(1.0 / 9.0));
    CHECK(l.grad[4] == 0.0);
  }

  TEST_CASE("permutation corner loss of a translated box is the translation length")
  {
    std::mt19937_64 rng(2);
    Box9DoF b = random_box(rng);
    Box9DoF t = b;
    t.center += Vec3(0.3, -0.4, 1.2);
    CHECK(permutation_corner_loss(t, b).value == doctest::Approx(1.3));
  }

  TEST_CASE("quarter turn with swapped sides costs nothing for symmetric losses")
  {
    const Box9DoF a{Vec3(0.2, 0.1, 0.5), Vec3(1.0, 2.0, 0.5), Vec3(0, 0, 0.3)};
    const Box9DoF b{a.center, Vec3(2.0, 1.0, 0.5), Vec3(0, 0, 0.3 + std::numbers::pi / 2)};
    CHECK(permutation_corner_loss(b, a).value < 1e-9);
    CHECK(wasserstein_loss(b, a).value < 1e-4 + 1e-6);
    CHECK(corner_chamfer_loss(b, a).value < 1e-9);
    CHECK(l1_box_loss(b, a).value > 0.05);
  }

  TEST_CASE("Wasserstein loss with equal shapes four metres apart")
  {
    std::mt19937_64 rng(3);
    const Box9DoF b = random_box(rng);
    Box9DoF c = b;
    c.center += Vec3(0, 4, 0);
    CHECK(wasserstein_loss(c, b).value == doctest::Approx(2.0).epsilon(1e-8));
  }

  TEST_CASE("Wasserstein loss by hand for axis-aligned boxes")
  {
    Box9DoF a, b;
    a.size = Vec3(1, 2, 3);
    b.size = Vec3(2, 2, 1);
    b.center = Vec3(3, 0, 4);
    // |dmu| = 5, |dSigma|_F = sqrt(1 + 0 + 4)
    CHECK(wasserstein_loss(a, b).value == doctest::Approx(std::sqrt(5.0 + std::sqrt(5.0) + 1e-8)));
  }

  TEST_CASE("loss values agree with brute-force references")
  {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
      const Box9DoF gt = random_box(rng);
      const Box9DoF pred = nearby(gt, rng, 0.5);
      CHECK(permutation_corner_loss(pred, gt).value ==
            doctest::Approx(testing::permutation_corner_values(pred, gt).front()).epsilon(1e-10));
      CHECK(corner_chamfer_loss(pred, gt).value ==
            doctest::Approx(testing::chamfer_value_and_margin(pred, gt).first).epsilon(1e-10));
      const double l1 = (pred.params() - gt.params()).cwiseAbs().sum() / 9.0;
      CHECK(l1_box_loss(pred, gt).value == doctest::Approx(l1));
      // Wasserstein from an eigen-decomposition built covariance
      Eigen::SelfAdjointEigenSolver<Mat3> es(box_to_gaussian(pred).covariance);
      CHECK(es.eigenvalues().prod() == doctest::Approx(pred.size.prod()));
    }
  }

  TEST_CASE("analytic gradients match central differences")
  {
    std::mt19937_64 rng(5);
    int checked = 0;
    for (int i = 0; i < 60; ++i) {
      const Box9DoF gt = random_box(rng);
      const Box9DoF pred = nearby(gt, rng, 0.4);
      for (auto kind : {BoxLossKind::l1, BoxLossKind::ccd, BoxLossKind::pcd, BoxLossKind::wd}) {
        if (kind == BoxLossKind::pcd) {
          const auto v = testing::permutation_corner_values(pred, gt);
          if (v[1] - v[0] < testing::kTieMargin)
            continue;
        }
        if (kind == BoxLossKind::ccd && testing::chamfer_value_and_margin(pred, gt).second < testing::kTieMargin)
          continue;
        const auto l = box_loss(kind, pred, gt);
        const BoxParams fd = finite_difference([&](const BoxParams& x) { return value_at(kind, x, gt); },
                                               pred.params());
        CHECK_MESSAGE(gradient_close(l.grad, fd), to_string(kind));
        ++checked;
      }
    }
    CHECK(checked > 200);
  }

  TEST_CASE("chart-free gradients agree with the Euler gradient")
  {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 20; ++i) {
      const Box9DoF gt = random_box(rng);
      const Box9DoF pred = nearby(gt, rng, 0.4);
      for (auto kind : {BoxLossKind::ccd, BoxLossKind::pcd, BoxLossKind::wd}) {
        const auto g = box_loss_geometric(kind, pred, gt);
        CHECK((to_param_gradient(pred, g.grad) - box_loss(kind, pred, gt).grad).norm() < 1e-12);
      }
    }
    CHECK_THROWS_AS(box_loss_geometric(BoxLossKind::l1, Box9DoF{}, Box9DoF{}), std::invalid_argument);
  }

  TEST_CASE("angular gradient is the derivative along world-frame rotations")
  {
    std::mt19937_64 rng(7);
    const Box9DoF gt = random_box(rng);
    const Box9DoF pred = nearby(gt, rng, 0.4);
    const auto g = wasserstein_geometric(pred, gt);
    const Vec3 w = angular_gradient(pred, g.grad);
    for (int k = 0; k < 3; ++k) {
      const Vec3 axis = Vec3::Unit(k);
      auto turned = [&](double t) {
        Box9DoF b = pred;
        b.euler = rotation_to_euler(Eigen::AngleAxisd(t, axis).toRotationMatrix() * euler_to_rotation(pred.euler));
        return wasserstein_loss(b, gt).value;
      };
      CHECK(w[k] == doctest::Approx((turned(1e-6) - turned(-1e-6)) / 2e-6).epsilon(1e-5));
    }
  }

  TEST_CASE("centre loss is the squared distance")
  {
    const auto l = center_loss(Vec3(1, 2, 2), Vec3::Zero());
    CHECK(l.value == doctest::Approx(9.0));
    CHECK((l.grad - Eigen::Vector3d(2, 4, 4)).norm() < 1e-15);
  }

  TEST_CASE("focal loss by hand and by finite differences")
  {
    const Eigen::Vector3d logits(0.5, -1.0, 2.0);
    const auto l = focal_loss(logits, 1);
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double expect = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double p = sig(logits[c]);
      expect += c == 1 ? -0.25 * std::pow(1 - p, 2) * std::log(p) : -0.75 * std::pow(p, 2) * std::log(1 - p);
    }
    CHECK(l.value == doctest::Approx(expect));
    for (int c = 0; c < 3; ++c) {
      Eigen::VectorXd a = logits, b = logits;
      a[c] += 1e-6;
      b[c] -= 1e-6;
      const double fd = (focal_loss(a, 1).value - focal_loss(b, 1).value) / 2e-6;
      CHECK(l.grad[c] == doctest::Approx(fd).epsilon(1e-6));
    }
    const auto bg = focal_loss(logits, std::nullopt);
    CHECK(bg.value > 0.0);
    CHECK_THROWS_AS(focal_loss(logits, 3), std::invalid_argument);
    CHECK_THROWS_AS(focal_loss(Eigen::Vector2d(NAN, 0), 0), std::invalid_argument);
  }

  TEST_CASE("focal loss is stable for extreme logits")
  {
    const Eigen::Vector2d logits(80.0, -80.0);
    const auto l = focal_loss(logits, 0);
    CHECK(std::isfinite(l.value));
    CHECK(l.value < 1e-30);
    CHECK(l.grad.allFinite());
    CHECK(std::isfinite(focal_loss(logits, 1).value));
  }

  TEST_CASE("total loss combines the weighted terms")
  {
    std::mt19937_64 rng(8);
    const Box9DoF gt = random_box(rng);
    PredictionOutput pred{nearby(gt, rng, 0.3), Eigen::Vector3d(0.1, 0.3, -0.2)};
    const LossWeights w;
    const auto t = total_loss(pred, gt, 2, w, BoxLossKind::wd);
    const double expect = 1.0 * focal_loss(pred.logits, 2).value +
                          0.8 * center_loss(pred.box.center, gt.center).value +
                          1.0 * wasserstein_loss(pred.box, gt).value;
    CHECK(t.value == doctest::Approx(expect));
    CHECK(t.grad.size() == 12);
    const auto bg = total_loss(pred, gt, std::nullopt, w, BoxLossKind::wd);
    CHECK(bg.value == doctest::Approx(focal_loss(pred.logits, std::nullopt).value));
    CHECK(bg.grad.head<9>().isZero());
  }
}
