#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "mv3d/geometry.hpp"
#include "support.hpp"

using namespace mv3d;
using mv3d::testing::random_box;

TEST_SUITE("geometry")
{
  TEST_CASE("rotation matches composed axis rotations")
  {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
      const Vec3 e(testing::uniform(rng, -3, 3), testing::uniform(rng, -1.5, 1.5), testing::uniform(rng, -3, 3));
      const Mat3 R = euler_to_rotation(e);
      CHECK((R - testing::reference_rotation(e)).norm() < 1e-12);
      CHECK((R * R.transpose() - Mat3::Identity()).norm() < 1e-12);
      CHECK(R.determinant() == doctest::Approx(1.0));
    }
  }

  TEST_CASE("zero angles give the identity")
  {
    CHECK((euler_to_rotation(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
  }

  TEST_CASE("non-finite angles are rejected")
  {
    CHECK_THROWS_AS(euler_to_rotation(Vec3(NAN, 0, 0)), std::invalid_argument);
    CHECK_THROWS_AS(euler_to_rotation(Vec3(0, INFINITY, 0)), std::invalid_argument);
  }

  TEST_CASE("rotation to angles round trip, including gimbal lock")
  {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
      const Vec3 e(testing::uniform(rng, -3, 3), testing::uniform(rng, -1.5, 1.5), testing::uniform(rng, -3, 3));
      const Mat3 R = euler_to_rotation(e);
      CHECK((euler_to_rotation(rotation_to_euler(R)) - R).norm() < 1e-9);
    }
    const Mat3 lock = euler_to_rotation(Vec3(0.3, std::numbers::pi / 2, -0.7));
    CHECK((euler_to_rotation(rotation_to_euler(lock)) - lock).norm() < 1e-9);
  }

  TEST_CASE("rotation jacobian matches finite differences")
  {
    const Vec3 e(0.3, -0.4, 1.1);
    const auto J = euler_to_rotation_jacobian(e);
    for (int k = 0; k < 3; ++k) {
      Vec3 a = e, b = e;
      a[k] += 1e-6;
      b[k] -= 1e-6;
      const Mat3 fd = (euler_to_rotation(a) - euler_to_rotation(b)) / 2e-6;
      CHECK((J[static_cast<std::size_t>(k)] - fd).norm() < 1e-8);
    }
  }

  TEST_CASE("unit box corners")
  {
    const Box9DoF b;
    const auto c = box_corners(b);
    std::set<std::array<double, 3>> seen;
    for (const auto& p : c) {
      CHECK(p.cwiseAbs().isApprox(Vec3::Constant(0.5)));
      seen.insert({p.x(), p.y(), p.z()});
    }
    CHECK(seen.size() == 8);
    // bit 0 is the sign along w
    CHECK(c[0].x() < 0);
    CHECK(c[1].x() > 0);
    CHECK(c[2].y() > 0);
    CHECK(c[4].z() > 0);
  }

  TEST_CASE("corners of a rotated translated box")
  {
    Box9DoF b{Vec3(1, 2, 3), Vec3(2, 4, 6), Vec3(0, 0, std::numbers::pi / 2)};
    const auto c = box_corners(b);
    // yaw of 90 degrees maps +x to +y
    CHECK((c[1] - Vec3(1 + 2, 2 + 1, 3 - 3)).norm() < 1e-12);
  }

  TEST_CASE("invalid boxes are rejected")
  {
    Box9DoF b;
    b.size = Vec3(1, -1, 1);
    CHECK_THROWS_AS(validate_box(b), std::invalid_argument);
    b.size = Vec3(1, 1, 1);
    b.center.x() = NAN;
    CHECK_THROWS_AS(validate_box(b), std::invalid_argument);
  }

  TEST_CASE("the 48 signed permutations")
  {
    const auto& perms = signed_permutations();
    REQUIRE(perms.size() == 48);
    CHECK(perms.front() == SignedPermutation::Identity());
    std::set<std::vector<int>> unique;
    int proper = 0;
    for (const auto& P : perms) {
      const Eigen::Matrix3d Pd = P.cast<double>();
      CHECK((Pd * Pd.transpose() - Mat3::Identity()).norm() == 0.0);
      proper += Pd.determinant() > 0;
      unique.insert(std::vector<int>(P.data(), P.data() + 9));
    }
    CHECK(unique.size() == 48);
    CHECK(proper == 24);
  }

  TEST_CASE("corner relabelling is a permutation that preserves the physical corners")
  {
    std::mt19937_64 rng(3);
    const Box9DoF b = random_box(rng);
    for (const auto& P : signed_permutations()) {
      const auto table = corner_relabelling(P);
      std::set<int> values(table.begin(), table.end());
      CHECK(values.size() == 8);
      const Box9DoF r = reparameterize(b, P);
      CHECK(testing::corner_set_distance(box_corners(r), box_corners(b)) < 1e-9);
    }
  }

  TEST_CASE("yaw plus a quarter turn with w and l swapped is the same box")
  {
    Box9DoF a{Vec3(0.2, 0.1, 0.5), Vec3(1.0, 2.0, 0.5), Vec3(0, 0, 0.3)};
    Box9DoF b{a.center, Vec3(2.0, 1.0, 0.5), Vec3(0, 0, 0.3 + std::numbers::pi / 2)};
    CHECK(testing::corner_set_distance(box_corners(a), box_corners(b)) < 1e-12);
    CHECK(box_iou(a, b) == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("gaussian of a box")
  {
    Box9DoF b{Vec3(1, 2, 3), Vec3(2, 3, 4), Vec3(0.1, 0.2, 0.3)};
    const auto g = box_to_gaussian(b);
    CHECK(g.mean.isApprox(b.center));
    Eigen::SelfAdjointEigenSolver<Mat3> es(g.covariance);
    CHECK(es.eigenvalues().isApprox(Vec3(2, 3, 4), 1e-12));
  }

  TEST_CASE("IoU of identical, disjoint and shifted axis-aligned boxes")
  {
    Box9DoF a;
    CHECK(box_iou(a, a) == doctest::Approx(1.0));
    Box9DoF far = a;
    far.center.x() = 5;
    CHECK(box_iou(a, far) == 0.0);
    Box9DoF half = a;
    half.center.x() = 0.5;
    CHECK(box_iou(a, half) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    Box9DoF touching = a;
    touching.center.x() = 1.0;
    CHECK(box_iou(a, touching) == doctest::Approx(0.0));
    Box9DoF inner{Vec3::Zero(), Vec3::Constant(0.5), Vec3::Zero()};
    CHECK(box_iou(a, inner) == doctest::Approx(0.125));
  }

  TEST_CASE("IoU of a cube with a copy turned 45 degrees about z")
  {
    Box9DoF a;
    Box9DoF b;
    b.euler.z() = std::numbers::pi / 4;
    // the two unit squares overlap in a regular octagon of area 2(sqrt2 - 1)
    const double inter = 2.0 * (std::sqrt(2.0) - 1.0);
    CHECK(box_iou(a, b) == doctest::Approx(inter / (2.0 - inter)).epsilon(1e-12));
  }

  TEST_CASE("IoU agrees with Monte-Carlo on random pairs")
  {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 10; ++i) {
      const Box9DoF a = random_box(rng, 0.3);
      const Box9DoF b = random_box(rng, 0.3);
      CHECK(std::abs(box_iou(a, b) - testing::monte_carlo_iou(a, b, 200000, rng)) < 0.01);
    }
  }

  TEST_CASE("IoU is symmetric and invariant to relabelling")
  {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
      const Box9DoF a = random_box(rng, 0.3);
      const Box9DoF b = random_box(rng, 0.3);
      const double iou = box_iou(a, b);
      CHECK(box_iou(b, a) == doctest::Approx(iou).epsilon(1e-9));
      CHECK(box_iou(reparameterize(a, signed_permutations()[17]), b) ==
            doctest::Approx(iou).epsilon(1e-9));
    }
  }

  TEST_CASE("degenerate boxes have zero IoU")
  {
    Box9DoF a;
    Box9DoF flat;
    flat.size.z() = 0.0;
    const auto r = box_iou_checked(a, flat);
    CHECK(r.degenerate);
    CHECK(r.iou == 0.0);
  }

  TEST_CASE("containment")
  {
    Box9DoF b{Vec3(1, 0, 0), Vec3(2, 1, 1), Vec3(0, 0, std::numbers::pi / 2)};
    CHECK(box_contains(b, Vec3(1, 0.9, 0)));
    CHECK_FALSE(box_contains(b, Vec3(1.9, 0, 0)));
  }

  TEST_CASE("NMS matches a brute-force greedy reference")
  {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Detection> dets;
      for (int i = 0; i < 12; ++i)
        dets.push_back({random_box(rng, 0.6, 0.5, 1.5), testing::uniform(rng, 0, 1),
                        static_cast<int>(rng() % 2)});
      const auto kept = nms(dets, 0.4);

      std::vector<std::size_t> order(dets.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](auto x, auto y) { return dets[x].score > dets[y].score; });
      std::vector<Detection> expect;
      for (auto i : order) {
        bool drop = false;
        for (const auto& k : expect)
          drop = drop || (k.category == dets[i].category && box_iou(k.box, dets[i].box) > 0.4);
        if (!drop)
          expect.push_back(dets[i]);
      }
      REQUIRE(kept.size() == expect.size());
      for (std::size_t i = 0; i < kept.size(); ++i)
        CHECK(kept[i].score == expect[i].score);
    }
  }

  TEST_CASE("NMS keeps one of two duplicates and nothing of an empty list")
  {
    Detection d{Box9DoF{}, 0.9, 1};
    Detection e{Box9DoF{}, 0.8, 1};
    const std::vector<Detection> dets{e, d};
    const auto kept = nms(dets, 0.4);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
    CHECK(nms(std::vector<Detection>{}, 0.4).empty());
  }
}
