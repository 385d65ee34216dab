#include <doctest.h>

#include <random>

#include "mv3d/camera.hpp"
#include "mv3d/feature_map.hpp"
#include "mv3d/linear.hpp"
#include "mv3d/spatial_enhancer.hpp"
#include "support.hpp"

using namespace mv3d;

namespace {

FeatureMap random_map(int rows, int cols, Eigen::Index channels, std::uint64_t seed, double scale = 1.0)
{
  FeatureMap fm(0, 8, rows, cols, channels);
  std::mt19937_64 rng(seed);
  for (Eigen::Index i = 0; i < fm.values.size(); ++i)
    fm.values.data()[i] = testing::uniform(rng, -scale, scale);
  return fm;
}

CameraModel test_camera()
{
  return CameraModel(kStandardIntrinsics, look_at(Vec3(2.5, 0.5, 1.5), Vec3(0, 0, 0.8)), 512, 512);
}

}  // namespace

TEST_SUITE("spatial_enhancer")
{
  TEST_CASE("linear layer shapes and errors")
  {
    const auto p = LinearParams::random("t", 4, 3, 1);
    CHECK(p.in() == 4);
    CHECK(p.out() == 3);
    CHECK(p.apply(Eigen::VectorXd::Ones(4)).size() == 3);
    CHECK_THROWS_AS(p.apply(Eigen::VectorXd::Ones(5)), std::invalid_argument);
    const auto q = LinearParams::random("t", 4, 3, 1);
    CHECK(p.weight == q.weight);
  }

  TEST_CASE("point embeddings are the affine map of each frustum point")
  {
    const CameraModel cam = test_camera();
    const auto grid = frustum_point_grid(cam, 4, 5, 10.0, 6);
    const auto p = LinearParams::random("pe", 3, 8, 2);
    const auto ppe = point_position_embedding(grid, p);
    CHECK(ppe.values.rows() == 4 * 5 * 6);
    for (int k = 0; k < 6; ++k) {
      const Eigen::VectorXd expect = p.weight * grid.point(2, 3, k) + p.bias;
      CHECK((ppe.at(2, 3, k).transpose() - expect).norm() < 1e-12);
    }
  }

  TEST_CASE("depth distribution is a softmax per pixel")
  {
    const auto img = random_map(3, 4, 5, 3);
    const auto dep = random_map(3, 4, 1, 4, 10.0);
    const auto fuse = LinearParams::random("f", 6, 7, 5);
    const auto head = LinearParams::random("h", 7, 9, 6);
    const auto dt = depth_distribution(img, dep, fuse, head);
    CHECK(dt.bins() == 9);
    for (Eigen::Index i = 0; i < dt.probs.rows(); ++i) {
      CHECK(dt.probs.row(i).sum() == doctest::Approx(1.0));
      CHECK(dt.probs.row(i).minCoeff() > 0.0);
      // reference softmax computed directly from the logits
      Eigen::VectorXd x(6);
      x << img.values.row(i).transpose(), dep.values.row(i).transpose();
      const Eigen::VectorXd logits = head.apply(fuse.apply(x));
      const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
      CHECK((dt.probs.row(i).transpose() - e / e.sum()).norm() < 1e-12);
    }
  }

  TEST_CASE("image position embedding is the embedding of the expected frustum point")
  {
    // with an affine point embedding, the depth-weighted sum equals the
    // embedding of the probability-weighted point
    const CameraModel cam = test_camera();
    const int rows = 3, cols = 4, K = 5;
    const auto grid = frustum_point_grid(cam, rows, cols, 10.0, K);
    const auto pe = LinearParams::random("pe", 3, 6, 7);
    const auto ppe = point_position_embedding(grid, pe);
    const auto dt = depth_distribution(random_map(rows, cols, 4, 8), random_map(rows, cols, 1, 9),
                                       LinearParams::random("f", 5, 6, 10), LinearParams::random("h", 6, K, 11));
    const auto ipe = image_position_embedding(ppe, dt);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        Vec3 mean = Vec3::Zero();
        for (int k = 0; k < K; ++k)
          mean += dt.probs(r * cols + c, k) * grid.point(r, c, k);
        const Eigen::VectorXd expect = pe.weight * mean + pe.bias;
        CHECK((ipe.at(r, c).transpose() - expect).norm() < 1e-10);
      }
  }

  TEST_CASE("a one-hot depth distribution picks that bin's embedding")
  {
    const CameraModel cam = test_camera();
    const auto grid = frustum_point_grid(cam, 2, 2, 10.0, 3);
    const auto ppe = point_position_embedding(grid, LinearParams::random("pe", 3, 4, 12));
    DepthDistribution dt{2, 2, RowMatrix::Zero(4, 3)};
    dt.probs.col(1).setOnes();
    const auto ipe = image_position_embedding(ppe, dt);
    CHECK((ipe.at(1, 0) - ppe.at(1, 0, 1)).norm() < 1e-15);
  }

  TEST_CASE("shape mismatches are rejected")
  {
    const auto img = random_map(3, 4, 5, 3);
    const auto dep = random_map(3, 3, 1, 4);
    CHECK_THROWS_AS(depth_distribution(img, dep, LinearParams::random("f", 6, 7, 5),
                                       LinearParams::random("h", 7, 9, 6)),
                    std::invalid_argument);
  }

  TEST_CASE("fused features are the affine map of the concatenation")
  {
    const CameraModel cam = test_camera();
    const auto img = random_map(4, 4, 3, 13);
    const auto dep = random_map(4, 4, 1, 14, 5.0);
    const auto params = SpatialEnhancerParams::random(3, 1, 6, 8, 15);
    const auto v = enhance_view(img, dep, cam, params, 10.0, 8);
    CHECK(v.features.channels() == 3);
    Eigen::VectorXd x(10);
    x << img.cell(1, 2).transpose(), dep.cell(1, 2).transpose(), v.ipe.at(1, 2).transpose();
    CHECK((v.features.cell(1, 2).transpose() - params.feature_fuse.apply(x)).norm() < 1e-12);
  }

  TEST_CASE("correlation map")
  {
    const CameraModel cam = test_camera();
    const auto params = SpatialEnhancerParams::random(3, 1, 6, 8, 16);
    const auto v = enhance_view(random_map(8, 8, 3, 17), random_map(8, 8, 1, 18, 5.0), cam, params, 10.0, 8);
    const auto sim = ipe_correlation_map(v.ipe, 3, 4);
    CHECK(sim(3, 4) == 1.0);
    CHECK(sim.maxCoeff() <= 1.0);
    CHECK(sim.minCoeff() >= -1.0);
    CHECK_THROWS_AS(ipe_correlation_map(v.ipe, 8, 0), std::out_of_range);

    PositionEmbeddingGrid zero{2, 2, 1, RowMatrix::Zero(4, 3)};
    zero.values.row(1).setOnes();
    CHECK_THROWS_AS(ipe_correlation_map(zero, 0, 0), std::invalid_argument);
    const auto z = ipe_correlation_map(zero, 0, 1);
    CHECK(z(0, 0) == 0.0);
    CHECK(z(0, 1) == 1.0);
  }

  TEST_CASE("pixel to feature cell mapping")
  {
    CHECK(pixel_to_cell(3.5, 64, 512) == doctest::Approx(0.0));
    CHECK(pixel_to_cell(507.5, 64, 512) == doctest::Approx(63.0));
    CHECK(pixel_to_cell(7.5, 64, 512) == doctest::Approx(0.5));
    CHECK(pixel_to_cell(-10.0, 64, 512) == 0.0);
    CHECK(pixel_to_cell(600.0, 64, 512) == 63.0);
  }
}
