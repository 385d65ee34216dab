#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

namespace mv3d {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Affine layer y = W x + b, tagged with the role it plays in the model.
struct LinearParams
{
  std::string role;
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }

  /// Throws std::invalid_argument if `x` does not have `in()` entries.
  auto apply(const Eigen::VectorXd& x) const -> Eigen::VectorXd;

  /// Applies the layer to every row of `x`.
  auto apply_rows(const RowMatrix& x) const -> RowMatrix;

  static auto zeros(std::string role, Eigen::Index in, Eigen::Index out) -> LinearParams;

  /// Weights uniform in [-1/sqrt(in), 1/sqrt(in)], zero bias.
  static auto random(std::string role, Eigen::Index in, Eigen::Index out, std::uint64_t seed,
                     double scale = 1.0) -> LinearParams;
};

}  // namespace mv3d
