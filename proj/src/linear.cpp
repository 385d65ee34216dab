#include "mv3d/linear.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mv3d {

auto LinearParams::apply(const Eigen::VectorXd& x) const -> Eigen::VectorXd
{
  if (x.size() != in())
    throw std::invalid_argument(role + ": expected input of size " + std::to_string(in()) +
                                ", got " + std::to_string(x.size()));
  return weight * x + bias;
}

auto LinearParams::apply_rows(const RowMatrix& x) const -> RowMatrix
{
  if (x.cols() != in())
    throw std::invalid_argument(role + ": expected " + std::to_string(in()) +
                                " input channels, got " + std::to_string(x.cols()));
  RowMatrix y = x * weight.transpose();
  y.rowwise() += bias.transpose();
  return y;
}

auto LinearParams::zeros(std::string role, Eigen::Index in, Eigen::Index out) -> LinearParams
{
  return {std::move(role), Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
}

auto LinearParams::random(std::string role, Eigen::Index in, Eigen::Index out, std::uint64_t seed,
                          double scale) -> LinearParams
{
  if (in < 1 || out < 1)
    throw std::invalid_argument(role + ": layer dimensions must be positive");
  std::mt19937_64 rng(seed);
  const double bound = scale / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  LinearParams p = zeros(std::move(role), in, out);
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c)
      p.weight(r, c) = dist(rng);
  return p;
}

}  // namespace mv3d
