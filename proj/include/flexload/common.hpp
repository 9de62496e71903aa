#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace flexload {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace flexload
