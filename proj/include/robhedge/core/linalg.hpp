#pragma once

#include <Eigen/Dense>

namespace robhedge {

/// Upper bound on the drift parameter dimension m. Parameter-space objects use
/// bounded-capacity Eigen types so the inner loops never touch the heap.
inline constexpr int kMaxParams = 8;
/// Upper bound on the number of risky assets d.
inline constexpr int kMaxAssets = 4;

using ParamVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxParams, 1>;
using ParamMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxParams, kMaxParams>;

using AssetVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAssets, 1>;
using AssetMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxAssets, kMaxAssets>;

inline ParamVector param_vector(std::initializer_list<double> values) {
  ParamVector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

}  // namespace robhedge
