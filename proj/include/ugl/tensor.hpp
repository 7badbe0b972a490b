#pragma once

#include <Eigen/Dense>

namespace ugl {

template <class Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Real>
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

}  // namespace ugl
