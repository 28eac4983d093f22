#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace fedtm {

// All numeric state is double precision, row-major so flat indices and the
// checkpoint layout coincide.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedtm
