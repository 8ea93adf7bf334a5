#pragma once

#include <Eigen/Dense>

namespace intact {

// Batches are stored sample-per-row: an N x d matrix holds N activation vectors.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace intact
