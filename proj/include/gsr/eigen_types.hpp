#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace gsr {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

// Default precision of the training pipeline.
using Real = double;

using MatrixX = Matrix<Real>;
using VectorX = Vector<Real>;
using RowVectorX = RowVector<Real>;

}  // namespace gsr
