#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "fedalv/errors.hpp"
#include "fedalv/numcore.hpp"

namespace fedalv {

// Scores on the top-k principal components of the centred rows. Each axis is
// signed so that its largest-magnitude loading is positive.
inline Matrix pca_project(const Matrix& x, std::size_t k = 2) {
  if (x.rows() < 2) throw ArgumentError("pca_project: need at least two rows");
  if (k == 0 || k > x.cols()) {
    throw ArgumentError("pca_project: cannot take " + std::to_string(k) + " components of " +
                        std::to_string(x.cols()) + " columns");
  }
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> m(x.data().data(), static_cast<Eigen::Index>(x.rows()),
                                     static_cast<Eigen::Index>(x.cols()));
  const Eigen::MatrixXd centred = m.rowwise() - m.colwise().mean();
  const Eigen::MatrixXd cov =
      centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw EvaluationError("pca_project: eigensolver failed");

  // Eigenvalues come in ascending order.
  Eigen::MatrixXd axes(x.cols(), k);
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(x.cols() - 1 - c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    axes.col(static_cast<Eigen::Index>(c)) = v;
  }
  const Eigen::MatrixXd scores = centred * axes;
  Matrix out(x.rows(), k);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      out(i, c) = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

}  // namespace fedalv
