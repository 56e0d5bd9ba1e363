#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace orpo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Raised when a computation produces NaN/Inf or a factorization breaks down.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised on malformed configuration or precondition violations that the
// caller could have avoided.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Seedable splittable stream. Child streams from derive() are statistically
// independent of each other and of the parent, so each component (env,
// ensemble member, policy) can own its own stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng derive(std::uint64_t tag) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform on {0, ..., n - 1}.
  std::size_t index(std::size_t n);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t state_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Scalar>
struct RidgeSolution {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> weights;  // d x k
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gram;     // XᵀX + βI
};

// Solves min_W ‖XW − Y‖² + β‖W‖² by Cholesky on Λ = XᵀX + βI.
// X may have zero rows, in which case Λ = βI and W = 0.
template <typename DerivedX, typename DerivedY>
RidgeSolution<typename DerivedX::Scalar> ridge_solve(
    const Eigen::MatrixBase<DerivedX>& X, const Eigen::MatrixBase<DerivedY>& Y,
    typename DerivedX::Scalar beta) {
  using Scalar = typename DerivedX::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (!(beta > Scalar(0))) throw ValidationError("ridge_solve: beta must be positive");
  if (X.rows() != Y.rows()) throw ValidationError("ridge_solve: X and Y row counts differ");
  if (!X.allFinite() || !Y.allFinite()) throw ValidationError("ridge_solve: non-finite input");

  const Eigen::Index d = X.cols();
  RidgeSolution<Scalar> out;
  out.gram = Mat::Identity(d, d) * beta;
  out.gram.template selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
  out.gram.template triangularView<Eigen::StrictlyUpper>() =
      out.gram.transpose().template triangularView<Eigen::StrictlyUpper>();

  const Mat rhs = X.transpose() * Y;
  Eigen::LLT<Mat> llt(out.gram);
  if (llt.info() != Eigen::Success) throw NumericalError("ridge_solve: Cholesky failed");
  out.weights = llt.solve(rhs);
  // One refinement sweep keeps ‖ΛW − XᵀY‖ at round-off for tiny β.
  out.weights += llt.solve(rhs - out.gram * out.weights);
  return out;
}

// φᵀΛ⁻¹φ for symmetric positive definite Λ.
template <typename DerivedL, typename DerivedP>
typename DerivedL::Scalar posterior_variance(const Eigen::MatrixBase<DerivedL>& gram,
                                             const Eigen::MatrixBase<DerivedP>& phi) {
  using Scalar = typename DerivedL::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (gram.rows() != gram.cols() || gram.rows() != phi.size())
    throw ValidationError("posterior_variance: dimension mismatch");
  if (!gram.isApprox(gram.transpose(), Scalar(1e-12)))
    throw NumericalError("posterior_variance: matrix is not symmetric");
  Eigen::LLT<Mat> llt(gram.eval());
  if (llt.info() != Eigen::Success) throw NumericalError("posterior_variance: matrix is not SPD");
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> half = llt.matrixL().solve(phi.derived().eval());
  return half.squaredNorm();
}

}  // namespace orpo
