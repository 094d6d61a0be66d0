#pragma once

// Cholesky factorization with an escalating jitter ladder.  Gram matrices
// built from derivative kernels are exactly singular in degenerate cases
// (duplicated times, huge length scales), so every factorization in the
// toolkit goes through this helper: try bare LLT, then add jitter to the
// diagonal starting at 1e-10 and growing tenfold up to a 1e-4 cap, and
// throw IllConditionedError if the cap is reached without success.

#include <megpr/common.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace megpr {

inline constexpr double kJitterStart = 1e-10;
inline constexpr double kJitterCap = 1e-4;

struct CholResult {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;   // jitter actually added to the diagonal
  double log_det = 0.0;  // log determinant of the (jittered) matrix
};

inline CholResult chol_with_jitter(Eigen::MatrixXd K) {
  if (!K.allFinite()) {
    throw IllConditionedError("chol_with_jitter: matrix has non-finite entries");
  }
  CholResult out;
  double jitter = 0.0;
  while (true) {
    out.llt.compute(K);
    if (out.llt.info() == Eigen::Success) {
      // LLT can "succeed" on a semidefinite matrix with a tiny or negative
      // pivot; reject those so downstream solves stay meaningful.
      const auto& L = out.llt.matrixLLT();
      double min_diag = L.diagonal().minCoeff();
      if (min_diag > 0.0 && std::isfinite(min_diag)) {
        out.jitter = jitter;
        out.log_det = 2.0 * L.diagonal().array().log().sum();
        return out;
      }
    }
    const double next = (jitter == 0.0) ? kJitterStart : jitter * 10.0;
    if (next > kJitterCap) {
      throw IllConditionedError(
          "chol_with_jitter: factorization failed at jitter cap " +
          std::to_string(kJitterCap));
    }
    K.diagonal().array() += next - jitter;
    jitter = next;
  }
}

}  // namespace megpr
