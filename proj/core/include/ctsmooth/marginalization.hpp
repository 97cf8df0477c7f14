#pragma once

#include <vector>

#include <Eigen/Core>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/solver.hpp"
#include "ctsmooth/state.hpp"

namespace ctsmooth {

/// Reduced system on the kept partition.
struct SchurResult {
  Eigen::MatrixXd H;
  Eigen::VectorXd b;
  bool singular = false;  // H_bb needed eigenvalue flooring
};

/**
 * H_aa - H_ab H_bb^+ H_ba and b_a - H_ab H_bb^+ b_b. The pseudo-inverse drops
 * eigenvalues of H_bb below eig_tol * max(1, lambda_max).
 */
SchurResult schur_complement(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, const std::vector<int>& keep,
                             const std::vector<int>& drop, double eig_tol = 1e-12);

/// Square-root form of (H, b): L^T L = H and L^T r0 = b on the range of H.
void sqrt_information(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, Eigen::MatrixXd& L, Eigen::VectorXd& r0,
                      double eig_tol = 1e-12);

struct MarginalizationResult {
  MarginalPrior prior;
  bool singular = false;
  int dropped_dim = 0;
  int kept_dim = 0;
};

/**
 * Linearizes factors at the current state over keep + drop blocks, eliminates
 * the drop blocks and returns the prior on the keep blocks. Keys absent from
 * the state are ignored. Factors should include the existing prior if it
 * touches dropped blocks.
 */
MarginalizationResult marginalize(const std::vector<FactorPtr>& factors, const EstimatorState& state,
                                  const std::vector<Key>& keep, const std::vector<Key>& drop);

}  // namespace ctsmooth
