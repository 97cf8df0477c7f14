#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/state.hpp"

namespace ctsmooth {

struct JacobianCheckOptions {
  double step = 1e-4;
  double rel_tol = 1e-5;
  double abs_tol = 1e-8;
  /// Test hook: mutate the analytic evaluation before comparison.
  std::function<void(FactorEval&)> corrupt;
};

struct BlockCheck {
  Key key;
  double abs_err = 0.0;
  double rel_err = 0.0;
  bool pass = true;
};

struct JacobianCheckResult {
  bool evaluated = false;  // false if the factor (or a perturbation) could not be evaluated
  bool pass = false;
  std::vector<BlockCheck> blocks;
  const BlockCheck* worst() const;
};

/**
 * Compares every analytic Jacobian block of factor against 5-point central differences
 * on the state's manifold (rotations perturbed by R Exp(+-h e_k)). A block
 * passes if max|A - N| <= abs_tol or max|A - N| / max(|A|, |N|) <= rel_tol.
 * The state is restored before returning.
 */
JacobianCheckResult check_factor_jacobian(const Factor& factor, EstimatorState& state,
                                          const JacobianCheckOptions& options = {});

struct FactorSuiteStats {
  FactorType type = FactorType::kCustom;
  int trials = 0;
  int failures = 0;
  int unevaluated = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_block;
};

struct JacobianSuiteReport {
  std::vector<FactorSuiteStats> per_type;
  bool pass() const;
};

/// Randomized Jacobian checks over IMU, bias, LiDAR, visual, velocity and prior factors.
JacobianSuiteReport run_jacobian_suite(std::uint64_t seed, int trials, std::optional<FactorType> corrupt = std::nullopt);

struct MarginalizationCheckReport {
  int chains = 0;
  double max_discrepancy = 0.0;   // |fixed-lag - batch| over retained blocks
  bool hand_case_pass = false;    // H=[[2,1],[1,2]], b=(1,1)
  double hand_h = 0.0;
  double hand_b = 0.0;
  int singular_warnings = 0;
  bool pass(double tol = 1e-8) const { return hand_case_pass && max_discrepancy <= tol; }
};

struct ChainOptions {
  int min_windows = 3;
  int max_windows = 6;
  int states_per_window = 2;
  bool unconstrained_block = false;  // add an untouched dropped block each slide
};

/// One random linear-Gaussian chain; returns the fixed-lag vs batch discrepancy.
double linear_chain_discrepancy(std::uint64_t seed, const ChainOptions& options, int* singular_warnings = nullptr);

MarginalizationCheckReport run_marginalization_check(std::uint64_t seed, int chains);

}  // namespace ctsmooth
