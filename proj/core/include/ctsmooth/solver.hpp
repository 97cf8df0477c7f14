#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/state.hpp"

namespace ctsmooth {

struct LayoutEntry {
  Key key;
  int offset = 0;
  int dim = 0;
};

/// Ordered set of active error-state blocks. Blocks not listed are static.
class StateLayout {
 public:
  StateLayout() = default;

  void add(const Key& key, int dim);
  /// Adds key with its dimension taken from the state (skips duplicates).
  void add(const EstimatorState& state, const Key& key);
  bool contains(const Key& key) const { return index_.contains(key); }
  /// Error-state offset of key, or -1 when the block is static.
  int offset(const Key& key) const;
  int total_dim() const { return total_; }
  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<LayoutEntry>& entries() const { return entries_; }
  std::vector<Key> keys() const;

 private:
  std::vector<LayoutEntry> entries_;
  std::map<Key, int> index_;
  int total_ = 0;
};

struct FactorCounts {
  std::array<int, kNumFactorTypes> used{};
  std::array<int, kNumFactorTypes> skipped{};

  int used_of(FactorType t) const { return used[static_cast<int>(t)]; }
  int skipped_of(FactorType t) const { return skipped[static_cast<int>(t)]; }
  int total_skipped() const;
};

/// H = sum J^T J, b = sum J^T r over whitened factors; the step solves (H + damping) d = -b.
struct Linearization {
  Eigen::MatrixXd H;
  Eigen::VectorXd b;
  double cost = 0.0;
  FactorCounts counts;
};

class NonFiniteFactorError : public std::runtime_error {
 public:
  NonFiniteFactorError(std::size_t index, FactorType type);
  std::size_t factor_index() const { return index_; }

 private:
  std::size_t index_;
};

/// Whitened (and Huber-weighted) factor contribution.
struct WhitenedFactor {
  Eigen::VectorXd residual;
  std::vector<JacobianBlock> jacobians;
  double cost = 0.0;
};

/// Evaluates and whitens one factor; returns false when the factor is skipped.
bool whiten_factor(const Factor& factor, const EstimatorState& state, bool with_jacobians, FactorEval& scratch,
                   WhitenedFactor& out);

Linearization linearize(const std::vector<FactorPtr>& factors, const EstimatorState& state,
                        const StateLayout& layout);

/// 0.5 * sum of squared whitened residuals.
double total_cost(const std::vector<FactorPtr>& factors, const EstimatorState& state,
                  FactorCounts* counts = nullptr);

/**
 * Solves (H + mu D) d = -b with D = diag(H) clamped to [1e-6, 1e32], using a
 * dense Cholesky factorization. Returns nullopt when the damped matrix is not
 * positive definite.
 */
std::optional<Eigen::VectorXd> solve_normal_equations(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, double mu);

/// Number of near-zero pivots of the Jacobi-scaled H (relative threshold tol).
int rank_defect(const Eigen::MatrixXd& H, double tol);

struct SolverConfig {
  int max_iterations = 50;
  double initial_damping = 1e-4;
  double damping_up = 10.0;
  double damping_down = 0.1;
  double min_damping = 1e-12;
  double max_damping = 1e12;
  double relative_cost_tol = 1e-8;
  double gradient_tol = 1e-10;
  double parameter_tol = 1e-10;
  double rank_tol = 1e-10;
  bool check_rank = true;
};

enum class Termination {
  kNoParameters,
  kGradientTolerance,
  kCostTolerance,
  kParameterTolerance,
  kMaxIterations,
  kDiverged,
};
std::string to_string(Termination t);

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;      // cost after the step if accepted, candidate cost otherwise
  double damping = 0.0;
  double step_norm = 0.0;
  bool accepted = false;
};

struct SolverReport {
  Termination termination = Termination::kNoParameters;
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int rank_defect = 0;
  FactorCounts counts;
  std::vector<IterationRecord> log;

  bool diverged() const { return termination == Termination::kDiverged; }
  bool rank_deficient() const { return rank_defect > 0; }
};

/// Levenberg-Marquardt on the manifold; only blocks in layout are updated.
SolverReport solve_lm(const std::vector<FactorPtr>& factors, EstimatorState& state, const StateLayout& layout,
                      const SolverConfig& config = {});

}  // namespace ctsmooth
