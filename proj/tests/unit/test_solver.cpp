#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ctsmooth/solver.hpp"

namespace ctsmooth {
namespace {

/// Residuals (10 (y - x^2), 1 - x) on a single 2-vector block.
class RosenbrockFactor final : public Factor {
 public:
  FactorType type() const override { return FactorType::kCustom; }
  int residual_dim() const override { return 2; }
  bool evaluate(const EstimatorState& s, FactorEval& out, bool jac) const override {
    out.clear();
    const Eigen::VectorXd& v = s.aux.at(0);
    out.residual = Eigen::Vector2d(10.0 * (v[1] - v[0] * v[0]), 1.0 - v[0]);
    out.sqrt_weight = Eigen::Vector2d::Ones();
    if (jac) {
      Eigen::Matrix2d j;
      j << -20.0 * v[0], 10.0, -1.0, 0.0;
      out.add(aux_key(0), j);
    }
    return true;
  }
};

FactorPtr scalar_factor(int key, double target, double weight = 1.0) {
  return std::make_shared<LinearFactor>(std::vector<Key>{aux_key(key)},
                                        std::vector<Eigen::MatrixXd>{Eigen::MatrixXd::Ones(1, 1)},
                                        Eigen::VectorXd::Constant(1, target), Eigen::VectorXd::Constant(1, weight));
}

TEST(Linearize, ScalarHandCase) {
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Zero(1);
  StateLayout layout;
  layout.add(aux_key(0), 1);
  const Linearization lin = linearize({scalar_factor(0, 5.0)}, s, layout);
  EXPECT_DOUBLE_EQ(lin.H(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(lin.b[0], -5.0);
  EXPECT_DOUBLE_EQ(lin.cost, 12.5);
}

TEST(Linearize, IndependentBlocksAreBlockDiagonal) {
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Zero(1);
  s.aux[1] = Eigen::VectorXd::Zero(1);
  StateLayout layout;
  layout.add(aux_key(0), 1);
  layout.add(aux_key(1), 1);
  const Linearization lin = linearize({scalar_factor(0, 1.0), scalar_factor(1, 2.0, 3.0)}, s, layout);
  EXPECT_EQ(lin.H(0, 1), 0.0);
  EXPECT_EQ(lin.H(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(lin.H(1, 1), 9.0);
}

TEST(Linearize, CostMatchesDirectSum) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  EstimatorState s;
  StateLayout layout;
  std::vector<FactorPtr> factors;
  double direct = 0.0;
  for (int i = 0; i < 20; ++i) {
    s.aux[i] = Eigen::VectorXd::Constant(1, n(rng));
    layout.add(aux_key(i), 1);
    const double target = n(rng), w = std::abs(n(rng)) + 0.1;
    factors.push_back(scalar_factor(i, target, w));
    direct += 0.5 * std::pow(w * (s.aux[i][0] - target), 2);
  }
  EXPECT_NEAR(linearize(factors, s, layout).cost, direct, 1e-12);
  EXPECT_NEAR(total_cost(factors, s), direct, 1e-12);
}

TEST(Linearize, StaticBlocksGetNoColumns) {
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Zero(1);
  s.aux[1] = Eigen::VectorXd::Zero(1);
  auto f = std::make_shared<LinearFactor>(std::vector<Key>{aux_key(0), aux_key(1)},
                                          std::vector<Eigen::MatrixXd>{Eigen::MatrixXd::Ones(1, 1),
                                                                       Eigen::MatrixXd::Ones(1, 1)},
                                          Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd());
  StateLayout layout;
  layout.add(aux_key(1), 1);
  const Linearization lin = linearize({f}, s, layout);
  EXPECT_EQ(lin.H.rows(), 1);
  EXPECT_DOUBLE_EQ(lin.cost, 0.5);
}

TEST(NormalEquations, HandCases) {
  const Eigen::VectorXd d = *solve_normal_equations(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(3), 0.0);
  EXPECT_EQ(d, -Eigen::VectorXd::Ones(3));
  Eigen::Matrix2d h;
  h << 2, 1, 1, 2;
  const Eigen::VectorXd d2 = *solve_normal_equations(h, Eigen::Vector2d(1, 1), 0.0);
  EXPECT_NEAR(d2[0], -1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d2[1], -1.0 / 3.0, 1e-15);
}

TEST(NormalEquations, DampingShrinksStepMonotonically) {
  Eigen::Matrix3d h;
  h << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Eigen::Vector3d b(1, -2, 0.5);
  double prev = std::numeric_limits<double>::infinity();
  for (double mu = 1e-6; mu < 1e12; mu *= 10) {
    const double norm = solve_normal_equations(h, b, mu)->norm();
    EXPECT_LT(norm, prev);
    prev = norm;
  }
  EXPECT_LT(prev, 1e-10);
}

TEST(NormalEquations, IndefiniteReportsFailure) {
  Eigen::Matrix2d h;
  h << 1, 0, 0, -1;
  EXPECT_FALSE(solve_normal_equations(h, Eigen::Vector2d(1, 1), 0.0).has_value());
}

struct LinearProblem {
  std::vector<FactorPtr> factors;
  Eigen::VectorXd closed;
};

LinearProblem random_linear_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(8, 3);
  Eigen::VectorXd b(8);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  for (int i = 0; i < b.size(); ++i) b[i] = n(rng);
  LinearProblem p;
  p.closed = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  p.factors.push_back(std::make_shared<LinearFactor>(std::vector<Key>{aux_key(0)}, std::vector<Eigen::MatrixXd>{a},
                                                     b, Eigen::VectorXd()));
  return p;
}

TEST(Lm, LinearLeastSquaresUndampedConvergesInTwoSteps) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const LinearProblem p = random_linear_problem(seed);
    EstimatorState s;
    s.aux[0] = Eigen::VectorXd::Zero(3);
    StateLayout layout;
    layout.add(aux_key(0), 3);
    SolverConfig cfg;
    cfg.initial_damping = 1e-14;
    const SolverReport rep = solve_lm(p.factors, s, layout, cfg);
    EXPECT_LT((s.aux[0] - p.closed).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE(rep.accepted_steps, 2);
  }
}

TEST(Lm, LinearLeastSquaresWithDefaultDamping) {
  // With mu0 = 1e-4 the first step keeps a ~1e-4 relative error and the relative-cost
  // stop (1e-8) fires once the remaining decrease is tiny, leaving ~1e-8 in the parameters.
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const LinearProblem p = random_linear_problem(seed);
    EstimatorState s;
    s.aux[0] = Eigen::VectorXd::Zero(3);
    StateLayout layout;
    layout.add(aux_key(0), 3);
    const SolverReport rep = solve_lm(p.factors, s, layout);
    EXPECT_LT((s.aux[0] - p.closed).cwiseAbs().maxCoeff(), 1e-7 * std::max(1.0, p.closed.norm()));
    EXPECT_LE(rep.accepted_steps, 3);
    EXPECT_FALSE(rep.diverged());
  }
}

TEST(Lm, ZeroResidualStartTerminatesImmediately) {
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Constant(1, 5.0);
  StateLayout layout;
  layout.add(aux_key(0), 1);
  const SolverReport rep = solve_lm({scalar_factor(0, 5.0)}, s, layout);
  EXPECT_EQ(rep.accepted_steps, 0);
  EXPECT_EQ(rep.termination, Termination::kGradientTolerance);
  EXPECT_EQ(s.aux[0][0], 5.0);
}

TEST(Lm, Rosenbrock) {
  EstimatorState s;
  s.aux[0] = Eigen::Vector2d(-1.2, 1.0);
  StateLayout layout;
  layout.add(aux_key(0), 2);
  SolverConfig cfg;
  cfg.max_iterations = 200;
  const SolverReport rep = solve_lm({std::make_shared<RosenbrockFactor>()}, s, layout, cfg);
  EXPECT_LT((s.aux[0] - Eigen::Vector2d(1, 1)).norm(), 1e-6);
  // Accepted costs never increase.
  double prev = rep.initial_cost;
  for (const auto& it : rep.log) {
    if (it.accepted) {
      EXPECT_LE(it.cost, prev);
      prev = it.cost;
    }
  }
}

TEST(Lm, AllStaticLeavesStateUnchanged) {
  EstimatorState s;
  s.aux[0] = Eigen::Vector2d(-1.2, 1.0);
  const SolverReport rep = solve_lm({std::make_shared<RosenbrockFactor>()}, s, StateLayout{});
  EXPECT_EQ(rep.termination, Termination::kNoParameters);
  EXPECT_EQ(s.aux[0], Eigen::Vector2d(-1.2, 1.0));
}

TEST(Lm, RankDeficiencyIsReported) {
  // Only x0 + x1 is observed.
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Zero(1);
  s.aux[1] = Eigen::VectorXd::Zero(1);
  auto f = std::make_shared<LinearFactor>(std::vector<Key>{aux_key(0), aux_key(1)},
                                          std::vector<Eigen::MatrixXd>{Eigen::MatrixXd::Ones(1, 1),
                                                                       Eigen::MatrixXd::Ones(1, 1)},
                                          Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd());
  StateLayout layout;
  layout.add(aux_key(0), 1);
  layout.add(aux_key(1), 1);
  const SolverReport rep = solve_lm({f}, s, layout);
  EXPECT_EQ(rep.rank_defect, 1);
  // Anchoring one block restores full rank.
  EstimatorState s2;
  s2.aux = s.aux;
  s2.aux[0][0] = s2.aux[1][0] = 0.0;
  const SolverReport rep2 = solve_lm({f, scalar_factor(0, 0.0)}, s2, layout);
  EXPECT_EQ(rep2.rank_defect, 0);
}

TEST(Lm, DeterministicRepeat) {
  auto run = [] {
    EstimatorState s;
    s.aux[0] = Eigen::Vector2d(-1.2, 1.0);
    StateLayout layout;
    layout.add(aux_key(0), 2);
    return std::make_pair(solve_lm({std::make_shared<RosenbrockFactor>()}, s, layout), s.aux[0]);
  };
  const auto [r1, x1] = run();
  const auto [r2, x2] = run();
  ASSERT_EQ(r1.log.size(), r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) EXPECT_EQ(r1.log[i].cost, r2.log[i].cost);
  EXPECT_EQ(x1, x2);
}

TEST(Lm, RejectedStepsDoNotMutateState) {
  // Start on a steep wall so that early steps get rejected.
  EstimatorState s;
  s.aux[0] = Eigen::Vector2d(3.0, -3.0);
  StateLayout layout;
  layout.add(aux_key(0), 2);
  SolverConfig cfg;
  cfg.initial_damping = 1e-12;
  cfg.max_iterations = 1;
  const SolverReport rep = solve_lm({std::make_shared<RosenbrockFactor>()}, s, layout, cfg);
  ASSERT_EQ(rep.log.size(), 1u);
  if (!rep.log[0].accepted) {
    EXPECT_EQ(s.aux[0], Eigen::Vector2d(3.0, -3.0));
  } else {
    EXPECT_LT(rep.final_cost, rep.initial_cost);
  }
}

TEST(Lm, NonFiniteFactorIsIdentified) {
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN());
  StateLayout layout;
  layout.add(aux_key(0), 1);
  EXPECT_THROW(linearize({scalar_factor(0, 0.0)}, s, layout), NonFiniteFactorError);
}

}  // namespace
}  // namespace ctsmooth
