#include "ctsmooth/solver.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <fmt/format.h>

namespace ctsmooth {

void StateLayout::add(const Key& key, int dim) {
  if (index_.contains(key)) throw std::logic_error("duplicate layout key " + to_string(key));
  if (dim <= 0) throw std::invalid_argument("layout block " + to_string(key) + " has no dimension");
  index_.emplace(key, static_cast<int>(entries_.size()));
  entries_.push_back({key, total_, dim});
  total_ += dim;
}

void StateLayout::add(const EstimatorState& state, const Key& key) {
  if (contains(key)) return;
  add(key, state.dim(key));
}

int StateLayout::offset(const Key& key) const {
  const auto it = index_.find(key);
  return it == index_.end() ? -1 : entries_[it->second].offset;
}

std::vector<Key> StateLayout::keys() const {
  std::vector<Key> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.key);
  return out;
}

int FactorCounts::total_skipped() const {
  int n = 0;
  for (int s : skipped) n += s;
  return n;
}

NonFiniteFactorError::NonFiniteFactorError(std::size_t index, FactorType type)
    : std::runtime_error(fmt::format("factor #{} ({}) produced a non-finite residual or Jacobian", index,
                                     factor_type_name(type))),
      index_(index) {}

bool whiten_factor(const Factor& factor, const EstimatorState& state, bool with_jacobians, FactorEval& scratch,
                   WhitenedFactor& out) {
  if (!factor.evaluate(state, scratch, with_jacobians)) return false;
  out.residual = scratch.residual.cwiseProduct(scratch.sqrt_weight);
  const double sq = out.residual.squaredNorm();
  double scale = 1.0;
  const double delta = factor.huber_delta;
  if (delta > 0.0 && sq > delta * delta) {
    const double e = std::sqrt(sq);
    out.cost = 0.5 * (2.0 * delta * e - delta * delta);
    scale = std::sqrt(delta / e);
    out.residual *= scale;
  } else {
    out.cost = 0.5 * sq;
  }
  out.jacobians.clear();
  if (with_jacobians) {
    for (auto& jb : scratch.jacobians) {
      JacobianBlock w{jb.key, scratch.sqrt_weight.asDiagonal() * jb.block};
      if (scale != 1.0) w.block *= scale;
      out.jacobians.push_back(std::move(w));
    }
  }
  return true;
}

Linearization linearize(const std::vector<FactorPtr>& factors, const EstimatorState& state,
                        const StateLayout& layout) {
  const int n = layout.total_dim();
  Linearization lin;
  lin.H = Eigen::MatrixXd::Zero(n, n);
  lin.b = Eigen::VectorXd::Zero(n);
  FactorEval scratch;
  WhitenedFactor wf;
  std::vector<std::pair<int, const Eigen::MatrixXd*>> active;
  for (std::size_t fi = 0; fi < factors.size(); ++fi) {
    const Factor& f = *factors[fi];
    const int type = static_cast<int>(f.type());
    if (!whiten_factor(f, state, true, scratch, wf)) {
      ++lin.counts.skipped[type];
      continue;
    }
    if (!wf.residual.allFinite()) throw NonFiniteFactorError(fi, f.type());
    ++lin.counts.used[type];
    lin.cost += wf.cost;
    active.clear();
    for (const auto& jb : wf.jacobians) {
      if (!jb.block.allFinite()) throw NonFiniteFactorError(fi, f.type());
      const int off = layout.offset(jb.key);
      if (off >= 0) active.emplace_back(off, &jb.block);
    }
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto& [oa, ja] = active[a];
      lin.b.segment(oa, ja->cols()).noalias() += ja->transpose() * wf.residual;
      for (std::size_t c = a; c < active.size(); ++c) {
        const auto& [oc, jc] = active[c];
        if (oc >= oa) {
          lin.H.block(oa, oc, ja->cols(), jc->cols()).noalias() += ja->transpose() * *jc;
        } else {
          lin.H.block(oc, oa, jc->cols(), ja->cols()).noalias() += jc->transpose() * *ja;
        }
      }
    }
  }
  lin.H.triangularView<Eigen::StrictlyLower>() = lin.H.transpose().triangularView<Eigen::StrictlyLower>();
  return lin;
}

double total_cost(const std::vector<FactorPtr>& factors, const EstimatorState& state, FactorCounts* counts) {
  double cost = 0.0;
  FactorEval scratch;
  WhitenedFactor wf;
  for (const auto& f : factors) {
    const int type = static_cast<int>(f->type());
    if (!whiten_factor(*f, state, false, scratch, wf)) {
      if (counts) ++counts->skipped[type];
      continue;
    }
    if (counts) ++counts->used[type];
    cost += wf.cost;
  }
  return cost;
}

std::optional<Eigen::VectorXd> solve_normal_equations(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, double mu) {
  if (H.rows() != b.size() || H.cols() != b.size()) throw std::invalid_argument("normal equations size mismatch");
  if (b.size() == 0) return Eigen::VectorXd();
  Eigen::MatrixXd a = H;
  if (mu > 0.0) {
    const Eigen::VectorXd d = H.diagonal().cwiseMax(1e-6).cwiseMin(1e32);
    a.diagonal() += mu * d;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Eigen::VectorXd delta = llt.solve(-b);
  if (!delta.allFinite()) return std::nullopt;
  return delta;
}

int rank_defect(const Eigen::MatrixXd& H, double tol) {
  const int n = static_cast<int>(H.rows());
  if (n == 0) return 0;
  Eigen::VectorXd s(n);
  int zero_diag = 0;
  for (int i = 0; i < n; ++i) {
    const double d = H(i, i);
    if (d > 0.0) {
      s[i] = 1.0 / std::sqrt(d);
    } else {
      s[i] = 0.0;
      ++zero_diag;
    }
  }
  const Eigen::MatrixXd scaled = s.asDiagonal() * H * s.asDiagonal();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(scaled);
  const Eigen::VectorXd piv = ldlt.vectorD();
  const double top = std::max(piv.cwiseAbs().maxCoeff(), 1e-300);
  int defect = 0;
  for (int i = 0; i < n; ++i) {
    if (piv[i] <= tol * top) ++defect;
  }
  return std::max(defect, zero_diag);
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kNoParameters: return "no_parameters";
    case Termination::kGradientTolerance: return "gradient_tolerance";
    case Termination::kCostTolerance: return "cost_tolerance";
    case Termination::kParameterTolerance: return "parameter_tolerance";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kDiverged: return "diverged";
  }
  return "unknown";
}

namespace {

std::vector<BlockValue> backup(const EstimatorState& state, const StateLayout& layout) {
  std::vector<BlockValue> out;
  out.reserve(layout.size());
  for (const auto& e : layout.entries()) out.push_back(state.value(e.key));
  return out;
}

void restore(EstimatorState& state, const StateLayout& layout, const std::vector<BlockValue>& saved) {
  for (std::size_t i = 0; i < saved.size(); ++i) state.set_value(layout.entries()[i].key, saved[i]);
}

}  // namespace

SolverReport solve_lm(const std::vector<FactorPtr>& factors, EstimatorState& state, const StateLayout& layout,
                      const SolverConfig& config) {
  SolverReport report;
  Linearization lin = linearize(factors, state, layout);
  report.initial_cost = report.final_cost = lin.cost;
  report.counts = lin.counts;
  if (layout.total_dim() == 0) {
    report.termination = Termination::kNoParameters;
    return report;
  }
  if (config.check_rank) report.rank_defect = rank_defect(lin.H, config.rank_tol);

  double mu = config.initial_damping;
  double cost = lin.cost;
  report.termination = Termination::kMaxIterations;
  bool relinearize = false;
  for (int it = 0; it < config.max_iterations; ++it) {
    if (relinearize) {
      lin = linearize(factors, state, layout);
      cost = lin.cost;
      relinearize = false;
    }
    if (lin.b.size() == 0 || lin.b.cwiseAbs().maxCoeff() < config.gradient_tol) {
      report.termination = Termination::kGradientTolerance;
      break;
    }
    report.iterations = it + 1;
    const auto delta = solve_normal_equations(lin.H, lin.b, mu);
    if (!delta) {
      report.log.push_back({it, cost, mu, 0.0, false});
      mu *= config.damping_up;
      if (mu > config.max_damping) {
        report.termination = Termination::kDiverged;
        break;
      }
      continue;
    }
    const double step = delta->norm();
    if (step < config.parameter_tol) {
      report.log.push_back({it, cost, mu, step, false});
      report.termination = Termination::kParameterTolerance;
      break;
    }
    const auto saved = backup(state, layout);
    for (const auto& e : layout.entries()) state.retract(e.key, delta->segment(e.offset, e.dim));
    FactorCounts cand;
    const double new_cost = total_cost(factors, state, &cand);
    // Costs are only comparable over the same set of evaluable factors.
    const bool same_support = cand.total_skipped() <= lin.counts.total_skipped();
    if (std::isfinite(new_cost) && new_cost < cost && same_support) {
      report.log.push_back({it, new_cost, mu, step, true});
      ++report.accepted_steps;
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      cost = new_cost;
      mu = std::max(mu * config.damping_down, config.min_damping);
      relinearize = true;
      if (rel < config.relative_cost_tol) {
        report.termination = Termination::kCostTolerance;
        break;
      }
    } else {
      report.log.push_back({it, new_cost, mu, step, false});
      restore(state, layout, saved);
      mu *= config.damping_up;
      if (mu > config.max_damping) {
        report.termination = Termination::kDiverged;
        break;
      }
    }
  }
  report.final_cost = cost;
  FactorCounts counts;
  total_cost(factors, state, &counts);
  report.counts = counts;
  return report;
}

}  // namespace ctsmooth
