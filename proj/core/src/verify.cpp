#include "ctsmooth/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>

#include "ctsmooth/marginalization.hpp"
#include "ctsmooth/solver.hpp"

namespace ctsmooth {

const BlockCheck* JacobianCheckResult::worst() const {
  const BlockCheck* w = nullptr;
  for (const auto& b : blocks) {
    if (!w || b.rel_err > w->rel_err) w = &b;
  }
  return w;
}

JacobianCheckResult check_factor_jacobian(const Factor& factor, EstimatorState& state,
                                          const JacobianCheckOptions& options) {
  JacobianCheckResult result;
  FactorEval analytic;
  if (!factor.evaluate(state, analytic, true)) return result;
  if (options.corrupt) options.corrupt(analytic);

  FactorEval probe;
  const double h = options.step;
  result.pass = true;
  for (const auto& jb : analytic.jacobians) {
    const int dim = static_cast<int>(jb.block.cols());
    Eigen::MatrixXd numeric(jb.block.rows(), dim);
    const BlockValue original = state.value(jb.key);
    for (int k = 0; k < dim; ++k) {
      Eigen::VectorXd r[4];
      const double steps[4] = {h, -h, 2 * h, -2 * h};
      for (int q = 0; q < 4; ++q) {
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(dim);
        delta[k] = steps[q];
        state.retract(jb.key, delta);
        const bool ok = factor.evaluate(state, probe, false);
        r[q] = probe.residual;
        state.set_value(jb.key, original);
        if (!ok) {
          result.pass = false;
          return result;
        }
      }
      // Fourth-order stencil, so h can be large enough that roundoff on big residuals
      // (accelerometer terms, square-root priors) stays below the tolerance.
      numeric.col(k) = (8.0 * (r[0] - r[1]) - (r[2] - r[3])) / (12.0 * h);
    }
    BlockCheck bc;
    bc.key = jb.key;
    bc.abs_err = (jb.block - numeric).cwiseAbs().maxCoeff();
    const double scale = std::max(jb.block.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
    bc.rel_err = scale > 0.0 ? bc.abs_err / scale : 0.0;
    bc.pass = bc.abs_err <= options.abs_tol || bc.rel_err <= options.rel_tol;
    result.pass = result.pass && bc.pass;
    result.blocks.push_back(bc);
  }
  result.evaluated = true;
  return result;
}

bool JacobianSuiteReport::pass() const {
  for (const auto& s : per_type) {
    if (s.failures > 0 || s.unevaluated > 0) return false;
  }
  return true;
}

namespace {

using Rng = std::mt19937_64;

Vec3 randn3(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  return {n(rng), n(rng), n(rng)};
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Rotation random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
  return Rotation::from_quaternion(Eigen::Quaterniond(w, x, y, z));
}

EstimatorState random_state(Rng& rng, double rot_step) {
  KnotGrid grid{uniform(rng, -1.0, 1.0), uniform(rng, 0.02, 0.1), 0};
  const int n = 10;
  std::vector<Rotation> rots{random_rotation(rng)};
  std::vector<Vec3> pos{randn3(rng, 1.0)};
  for (int i = 1; i < n; ++i) {
    rots.push_back(rots.back() * exp_so3(randn3(rng, rot_step)));
    pos.push_back(pos.back() + randn3(rng, 0.2));
  }
  EstimatorState s;
  s.rot = So3Spline(grid, rots);
  s.pos = R3Spline(grid, pos);
  s.biases[0] = {randn3(rng, 0.01), randn3(rng, 0.1)};
  s.biases[1] = {randn3(rng, 0.01), randn3(rng, 0.1)};
  s.offsets.imu = uniform(rng, -0.01, 0.01);
  s.offsets.cam = uniform(rng, -0.01, 0.01);
  s.offsets.max_abs = 0.05;
  return s;
}

/// Corrected time inside the range, kept away from knots (by more than the stencil reach) where jerk is discontinuous.
double random_tau(Rng& rng, const KnotGrid& g) {
  for (;;) {
    const double tau = uniform(rng, g.min_time() + 1e-3, g.max_time() - 1e-3);
    const double u = (tau - g.t0) / g.dt;
    const double frac = u - std::floor(u);
    if (frac > 0.1 && frac < 0.9) return tau;
  }
}

Extrinsic random_extrinsic(Rng& rng) { return {exp_so3(randn3(rng, 0.5)), randn3(rng, 0.2)}; }

/// Adds a landmark visible from both camera times; false if none was found.
bool add_visible_landmark(Rng& rng, EstimatorState& s, int id, double tau_a, double tau_b, const Extrinsic& cam) {
  const CameraPose ca = camera_pose(s, tau_a, cam);
  const CameraPose cb = camera_pose(s, tau_b, cam);
  for (int attempt = 0; attempt < 200; ++attempt) {
    const double z = uniform(rng, 2.0, 6.0);
    const Vec3 pc(uniform(rng, -0.5, 0.5) * z, uniform(rng, -0.5, 0.5) * z, z);
    const Vec3 world = ca.r_gc * pc + ca.p_gc;
    const Vec3 pb = cb.r_gc.transpose() * (world - cb.p_gc);
    if (pb.z() < 0.5) continue;
    LandmarkInvDepth lm;
    lm.id = id;
    lm.anchor_frame = 0;
    lm.anchor_stamp = tau_a - s.offsets.cam;
    lm.anchor_obs = pc.head<2>() / z;
    lm.inv_depth = 1.0 / z;
    s.landmarks[id] = lm;
    return true;
  }
  return false;
}

/// Builds a random (state, factor) pair of the given type.
std::pair<EstimatorState, FactorPtr> random_problem(Rng& rng, FactorType type) {
  ImuNoise noise;
  switch (type) {
    case FactorType::kImu: {
      EstimatorState s = random_state(rng, 0.3);
      const double tau = random_tau(rng, s.grid());
      ImuMeas m{tau - s.offsets.imu, randn3(rng, 1.0), randn3(rng, 5.0)};
      return {std::move(s), std::make_shared<ImuFactor>(m, 1, noise)};
    }
    case FactorType::kBias: {
      EstimatorState s = random_state(rng, 0.3);
      return {std::move(s), std::make_shared<BiasFactor>(0, 1, noise, uniform(rng, 0.05, 0.5))};
    }
    case FactorType::kLidar: {
      EstimatorState s = random_state(rng, 0.3);
      LidarPointMeas m{random_tau(rng, s.grid()), randn3(rng, 5.0), 0, 0};
      PlaneCP plane{randn3(rng, 3.0)};
      return {std::move(s), std::make_shared<LidarFactor>(m, plane, random_extrinsic(rng), 0.01)};
    }
    case FactorType::kVisual: {
      for (;;) {
        EstimatorState s = random_state(rng, 0.1);
        const Extrinsic cam = random_extrinsic(rng);
        const double tau_a = random_tau(rng, s.grid());
        const double tau_b = random_tau(rng, s.grid());
        if (std::abs(tau_a - tau_b) < 1e-3) continue;
        if (!add_visible_landmark(rng, s, 7, tau_a, tau_b, cam)) continue;
        const CameraPose ca = camera_pose(s, tau_a, cam);
        const CameraPose cb = camera_pose(s, tau_b, cam);
        const LandmarkInvDepth& lm = s.landmarks.at(7);
        const Vec3 world = ca.r_gc * (Vec3(lm.anchor_obs.x(), lm.anchor_obs.y(), 1.0) / lm.inv_depth) + ca.p_gc;
        const Vec3 pb = cb.r_gc.transpose() * (world - cb.p_gc);
        std::normal_distribution<double> n(0.0, 0.01);
        const Vec2 obs = pb.head<2>() / pb.z() + Vec2(n(rng), n(rng));
        auto f = std::make_shared<VisualFactor>(7, tau_b - s.offsets.cam, obs, cam, 1e-3);
        return {std::move(s), f};
      }
    }
    case FactorType::kVelocity: {
      EstimatorState s = random_state(rng, 0.3);
      const double t = random_tau(rng, s.grid());
      return {std::move(s), std::make_shared<VelocityFactor>(t, randn3(rng, 1.0), 0.1)};
    }
    case FactorType::kPrior: {
      EstimatorState s = random_state(rng, 0.3);
      LandmarkInvDepth lm;
      lm.id = 3;
      lm.inv_depth = uniform(rng, 0.2, 1.0);
      s.landmarks[3] = lm;
      const std::vector<Key> keys{rot_key(2), rot_key(3), pos_key(3), gyro_bias_key(1), accel_bias_key(1),
                                  inv_depth_key(3), imu_offset_key()};
      MarginalPrior& p = s.prior;
      for (const auto& k : keys) {
        p.keys.push_back(k);
        p.dims.push_back(s.dim(k));
        const BlockValue v = s.value(k);
        if (k.kind == BlockKind::kRotCtrl) {
          p.linearization.emplace_back(std::get<Rotation>(v) * exp_so3(randn3(rng, 0.3)));
        } else {
          Eigen::VectorXd lin = std::get<Eigen::VectorXd>(v);
          for (int i = 0; i < lin.size(); ++i) lin[i] += uniform(rng, -0.005, 0.005);
          p.linearization.emplace_back(lin);
        }
      }
      const int n = p.total_dim();
      p.sqrt_info = Eigen::MatrixXd::Random(n + 2, n);
      p.r0 = Eigen::VectorXd::Random(n + 2);
      return {std::move(s), std::make_shared<PriorFactor>()};
    }
    default: break;
  }
  throw std::invalid_argument("no random generator for this factor type");
}

}  // namespace

JacobianSuiteReport run_jacobian_suite(std::uint64_t seed, int trials, std::optional<FactorType> corrupt) {
  static constexpr std::array<FactorType, 6> kTypes{FactorType::kImu, FactorType::kBias, FactorType::kLidar,
                                                    FactorType::kVisual, FactorType::kVelocity, FactorType::kPrior};
  JacobianSuiteReport report;
  for (const FactorType type : kTypes) {
    Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(type));
    FactorSuiteStats st;
    st.type = type;
    JacobianCheckOptions opts;
    if (corrupt && *corrupt == type) {
      opts.corrupt = [](FactorEval& e) {
        if (!e.jacobians.empty()) e.jacobians.back().block(0, 0) += 1.0;
      };
    }
    for (int t = 0; t < trials; ++t) {
      auto [state, factor] = random_problem(rng, type);
      const JacobianCheckResult r = check_factor_jacobian(*factor, state, opts);
      ++st.trials;
      if (!r.evaluated) {
        ++st.unevaluated;
        continue;
      }
      if (!r.pass) ++st.failures;
      for (const auto& b : r.blocks) {
        if (b.rel_err > st.max_rel_err || (!b.pass && st.worst_block.empty())) {
          st.max_rel_err = std::max(st.max_rel_err, b.rel_err);
          st.worst_block = to_string(b.key);
        }
        st.max_abs_err = std::max(st.max_abs_err, b.abs_err);
      }
    }
    report.per_type.push_back(st);
  }
  return report;
}

// --- Linear-Gaussian chains --------------------------------------------------

namespace {

/// Two Gauss-Newton steps are exact for a linear model (the second only polishes round-off).
void solve_linear(const std::vector<FactorPtr>& factors, EstimatorState& state, const StateLayout& layout) {
  for (int i = 0; i < 2; ++i) {
    const Linearization lin = linearize(factors, state, layout);
    const auto delta = solve_normal_equations(lin.H, lin.b, 0.0);
    if (!delta) throw std::runtime_error("linear chain normal equations are singular");
    for (const auto& e : layout.entries()) state.retract(e.key, delta->segment(e.offset, e.dim));
  }
}

bool touches(const std::vector<Key>& keys, const std::set<Key>& set) {
  return std::any_of(keys.begin(), keys.end(), [&](const Key& k) { return set.contains(k); });
}

}  // namespace

double linear_chain_discrepancy(std::uint64_t seed, const ChainOptions& options, int* singular_warnings) {
  Rng rng(seed);
  const int windows = std::uniform_int_distribution<int>(options.min_windows, options.max_windows)(rng);
  const int per = options.states_per_window;
  const int m = windows * per;
  std::vector<int> dims(m);
  for (auto& d : dims) d = std::uniform_int_distribution<int>(1, 3)(rng);

  struct Entry {
    int window;
    std::vector<Key> keys;
    FactorPtr factor;
  };
  std::vector<Entry> entries;
  auto random_block = [&](int rows, int cols) {
    Eigen::MatrixXd a(rows, cols);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
    return a;
  };
  auto random_vec = [&](int rows) { return Eigen::VectorXd(random_block(rows, 1)); };
  for (int i = 0; i < m; ++i) {
    const int d = dims[i];
    Eigen::MatrixXd a = random_block(d + 1, d);
    a.topRows(d) += 2.0 * Eigen::MatrixXd::Identity(d, d);
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(d + 1, uniform(rng, 0.5, 2.0));
    entries.push_back({i / per, {aux_key(i)},
                       std::make_shared<LinearFactor>(std::vector<Key>{aux_key(i)}, std::vector<Eigen::MatrixXd>{a},
                                                      random_vec(d + 1), w)});
    if (i + 1 < m) {
      const int r = 2;
      std::vector<Key> keys{aux_key(i), aux_key(i + 1)};
      entries.push_back({(i + 1) / per, keys,
                         std::make_shared<LinearFactor>(keys,
                                                        std::vector<Eigen::MatrixXd>{random_block(r, d),
                                                                                     random_block(r, dims[i + 1])},
                                                        random_vec(r), Eigen::VectorXd::Ones(r))});
    }
  }

  // Batch MAP over everything.
  EstimatorState batch;
  StateLayout batch_layout;
  for (int i = 0; i < m; ++i) {
    batch.aux[i] = Eigen::VectorXd::Zero(dims[i]);
    batch_layout.add(aux_key(i), dims[i]);
  }
  std::vector<FactorPtr> all;
  for (const auto& e : entries) all.push_back(e.factor);
  solve_linear(all, batch, batch_layout);

  // Fixed lag: keep only the newest window, marginalize the rest.
  EstimatorState fl;
  const auto prior_factor = std::make_shared<PriorFactor>();
  std::vector<Entry> active;
  int extra_id = m;
  for (int w = 0; w < windows; ++w) {
    for (int i = w * per; i < (w + 1) * per; ++i) fl.aux[i] = Eigen::VectorXd::Zero(dims[i]);
    for (const auto& e : entries) {
      if (e.window == w) active.push_back(e);
    }
    StateLayout layout;
    for (const auto& k : fl.prior.keys) layout.add(fl, k);
    for (const auto& e : active) {
      for (const auto& k : e.keys) layout.add(fl, k);
    }
    std::vector<FactorPtr> factors{prior_factor};
    for (const auto& e : active) factors.push_back(e.factor);
    solve_linear(factors, fl, layout);
    if (w + 1 == windows) break;

    std::vector<Key> keep, drop;
    for (const auto& k : layout.keys()) {
      const bool newest = k.index >= w * per && k.index < (w + 1) * per;
      (newest ? keep : drop).push_back(k);
    }
    if (options.unconstrained_block) {
      fl.aux[extra_id] = Eigen::VectorXd::Zero(2);
      drop.push_back(aux_key(extra_id++));
    }
    const std::set<Key> drop_set(drop.begin(), drop.end());
    std::vector<FactorPtr> marg{prior_factor};
    std::vector<Entry> remaining;
    for (const auto& e : active) {
      if (touches(e.keys, drop_set)) {
        marg.push_back(e.factor);
      } else {
        remaining.push_back(e);
      }
    }
    const MarginalizationResult mr = marginalize(marg, fl, keep, drop);
    if (mr.singular && singular_warnings) ++*singular_warnings;
    fl.prior = mr.prior;
    active = std::move(remaining);
    for (const auto& k : drop) fl.aux.erase(k.index);
  }

  double worst = 0.0;
  for (int i = (windows - 1) * per; i < m; ++i) {
    worst = std::max(worst, (fl.aux.at(i) - batch.aux.at(i)).cwiseAbs().maxCoeff());
  }
  return worst;
}

MarginalizationCheckReport run_marginalization_check(std::uint64_t seed, int chains) {
  MarginalizationCheckReport report;
  Eigen::Matrix2d h;
  h << 2.0, 1.0, 1.0, 2.0;
  const SchurResult hand = schur_complement(h, Eigen::Vector2d(1.0, 1.0), {0}, {1});
  report.hand_h = hand.H(0, 0);
  report.hand_b = hand.b[0];
  report.hand_case_pass = hand.H(0, 0) == 1.5 && hand.b[0] == 0.5;
  for (int c = 0; c < chains; ++c) {
    ChainOptions opts;
    opts.unconstrained_block = (c % 5 == 4);
    const double d = linear_chain_discrepancy(seed * 7919ULL + static_cast<std::uint64_t>(c), opts,
                                              &report.singular_warnings);
    report.max_discrepancy = std::max(report.max_discrepancy, d);
    ++report.chains;
  }
  return report;
}

}  // namespace ctsmooth
