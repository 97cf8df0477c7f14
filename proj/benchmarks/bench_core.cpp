#include <random>

#include <benchmark/benchmark.h>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/marginalization.hpp"
#include "ctsmooth/pipeline.hpp"
#include "ctsmooth/sim.hpp"
#include "ctsmooth/spline.hpp"
#include "ctsmooth/state.hpp"

using namespace ctsmooth;

namespace {

EstimatorState wiggly_state(int n = 12) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  auto rnd = [&](double s) -> Vec3 { return Vec3(g(rng), g(rng), g(rng)) * s; };
  const KnotGrid grid{0.0, 0.03, 0};
  std::vector<Rotation> rots{exp_so3(rnd(0.3))};
  std::vector<Vec3> pos{rnd(0.5)};
  for (int i = 1; i < n; ++i) {
    rots.push_back(rots.back() * exp_so3(rnd(0.05)));
    pos.push_back(pos.back() + rnd(0.02));
  }
  EstimatorState s;
  s.rot = So3Spline(grid, rots);
  s.pos = R3Spline(grid, pos);
  s.biases[0] = {rnd(0.01), rnd(0.05)};
  s.offsets.max_abs = 0.05;
  return s;
}

// Stamps spread over the evaluable range.
double stamp(const KnotGrid& g, int i) { return g.min_time() + (g.max_time() - g.min_time()) * ((i * 37) % 1000) / 1000.0; }

void BM_PositionSpline(benchmark::State& st) {
  const EstimatorState s = wiggly_state();
  const int order = static_cast<int>(st.range(0));
  int i = 0;
  for (auto _ : st) benchmark::DoNotOptimize(s.pos.evaluate(stamp(s.grid(), i++), order));
}
BENCHMARK(BM_PositionSpline)->DenseRange(0, 3);

void BM_RotationSpline(benchmark::State& st) {
  const EstimatorState s = wiggly_state();
  const bool jac = st.range(0) != 0;
  int i = 0;
  for (auto _ : st) benchmark::DoNotOptimize(s.rot.evaluate(stamp(s.grid(), i++), jac));
}
BENCHMARK(BM_RotationSpline)->Arg(0)->Arg(1);

void run_factor(benchmark::State& st, const Factor& f, const EstimatorState& s) {
  const bool jac = st.range(0) != 0;
  FactorEval out;
  for (auto _ : st) {
    benchmark::DoNotOptimize(f.evaluate(s, out, jac));
    benchmark::ClobberMemory();
  }
}

void BM_ImuFactor(benchmark::State& st) {
  const EstimatorState s = wiggly_state();
  const ImuFactor f(ImuMeas{0.14, Vec3(0.1, -0.2, 0.05), Vec3(0.3, 0.1, 9.7)}, 0, ImuNoise{});
  run_factor(st, f, s);
}
BENCHMARK(BM_ImuFactor)->Arg(0)->Arg(1);

void BM_LidarFactor(benchmark::State& st) {
  const EstimatorState s = wiggly_state();
  const LidarFactor f(LidarPointMeas{0.14, Vec3(1.5, -0.4, 0.3), 0, 0}, PlaneCP{Vec3(0.0, 0.0, 2.0)},
                      Extrinsic{exp_so3(Vec3(0.0, 0.1, 0.0)), Vec3(0.05, 0.0, 0.02)}, 0.01);
  run_factor(st, f, s);
}
BENCHMARK(BM_LidarFactor)->Arg(0)->Arg(1);

void BM_SchurComplement(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(n + 10, n);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < n; ++c) a(r, c) = g(rng);
  const Eigen::MatrixXd h = a.transpose() * a;
  const Eigen::VectorXd b = Eigen::VectorXd::Random(n);
  std::vector<int> keep, drop;
  for (int i = 0; i < n; ++i) (i < n / 3 ? drop : keep).push_back(i);
  for (auto _ : st) benchmark::DoNotOptimize(schur_complement(h, b, keep, drop));
}
BENCHMARK(BM_SchurComplement)->Arg(48)->Arg(96)->Arg(192);

// End-to-end smoother over a short LiDAR-inertial log; reports data seconds per wall second.
void BM_PipelineLI(benchmark::State& st) {
  ScenarioConfig c = preset("desk-viral");
  c.trajectory.duration = static_cast<double>(st.range(0));
  const GroundTruthScenario scenario = make_scenario(c);
  const MeasurementLog log = generate_measurements(scenario);
  SmootherConfig cfg;
  cfg.use_camera = false;
  for (auto _ : st) benchmark::DoNotOptimize(run_pipeline(scenario, log, cfg).ape_se3);
  st.counters["realtime_factor"] =
      benchmark::Counter(c.trajectory.duration * st.iterations(), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_PipelineLI)->Arg(3)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace

BENCHMARK_MAIN();
