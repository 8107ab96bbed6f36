#include <benchmark/benchmark.h>

#include <filesystem>
#include <string>

#include "ctdse/case_io.hpp"
#include "ctdse/coordination.hpp"
#include "ctdse/dsse.hpp"
#include "ctdse/powerflow.hpp"
#include "ctdse/tsse.hpp"

using namespace ctdse;

namespace {

std::filesystem::path case_path(int which) {
  const std::filesystem::path data = CTDSE_DATA_DIR;
  return which == 0 ? data / "desk" / "desk.json" : data / "t30" / "t30.json";
}

// One system per shipped case, built on first use.
const coordination::CtdseSystem& system_for(int which) {
  static const auto make = [](int w) {
    const auto loaded = load_integrated(case_path(w));
    return coordination::CtdseSystem(loaded.integrated, plans_or_default(loaded), NoiseSpec{});
  };
  static const coordination::CtdseSystem desk = make(0);
  static const coordination::CtdseSystem t30 = make(1);
  return which == 0 ? desk : t30;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "desk" : "t30"); }

void BM_GlobalPowerFlow(benchmark::State& state) {
  const auto loaded = load_integrated(case_path(static_cast<int>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(solve_global_pf(loaded.integrated));
  label(state);
}

void BM_Tsse(benchmark::State& state) {
  const auto& system = system_for(static_cast<int>(state.range(0)));
  const auto meas = system.noisy_measurements(1, 0).transmission;
  const auto model = tsse::build_tsse_model(system.integrated().transmission, system.transmission_admittance(), meas);
  const Eigen::VectorXd z = meas.values();
  for (auto _ : state) benchmark::DoNotOptimize(tsse::solve_tsse(model, z));
  label(state);
}

void BM_Dsse(benchmark::State& state) {
  const auto& system = system_for(static_cast<int>(state.range(0)));
  const auto meas = system.noisy_measurements(1, 0);
  const auto& feeders = system.integrated().feeders;
  const int f = static_cast<int>(feeders.size()) - 1;
  const dsse::DsseModel model(feeders[f], meas.feeders[f]);
  const Eigen::VectorXd z = meas.feeders[f].values();
  for (auto _ : state) benchmark::DoNotOptimize(dsse::solve_dsse(model, z));
  state.SetLabel(std::string(state.range(0) == 0 ? "desk" : "t30") + ", " + std::to_string(feeders[f].size()) +
                 " buses");
}

void BM_Trial(benchmark::State& state) {
  const auto& system = system_for(static_cast<int>(state.range(0)));
  const auto meas = system.noisy_measurements(1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(system.run(meas));
  label(state);
}

}  // namespace

BENCHMARK(BM_GlobalPowerFlow)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Tsse)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Dsse)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Trial)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
