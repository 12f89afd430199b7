#include <benchmark/benchmark.h>

#include <random>

#include "mensa/metrics.hpp"
#include "mensa/training.hpp"

using namespace mensa;

namespace {

data::StateEncodedDataset batch(std::size_t n, std::size_t d, std::size_t K) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nx;
  std::uniform_real_distribution<double> ut(0.1, 5.0);
  Eigen::MatrixXd x(n, d), t(n, K);
  Eigen::MatrixXi e(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = nx(rng);
    for (std::size_t k = 0; k < K; ++k) {
      t(i, k) = ut(rng);
      e(i, k) = static_cast<int>(rng() % 2);
    }
  }
  return data::encode_event_free(x, t, e);
}

MensaModel model(std::size_t d, std::size_t P) {
  MensaConfig c;
  c.num_features = d;
  c.num_states = P;
  c.num_components = 3;
  return init_model(c);
}

void BM_Loss(benchmark::State& state) {
  const auto m = model(10, 3);
  const auto b = batch(32, 10, 2);
  const train::LossOptions opts{train::Mode::Multi, {{{1, 2}}}, false};
  for (auto _ : state) benchmark::DoNotOptimize(train::total_loss(m, b, opts));
}
BENCHMARK(BM_Loss);

void BM_LossGradient(benchmark::State& state) {
  const auto m = model(10, 3);
  const auto b = batch(32, 10, 2);
  const train::LossOptions opts{train::Mode::Multi, {{{1, 2}}}, false};
  for (auto _ : state) benchmark::DoNotOptimize(train::total_loss_gradient(m, b, opts));
}
BENCHMARK(BM_LossGradient);

void BM_Harrell(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  std::vector<double> r(n), t(n);
  std::vector<int> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = u(rng);
    t[i] = u(rng);
    e[i] = static_cast<int>(rng() % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::harrell_ci(r, t, e));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Harrell)->RangeMultiplier(4)->Range(256, 65536)->Complexity();

void BM_KaplanMeier(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  std::vector<double> t(n);
  std::vector<int> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = u(rng);
    e[i] = static_cast<int>(rng() % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::km_fit(t, e));
}
BENCHMARK(BM_KaplanMeier)->Range(1024, 65536);

}  // namespace
BENCHMARK_MAIN();
