#include <benchmark/benchmark.h>

#include <numeric>

#include <trofi/dataset.hpp>
#include <trofi/envs.hpp>
#include <trofi/nn.hpp>
#include <trofi/policy.hpp>
#include <trofi/reward_model.hpp>
#include <trofi/runtime.hpp>

namespace {

using namespace trofi;

Eigen::MatrixXd noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

void MlpForward(benchmark::State& state) {
  Rng rng(0);
  const auto width = static_cast<int>(state.range(0));
  const auto net = nn::Mlp::init({8, width, width, 1}, nn::Activation::Relu, nn::Activation::Identity, rng);
  const Eigen::MatrixXd x = noise(256, 8, 1);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(MlpForward)->Arg(32)->Arg(64)->Arg(256);

void MlpBackward(benchmark::State& state) {
  Rng rng(0);
  const auto width = static_cast<int>(state.range(0));
  const auto net = nn::Mlp::init({8, width, width, 1}, nn::Activation::Relu, nn::Activation::Identity, rng);
  const Eigen::MatrixXd x = noise(256, 8, 1);
  const Eigen::MatrixXd up = noise(256, 1, 2);
  for (auto _ : state) {
    nn::Tape tape;
    net.forward(x, tape);
    benchmark::DoNotOptimize(net.backward(tape, up));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(MlpBackward)->Arg(32)->Arg(64)->Arg(256);

void TrexLossStep(benchmark::State& state) {
  Rng rng(0);
  const auto net = nn::Mlp::init({2, 32, 32, 1}, nn::Activation::Relu, nn::Activation::Identity, rng);
  const auto len = static_cast<Eigen::Index>(state.range(0));
  std::vector<SnippetPair> pairs;
  for (int i = 0; i < 64; ++i) pairs.push_back({noise(len, 2, 2 * i), noise(len, 2, 2 * i + 1), 0, 1});
  for (auto _ : state) benchmark::DoNotOptimize(trex_loss(net, pairs));
}
BENCHMARK(TrexLossStep)->Arg(25)->Arg(100);

struct PolicySetup {
  Agent agent;
  Batch batch;
  PolicyConfig config;

  PolicySetup() {
    const auto env = make_env("lineworld");
    const auto data = generate_dataset(*env, Tier::Medium, 2000, 0);
    const auto stats = compute_norm_stats(data);
    const auto m = to_matrices(apply_normalization(data, stats));
    std::vector<Eigen::Index> rows(256);
    std::iota(rows.begin(), rows.end(), 0);
    batch = gather_batch(m, rows);
    agent = make_agent(env->spec(), stats, config);
  }
};

void CriticUpdate(benchmark::State& state) {
  PolicySetup s;
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(critic_update(s.agent, s.batch, s.config, rng));
}
BENCHMARK(CriticUpdate);

void ActorUpdate(benchmark::State& state) {
  PolicySetup s;
  for (auto _ : state) benchmark::DoNotOptimize(actor_update(s.agent, s.batch, s.config));
}
BENCHMARK(ActorUpdate);

void GenerateDataset(benchmark::State& state) {
  const auto env = make_env("pointmass2d");
  for (auto _ : state) benchmark::DoNotOptimize(generate_dataset(*env, Tier::Medium, 10000, 0));
  state.SetItemsProcessed(state.iterations() * 10000);
}
BENCHMARK(GenerateDataset)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  trofi::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
