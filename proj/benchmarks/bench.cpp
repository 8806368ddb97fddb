#include <benchmark/benchmark.h>

#include "laddersim/dynamics.hpp"
#include "laddersim/hull.hpp"
#include "laddersim/oracle.hpp"
#include "laddersim/rng.hpp"
#include "laddersim/teacher.hpp"

namespace {

laddersim::TeacherGraph ladder() {
  laddersim::TeacherSpec spec;
  spec.regions = {laddersim::Region{"l1", {}, 4, 4, 0},
                  laddersim::Region{"l2", {}, 4, 4, 0},
                  laddersim::Region{"root", {"l1", "l2"}, 4, 4, 0}};
  spec.fns["root"] = "xor";
  spec.leaf_prior = "random:7";
  return laddersim::TeacherGraph::build(spec);
}

void BM_TrainStep(benchmark::State& state) {
  const auto g = ladder();
  const auto tables = laddersim::make_tables(g);
  auto w = laddersim::init_weights(g.tree(), 1);
  for (auto _ : state) {
    auto s = laddersim::forward_pass(g.tree(), tables, w);
    laddersim::backward_pass(g.tree(), tables, w, s);
    auto dW = laddersim::weight_update(g.tree(), tables, w, s);
    benchmark::DoNotOptimize(dW);
  }
}
BENCHMARK(BM_TrainStep);

void BM_OracleEval(benchmark::State& state) {
  const auto g = ladder();
  const auto im = laddersim::InputModel::delta_onehot(g.tree());
  const auto inputs = laddersim::enumerate_inputs(g, im);
  const auto w = laddersim::init_weights(g.tree(), 1);
  for (auto _ : state) {
    auto ev = laddersim::net_forward_backward(g, im, inputs, w);
    benchmark::DoNotOptimize(ev);
  }
}
BENCHMARK(BM_OracleEval);

void BM_VertexSet(benchmark::State& state) {
  laddersim::Rng rng(3);
  const int n = static_cast<int>(state.range(0));
  Eigen::MatrixXd P(n, n);
  for (int i = 0; i < n; ++i) {
    const auto row = rng.dirichlet(n);
    for (int j = 0; j < n; ++j) P(i, j) = row[j];
  }
  for (auto _ : state) {
    auto rep = laddersim::vertex_set(P);
    benchmark::DoNotOptimize(rep);
  }
}
BENCHMARK(BM_VertexSet)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
