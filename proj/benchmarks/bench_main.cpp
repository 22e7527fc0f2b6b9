#include <benchmark/benchmark.h>

#include "flowcast/decoder.hpp"
#include "flowcast/field.hpp"
#include "flowcast/kernels.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/wave_sim.hpp"

using namespace flowcast;

namespace {

void fill_normal(Tensor& t, Rng& rng, double scale = 0.05) {
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<Real>(scale * rng.normal());
}

void bench_attention(benchmark::State& state) {
  const int L = static_cast<int>(state.range(0));
  const int d = 192, heads = 4;
  Rng rng(1);
  Tensor x({L, d}), y({L, d});
  fill_normal(x, rng);
  nn::Param wq("wq", {d, d}), bq("bq", {d});
  nn::Param wk("wk", {d, d}), bk("bk", {d});
  nn::Param wv("wv", {d, d}), bv("bv", {d});
  nn::Param wo("wo", {d, d}), bo("bo", {d});
  for (nn::Param* p : {&wq, &wk, &wv, &wo}) fill_normal(p->value, rng);
  nn::AttnWeights w{wq.value.data(), bq.value.data(), wk.value.data(),
                    bk.value.data(), wv.value.data(), bv.value.data(),
                    wo.value.data(), bo.value.data()};
  nn::AttnActs acts;
  for (auto _ : state) {
    nn::mha_forward(x.data(), L, d, heads, w, acts, y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void bench_gat_layer(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(2);
  GatLayer layer("bench/gat", 32, 48);
  for (nn::Param* p : layer.params()) fill_normal(p->value, rng);
  Tensor x({side * side, 32}), y({side * side, 48});
  fill_normal(x, rng);
  GatActs acts;
  for (auto _ : state) {
    gat_forward(layer, x.data(), y.data(), side, side, acts);
    benchmark::DoNotOptimize(y.data());
  }
}

void bench_interpolate(benchmark::State& state) {
  const int nodes = static_cast<int>(state.range(0));
  Rng rng(3);
  IrregularMesh mesh;
  mesh.channels = 3;
  for (int i = 0; i < nodes; ++i) {
    mesh.node_positions.push_back({rng.uniform(0.0, 96.0), rng.uniform(0.0, 96.0)});
    for (int c = 0; c < 3; ++c) mesh.node_values.push_back(rng.normal());
  }
  // Fan triangulation; geometric quality is irrelevant to throughput.
  for (int i = 0; i + 2 < nodes; ++i)
    mesh.triangles.push_back({0, i + 1, i + 2});
  GridSpec spec;
  spec.p_x = 96;
  spec.p_y = 96;
  spec.bbox = BBox{.x_min = 0.0, .x_max = 96.0, .y_min = 0.0, .y_max = 96.0};
  for (auto _ : state) {
    FlowState out = interpolate_mesh_to_grid(mesh, spec);
    benchmark::DoNotOptimize(out.values.data());
  }
}

void bench_wave_step(benchmark::State& state) {
  const int grid = static_cast<int>(state.range(0));
  wave::Grid2D u = wave::gaussian_pulse(grid, grid / 2.0, grid / 2.0, 8.0, 1.0);
  wave::Grid2D v(grid);
  for (auto _ : state) {
    wave::rk4_step(u, v, 2.5, 0.01, nullptr);
    benchmark::DoNotOptimize(u.a.data());
  }
}

}  // namespace

BENCHMARK(bench_attention)->Arg(216)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_gat_layer)->Arg(96)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_interpolate)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_wave_step)->Arg(100)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
