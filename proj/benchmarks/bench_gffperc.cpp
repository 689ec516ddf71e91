#include <benchmark/benchmark.h>

#include "gffperc/coarse_grain.hpp"
#include "gffperc/excursion.hpp"
#include "gffperc/gff.hpp"
#include "gffperc/green.hpp"
#include "gffperc/potential.hpp"
#include "gffperc/tilt.hpp"

using namespace gffperc;

namespace {

const GreenOracle& g3() {
    static GreenOracle g(3);
    return g;
}

void BM_GreenFarPoint(benchmark::State& st) {
    const GreenOracle g(3);
    int k = 0;
    for (auto _ : st) {
        // fresh displacements each round, so the cache does not answer
        benchmark::DoNotOptimize(g(Point{40 + k % 50, 7 + k / 50 % 30, 3}));
        ++k;
    }
}
BENCHMARK(BM_GreenFarPoint);

void BM_LineCapacity(benchmark::State& st) {
    const int N = int(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(line_capacity_fast(N, g3()).report.value);
    st.SetComplexityN(N);
}
BENCHMARK(BM_LineCapacity)->RangeMultiplier(4)->Range(1 << 10, 1 << 14)->Unit(benchmark::kMillisecond);

void BM_SampleDirichlet(benchmark::State& st) {
    BoxSpectral spec(Box::ball(Point::zero(3), int(st.range(0))));
    std::uint32_t r = 0;
    for (auto _ : st) benchmark::DoNotOptimize(sample_dirichlet(spec, 1, r++).values.data());
    st.SetItemsProcessed(st.iterations() * spec.box().volume());
}
BENCHMARK(BM_SampleDirichlet)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_LabelClusters(benchmark::State& st) {
    const auto f = sample_dirichlet(Box::ball(Point::zero(3), int(st.range(0))), 2, 0);
    for (auto _ : st) benchmark::DoNotOptimize(label_clusters(f, 0.0, Adjacency::Nearest).count);
    st.SetItemsProcessed(st.iterations() * f.box.volume());
}
BENCHMARK(BM_LabelClusters)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_OneArmThresholds(benchmark::State& st) {
    const auto f = sample_dirichlet(Box::ball(Point::zero(3), 32), 3, 0);
    for (auto _ : st) benchmark::DoNotOptimize(one_arm_thresholds(f, 16).data());
}
BENCHMARK(BM_OneArmThresholds)->Unit(benchmark::kMillisecond);

void BM_CoarseGrainD3(benchmark::State& st) {
    CGParams p;
    p.N = 1200;
    p.K = 4;
    p.L = 10;
    p.relaxed = true;
    const auto path = random_crossing_path(p.lambda(), 5, 0);
    for (auto _ : st) benchmark::DoNotOptimize(coarse_grain_d3(path, p).n());
}
BENCHMARK(BM_CoarseGrainD3)->Unit(benchmark::kMicrosecond);

void BM_HarmonicDecompose(benchmark::State& st) {
    const RenormLattice lat{3, 2, 4};
    const auto f = sample_dirichlet(Box::ball(Point::zero(3), 14), 4, 0);
    for (auto _ : st) benchmark::DoNotOptimize(harmonic_decompose(f, Point::zero(3), lat).xi.data());
}
BENCHMARK(BM_HarmonicDecompose)->Unit(benchmark::kMillisecond);

void BM_SampleTilted(benchmark::State& st) {
    const auto t = make_tilt(PointSet::from_box(Box::tube(3, 16, 2)), Box::tube(3, 16, 2).expanded(8), 0.5);
    std::uint32_t r = 0;
    for (auto _ : st) benchmark::DoNotOptimize(log_weight(t, sample_tilted(t, 6, r++)));
}
BENCHMARK(BM_SampleTilted)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
