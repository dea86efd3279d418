// Wall-clock benchmarks for the planner hot paths. The headline comparison is
// the parallel hierarchical decoder against the autoregressive reference on
// the same backbone.
#include <benchmark/benchmark.h>

#include "cola/model.hpp"
#include "cola/trainer.hpp"

using namespace cola;

namespace {

struct Fixture {
    RunConfig cfg;  // full-size defaults: dim 64, 4 layers, T=8
    ColaModel<float> model;
    SceneSample scene;

    Fixture() : model(cfg, 1) {
        Rng rng(2);
        model.bank().centroids.value =
            normal_init<float>(rng, {cfg.meta_actions, 2 * cfg.horizon}, 1.0);
        scene = generate_scene(3, Family::left_turn, cfg);
        scene.label = 0;
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

static void BM_FullPlanCycle(benchmark::State& state) {
    Fixture& f = fixture();
    for (auto _ : state)
        benchmark::DoNotOptimize(f.model.plan(f.scene, f.cfg.candidates));
}
BENCHMARK(BM_FullPlanCycle)->Unit(benchmark::kMillisecond);

static void BM_ParallelDecode(benchmark::State& state) {
    Fixture& f = fixture();
    Tape<float> tp;
    tp.grad_enabled = false;
    Var<float> ego = f.model.ego_embedding(tp, f.scene.ego);
    Var<float> q_v = f.model.understand(tp, f.scene);
    RouterOutput<float> router =
        f.model.recognize(tp, q_v, ego, RunMode::infer, f.cfg.tau_end, nullptr);
    Var<float> q_m = f.model.rethink(tp, router.pruned, ego, f.model.bank().entries(tp));
    Decision<float> d = f.model.decide(tp, q_m, router.pruned, ego, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(
            f.model.decode(tp, router.pruned, d.strategies, f.model.stage_plan()));
}
BENCHMARK(BM_ParallelDecode)->Unit(benchmark::kMillisecond);

static void BM_AutoregressiveDecode(benchmark::State& state) {
    Fixture& f = fixture();
    Tape<float> tp;
    tp.grad_enabled = false;
    Var<float> ego = f.model.ego_embedding(tp, f.scene.ego);
    Var<float> q_v = f.model.understand(tp, f.scene);
    RouterOutput<float> router =
        f.model.recognize(tp, q_v, ego, RunMode::infer, f.cfg.tau_end, nullptr);
    Var<float> q_m = f.model.rethink(tp, router.pruned, ego, f.model.bank().entries(tp));
    Decision<float> d = f.model.decide(tp, q_m, router.pruned, ego, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(f.model.decode_autoregressive(tp, router.pruned, d.top1()));
}
BENCHMARK(BM_AutoregressiveDecode)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
    Fixture& f = fixture();
    Rng noise(5);
    for (auto _ : state) {
        Tape<float> tp;
        StepLoss<float> loss = f.model.step_loss(tp, f.scene, 0.5, &noise);
        f.model.params().zero_grad();
        tp.backward(loss.total);
        benchmark::DoNotOptimize(loss.total.value().data[0]);
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_MaskedAttention(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0)), d = 64;
    Rng rng(7);
    Tensor<float> qt = normal_init<float>(rng, {n, d}, 1.0);
    Tensor<float> kt = normal_init<float>(rng, {n, d}, 1.0);
    Tensor<float> vt = normal_init<float>(rng, {n, d}, 1.0);
    std::vector<uint8_t> allowed(static_cast<size_t>(n) * n, 1);
    for (auto _ : state) {
        Tape<float> tp;
        tp.grad_enabled = false;
        benchmark::DoNotOptimize(masked_attention(tp.constant(qt), tp.constant(kt),
                                                  tp.constant(vt), allowed,
                                                  1.0f / std::sqrt(float(d))));
    }
}
BENCHMARK(BM_MaskedAttention)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
