#include <benchmark/benchmark.h>

#include <taflab/attack.hpp>
#include <taflab/cam.hpp>
#include <taflab/data.hpp>
#include <taflab/nn.hpp>
#include <taflab/rng.hpp>
#include <taflab/taf.hpp>

namespace {

using namespace taflab;

SyntheticSpec bench_spec(std::size_t clips) {
    SyntheticSpec s;
    s.train_size = clips;
    s.val_size = clips;
    s.seed = 11;
    return s;
}

struct Fixture {
    VideoModel model;
    Dataset train;
    Tensor x;
    std::vector<int> labels;
    std::size_t clips;

    explicit Fixture(std::size_t n) : clips(n) {
        Rng rng(3);
        model.init(rng);
        train = generate_dataset(bench_spec(n)).first;
        Loader loader(train.clips, n);
        auto b = loader.batch(0);
        x = b.x;
        labels = b.labels;
    }
};

void bench_conv_forward(benchmark::State& state) {
    Rng rng(7);
    auto x = Tensor::from_data({64, 16, 16, 16}, [&] {
        std::vector<float> v(64 * 16 * 16 * 16);
        for (auto& e : v) e = static_cast<float>(rng.uniform());
        return v;
    }());
    auto w = Tensor::from_data({16, 16, 3, 3}, [&] {
        std::vector<float> v(16 * 16 * 3 * 3);
        for (auto& e : v) e = static_cast<float>(rng.normal()) * 0.1f;
        return v;
    }());
    for (auto _ : state) {
        auto y = conv2d(x, w, 1, 1);
        benchmark::DoNotOptimize(y.values().data());
    }
}
BENCHMARK(bench_conv_forward);

void bench_conv_backward(benchmark::State& state) {
    Rng rng(7);
    auto x = Tensor::from_data({64, 16, 16, 16}, [&] {
        std::vector<float> v(64 * 16 * 16 * 16);
        for (auto& e : v) e = static_cast<float>(rng.uniform());
        return v;
    }());
    x.node()->requires_grad = true;
    auto w = Tensor::from_data({16, 16, 3, 3}, [&] {
        std::vector<float> v(16 * 16 * 3 * 3);
        for (auto& e : v) e = static_cast<float>(rng.normal()) * 0.1f;
        return v;
    }());
    w.node()->requires_grad = true;
    for (auto _ : state) {
        auto loss = reduce_mean(conv2d(x, w, 1, 1), {});
        backward(loss);
        benchmark::DoNotOptimize(w.node()->ensure_grad().data());
        zero_all_grads(loss);
    }
}
BENCHMARK(bench_conv_backward);

void bench_model_forward(benchmark::State& state) {
    Fixture f(16);
    for (auto _ : state) {
        auto out = f.model.forward(f.x, f.clips, BnPath::clean, Mode::eval);
        benchmark::DoNotOptimize(out.logits.values().data());
    }
}
BENCHMARK(bench_model_forward);

void bench_cam_batch(benchmark::State& state) {
    Fixture f(16);
    for (auto _ : state) {
        auto stacks = compute_cam_batch(f.model, f.x, f.clips, f.labels);
        benchmark::DoNotOptimize(stacks.front().maps.values().data());
        f.model.zero_grad();
    }
}
BENCHMARK(bench_cam_batch);

void bench_attack_step(benchmark::State& state) {
    Fixture f(16);
    AttackConfig cfg;
    cfg.inclusion = InclusionPolicy::all;
    for (auto _ : state) {
        Rng rng(5);
        auto aug = attack_batch(f.model, f.x, f.clips, f.labels, cfg, rng);
        benchmark::DoNotOptimize(aug.clips.values().data());
    }
}
BENCHMARK(bench_attack_step);

void bench_train_step(benchmark::State& state) {
    Fixture f(16);
    Sgd opt;
    auto params = f.model.parameters();
    for (auto _ : state) {
        auto out = f.model.forward(f.x, f.clips, BnPath::clean, Mode::train);
        auto loss = cross_entropy(out.logits, f.labels);
        f.model.zero_grad();
        backward(loss);
        opt.step(params, 0.01f);
        f.model.zero_grad();
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(bench_train_step);

}  // namespace

BENCHMARK_MAIN();
