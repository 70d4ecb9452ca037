#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "orchard/checkpoint.hpp"
#include "orchard/metrics.hpp"
#include "orchard/nn/resnet.hpp"
#include "orchard/trainer/fit.hpp"
#include "orchard/trainer/optim.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace orchard;
using namespace orchard::nn;
using namespace orchard::trainer;

namespace {

NamedTensor<float> named_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  return {name, t, true};
}

void set_grad(Tensor& t, const std::vector<float>& g) {
  t.zero_grad();
  t.accumulate_grad(std::span<const float>(g.data(), g.size()));
}

struct ToyRun {
  oracle::TempDir tmp;
  synth::ToyDataset dataset;
  TrainData data;
  data::SplitManifest manifest;

  ToyRun(const synth::ToyTask& task, const synth::ToyParams& params, std::uint64_t split_seed) {
    dataset = synth::make_toy_dataset(tmp.path.string(), task, params, 7000 + split_seed);
    manifest = data::stratified_split(dataset.records, 0.2, split_seed);
    data.records = &dataset.records;
    data.manifest = manifest;
    data.batch_spec.resolution = params.resolution;
    data.batch_spec.batch_size = 16;
  }
};

std::vector<std::vector<float>> backbone_snapshot(ResNet<float>& net) {
  std::vector<std::vector<float>> out;
  for (auto& item : net.named_state()) {
    if (item.name.rfind("head.", 0) == 0 || !item.trainable) continue;
    out.emplace_back(item.tensor.data().begin(), item.tensor.data().end());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// sgd
// ---------------------------------------------------------------------------

TEST_CASE("sgd plain gradient step") {
  auto p = named_param("w", Tensor::from_data({1}, {1.0f}));
  SgdOptimizer opt = SgdOptimizer::single_group({p}, /*momentum=*/0.0, /*weight_decay=*/0.0);
  set_grad(p.tensor, {1.0f});
  opt.step(0.1);
  CHECK(p.tensor.data()[0] == Catch::Approx(0.9f));
}

TEST_CASE("sgd with zero lr is a bit-exact no-op") {
  auto p = named_param("w", Tensor::from_data({3}, {0.25f, -1.5f, 3.75f}));
  SgdOptimizer opt = SgdOptimizer::single_group({p}, 0.9, 1e-2);
  set_grad(p.tensor, {1.f, 2.f, 3.f});
  opt.step(0.0);
  CHECK(std::vector<float>(p.tensor.data().begin(), p.tensor.data().end()) ==
        std::vector<float>{0.25f, -1.5f, 3.75f});
}

TEST_CASE("sgd momentum recurrence matches the closed form") {
  auto p = named_param("w", Tensor::from_data({1}, {0.0f}));
  SgdOptimizer opt = SgdOptimizer::single_group({p}, 0.9, 0.0);
  set_grad(p.tensor, {1.0f});
  opt.step(0.1);
  CHECK(p.tensor.data()[0] == Catch::Approx(-0.1f).epsilon(1e-6));
  opt.zero_grad();
  set_grad(p.tensor, {1.0f});
  opt.step(0.1);
  // v2 = 0.9*1 + 1 = 1.9; param = -0.1 - 0.19 = -0.29
  CHECK(p.tensor.data()[0] == Catch::Approx(-0.29f).epsilon(1e-6));
}

TEST_CASE("sgd contract violations") {
  auto p = named_param("w", Tensor::from_data({1}, {1.0f}));
  SgdOptimizer opt = SgdOptimizer::single_group({p});
  CHECK_THROWS_AS(opt.step(0.1), contract_error);  // no grad populated

  Tensor frozen = Tensor::from_data({1}, {1.0f});
  CHECK_THROWS_AS(SgdOptimizer::single_group({{"f", frozen, true}}), contract_error);
}

TEST_CASE("discriminative groups scale the learning rate per group") {
  auto backbone = named_param("b", Tensor::from_data({1}, {1.0f}));
  auto head = named_param("h", Tensor::from_data({1}, {1.0f}));
  SgdOptimizer opt({{{backbone}, 0.1}, {{head}, 1.0}}, 0.0, 0.0);
  set_grad(backbone.tensor, {1.0f});
  set_grad(head.tensor, {1.0f});
  opt.step(0.1);
  CHECK(backbone.tensor.data()[0] == Catch::Approx(0.99f));
  CHECK(head.tensor.data()[0] == Catch::Approx(0.9f));
}

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

TEST_CASE("constant schedule returns max everywhere") {
  ScheduleSpec spec{SchedulePolicy::constant, 0.05, 100, 0.25, 25.0, 1e4};
  CHECK(schedule_lr(spec, 0) == 0.05);
  CHECK(schedule_lr(spec, 100) == 0.05);
}

TEST_CASE("one cycle peaks exactly at warmup * total") {
  ScheduleSpec spec{SchedulePolicy::one_cycle, 0.08, 100, 0.3, 25.0, 1e4};
  CHECK(schedule_lr(spec, 30) == 0.08);
  CHECK(schedule_lr(spec, 0) == Catch::Approx(0.08 / 25.0));
  CHECK(schedule_lr(spec, 100) == Catch::Approx(0.08 / 1e4).margin(1e-12));
  CHECK_THROWS_AS(schedule_lr(spec, 101), contract_error);
}

TEST_CASE("one cycle matches the documented piecewise formula at 100 points") {
  ScheduleSpec spec{SchedulePolicy::one_cycle, 0.04, 200, 0.25, 25.0, 1e4};
  const double start = 0.04 / 25.0;
  const double floor_lr = 0.04 / 1e4;
  const double peak = 0.25 * 200;
  for (std::size_t step = 0; step <= 200; step += 2) {
    const double s = static_cast<double>(step);
    const double want =
        s <= peak ? start + (0.04 - start) * (s / peak)
                  : floor_lr + (0.04 - floor_lr) *
                                   (1.0 + std::cos(3.14159265358979323846 * (s - peak) / (200 - peak))) /
                                   2.0;
    CHECK(schedule_lr(spec, step) == Catch::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("one cycle stays positive and peaks once") {
  ScheduleSpec spec{SchedulePolicy::one_cycle, 0.1, 80, 0.25, 25.0, 1e4};
  std::size_t peaks = 0;
  double prev = -1;
  bool rising = true;
  for (std::size_t step = 0; step <= 80; ++step) {
    const double lr = schedule_lr(spec, step);
    CHECK(lr > 0.0);
    if (step > 0) {
      if (rising && lr < prev) {
        rising = false;
        ++peaks;
      }
      CHECK((rising ? lr > prev : lr < prev));
    }
    prev = lr;
  }
  CHECK(peaks == 1);
}

// ---------------------------------------------------------------------------
// freeze / unfreeze / evaluate
// ---------------------------------------------------------------------------

TEST_CASE("freeze marks exactly the backbone non-trainable") {
  Rng rng(1);
  ResNet<float> net(resnet10_config(), 3, rng);
  freeze_backbone(net);
  auto trainable = net.named_parameters();
  REQUIRE(trainable.size() == 2);
  CHECK(trainable[0].name == "head.weight");
  CHECK(trainable[1].name == "head.bias");
  unfreeze(net);
  CHECK(net.named_parameters().size() > 2);
}

TEST_CASE("evaluate is deterministic, side-effect-free, and restores the mode") {
  ToyRun run(synth::task_a(), {20, 16}, 3);
  Rng rng(2);
  ResNet<float> net(resnet10_config(), 3, rng);
  net.set_mode(Mode::train);

  const auto before = [&] {
    std::vector<std::vector<float>> s;
    for (auto& item : net.named_state()) s.emplace_back(item.tensor.data().begin(), item.tensor.data().end());
    return s;
  }();

  const EvalResult a = evaluate(net, run.dataset.records, run.manifest.test_ids, run.data.batch_spec);
  const EvalResult b = evaluate(net, run.dataset.records, run.manifest.test_ids, run.data.batch_spec);
  CHECK(a.loss == b.loss);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.scores == b.scores);
  CHECK(net.mode() == Mode::train);  // restored

  const auto after = [&] {
    std::vector<std::vector<float>> s;
    for (auto& item : net.named_state()) s.emplace_back(item.tensor.data().begin(), item.tensor.data().end());
    return s;
  }();
  CHECK(after == before);

  CHECK_THROWS_AS(evaluate(net, run.dataset.records, {}, run.data.batch_spec), contract_error);
}

TEST_CASE("constant-logit model scores the class share under first-index tie-breaking") {
  ToyRun run(synth::task_a(), {10, 16}, 4);
  Rng rng(3);
  ResNet<float> net(resnet10_config(), 3, rng);
  // Zero the head: logits are identically zero, softmax is uniform, argmax 0.
  std::fill(net.head().weight().mutable_data(),
            net.head().weight().mutable_data() + net.head().weight().numel(), 0.f);
  std::fill(net.head().bias().mutable_data(),
            net.head().bias().mutable_data() + net.head().bias().numel(), 0.f);

  const EvalResult ev = evaluate(net, run.dataset.records, run.manifest.test_ids, run.data.batch_spec);
  std::size_t class0 = 0;
  for (std::size_t l : ev.labels) class0 += l == 0;
  CHECK(ev.accuracy == Catch::Approx(static_cast<double>(class0) / ev.labels.size()));
}

TEST_CASE("evaluate accuracy agrees with the metrics module on the same scores") {
  ToyRun run(synth::task_a(), {15, 16}, 5);
  Rng rng(4);
  ResNet<float> net(resnet10_config(), 3, rng);
  const EvalResult ev = evaluate(net, run.dataset.records, run.manifest.test_ids, run.data.batch_spec);
  const metrics::MetricsReport rep = metrics::report(ev.scores, ev.labels, ev.num_classes);
  CHECK(rep.accuracy == Catch::Approx(ev.accuracy).margin(1e-12));
  CHECK(rep.confusion.total() == ev.labels.size());
}

// ---------------------------------------------------------------------------
// fine_tune
// ---------------------------------------------------------------------------

TEST_CASE("zero-epoch fine_tune only evaluates and leaves the model untouched") {
  ToyRun run(synth::task_a(), {10, 16}, 6);
  Rng rng(5);
  ResNet<float> net(resnet10_config(), 3, rng);
  const auto before = backbone_snapshot(net);

  FineTuneOptions opts;
  opts.phase1_epochs = 0;
  opts.phase2_epochs = 0;
  const FitReport report = fine_tune(net, run.data, opts);
  REQUIRE(report.epochs.size() == 1);
  CHECK(report.epochs[0].epoch == 0);
  CHECK(std::isnan(report.epochs[0].train_loss));
  CHECK(backbone_snapshot(net) == before);

  const std::string csv = fit_report_to_csv(report);
  CHECK(csv.rfind("epoch,train_loss,test_loss,test_accuracy\n0,,", 0) == 0);
}

TEST_CASE("phase 1 keeps every backbone parameter bit-identical") {
  ToyRun run(synth::task_a(), {20, 16}, 7);
  Rng rng(6);
  ResNet<float> net(resnet10_config(), 3, rng);
  const auto before = backbone_snapshot(net);

  FineTuneOptions opts;
  opts.phase1_epochs = 2;
  opts.phase2_epochs = 0;
  opts.max_lr = 0.05;
  opts.seed = 7;
  fine_tune(net, run.data, opts);
  CHECK(backbone_snapshot(net) == before);
}

TEST_CASE("unfreezing then stepping moves at least one backbone parameter") {
  ToyRun run(synth::task_a(), {10, 16}, 8);
  Rng rng(7);
  ResNet<float> net(resnet10_config(), 3, rng);
  const auto before = backbone_snapshot(net);

  FineTuneOptions opts;
  opts.phase1_epochs = 0;
  opts.phase2_epochs = 1;
  opts.max_lr = 0.01;
  opts.seed = 8;
  fine_tune(net, run.data, opts);
  CHECK(backbone_snapshot(net) != before);
}

TEST_CASE("toy training reaches 95 percent accuracy within 20 epochs") {
  ToyRun run(synth::task_a(), {100, 32}, 42);
  Rng rng(42);
  ResNet<float> net(resnet10_config(), 3, rng);

  FineTuneOptions opts;
  opts.phase1_epochs = 0;
  opts.phase2_epochs = 20;
  opts.max_lr = 0.02;
  opts.seed = 42;
  const FitReport report = fine_tune(net, run.data, opts);
  CHECK(report.final_eval.accuracy >= 0.95);

  // Smoothed (window 5) train loss decreases monotonically over the first 50 steps.
  REQUIRE(report.step_train_losses.size() >= 50);
  auto ma = [&](std::size_t end) {  // mean of steps [end-5, end)
    double s = 0;
    for (std::size_t i = end - 5; i < end; ++i) s += report.step_train_losses[i];
    return s / 5.0;
  };
  for (std::size_t end = 6; end <= 50; ++end) CHECK(ma(end) <= ma(end - 1));
}

TEST_CASE("diverging training raises a divergence error with context") {
  ToyRun run(synth::task_a(), {10, 16}, 9);
  Rng rng(8);
  ResNet<float> net(resnet10_config(), 3, rng);

  FineTuneOptions opts;
  opts.phase1_epochs = 0;
  opts.phase2_epochs = 2;
  opts.max_lr = 1e9;  // guaranteed blow-up
  opts.policy = SchedulePolicy::constant;
  opts.seed = 9;
  CHECK_THROWS_MATCHES(fine_tune(net, run.data, opts), divergence_error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("epoch")));
}
