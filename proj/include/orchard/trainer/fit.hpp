#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "orchard/data/batches.hpp"
#include "orchard/data/split.hpp"
#include "orchard/errors.hpp"
#include "orchard/nn/loss.hpp"
#include "orchard/nn/resnet.hpp"
#include "orchard/rng.hpp"
#include "orchard/trainer/optim.hpp"

namespace orchard::trainer {

// --- transfer-learning plumbing ---------------------------------------------------

// Marks everything except the classification head non-trainable.
inline void freeze_backbone(nn::ResNet<float>& model) {
  for (auto& p : model.named_parameters()) {
    if (p.name.rfind("head.", 0) != 0) p.tensor.set_requires_grad(false);
  }
}

inline void unfreeze(nn::ResNet<float>& model) {
  // named_parameters only yields trainable entries, so walk the full state.
  model.visit_state("", [](const std::string&, Tensor& t, bool trainable) {
    if (trainable) t.set_requires_grad(true);
  });
}

inline void replace_head(nn::ResNet<float>& model, std::size_t num_classes, Rng& rng) {
  model.replace_head(num_classes, rng);
}

// --- evaluation --------------------------------------------------------------------

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> scores;           // N x C softmax rows, metrics-ready
  std::vector<std::size_t> labels;      // truth class ids
  std::vector<std::string> image_ids;
  std::size_t num_classes = 0;
};

// Deterministic, side-effect-free pass over the test partition: eval mode and
// no tape for the duration, previous mode restored afterwards. Argmax ties
// break toward the lowest class index.
inline EvalResult evaluate(nn::ResNet<float>& model, const std::vector<data::SampleRecord>& records,
                           const std::vector<std::string>& ids, const data::BatchSpec& spec) {
  if (ids.empty()) throw contract_error("evaluate: empty test set");
  data::BatchSpec eval_spec = spec;
  eval_spec.train = false;
  eval_spec.shuffle = false;

  const nn::Mode prev_mode = model.mode();
  model.set_mode(nn::Mode::eval);
  autograd::NoGradGuard ng;

  EvalResult result;
  result.num_classes = model.num_classes();
  double loss_sum = 0.0;
  std::size_t correct = 0;

  data::BatchStream stream(records, ids, eval_spec, Rng(0));
  while (auto batch = stream.next()) {
    const Tensor logits = model.forward(batch->images);
    loss_sum += static_cast<double>(nn::cross_entropy_loss(logits, batch->labels).item()) *
                static_cast<double>(batch->labels.size());
    const Tensor probs = nn::softmax(logits);
    const std::size_t C = result.num_classes;
    for (std::size_t i = 0; i < batch->labels.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const float v = probs.data()[i * C + c];
        result.scores.push_back(v);
        if (v > probs.data()[i * C + best]) best = c;
      }
      correct += best == batch->labels[i];
      result.labels.push_back(batch->labels[i]);
      result.image_ids.push_back(batch->image_ids[i]);
    }
  }
  model.set_mode(prev_mode);
  result.loss = loss_sum / static_cast<double>(result.labels.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(result.labels.size());
  return result;
}

// --- fine-tuning -------------------------------------------------------------------

struct FitEpoch {
  std::size_t epoch = 0;  // 0 = evaluation before any training
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double seconds = 0.0;
};

struct FitReport {
  std::vector<FitEpoch> epochs;
  std::vector<double> step_train_losses;  // per optimizer step, across both phases
  EvalResult final_eval;
};

// Line-oriented CSV; the epoch-0 row has an empty train_loss field.
inline std::string fit_report_to_csv(const FitReport& report) {
  std::ostringstream os;
  os << "epoch,train_loss,test_loss,test_accuracy\n";
  char buf[160];
  for (const FitEpoch& e : report.epochs) {
    if (std::isnan(e.train_loss)) {
      std::snprintf(buf, sizeof(buf), "%zu,,%.9g,%.9g\n", e.epoch, e.test_loss, e.test_accuracy);
    } else {
      std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.test_loss,
                    e.test_accuracy);
    }
    os << buf;
  }
  return os.str();
}

struct FineTuneOptions {
  std::size_t phase1_epochs = 1;   // frozen backbone, head only
  std::size_t phase2_epochs = 4;   // everything trainable, discriminative lr
  double max_lr = 0.01;
  SchedulePolicy policy = SchedulePolicy::one_cycle;
  double warmup_fraction = 0.25;
  double momentum = 0.9;
  double weight_decay = 1e-2;
  double backbone_lr_ratio = 0.1;  // backbone lr = head lr / 10 in phase 2
  std::uint64_t seed = 0;          // drives shuffling and augmentation
};

struct TrainData {
  const std::vector<data::SampleRecord>* records = nullptr;
  data::SplitManifest manifest;
  data::BatchSpec batch_spec;  // resolution/normalization shared by both partitions
};

namespace detail {

struct EpochStats {
  double mean_loss = 0.0;
};

template <class StepLossSink>
EpochStats run_train_epoch(nn::ResNet<float>& model, SgdOptimizer& opt, const ScheduleSpec& schedule,
                           std::size_t& step, const TrainData& data, Rng epoch_rng,
                           std::size_t epoch_for_error, StepLossSink&& sink) {
  data::BatchSpec spec = data.batch_spec;
  spec.train = true;
  model.set_mode(nn::Mode::train);
  data::BatchStream stream(*data.records, data.manifest.train_ids, spec, epoch_rng);

  double loss_sum = 0.0;
  std::size_t seen = 0;
  while (auto batch = stream.next()) {
    double loss_value = 0.0;
    try {
      const Tensor logits = model.forward(batch->images);
      Tensor loss = nn::cross_entropy_loss(logits, batch->labels);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw divergence_error("training diverged: non-finite loss at epoch " +
                               std::to_string(epoch_for_error) + " step " + std::to_string(step));
      }
      loss.backward();
    } catch (const arithmetic_error& e) {
      throw divergence_error("training diverged at epoch " + std::to_string(epoch_for_error) +
                             " step " + std::to_string(step) + ": " + e.what());
    }
    opt.step(schedule_lr(schedule, step));
    opt.zero_grad();
    ++step;
    loss_sum += loss_value * static_cast<double>(batch->labels.size());
    seen += batch->labels.size();
    sink(loss_value);
  }
  return {loss_sum / static_cast<double>(seen)};
}

}  // namespace detail

// The canonical transfer-learning loop: phase 1 trains the head against a
// frozen backbone, phase 2 unfreezes everything with the backbone at a tenth
// of the head learning rate. Evaluates on the test partition after every
// epoch; epoch 0 is the untouched-model baseline.
inline FitReport fine_tune(nn::ResNet<float>& model, const TrainData& data,
                           const FineTuneOptions& opts) {
  if (!data.records) throw contract_error("fine_tune: no records bound");
  if (data.manifest.test_ids.empty()) throw contract_error("fine_tune: empty test partition");
  if ((opts.phase1_epochs + opts.phase2_epochs) > 0 && data.manifest.train_ids.empty()) {
    throw contract_error("fine_tune: empty train partition");
  }

  FitReport report;
  Rng run_rng(opts.seed);

  auto eval_row = [&](std::size_t epoch, double train_loss, double seconds) {
    EvalResult ev = evaluate(model, *data.records, data.manifest.test_ids, data.batch_spec);
    FitEpoch row;
    row.epoch = epoch;
    row.train_loss = train_loss;
    row.test_loss = ev.loss;
    row.test_accuracy = ev.accuracy;
    row.seconds = seconds;
    report.epochs.push_back(row);
    report.final_eval = std::move(ev);
  };

  eval_row(0, std::numeric_limits<double>::quiet_NaN(), 0.0);

  const std::size_t steps_per_epoch =
      (data.manifest.train_ids.size() + data.batch_spec.batch_size - 1) /
      std::max<std::size_t>(1, data.batch_spec.batch_size);
  std::size_t epoch_counter = 0;
  auto sink = [&](double loss) { report.step_train_losses.push_back(loss); };

  if (opts.phase1_epochs > 0) {
    freeze_backbone(model);
    SgdOptimizer opt = SgdOptimizer::single_group(model.named_parameters(), opts.momentum,
                                                  opts.weight_decay);
    ScheduleSpec schedule{opts.policy, opts.max_lr, opts.phase1_epochs * steps_per_epoch,
                          opts.warmup_fraction, 25.0, 1e4};
    std::size_t step = 0;
    for (std::size_t e = 0; e < opts.phase1_epochs; ++e) {
      ++epoch_counter;
      const auto t0 = std::chrono::steady_clock::now();
      const auto stats = detail::run_train_epoch(model, opt, schedule, step, data,
                                                 run_rng.fork(epoch_counter), epoch_counter, sink);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      eval_row(epoch_counter, stats.mean_loss, secs);
    }
  }

  if (opts.phase2_epochs > 0) {
    unfreeze(model);
    std::vector<SgdOptimizer::Group> groups(2);
    for (auto& p : model.named_parameters()) {
      groups[p.name.rfind("head.", 0) == 0 ? 1 : 0].params.push_back(p);
    }
    groups[0].lr_scale = opts.backbone_lr_ratio;
    groups[1].lr_scale = 1.0;
    SgdOptimizer opt(std::move(groups), opts.momentum, opts.weight_decay);
    ScheduleSpec schedule{opts.policy, opts.max_lr, opts.phase2_epochs * steps_per_epoch,
                          opts.warmup_fraction, 25.0, 1e4};
    std::size_t step = 0;
    for (std::size_t e = 0; e < opts.phase2_epochs; ++e) {
      ++epoch_counter;
      const auto t0 = std::chrono::steady_clock::now();
      const auto stats = detail::run_train_epoch(model, opt, schedule, step, data,
                                                 run_rng.fork(epoch_counter), epoch_counter, sink);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      eval_row(epoch_counter, stats.mean_loss, secs);
    }
  } else if (opts.phase1_epochs > 0) {
    unfreeze(model);  // do not leave the model frozen behind the caller's back
  }

  return report;
}

}  // namespace orchard::trainer
