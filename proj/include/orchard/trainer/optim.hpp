#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "orchard/errors.hpp"
#include "orchard/nn/layers.hpp"
#include "orchard/tensor.hpp"

namespace orchard::trainer {

// --- learning-rate schedule -----------------------------------------------------

enum class SchedulePolicy { constant, one_cycle };

// one_cycle: lr rises linearly from max/div_start to max over the warmup
// fraction of the run, then anneals by cosine down to max/div_end. Positive
// at every step, with the single peak exactly at step = warmup * total.
struct ScheduleSpec {
  SchedulePolicy policy = SchedulePolicy::one_cycle;
  double max_lr = 0.01;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.25;
  double div_start = 25.0;
  double div_end = 1e4;
};

inline double schedule_lr(const ScheduleSpec& spec, std::size_t step) {
  if (step > spec.total_steps) {
    throw contract_error("schedule: step " + std::to_string(step) + " past total " +
                         std::to_string(spec.total_steps));
  }
  if (spec.policy == SchedulePolicy::constant) return spec.max_lr;
  if (!(spec.max_lr > 0) || spec.total_steps == 0) {
    throw contract_error("schedule: one_cycle needs positive max_lr and total_steps");
  }
  if (!(spec.warmup_fraction > 0.0 && spec.warmup_fraction < 1.0)) {
    throw contract_error("schedule: warmup_fraction must lie in (0,1)");
  }
  const double start = spec.max_lr / spec.div_start;
  const double floor_lr = spec.max_lr / spec.div_end;
  const double peak_step = spec.warmup_fraction * static_cast<double>(spec.total_steps);
  const double s = static_cast<double>(step);
  if (s <= peak_step) {
    return start + (spec.max_lr - start) * (s / peak_step);
  }
  const double progress = (s - peak_step) / (static_cast<double>(spec.total_steps) - peak_step);
  constexpr double pi = 3.14159265358979323846;
  return floor_lr + (spec.max_lr - floor_lr) * (1.0 + std::cos(pi * progress)) / 2.0;
}

// --- SGD with momentum and weight decay -------------------------------------------

// Update rule per parameter: v <- momentum*v + grad + wd*param;
// param <- param - lr*v. Velocity state exists only for the (trainable)
// parameters handed in; callers zero grads between steps.
class SgdOptimizer {
 public:
  struct Group {
    std::vector<nn::NamedTensor<float>> params;
    double lr_scale = 1.0;  // discriminative learning rates
  };

  SgdOptimizer(std::vector<Group> groups, double momentum = 0.9, double weight_decay = 1e-2)
      : groups_(std::move(groups)), momentum_(momentum), weight_decay_(weight_decay) {
    for (auto& g : groups_) {
      std::vector<std::vector<float>> vel;
      for (auto& p : g.params) {
        if (!p.tensor.requires_grad()) {
          throw contract_error("sgd: parameter '" + p.name + "' is frozen");
        }
        vel.emplace_back(p.tensor.numel(), 0.f);
      }
      velocity_.push_back(std::move(vel));
    }
  }

  static SgdOptimizer single_group(std::vector<nn::NamedTensor<float>> params,
                                   double momentum = 0.9, double weight_decay = 1e-2) {
    std::vector<Group> groups;
    groups.push_back({std::move(params), 1.0});
    return SgdOptimizer(std::move(groups), momentum, weight_decay);
  }

  void step(double lr) {
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const double group_lr = lr * groups_[gi].lr_scale;
      for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
        auto& p = groups_[gi].params[pi].tensor;
        if (!p.has_grad()) {
          throw contract_error("sgd: missing grad on trainable parameter '" +
                               groups_[gi].params[pi].name + "'");
        }
        const auto g = p.grad();
        std::vector<float>& v = velocity_[gi][pi];
        float* w = p.mutable_data();
        const float mom = static_cast<float>(momentum_);
        const float wd = static_cast<float>(weight_decay_);
        const float eta = static_cast<float>(group_lr);
        for (std::size_t i = 0; i < v.size(); ++i) {
          v[i] = mom * v[i] + g[i] + wd * w[i];
          w[i] -= eta * v[i];
        }
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.tensor.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_) n += g.params.size();
    return n;
  }

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<std::vector<float>>> velocity_;
  double momentum_, weight_decay_;
};

}  // namespace orchard::trainer
