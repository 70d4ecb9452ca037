#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "orchard/errors.hpp"
#include "orchard/nn/layers.hpp"
#include "orchard/nn/loss.hpp"
#include "orchard/rng.hpp"
#include "orchard/tensor.hpp"

namespace orchard::nn {

// Two 3x3 conv+batchnorm pairs with a shortcut: out = ReLU(F(x) + shortcut(x)).
// The shortcut is the exact identity whenever input and output shapes match,
// and a 1x1 projection conv+batchnorm when the block downsamples or changes
// channel count.
template <class T>
class BasicBlock : public Module<T> {
 public:
  BasicBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng)
      : conv1_(in_channels, out_channels, 3, stride, 1, /*with_bias=*/false, rng),
        bn1_(out_channels),
        conv2_(out_channels, out_channels, 3, 1, 1, false, rng),
        bn2_(out_channels),
        downsampled_(stride != 1 || in_channels != out_channels) {
    if (downsampled_) {
      proj_conv_ = std::make_unique<Conv2d<T>>(in_channels, out_channels, 1, stride, 0, false, rng);
      proj_bn_ = std::make_unique<BatchNorm2d<T>>(out_channels);
    }
  }

  const char* kind() const override { return "basicblock"; }

  TensorT<T> forward(const TensorT<T>& x) override {
    TensorT<T> f = relu(bn1_.forward(conv1_.forward(x)));
    f = bn2_.forward(conv2_.forward(f));
    TensorT<T> shortcut = downsampled_ ? proj_bn_->forward(proj_conv_->forward(x)) : x;
    return relu(add(f, shortcut));
  }

  void set_mode(Mode m) override {
    this->mode_ = m;
    bn1_.set_mode(m);
    bn2_.set_mode(m);
    if (downsampled_) proj_bn_->set_mode(m);
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& visit) override {
    conv1_.visit_state(prefix + "conv1.", visit);
    bn1_.visit_state(prefix + "bn1.", visit);
    conv2_.visit_state(prefix + "conv2.", visit);
    bn2_.visit_state(prefix + "bn2.", visit);
    if (downsampled_) {
      proj_conv_->visit_state(prefix + "downsample.conv.", visit);
      proj_bn_->visit_state(prefix + "downsample.bn.", visit);
    }
  }

  bool downsampled() const { return downsampled_; }
  std::size_t stride() const { return conv1_.stride(); }
  Conv2d<T>& conv1() { return conv1_; }
  BatchNorm2d<T>& bn1() { return bn1_; }
  Conv2d<T>& conv2() { return conv2_; }
  BatchNorm2d<T>& bn2() { return bn2_; }
  Conv2d<T>* proj_conv() { return proj_conv_.get(); }
  BatchNorm2d<T>* proj_bn() { return proj_bn_.get(); }

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  bool downsampled_;
  std::unique_ptr<Conv2d<T>> proj_conv_;
  std::unique_ptr<BatchNorm2d<T>> proj_bn_;
};

struct ResNetConfig {
  std::array<std::size_t, 4> stage_blocks;
  std::array<std::size_t, 4> stage_widths;
  std::size_t in_channels = 3;
};

inline ResNetConfig resnet34_config() { return {{3, 4, 6, 3}, {64, 128, 256, 512}, 3}; }

// Reduced-depth variant for desk-scale experiments: one block per stage.
inline ResNetConfig resnet10_config() { return {{1, 1, 1, 1}, {16, 32, 64, 128}, 3}; }

// Residual classifier: 7x7/s2 stem conv + batchnorm + ReLU + 3x3/s2 maxpool,
// four stages of BasicBlocks (stages 2-4 open with a stride-2 block), global
// average pool, and a linear head. forward() returns logits; apply softmax
// only at inference.
template <class T>
class ResNet : public Module<T> {
 public:
  ResNet(const ResNetConfig& config, std::size_t num_classes, Rng& rng)
      : config_(config),
        stem_conv_(config.in_channels, config.stage_widths[0], 7, 2, 3, false, rng),
        stem_bn_(config.stage_widths[0]),
        stem_pool_(3, 2, 1) {
    if (num_classes < 2) throw contract_error("resnet: num_classes must be at least 2");
    std::size_t in_ch = config.stage_widths[0];
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t width = config.stage_widths[s];
      for (std::size_t b = 0; b < config.stage_blocks[s]; ++b) {
        const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
        stages_[s].push_back(std::make_unique<BasicBlock<T>>(in_ch, width, stride, rng));
        in_ch = width;
      }
    }
    head_ = std::make_unique<Linear<T>>(config.stage_widths[3], num_classes, rng);
  }

  const char* kind() const override { return "resnet"; }

  TensorT<T> forward(const TensorT<T>& x) override { return forward_impl(x, nullptr); }

  // Also hands back the output of each stage, for shape auditing.
  TensorT<T> forward_with_stage_outputs(const TensorT<T>& x, std::vector<TensorT<T>>& stage_outs) {
    return forward_impl(x, &stage_outs);
  }

  // Softmax scores; meant for eval-mode inference.
  TensorT<T> predict_scores(const TensorT<T>& x) { return softmax(forward(x)); }

  void set_mode(Mode m) override {
    this->mode_ = m;
    stem_bn_.set_mode(m);
    for (auto& stage : stages_)
      for (auto& block : stage) block->set_mode(m);
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& visit) override {
    stem_conv_.visit_state(prefix + "stem.conv.", visit);
    stem_bn_.visit_state(prefix + "stem.bn.", visit);
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        stages_[s][b]->visit_state(
            prefix + "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1) + ".", visit);
      }
    head_->visit_state(prefix + "head.", visit);
  }

  // Swaps the classification head for a freshly initialized 512->num_classes
  // layer (the transfer-learning entry point).
  void replace_head(std::size_t num_classes, Rng& rng) {
    if (num_classes < 2) throw contract_error("replace_head: num_classes must be at least 2");
    head_ = std::make_unique<Linear<T>>(config_.stage_widths[3], num_classes, rng);
  }

  const ResNetConfig& config() const { return config_; }
  std::size_t num_classes() const { return head_->out_features(); }
  std::size_t basic_block_count() const {
    std::size_t n = 0;
    for (const auto& s : stages_) n += s.size();
    return n;
  }
  Conv2d<T>& stem_conv() { return stem_conv_; }
  BatchNorm2d<T>& stem_bn() { return stem_bn_; }
  std::vector<std::unique_ptr<BasicBlock<T>>>& stage(std::size_t i) { return stages_.at(i); }
  Linear<T>& head() { return *head_; }

 private:
  TensorT<T> forward_impl(const TensorT<T>& x, std::vector<TensorT<T>>* stage_outs) {
    TensorT<T> h = stem_pool_.forward(relu(stem_bn_.forward(stem_conv_.forward(x))));
    for (auto& stage : stages_) {
      for (auto& block : stage) h = block->forward(h);
      if (stage_outs) stage_outs->push_back(h);
    }
    h = avgpool_.forward(h);
    h = reshape(h, {h.shape()[0], h.shape()[1]});
    return head_->forward(h);
  }

  ResNetConfig config_;
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  MaxPool2d<T> stem_pool_;
  std::array<std::vector<std::unique_ptr<BasicBlock<T>>>, 4> stages_;
  AdaptiveAvgPool2d<T> avgpool_;
  std::unique_ptr<Linear<T>> head_;
};

template <class T>
ResNet<T> build_resnet34(std::size_t num_classes, Rng& rng) {
  return ResNet<T>(resnet34_config(), num_classes, rng);
}

}  // namespace orchard::nn
