#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "orchard/errors.hpp"
#include "orchard/rng.hpp"
#include "orchard/tensor.hpp"

namespace orchard::nn {

enum class Mode { train, eval };

template <class T>
struct NamedTensor {
  std::string name;
  TensorT<T> tensor;
  bool trainable = true;  // false for buffers (running statistics)
};

template <class T>
using StateVisitor = std::function<void(const std::string&, TensorT<T>&, bool trainable)>;

// Base for all layers. State visitation drives parameter listing, freezing,
// the optimizer, and checkpointing; names are stable, unique, path-like.
template <class T>
class Module {
 public:
  virtual ~Module() = default;

  virtual const char* kind() const = 0;
  virtual TensorT<T> forward(const TensorT<T>& x) = 0;

  virtual void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

  virtual void visit_state(const std::string& prefix, const StateVisitor<T>& visit) {
    (void)prefix;
    (void)visit;
  }

  // Learnable parameters that are currently unfrozen (buffers and frozen
  // parameters are excluded; the optimizer keys its state off this list).
  std::vector<NamedTensor<T>> named_parameters(const std::string& prefix = "") {
    std::vector<NamedTensor<T>> out;
    visit_state(prefix, [&](const std::string& name, TensorT<T>& t, bool trainable) {
      if (trainable && t.requires_grad()) out.push_back({name, t, true});
    });
    return out;
  }

  std::vector<NamedTensor<T>> named_state(const std::string& prefix = "") {
    std::vector<NamedTensor<T>> out;
    visit_state(prefix, [&](const std::string& name, TensorT<T>& t, bool trainable) {
      out.push_back({name, t, trainable});
    });
    return out;
  }

 protected:
  Mode mode_ = Mode::train;
};

// --- initializers ------------------------------------------------------------

// Kaiming-uniform with fan-in scaling, the ReLU-network default.
template <class T>
void kaiming_uniform_(TensorT<T>& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  T* d = w.mutable_data();
  for (std::size_t i = 0; i < w.numel(); ++i) d[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void bias_uniform_(TensorT<T>& b, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  T* d = b.mutable_data();
  for (std::size_t i = 0; i < b.numel(); ++i) d[i] = static_cast<T>(rng.uniform(-bound, bound));
}

// --- shape helpers -----------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad) {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) {
    throw shape_error("conv/pool: input extent " + std::to_string(in) + " smaller than kernel " +
                      std::to_string(kernel) + " after padding " + std::to_string(pad));
  }
  return (padded - kernel) / stride + 1;
}

namespace detail {

inline void expect_nchw(const Shape& s, const char* who) {
  if (s.size() != 4) {
    throw shape_error(std::string(who) + ": expected [N,C,H,W], got " + shape_to_string(s));
  }
}

// Gathers one sample's receptive fields into a [C*kH*kW, outH*outW] matrix.
template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kH, std::size_t kW,
            std::size_t stride, std::size_t pad, std::size_t outH, std::size_t outW, T* cols) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t kh = 0; kh < kH; ++kh) {
      for (std::size_t kw = 0; kw < kW; ++kw) {
        T* row = cols + ((c * kH + kh) * kW + kw) * (outH * outW);
        for (std::size_t oh = 0; oh < outH; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                    static_cast<std::ptrdiff_t>(pad);
          const bool row_ok = ih >= 0 && ih < static_cast<std::ptrdiff_t>(H);
          for (std::size_t ow = 0; ow < outW; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                      static_cast<std::ptrdiff_t>(pad);
            row[oh * outW + ow] = (row_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(W))
                                      ? x[(c * H + ih) * W + iw]
                                      : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of column gradients back onto one sample's input.
template <class T>
void col2im_accumulate(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kH,
                       std::size_t kW, std::size_t stride, std::size_t pad, std::size_t outH,
                       std::size_t outW, T* dx) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t kh = 0; kh < kH; ++kh) {
      for (std::size_t kw = 0; kw < kW; ++kw) {
        const T* row = cols + ((c * kH + kh) * kW + kw) * (outH * outW);
        for (std::size_t oh = 0; oh < outH; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ow = 0; ow < outW; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
            dx[(c * H + ih) * W + iw] += row[oh * outW + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// --- conv2d ------------------------------------------------------------------

// 2-D cross-correlation, computed as im2col + matmul per sample. The backward
// rule re-runs im2col instead of saving the column matrix.
template <class T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool with_bias, Rng& rng)
      : in_channels_(in_channels),
        out_channels_(out_channels),
        kernel_(kernel),
        stride_(stride),
        padding_(padding),
        with_bias_(with_bias) {
    if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
      throw contract_error("conv2d: channels, kernel and stride must be positive");
    }
    weight_ = TensorT<T>::zeros({out_channels, in_channels, kernel, kernel}, /*requires_grad=*/true);
    const std::size_t fan_in = in_channels * kernel * kernel;
    kaiming_uniform_(weight_, fan_in, rng);
    if (with_bias_) {
      bias_ = TensorT<T>::zeros({out_channels}, true);
      bias_uniform_(bias_, fan_in, rng);
    }
  }

  const char* kind() const override { return "conv2d"; }

  TensorT<T> forward(const TensorT<T>& x) override {
    detail::expect_nchw(x.shape(), "conv2d");
    const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (C != in_channels_) {
      throw shape_error("conv2d: input has " + std::to_string(C) + " channels, layer expects " +
                        std::to_string(in_channels_));
    }
    const std::size_t outH = conv_out_extent(H, kernel_, stride_, padding_);
    const std::size_t outW = conv_out_extent(W, kernel_, stride_, padding_);
    const std::size_t patch = C * kernel_ * kernel_;
    const std::size_t cells = outH * outW;

    std::vector<T> out(N * out_channels_ * cells);
    std::vector<T> cols(patch * cells);
    const T* xd = x.data().data();
    const T* wd = weight_.data().data();
    for (std::size_t n = 0; n < N; ++n) {
      detail::im2col(xd + n * C * H * W, C, H, W, kernel_, kernel_, stride_, padding_, outH, outW,
                     cols.data());
      orchard::detail::matmul_raw(wd, cols.data(), out.data() + n * out_channels_ * cells, out_channels_,
                         patch, cells);
    }
    if (with_bias_) {
      const T* bd = bias_.data().data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oc = 0; oc < out_channels_; ++oc) {
          T* dst = out.data() + (n * out_channels_ + oc) * cells;
          for (std::size_t i = 0; i < cells; ++i) dst[i] += bd[oc];
        }
    }

    TensorT<T> px = x, pw = weight_, pb = bias_;
    const std::size_t k = kernel_, stride = stride_, pad = padding_, outC = out_channels_;
    const bool with_bias = with_bias_;
    auto backward = [=](std::span<const T> g) mutable {
      const T* xd = px.data().data();
      const bool need_x = px.requires_grad();
      const bool need_w = pw.requires_grad();
      const bool need_b = with_bias && pb.requires_grad();

      std::vector<T> dw(need_w ? outC * patch : 0, T(0));
      std::vector<T> db(need_b ? outC : 0, T(0));
      std::vector<T> cols(patch * cells);
      std::vector<T> dcols(need_x ? patch * cells : 0);
      std::vector<T> wt;
      if (need_x) wt = orchard::detail::transpose_raw(pw.data().data(), outC, patch);
      std::vector<T>* gx = need_x ? &px.grad_accum_buffer() : nullptr;

      for (std::size_t n = 0; n < N; ++n) {
        const T* gn = g.data() + n * outC * cells;
        if (need_w) {
          detail::im2col(xd + n * C * H * W, C, H, W, k, k, stride, pad, outH, outW, cols.data());
          // dW += g_n * cols^T
          for (std::size_t oc = 0; oc < outC; ++oc)
            for (std::size_t p = 0; p < patch; ++p) {
              const T* grow = gn + oc * cells;
              const T* crow = cols.data() + p * cells;
              T acc = T(0);
              for (std::size_t i = 0; i < cells; ++i) acc += grow[i] * crow[i];
              dw[oc * patch + p] += acc;
            }
        }
        if (need_b) {
          for (std::size_t oc = 0; oc < outC; ++oc) {
            const T* grow = gn + oc * cells;
            T acc = T(0);
            for (std::size_t i = 0; i < cells; ++i) acc += grow[i];
            db[oc] += acc;
          }
        }
        if (need_x) {
          orchard::detail::matmul_raw(wt.data(), gn, dcols.data(), patch, outC, cells);
          detail::col2im_accumulate(dcols.data(), C, H, W, k, k, stride, pad, outH, outW,
                                    gx->data() + n * C * H * W);
        }
      }
      if (need_w) pw.accumulate_grad(std::span<const T>(dw.data(), dw.size()));
      if (need_b) pb.accumulate_grad(std::span<const T>(db.data(), db.size()));
    };

    std::vector<TensorT<T>> parents{x, weight_};
    if (with_bias_) parents.push_back(bias_);
    return TensorT<T>::make_op({N, out_channels_, outH, outW}, std::move(out), std::move(parents),
                               std::move(backward), "conv2d");
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& visit) override {
    visit(prefix + "weight", weight_, true);
    if (with_bias_) visit(prefix + "bias", bias_, true);
  }

  TensorT<T>& weight() { return weight_; }
  TensorT<T>& bias() { return bias_; }
  bool has_bias() const { return with_bias_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }

 private:
  std::size_t in_channels_, out_channels_, kernel_, stride_, padding_;
  bool with_bias_;
  TensorT<T> weight_;
  TensorT<T> bias_;
};

// --- batchnorm2d ---------------------------------------------------------------

// Per-channel normalization. Train mode normalizes with biased batch
// statistics and blends them into the running estimates
// (new = (1-momentum)*old + momentum*batch); eval mode uses the running
// estimates and never mutates them.
template <class T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, T eps = static_cast<T>(1e-5),
                       T momentum = static_cast<T>(0.1))
      : channels_(channels), eps_(eps), momentum_(momentum) {
    if (channels == 0) throw contract_error("batchnorm2d: channels must be positive");
    gamma_ = TensorT<T>::ones({channels}, true);
    beta_ = TensorT<T>::zeros({channels}, true);
    running_mean_ = TensorT<T>::zeros({channels});
    running_var_ = TensorT<T>::ones({channels});
  }

  const char* kind() const override { return "batchnorm2d"; }

  TensorT<T> forward(const TensorT<T>& x) override {
    detail::expect_nchw(x.shape(), "batchnorm2d");
    const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (C != channels_) {
      throw shape_error("batchnorm2d: input has " + std::to_string(C) + " channels, layer expects " +
                        std::to_string(channels_));
    }
    const std::size_t m = N * H * W;  // elements per channel
    if (m == 0) throw contract_error("batchnorm2d: empty batch");

    const bool training = this->mode_ == Mode::train;
    const T* xd = x.data().data();
    std::vector<T> mean_c(C), var_c(C);
    if (training) {
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* base = xd + (n * C + c) * H * W;
          for (std::size_t i = 0; i < H * W; ++i) s += base[i];
        }
        const double mu = s / static_cast<double>(m);
        double v = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* base = xd + (n * C + c) * H * W;
          for (std::size_t i = 0; i < H * W; ++i) {
            const double d = base[i] - mu;
            v += d * d;
          }
        }
        mean_c[c] = static_cast<T>(mu);
        var_c[c] = static_cast<T>(v / static_cast<double>(m));
      }
      // Running-stat update is a training side effect, not a taped op.
      T* rm = running_mean_.mutable_data();
      T* rv = running_var_.mutable_data();
      for (std::size_t c = 0; c < C; ++c) {
        rm[c] = (T(1) - momentum_) * rm[c] + momentum_ * mean_c[c];
        rv[c] = (T(1) - momentum_) * rv[c] + momentum_ * var_c[c];
      }
    } else {
      mean_c.assign(running_mean_.data().begin(), running_mean_.data().end());
      var_c.assign(running_var_.data().begin(), running_var_.data().end());
    }

    std::vector<T> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var_c[c] + eps_);

    std::vector<T> xhat(x.numel());
    std::vector<T> out(x.numel());
    const T* gd = gamma_.data().data();
    const T* bd = beta_.data().data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T* src = xd + (n * C + c) * H * W;
        T* xh = xhat.data() + (n * C + c) * H * W;
        T* dst = out.data() + (n * C + c) * H * W;
        for (std::size_t i = 0; i < H * W; ++i) {
          xh[i] = (src[i] - mean_c[c]) * inv_std[c];
          dst[i] = gd[c] * xh[i] + bd[c];
        }
      }

    TensorT<T> px = x, pg = gamma_, pb = beta_;
    auto backward = [px, pg, pb, N, C, H, W, m, training, inv_std = std::move(inv_std),
                     xhat = std::move(xhat)](std::span<const T> g) mutable {
      const bool need_x = px.requires_grad();
      const bool need_g = pg.requires_grad();
      const bool need_b = pb.requires_grad();
      const T* gd = pg.data().data();
      std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
      // Channel sums feed both the parameter grads and the train-mode dx.
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* grow = g.data() + (n * C + c) * H * W;
          const T* xh = xhat.data() + (n * C + c) * H * W;
          T sg = T(0), sgx = T(0);
          for (std::size_t i = 0; i < H * W; ++i) {
            sg += grow[i];
            sgx += grow[i] * xh[i];
          }
          dbeta[c] += sg;
          dgamma[c] += sgx;
        }
      if (need_x) {
        std::vector<T>& gx = px.grad_accum_buffer();
        const T inv_m = T(1) / static_cast<T>(m);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const T* grow = g.data() + (n * C + c) * H * W;
            const T* xh = xhat.data() + (n * C + c) * H * W;
            T* dst = gx.data() + (n * C + c) * H * W;
            const T scale = gd[c] * inv_std[c];
            if (training) {
              const T mean_g = dbeta[c] * inv_m;
              const T mean_gx = dgamma[c] * inv_m;
              for (std::size_t i = 0; i < H * W; ++i)
                dst[i] += scale * (grow[i] - mean_g - xh[i] * mean_gx);
            } else {
              for (std::size_t i = 0; i < H * W; ++i) dst[i] += scale * grow[i];
            }
          }
      }
      if (need_g) pg.accumulate_grad(std::span<const T>(dgamma.data(), dgamma.size()));
      if (need_b) pb.accumulate_grad(std::span<const T>(dbeta.data(), dbeta.size()));
    };
    return TensorT<T>::make_op(x.shape(), std::move(out), {x, gamma_, beta_}, std::move(backward),
                               "batchnorm2d");
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& visit) override {
    visit(prefix + "gamma", gamma_, true);
    visit(prefix + "beta", beta_, true);
    visit(prefix + "running_mean", running_mean_, false);
    visit(prefix + "running_var", running_var_, false);
  }

  TensorT<T>& gamma() { return gamma_; }
  TensorT<T>& beta() { return beta_; }
  TensorT<T>& running_mean() { return running_mean_; }
  TensorT<T>& running_var() { return running_var_; }
  std::size_t channels() const { return channels_; }

 private:
  std::size_t channels_;
  T eps_, momentum_;
  TensorT<T> gamma_, beta_, running_mean_, running_var_;
};

// --- pooling -------------------------------------------------------------------

// Max pooling; padded positions never win the max.
template <class T>
class MaxPool2d : public Module<T> {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding = 0)
      : kernel_(kernel), stride_(stride), padding_(padding) {
    if (kernel == 0 || stride == 0) throw contract_error("maxpool2d: kernel and stride must be positive");
    if (padding >= kernel) throw contract_error("maxpool2d: padding must be smaller than kernel");
  }

  const char* kind() const override { return "maxpool2d"; }

  TensorT<T> forward(const TensorT<T>& x) override {
    detail::expect_nchw(x.shape(), "maxpool2d");
    const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::size_t outH = conv_out_extent(H, kernel_, stride_, padding_);
    const std::size_t outW = conv_out_extent(W, kernel_, stride_, padding_);
    std::vector<T> out(N * C * outH * outW);
    std::vector<std::size_t> argmax(out.size());
    const T* xd = x.data().data();
    std::size_t o = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T* plane = xd + (n * C + c) * H * W;
        const std::size_t plane_off = (n * C + c) * H * W;
        for (std::size_t oh = 0; oh < outH; ++oh)
          for (std::size_t ow = 0; ow < outW; ++ow, ++o) {
            bool found = false;
            T best = T(0);
            std::size_t best_idx = 0;
            for (std::size_t kh = 0; kh < kernel_; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride_ + kh) -
                                        static_cast<std::ptrdiff_t>(padding_);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kw = 0; kw < kernel_; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride_ + kw) -
                                          static_cast<std::ptrdiff_t>(padding_);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                const T v = plane[ih * W + iw];
                if (!found || v > best) {
                  found = true;
                  best = v;
                  best_idx = plane_off + ih * W + iw;
                }
              }
            }
            out[o] = best;
            argmax[o] = best_idx;
          }
      }

    TensorT<T> px = x;
    auto backward = [px, argmax = std::move(argmax)](std::span<const T> g) mutable {
      if (!px.requires_grad()) return;
      std::vector<T>& gx = px.grad_accum_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    };
    return TensorT<T>::make_op({N, C, outH, outW}, std::move(out), {x}, std::move(backward),
                               "maxpool2d");
  }

  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }

 private:
  std::size_t kernel_, stride_, padding_;
};

// Global average pool to 1x1.
template <class T>
class AdaptiveAvgPool2d : public Module<T> {
 public:
  const char* kind() const override { return "adaptiveavgpool2d"; }

  TensorT<T> forward(const TensorT<T>& x) override {
    detail::expect_nchw(x.shape(), "adaptiveavgpool2d");
    const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H * W == 0) throw contract_error("adaptiveavgpool2d: empty spatial extent");
    std::vector<T> out(N * C);
    const T* xd = x.data().data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double s = 0;
      const T* plane = xd + nc * H * W;
      for (std::size_t i = 0; i < H * W; ++i) s += plane[i];
      out[nc] = static_cast<T>(s / static_cast<double>(H * W));
    }
    TensorT<T> px = x;
    auto backward = [px, N, C, H, W](std::span<const T> g) mutable {
      if (!px.requires_grad()) return;
      std::vector<T>& gx = px.grad_accum_buffer();
      const T inv = T(1) / static_cast<T>(H * W);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        T* dst = gx.data() + nc * H * W;
        const T go = g[nc] * inv;
        for (std::size_t i = 0; i < H * W; ++i) dst[i] += go;
      }
    };
    return TensorT<T>::make_op({N, C, 1, 1}, std::move(out), {x}, std::move(backward),
                               "adaptiveavgpool2d");
  }
};

// --- relu ----------------------------------------------------------------------

template <class T>
class ReLU : public Module<T> {
 public:
  const char* kind() const override { return "relu"; }
  TensorT<T> forward(const TensorT<T>& x) override { return relu(x); }
};

// --- linear ----------------------------------------------------------------------

// Fully connected layer, weight stored [out_features, in_features].
template <class T>
class Linear : public Module<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng)
      : in_features_(in_features), out_features_(out_features) {
    if (in_features == 0 || out_features == 0) {
      throw contract_error("linear: feature counts must be positive");
    }
    weight_ = TensorT<T>::zeros({out_features, in_features}, true);
    bias_ = TensorT<T>::zeros({out_features}, true);
    kaiming_uniform_(weight_, in_features, rng);
    bias_uniform_(bias_, in_features, rng);
  }

  const char* kind() const override { return "linear"; }

  TensorT<T> forward(const TensorT<T>& x) override {
    if (x.rank() != 2 || x.shape()[1] != in_features_) {
      throw shape_error("linear: expected [N," + std::to_string(in_features_) + "], got " +
                        shape_to_string(x.shape()));
    }
    return add(matmul(x, transpose2d(weight_)), bias_);
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& visit) override {
    visit(prefix + "weight", weight_, true);
    visit(prefix + "bias", bias_, true);
  }

  TensorT<T>& weight() { return weight_; }
  TensorT<T>& bias() { return bias_; }
  std::size_t in_features() const { return in_features_; }
  std::size_t out_features() const { return out_features_; }

 private:
  std::size_t in_features_ = 0, out_features_ = 0;
  TensorT<T> weight_, bias_;
};

// --- sequential ----------------------------------------------------------------

// Ordered container of child modules; children are named by position.
template <class T>
class Sequential : public Module<T> {
 public:
  Sequential() = default;

  template <class M, class... Args>
  M& emplace(Args&&... args) {
    auto mod = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *mod;
    items_.push_back(std::move(mod));
    return ref;
  }

  const char* kind() const override { return "sequential"; }

  TensorT<T> forward(const TensorT<T>& x) override {
    TensorT<T> h = x;
    for (auto& m : items_) h = m->forward(h);
    return h;
  }

  void set_mode(Mode m) override {
    this->mode_ = m;
    for (auto& item : items_) item->set_mode(m);
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& visit) override {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      items_[i]->visit_state(prefix + std::to_string(i) + ".", visit);
    }
  }

  std::size_t size() const { return items_.size(); }
  Module<T>& operator[](std::size_t i) { return *items_.at(i); }

 private:
  std::vector<std::unique_ptr<Module<T>>> items_;
};

}  // namespace orchard::nn
