#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "orchard/errors.hpp"
#include "orchard/tensor.hpp"

namespace orchard::nn {

// Row-wise softmax with max-subtraction, so huge logits cannot overflow.
// Composed from tape primitives, so it is differentiable for free; in this
// stack it is the inference-time head only.
template <class T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 2 || logits.shape()[1] == 0) {
    throw shape_error("softmax: expected [N,C] with C >= 1, got " + shape_to_string(logits.shape()));
  }
  const TensorT<T> shifted = sub(logits, reduce_max(logits, {1}, /*keepdims=*/true));
  const TensorT<T> e = exp(shifted);
  return div(e, sum(e, {1}, /*keepdims=*/true));
}

// Mean over the batch of -log softmax(logits)[label]. Fused log-sum-exp
// forward with the closed-form gradient (softmax - onehot) / N.
template <class T>
TensorT<T> cross_entropy_loss(const TensorT<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) {
    throw shape_error("cross_entropy: expected [N,C], got " + shape_to_string(logits.shape()));
  }
  const std::size_t N = logits.shape()[0], C = logits.shape()[1];
  if (N == 0) throw contract_error("cross_entropy: empty batch");
  if (labels.size() != N) throw contract_error("cross_entropy: labels/batch length mismatch");
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] >= C) {
      throw index_error("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                        std::to_string(C) + " classes (row " + std::to_string(i) + ")");
    }
  }

  const T* ld = logits.data().data();
  std::vector<T> probs(N * C);
  double total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const T* row = ld + i * C;
    T m = row[0];
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double denom = 0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c] - m));
    const double lse = static_cast<double>(m) + std::log(denom);
    for (std::size_t c = 0; c < C; ++c) {
      probs[i * C + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - m)) / denom);
    }
    total += lse - static_cast<double>(row[labels[i]]);
  }
  const T loss = static_cast<T>(total / static_cast<double>(N));

  TensorT<T> pl = logits;
  auto backward = [pl, probs = std::move(probs), labels, N, C](std::span<const T> g) mutable {
    if (!pl.requires_grad()) return;
    std::vector<T>& gx = pl.grad_accum_buffer();
    const T scale = g[0] / static_cast<T>(N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        const T onehot = labels[i] == c ? T(1) : T(0);
        gx[i * C + c] += scale * (probs[i * C + c] - onehot);
      }
  };
  return TensorT<T>::make_op({}, {loss}, {logits}, std::move(backward), "cross_entropy");
}

}  // namespace orchard::nn
