#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>
#include <span>
#include <vector>

#include "mdet/tape.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;
};

// Cross-correlation. w is [C_out, C_in/groups, k, k]; b (optional) is [1, C_out, 1, 1].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b,
              Conv2dOptions opt = {});

template <typename T>
Var<T> sigmoid(Var<T> x);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
struct ChannelStats {
  std::vector<T> mean;
  std::vector<T> var;
};

inline constexpr double kBatchNormEps = 1e-5;

// Training mode normalizes with exact (biased) batch statistics and reports them
// through `batch_stats`; inference mode uses `running`. gamma and beta are [1, C, 1, 1].
template <typename T>
struct BatchNormArgs {
  bool training = true;
  const ChannelStats<T>* running = nullptr;
  ChannelStats<T>* batch_stats = nullptr;
  double eps = kBatchNormEps;
};

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormArgs<T> args = {});

// [N, C, H, W] -> [N, C, 1, 1]
template <typename T>
Var<T> global_avg_pool(Var<T> x);

// Elementwise product. One operand may be [N, 1, H, W] or [N, C, 1, 1] against a
// full [N, C, H, W] operand; any other shape disagreement is a DimensionError.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

// Elementwise sum with the same broadcast rule as mul.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t start, std::size_t count);

template <typename T>
std::vector<Var<T>> split_channels(Var<T> x, std::span<const std::size_t> counts);

enum class ShiftAxis { width, height };

// Translates every plane by `step` cells along `axis`; sign > 0 moves toward larger
// indices. Vacated cells are zero, values pushed past the border are dropped.
template <typename T>
Var<T> shift2d(Var<T> x, ShiftAxis axis, int sign, std::size_t step);

// Sum of all elements, shape [1, 1, 1, 1].
template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> mean(Var<T> x);

// sum_i weights_i * BCE(sigmoid(logits_i), targets_i) / normalizer, as a scalar.
template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& weights,
                       T normalizer);

// Plain-tensor helpers shared by ops and callers.
namespace kernels {

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Writes the shifted h x w plane of `src` into `dst`, zero-filling vacated cells.
template <typename T>
void shift_plane_into(const T* src, T* dst, std::size_t h, std::size_t w, ShiftAxis axis,
                      int sign, std::size_t step);

}  // namespace kernels

}  // namespace mdet
