#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "mdet/ops.hpp"
#include "mdet/param_store.hpp"
#include "mdet/random.hpp"

namespace mdet {

// Per-forward settings shared by every layer.
template <typename T>
struct ForwardContext {
  bool training = true;
  // When set in training mode, each batchnorm layer records its batch statistics here.
  std::map<std::string, ChannelStats<T>>* batch_stats = nullptr;
};

// Registers `<prefix>.w` [c_out, c_in/groups, k, k] and optionally `<prefix>.b` [1, c_out, 1, 1].
template <typename T>
void add_conv_params(ParamStore<T>& store, const std::string& prefix, std::size_t c_in,
                     std::size_t c_out, std::size_t k, std::size_t groups, bool bias, Rng& rng);

// Registers learnable `<prefix>.gamma`/`.beta` and frozen `.mean`/`.var`.
template <typename T>
void add_batchnorm_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels);

template <typename T>
Var<T> conv_layer(Var<T> x, const Bindings<T>& p, const std::string& prefix, Conv2dOptions opt,
                  bool bias);

template <typename T>
Var<T> batchnorm_layer(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                       const ForwardContext<T>& ctx);

// conv (no bias) -> batchnorm -> relu, the detector's basic unit.
template <typename T>
Var<T> conv_bn_relu(Var<T> x, const Bindings<T>& p, const std::string& prefix, Conv2dOptions opt,
                    const ForwardContext<T>& ctx);

template <typename T>
void add_conv_bn_params(ParamStore<T>& store, const std::string& prefix, std::size_t c_in,
                        std::size_t c_out, std::size_t k, Rng& rng);

}  // namespace mdet
