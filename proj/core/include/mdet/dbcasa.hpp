#pragma once

#include <cstddef>
#include <string>

#include "mdet/layers.hpp"

namespace mdet {

// Dual-branch convolutional attention block.
//
//   Q = Wq x,  K = Wk x,  V = Wv x
//   spatial gate:  sigmoid(conv1x1_{C->1}(relu(bn(dwconv_k(s))))) * s
//   channel gate:  sigmoid(conv1x1_{C->C}(avgpool(s))) * s
//   out = L(gate_a(Q) + gate_b(K)) * V
//
// By default the spatial gate acts on Q and the channel gate on K, and each gate
// computes its attention map from the tensor it scales.
struct DbcasaConfig {
  enum class Pairing { spatial_query, spatial_key };
  enum class MapSource { projection, input };

  std::size_t channels = 16;
  std::size_t dw_kernel = 3;
  Pairing pairing = Pairing::spatial_query;
  // `input` computes both maps from the block input x and applies them to Q/K.
  MapSource map_source = MapSource::projection;

  std::size_t dw_pad() const noexcept { return dw_kernel / 2; }
  void validate() const;
};

// Parameter names under `prefix`:
//   dw.w [C,1,k,k]; bn.{gamma,beta} [1,C,1,1] (+ frozen bn.mean, bn.var);
//   conv_s.{w [1,C,1,1], b [1,1,1,1]}; conv_c.{w [C,C,1,1], b [1,C,1,1]};
//   wq.w, wk.w, wv.w [C,C,1,1]; out.{w [C,C,1,1], b [1,C,1,1]}
template <typename T>
void add_dbcasa_params(ParamStore<T>& store, const std::string& prefix, const DbcasaConfig& cfg,
                       Rng& rng);

// Closed-form learnable count: C*k*k + 2C + (C+1) + (C^2+C) + 3C^2 + (C^2+C).
std::size_t param_count_dbcasa(const DbcasaConfig& cfg);

// sigmoid(spatial map of `source`) * target. spatial_branch(x) is spatial_gate(x, x).
template <typename T>
Var<T> spatial_gate(Var<T> source, Var<T> target, const Bindings<T>& p, const std::string& prefix,
                    const DbcasaConfig& cfg, const ForwardContext<T>& ctx);

template <typename T>
Var<T> channel_gate(Var<T> source, Var<T> target, const Bindings<T>& p, const std::string& prefix,
                    const DbcasaConfig& cfg);

template <typename T>
Var<T> spatial_branch(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                      const DbcasaConfig& cfg, const ForwardContext<T>& ctx);

template <typename T>
Var<T> channel_branch(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                      const DbcasaConfig& cfg);

template <typename T>
Var<T> dbcasa_forward(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                      const DbcasaConfig& cfg, const ForwardContext<T>& ctx);

}  // namespace mdet
