#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "mdet/layers.hpp"

namespace mdet {

// Parameter-free four-direction shift. Group g of the channel split is moved in
// direction g of (+width, -width, +height, -height); vacated cells are zero.
struct ShiftConfig {
  std::size_t step = 1;

  // Throws ConfigError unless step < min(H, W) of `shape` and step > 0.
  void validate_for(const Shape& shape) const;
};

// Four equal channel groups in channel order. C must be divisible by 4.
template <typename T>
std::array<Var<T>, 4> split4(Var<T> x);

template <typename T>
Var<T> fsfm_fuse(Var<T> x, const ShiftConfig& cfg);

// C3k2-style residual wrapper:
//   e = relu(entry_1x1(x))                  C -> 2*hidden
//   r, t = split(e)                         hidden each
//   t = relu(inner_3x3(fuse(t))) + r        fuse is skipped when use_fsfm is false
//   out = exit_1x1(t)                       hidden -> C
struct C3k2Config {
  std::size_t channels = 16;
  std::size_t hidden = 8;
  bool use_fsfm = true;
  ShiftConfig shift;

  void validate() const;
};

// Names under `prefix`: entry.{w,b}, inner.{w,b}, exit.{w,b}. The shift owns none.
template <typename T>
void add_c3k2_params(ParamStore<T>& store, const std::string& prefix, const C3k2Config& cfg,
                     Rng& rng);

// Learnable count of the three wrapper convolutions; independent of use_fsfm and step.
std::size_t param_count_c3k2(const C3k2Config& cfg);

template <typename T>
Var<T> fsfm_c3k2_block(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                       const C3k2Config& cfg);

}  // namespace mdet
