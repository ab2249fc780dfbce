#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdet/dbcasa.hpp"
#include "mdet/fsfm.hpp"

namespace mdet {

struct ModuleToggles {
  bool dbcasa = true;
  bool fsfm = true;
  bool sfg = true;

  bool operator==(const ModuleToggles&) const = default;
  // "dbcasa+fsfm+sfg", "none", ...
  std::string label() const;
};

// The 8 combinations, all-off first, bit order (dbcasa, fsfm, sfg) from most significant.
std::vector<ModuleToggles> all_toggle_combinations();

// stem conv -> stages x {stride-2 conv, C3k2 block} -> optional DB-CASA (residual)
// -> 1x1 head with per-cell channels [objectness, tx, ty, tw, th, class logits...].
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = 3;
  std::size_t image_size = 64;
  std::size_t stem_channels = 8;
  std::size_t width = 16;
  std::size_t stages = 3;
  std::size_t dw_kernel = 3;
  DbcasaConfig::Pairing attn_pairing = DbcasaConfig::Pairing::spatial_query;
  DbcasaConfig::MapSource attn_map_source = DbcasaConfig::MapSource::projection;
  std::size_t shift_step = 1;
  // Objectness bias at init is logit(prior).
  double objectness_prior = 0.05;
  ModuleToggles toggles;

  void validate() const;
  std::size_t grid() const;
  std::size_t stride() const { return image_size / grid(); }
  std::size_t head_channels() const { return 5 + num_classes; }
  C3k2Config c3k2() const;
  DbcasaConfig dbcasa() const;
};

// Parameters are initialised from independent per-module streams, so toggling one
// module leaves every other module's initial weights unchanged.
ParamStore<float> build_model(const ModelConfig& cfg, std::uint64_t seed);

// [N, in_channels, S, S] -> [N, 5 + K, G, G]
template <typename T>
Var<T> detector_forward(Var<T> images, const Bindings<T>& p, const ModelConfig& cfg,
                        const ForwardContext<T>& ctx);

// (module, learnable count) in network order: stem, stage downsamplers, c3k2, dbcasa, head.
std::vector<std::pair<std::string, std::size_t>> param_breakdown(const ParamStore<float>& params,
                                                                 const ModelConfig& cfg);

}  // namespace mdet
