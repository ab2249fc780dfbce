#include "mdet/model.hpp"

#include <cmath>

namespace mdet {
namespace {

enum Stream : std::uint64_t { kStem = 1, kDown = 100, kC3k2 = 200, kAttn = 300, kHead = 400 };

std::string stage(std::size_t i, const char* part) { return "s" + std::to_string(i) + "." + part; }

}  // namespace

std::string ModuleToggles::label() const {
  std::string out;
  auto append = [&out](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  append(dbcasa, "dbcasa");
  append(fsfm, "fsfm");
  append(sfg, "sfg");
  return out.empty() ? "none" : out;
}

std::vector<ModuleToggles> all_toggle_combinations() {
  std::vector<ModuleToggles> out;
  for (int bits = 0; bits < 8; ++bits) {
    out.push_back(ModuleToggles{(bits & 4) != 0, (bits & 2) != 0, (bits & 1) != 0});
  }
  return out;
}

void ModelConfig::validate() const {
  if (in_channels == 0) throw ConfigError("input channels must be positive", "model.in_channels");
  if (num_classes == 0) throw ConfigError("class count must be positive", "model.num_classes");
  if (stem_channels == 0) throw ConfigError("stem channels must be positive", "model.stem_channels");
  if (width < 2 || width % 2 != 0) throw ConfigError("width must be even and >= 2", "model.width");
  if (stages == 0) throw ConfigError("need at least one stage", "model.stages");
  if (image_size % (std::size_t{1} << stages) != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by 2^" +
                          std::to_string(stages),
                      "model.stages");
  }
  if (!(objectness_prior > 0.0 && objectness_prior < 1.0)) {
    throw ConfigError("objectness prior must lie in (0, 1)", "model.objectness_prior");
  }
  c3k2().validate();
  if (toggles.fsfm) {
    ShiftConfig{shift_step}.validate_for(Shape{1, width / 2, grid(), grid()});
  }
  dbcasa().validate();
}

std::size_t ModelConfig::grid() const { return image_size >> stages; }

C3k2Config ModelConfig::c3k2() const {
  C3k2Config c;
  c.channels = width;
  c.hidden = width / 2;
  c.use_fsfm = toggles.fsfm;
  c.shift.step = shift_step;
  return c;
}

DbcasaConfig ModelConfig::dbcasa() const {
  DbcasaConfig d;
  d.channels = width;
  d.dw_kernel = dw_kernel;
  d.pairing = attn_pairing;
  d.map_source = attn_map_source;
  return d;
}

ParamStore<float> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<float> store;
  {
    Rng rng(mix_seed(seed, kStem));
    add_conv_bn_params(store, "stem", cfg.in_channels, cfg.stem_channels, 3, rng);
  }
  std::size_t c_in = cfg.stem_channels;
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    Rng down(mix_seed(seed, kDown + i));
    add_conv_bn_params(store, stage(i, "down"), c_in, cfg.width, 3, down);
    Rng block(mix_seed(seed, kC3k2 + i));
    add_c3k2_params(store, stage(i, "c3k2"), cfg.c3k2(), block);
    c_in = cfg.width;
  }
  if (cfg.toggles.dbcasa) {
    Rng rng(mix_seed(seed, kAttn));
    add_dbcasa_params(store, "attn", cfg.dbcasa(), rng);
  }
  Rng head(mix_seed(seed, kHead));
  add_conv_params(store, "head", cfg.width, cfg.head_channels(), 1, 1, true, head);
  Tensor32& bias = store.get_mut("head.b");
  const double p = cfg.objectness_prior;
  bias[0] = static_cast<float>(std::log(p / (1.0 - p)));
  for (std::size_t c = 1; c < cfg.head_channels(); ++c) bias[c] = 0.0f;
  return store;
}

template <typename T>
Var<T> detector_forward(Var<T> images, const Bindings<T>& p, const ModelConfig& cfg,
                        const ForwardContext<T>& ctx) {
  if (images.shape().c != cfg.in_channels || images.shape().h != cfg.image_size ||
      images.shape().w != cfg.image_size) {
    throw DimensionError("detector expects [N," + std::to_string(cfg.in_channels) + "," +
                         std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                         "] input, got " + images.shape().str());
  }
  Var<T> h = conv_bn_relu(images, p, "stem", {1, 1, 1}, ctx);
  const C3k2Config block = cfg.c3k2();
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    h = conv_bn_relu(h, p, stage(i, "down"), {2, 1, 1}, ctx);
    h = fsfm_c3k2_block(h, p, stage(i, "c3k2"), block);
  }
  if (cfg.toggles.dbcasa) h = add(h, dbcasa_forward(h, p, "attn", cfg.dbcasa(), ctx));
  return conv_layer(h, p, "head", {}, true);
}

std::vector<std::pair<std::string, std::size_t>> param_breakdown(const ParamStore<float>& params,
                                                                 const ModelConfig& cfg) {
  std::size_t down = 0;
  std::size_t blocks = 0;
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    down += params.count_with_prefix(stage(i, "down."));
    blocks += params.count_with_prefix(stage(i, "c3k2."));
  }
  return {{"stem", params.count_with_prefix("stem.")},
          {"downsample", down},
          {"c3k2", blocks},
          {"dbcasa", params.count_with_prefix("attn.")},
          {"head", params.count_with_prefix("head.")}};
}

template Var<float> detector_forward<float>(Var<float>, const Bindings<float>&, const ModelConfig&,
                                            const ForwardContext<float>&);
template Var<double> detector_forward<double>(Var<double>, const Bindings<double>&,
                                              const ModelConfig&, const ForwardContext<double>&);

}  // namespace mdet
