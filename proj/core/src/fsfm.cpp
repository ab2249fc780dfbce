#include "mdet/fsfm.hpp"

namespace mdet {

void ShiftConfig::validate_for(const Shape& shape) const {
  if (step == 0) throw ConfigError("shift step must be positive", "shift.step");
  if (step >= std::min(shape.h, shape.w)) {
    throw ConfigError("shift step " + std::to_string(step) + " must be smaller than min(H, W) of " +
                          shape.str(),
                      "shift.step");
  }
}

void C3k2Config::validate() const {
  if (channels == 0 || hidden == 0) {
    throw ConfigError("C3k2 channels and hidden width must be positive", "model.width");
  }
  if (use_fsfm && hidden % 4 != 0) {
    throw ConfigError("FSFM needs a hidden width divisible by 4, got " + std::to_string(hidden),
                      "model.width");
  }
  if (shift.step == 0) throw ConfigError("shift step must be positive", "shift.step");
}

template <typename T>
std::array<Var<T>, 4> split4(Var<T> x) {
  const std::size_t c = x.shape().c;
  if (c % 4 != 0) {
    throw ConfigError("channel count " + std::to_string(c) + " is not divisible by 4", "channels");
  }
  const std::size_t g = c / 4;
  return {slice_channels(x, 0, g), slice_channels(x, g, g), slice_channels(x, 2 * g, g),
          slice_channels(x, 3 * g, g)};
}

template <typename T>
Var<T> fsfm_fuse(Var<T> x, const ShiftConfig& cfg) {
  cfg.validate_for(x.shape());
  const auto groups = split4(x);
  const std::array<Var<T>, 4> moved{
      shift2d(groups[0], ShiftAxis::width, +1, cfg.step),
      shift2d(groups[1], ShiftAxis::width, -1, cfg.step),
      shift2d(groups[2], ShiftAxis::height, +1, cfg.step),
      shift2d(groups[3], ShiftAxis::height, -1, cfg.step),
  };
  return concat_channels(std::span<const Var<T>>(moved));
}

std::size_t param_count_c3k2(const C3k2Config& cfg) {
  const std::size_t c = cfg.channels;
  const std::size_t h = cfg.hidden;
  return (c * 2 * h + 2 * h) + (9 * h * h + h) + (h * c + c);
}

template <typename T>
void add_c3k2_params(ParamStore<T>& store, const std::string& prefix, const C3k2Config& cfg,
                     Rng& rng) {
  cfg.validate();
  add_conv_params(store, prefix + ".entry", cfg.channels, 2 * cfg.hidden, 1, 1, true, rng);
  add_conv_params(store, prefix + ".inner", cfg.hidden, cfg.hidden, 3, 1, true, rng);
  add_conv_params(store, prefix + ".exit", cfg.hidden, cfg.channels, 1, 1, true, rng);
}

template <typename T>
Var<T> fsfm_c3k2_block(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                       const C3k2Config& cfg) {
  cfg.validate();
  if (x.shape().c != cfg.channels) {
    throw DimensionError("C3k2 block configured for " + std::to_string(cfg.channels) +
                         " channels, input has shape " + x.shape().str());
  }
  Var<T> e = relu(conv_layer(x, p, prefix + ".entry", {}, true));
  Var<T> residual = slice_channels(e, 0, cfg.hidden);
  Var<T> t = slice_channels(e, cfg.hidden, cfg.hidden);
  if (cfg.use_fsfm) t = fsfm_fuse(t, cfg.shift);
  t = relu(conv_layer(t, p, prefix + ".inner", Conv2dOptions{1, 1, 1}, true));
  return conv_layer(add(t, residual), p, prefix + ".exit", {}, true);
}

#define MDET_INSTANTIATE_FSFM(T)                                                               \
  template std::array<Var<T>, 4> split4<T>(Var<T>);                                            \
  template Var<T> fsfm_fuse<T>(Var<T>, const ShiftConfig&);                                    \
  template void add_c3k2_params<T>(ParamStore<T>&, const std::string&, const C3k2Config&,      \
                                   Rng&);                                                      \
  template Var<T> fsfm_c3k2_block<T>(Var<T>, const Bindings<T>&, const std::string&,           \
                                     const C3k2Config&);

MDET_INSTANTIATE_FSFM(float)
MDET_INSTANTIATE_FSFM(double)

#undef MDET_INSTANTIATE_FSFM

}  // namespace mdet
