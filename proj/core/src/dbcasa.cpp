#include "mdet/dbcasa.hpp"

namespace mdet {
namespace {

template <typename T>
void require_channels(Var<T> x, const DbcasaConfig& cfg) {
  if (x.shape().c != cfg.channels) {
    throw DimensionError("DB-CASA configured for " + std::to_string(cfg.channels) +
                         " channels, input has shape " + x.shape().str());
  }
}

}  // namespace

void DbcasaConfig::validate() const {
  if (channels == 0) throw ConfigError("dbcasa channels must be >= 1", "dbcasa.channels");
  if (dw_kernel == 0 || dw_kernel % 2 == 0) {
    throw ConfigError("dbcasa depthwise kernel must be odd, got " + std::to_string(dw_kernel),
                      "dbcasa.dw_kernel");
  }
}

std::size_t param_count_dbcasa(const DbcasaConfig& cfg) {
  const std::size_t c = cfg.channels;
  const std::size_t k = cfg.dw_kernel;
  return c * k * k + 2 * c + (c + 1) + (c * c + c) + 3 * c * c + (c * c + c);
}

template <typename T>
void add_dbcasa_params(ParamStore<T>& store, const std::string& prefix, const DbcasaConfig& cfg,
                       Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  add_conv_params(store, prefix + ".dw", c, c, cfg.dw_kernel, c, false, rng);
  add_batchnorm_params(store, prefix + ".bn", c);
  add_conv_params(store, prefix + ".conv_s", c, 1, 1, 1, true, rng);
  add_conv_params(store, prefix + ".conv_c", c, c, 1, 1, true, rng);
  add_conv_params(store, prefix + ".wq", c, c, 1, 1, false, rng);
  add_conv_params(store, prefix + ".wk", c, c, 1, 1, false, rng);
  add_conv_params(store, prefix + ".wv", c, c, 1, 1, false, rng);
  add_conv_params(store, prefix + ".out", c, c, 1, 1, true, rng);
}

template <typename T>
Var<T> spatial_gate(Var<T> source, Var<T> target, const Bindings<T>& p, const std::string& prefix,
                    const DbcasaConfig& cfg, const ForwardContext<T>& ctx) {
  require_channels(source, cfg);
  require_channels(target, cfg);
  Conv2dOptions dw{1, cfg.dw_pad(), cfg.channels};
  Var<T> h = conv_layer(source, p, prefix + ".dw", dw, false);
  h = relu(batchnorm_layer(h, p, prefix + ".bn", ctx));
  Var<T> map = sigmoid(conv_layer(h, p, prefix + ".conv_s", {}, true));  // [N,1,H,W]
  return mul(target, map);
}

template <typename T>
Var<T> channel_gate(Var<T> source, Var<T> target, const Bindings<T>& p, const std::string& prefix,
                    const DbcasaConfig& cfg) {
  require_channels(source, cfg);
  require_channels(target, cfg);
  Var<T> pooled = global_avg_pool(source);
  Var<T> map = sigmoid(conv_layer(pooled, p, prefix + ".conv_c", {}, true));  // [N,C,1,1]
  return mul(target, map);
}

template <typename T>
Var<T> spatial_branch(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                      const DbcasaConfig& cfg, const ForwardContext<T>& ctx) {
  return spatial_gate(x, x, p, prefix, cfg, ctx);
}

template <typename T>
Var<T> channel_branch(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                      const DbcasaConfig& cfg) {
  return channel_gate(x, x, p, prefix, cfg);
}

template <typename T>
Var<T> dbcasa_forward(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                      const DbcasaConfig& cfg, const ForwardContext<T>& ctx) {
  require_channels(x, cfg);
  Var<T> q = conv_layer(x, p, prefix + ".wq", {}, false);
  Var<T> k = conv_layer(x, p, prefix + ".wk", {}, false);
  Var<T> v = conv_layer(x, p, prefix + ".wv", {}, false);

  const bool spatial_on_q = cfg.pairing == DbcasaConfig::Pairing::spatial_query;
  Var<T> spatial_target = spatial_on_q ? q : k;
  Var<T> channel_target = spatial_on_q ? k : q;
  const bool from_input = cfg.map_source == DbcasaConfig::MapSource::input;

  Var<T> fs = spatial_gate(from_input ? x : spatial_target, spatial_target, p, prefix, cfg, ctx);
  Var<T> fc = channel_gate(from_input ? x : channel_target, channel_target, p, prefix, cfg);
  Var<T> fused = spatial_on_q ? add(fs, fc) : add(fc, fs);
  return mul(conv_layer(fused, p, prefix + ".out", {}, true), v);
}

#define MDET_INSTANTIATE_DBCASA(T)                                                            \
  template void add_dbcasa_params<T>(ParamStore<T>&, const std::string&, const DbcasaConfig&, \
                                     Rng&);                                                   \
  template Var<T> spatial_gate<T>(Var<T>, Var<T>, const Bindings<T>&, const std::string&,     \
                                  const DbcasaConfig&, const ForwardContext<T>&);             \
  template Var<T> channel_gate<T>(Var<T>, Var<T>, const Bindings<T>&, const std::string&,     \
                                  const DbcasaConfig&);                                       \
  template Var<T> spatial_branch<T>(Var<T>, const Bindings<T>&, const std::string&,           \
                                    const DbcasaConfig&, const ForwardContext<T>&);           \
  template Var<T> channel_branch<T>(Var<T>, const Bindings<T>&, const std::string&,           \
                                    const DbcasaConfig&);                                     \
  template Var<T> dbcasa_forward<T>(Var<T>, const Bindings<T>&, const std::string&,           \
                                    const DbcasaConfig&, const ForwardContext<T>&);

MDET_INSTANTIATE_DBCASA(float)
MDET_INSTANTIATE_DBCASA(double)

#undef MDET_INSTANTIATE_DBCASA

}  // namespace mdet
