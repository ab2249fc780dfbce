#include "mdet/layers.hpp"

namespace mdet {

template <typename T>
void add_conv_params(ParamStore<T>& store, const std::string& prefix, std::size_t c_in,
                     std::size_t c_out, std::size_t k, std::size_t groups, bool bias, Rng& rng) {
  const std::size_t fan_in = (c_in / groups) * k * k;
  store.add(prefix + ".w", init_uniform<T>(Shape{c_out, c_in / groups, k, k}, fan_in, rng));
  if (bias) store.add(prefix + ".b", init_uniform<T>(Shape{1, c_out, 1, 1}, fan_in, rng));
}

template <typename T>
void add_batchnorm_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels) {
  const Shape s{1, channels, 1, 1};
  store.add(prefix + ".gamma", Tensor<T>(s, T{1}));
  store.add(prefix + ".beta", Tensor<T>(s, T{0}));
  store.add(prefix + ".mean", Tensor<T>(s, T{0}), false);
  store.add(prefix + ".var", Tensor<T>(s, T{1}), false);
}

template <typename T>
Var<T> conv_layer(Var<T> x, const Bindings<T>& p, const std::string& prefix, Conv2dOptions opt,
                  bool bias) {
  if (bias) return conv2d(x, p[prefix + ".w"], std::optional<Var<T>>(p[prefix + ".b"]), opt);
  return conv2d(x, p[prefix + ".w"], std::optional<Var<T>>{}, opt);
}

template <typename T>
Var<T> batchnorm_layer(Var<T> x, const Bindings<T>& p, const std::string& prefix,
                       const ForwardContext<T>& ctx) {
  BatchNormArgs<T> args;
  args.training = ctx.training;
  ChannelStats<T> running;
  if (!ctx.training) {
    const auto m = p[prefix + ".mean"].value().data();
    const auto v = p[prefix + ".var"].value().data();
    running.mean.assign(m.begin(), m.end());
    running.var.assign(v.begin(), v.end());
    args.running = &running;
  } else if (ctx.batch_stats) {
    args.batch_stats = &(*ctx.batch_stats)[prefix];
  }
  return batchnorm2d(x, p[prefix + ".gamma"], p[prefix + ".beta"], args);
}

template <typename T>
Var<T> conv_bn_relu(Var<T> x, const Bindings<T>& p, const std::string& prefix, Conv2dOptions opt,
                    const ForwardContext<T>& ctx) {
  Var<T> y = conv_layer(x, p, prefix + ".conv", opt, false);
  return relu(batchnorm_layer(y, p, prefix + ".bn", ctx));
}

template <typename T>
void add_conv_bn_params(ParamStore<T>& store, const std::string& prefix, std::size_t c_in,
                        std::size_t c_out, std::size_t k, Rng& rng) {
  add_conv_params(store, prefix + ".conv", c_in, c_out, k, 1, false, rng);
  add_batchnorm_params(store, prefix + ".bn", c_out);
}

#define MDET_INSTANTIATE_LAYERS(T)                                                          \
  template void add_conv_params<T>(ParamStore<T>&, const std::string&, std::size_t,         \
                                   std::size_t, std::size_t, std::size_t, bool, Rng&);      \
  template void add_batchnorm_params<T>(ParamStore<T>&, const std::string&, std::size_t);   \
  template Var<T> conv_layer<T>(Var<T>, const Bindings<T>&, const std::string&,             \
                                Conv2dOptions, bool);                                       \
  template Var<T> batchnorm_layer<T>(Var<T>, const Bindings<T>&, const std::string&,        \
                                     const ForwardContext<T>&);                             \
  template Var<T> conv_bn_relu<T>(Var<T>, const Bindings<T>&, const std::string&,           \
                                  Conv2dOptions, const ForwardContext<T>&);                 \
  template void add_conv_bn_params<T>(ParamStore<T>&, const std::string&, std::size_t,      \
                                      std::size_t, std::size_t, Rng&);

MDET_INSTANTIATE_LAYERS(float)
MDET_INSTANTIATE_LAYERS(double)

#undef MDET_INSTANTIATE_LAYERS

}  // namespace mdet
