#include "mdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace mdet {
namespace {

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

// Output index range [lo, hi) whose input coordinate o*stride + tap - pad lies in [0, in).
struct ValidRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

ValidRange valid_outputs(std::size_t in, std::size_t out, std::size_t stride, std::size_t pad,
                         std::size_t tap) {
  ValidRange r;
  // smallest o with o*stride + tap >= pad
  r.lo = tap >= pad ? 0 : (pad - tap + stride - 1) / stride;
  // largest o with o*stride + tap - pad <= in - 1
  if (in - 1 + pad < tap) {
    r.hi = 0;
  } else {
    r.hi = std::min(out, (in - 1 + pad - tap) / stride + 1);
  }
  if (r.hi < r.lo) r.hi = r.lo;
  return r;
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
class Conv2dOp final : public Op<T> {
 public:
  Conv2dOp(Conv2dOptions opt, bool has_bias) : opt_(opt), has_bias_(has_bias) {}
  std::string_view name() const override { return "conv2d"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& w = *in[1];
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    const std::size_t k = ws.h;
    const std::size_t oh_n = conv_out_extent(xs.h, k, opt_.stride, opt_.pad);
    const std::size_t ow_n = conv_out_extent(xs.w, k, opt_.stride, opt_.pad);
    const std::size_t c_out = ws.n;
    const std::size_t icpg = ws.c;
    const std::size_t ocpg = c_out / opt_.groups;
    Tensor<T> out(Shape{xs.n, c_out, oh_n, ow_n});
    const T* xd = x.raw();
    const T* wd = w.raw();
    T* od = out.raw();
    const std::size_t s = opt_.stride;

    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t oc = 0; oc < c_out; ++oc) {
        const std::size_t g = oc / ocpg;
        T* op = od + out.offset(n, oc, 0, 0);
        if (has_bias_) std::fill(op, op + oh_n * ow_n, (*in[2])[oc]);
        for (std::size_t icg = 0; icg < icpg; ++icg) {
          const T* ip = xd + x.offset(n, g * icpg + icg, 0, 0);
          for (std::size_t kh = 0; kh < k; ++kh) {
            const ValidRange rh = valid_outputs(xs.h, oh_n, s, opt_.pad, kh);
            for (std::size_t kw = 0; kw < k; ++kw) {
              const T wv = wd[((oc * icpg + icg) * k + kh) * k + kw];
              const ValidRange rw = valid_outputs(xs.w, ow_n, s, opt_.pad, kw);
              for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                const T* irow = ip + (oh * s + kh - opt_.pad) * xs.w + kw - opt_.pad;
                T* orow = op + oh * ow_n;
                if (s == 1) {
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += wv * irow[ow];
                } else {
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += wv * irow[ow * s];
                }
              }
            }
          }
        }
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                const Tensor<T>& gout, std::span<Tensor<T>* const> grads) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& w = *in[1];
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    const Shape os = out.shape();
    const std::size_t k = ws.h;
    const std::size_t icpg = ws.c;
    const std::size_t ocpg = os.c / opt_.groups;
    const std::size_t s = opt_.stride;
    const T* xd = x.raw();
    const T* wd = w.raw();
    const T* gd = gout.raw();
    T* gx = grads[0] ? grads[0]->raw() : nullptr;
    T* gw = grads[1] ? grads[1]->raw() : nullptr;

    if (has_bias_ && grads[2]) {
      T* gb = grads[2]->raw();
      for (std::size_t n = 0; n < os.n; ++n) {
        for (std::size_t oc = 0; oc < os.c; ++oc) {
          const T* gp = gd + gout.offset(n, oc, 0, 0);
          T acc{0};
          for (std::size_t i = 0; i < os.h * os.w; ++i) acc += gp[i];
          gb[oc] += acc;
        }
      }
    }

    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t oc = 0; oc < os.c; ++oc) {
        const std::size_t g = oc / ocpg;
        const T* gp = gd + gout.offset(n, oc, 0, 0);
        for (std::size_t icg = 0; icg < icpg; ++icg) {
          const std::size_t ic = g * icpg + icg;
          const T* ip = xd + x.offset(n, ic, 0, 0);
          T* gip = gx ? gx + x.offset(n, ic, 0, 0) : nullptr;
          for (std::size_t kh = 0; kh < k; ++kh) {
            const ValidRange rh = valid_outputs(xs.h, os.h, s, opt_.pad, kh);
            for (std::size_t kw = 0; kw < k; ++kw) {
              const std::size_t widx = ((oc * icpg + icg) * k + kh) * k + kw;
              const T wv = wd[widx];
              const ValidRange rw = valid_outputs(xs.w, os.w, s, opt_.pad, kw);
              T wacc{0};
              for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                const std::size_t ioff = (oh * s + kh - opt_.pad) * xs.w + kw - opt_.pad;
                const T* grow = gp + oh * os.w;
                if (gw) {
                  const T* irow = ip + ioff;
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) wacc += grow[ow] * irow[ow * s];
                }
                if (gip) {
                  T* girow = gip + ioff;
                  if (s == 1) {
                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) girow[ow] += wv * grow[ow];
                  } else {
                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) girow[ow * s] += wv * grow[ow];
                  }
                }
              }
              if (gw) gw[widx] += wacc;
            }
          }
        }
      }
    }
  }

 private:
  Conv2dOptions opt_;
  bool has_bias_;
};

// ---------------------------------------------------------------------------
// pointwise activations

template <typename T>
class SigmoidOp final : public Op<T> {
 public:
  std::string_view name() const override { return "sigmoid"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    Tensor<T> out(in[0]->shape());
    auto x = in[0]->data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = kernels::sigmoid(x[i]);
    return out;
  }
  void backward(std::span<const Tensor<T>* const>, const Tensor<T>& out, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    auto y = out.data();
    auto g = gout.data();
    auto gx = grads[0]->data();
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
  }
};

template <typename T>
class ReluOp final : public Op<T> {
 public:
  std::string_view name() const override { return "relu"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    Tensor<T> out(in[0]->shape());
    auto x = in[0]->data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
    return out;
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    auto x = in[0]->data();
    auto g = gout.data();
    auto gx = grads[0]->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T{0}) gx[i] += g[i];
    }
  }
};

// ---------------------------------------------------------------------------
// batchnorm

template <typename T>
class BatchNormOp final : public Op<T> {
 public:
  explicit BatchNormOp(BatchNormArgs<T> args) : args_(args) {
    if (args_.running) running_ = *args_.running;
    args_.running = nullptr;
  }
  std::string_view name() const override { return "batchnorm2d"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& gamma = *in[1];
    const Tensor<T>& beta = *in[2];
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    const T count = static_cast<T>(s.n * plane);
    const T eps = static_cast<T>(args_.eps);
    mean_.assign(s.c, T{0});
    inv_std_.assign(s.c, T{0});
    std::vector<T> var(s.c, T{0});

    for (std::size_t c = 0; c < s.c; ++c) {
      if (args_.training) {
        T acc{0};
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* p = x.raw() + x.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        }
        mean_[c] = acc / count;
        T sq{0};
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* p = x.raw() + x.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            const T d = p[i] - mean_[c];
            sq += d * d;
          }
        }
        var[c] = sq / count;
      } else {
        mean_[c] = running_.mean[c];
        var[c] = running_.var[c];
      }
      inv_std_[c] = T{1} / std::sqrt(var[c] + eps);
    }
    if (args_.training && args_.batch_stats) {
      args_.batch_stats->mean = mean_;
      args_.batch_stats->var = var;
      args_.batch_stats = nullptr;  // report once; replays must not write back
    }

    Tensor<T> out(s);
    xhat_ = Tensor<T>(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* p = x.raw() + x.offset(n, c, 0, 0);
        T* h = xhat_.raw() + x.offset(n, c, 0, 0);
        T* o = out.raw() + x.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          h[i] = (p[i] - mean_[c]) * inv_std_[c];
          o[i] = gamma[c] * h[i] + beta[c];
        }
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const Tensor<T>& gamma = *in[1];
    const Shape s = gout.shape();
    const std::size_t plane = s.plane();
    const T count = static_cast<T>(s.n * plane);
    for (std::size_t c = 0; c < s.c; ++c) {
      T sum_g{0};
      T sum_gh{0};
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* g = gout.raw() + gout.offset(n, c, 0, 0);
        const T* h = xhat_.raw() + gout.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += g[i];
          sum_gh += g[i] * h[i];
        }
      }
      if (grads[1]) (*grads[1])[c] += sum_gh;
      if (grads[2]) (*grads[2])[c] += sum_g;
      if (!grads[0]) continue;
      const T k = gamma[c] * inv_std_[c];
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* g = gout.raw() + gout.offset(n, c, 0, 0);
        const T* h = xhat_.raw() + gout.offset(n, c, 0, 0);
        T* gx = grads[0]->raw() + gout.offset(n, c, 0, 0);
        if (args_.training) {
          for (std::size_t i = 0; i < plane; ++i) {
            gx[i] += k * (g[i] - sum_g / count - h[i] * sum_gh / count);
          }
        } else {
          for (std::size_t i = 0; i < plane; ++i) gx[i] += k * g[i];
        }
      }
    }
  }

 private:
  BatchNormArgs<T> args_;
  ChannelStats<T> running_;
  std::vector<T> mean_;
  std::vector<T> inv_std_;
  Tensor<T> xhat_;
};

// ---------------------------------------------------------------------------
// pooling and reductions

template <typename T>
class GlobalAvgPoolOp final : public Op<T> {
 public:
  std::string_view name() const override { return "global_avg_pool"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* p = x.raw() + x.offset(n, c, 0, 0);
        T acc{0};
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
        out.at(n, c, 0, 0) = acc / static_cast<T>(s.plane());
      }
    }
    return out;
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const Shape s = in[0]->shape();
    const T inv = T{1} / static_cast<T>(s.plane());
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const T g = gout.at(n, c, 0, 0) * inv;
        T* gx = grads[0]->raw() + in[0]->offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += g;
      }
    }
  }
};

template <typename T>
class SumOp final : public Op<T> {
 public:
  explicit SumOp(T factor) : factor_(factor) {}
  std::string_view name() const override { return "sum"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    T acc{0};
    for (T v : in[0]->data()) acc += v;
    return Tensor<T>::scalar(acc * factor_);
  }
  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const T g = gout.item() * factor_;
    for (T& v : grads[0]->data()) v += g;
  }

 private:
  T factor_;
};

template <typename T>
class ScaleOp final : public Op<T> {
 public:
  explicit ScaleOp(T factor) : factor_(factor) {}
  std::string_view name() const override { return "scale"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    Tensor<T> out(in[0]->shape());
    auto x = in[0]->data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = factor_ * x[i];
    return out;
  }
  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    auto g = gout.data();
    auto gx = grads[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor_ * g[i];
  }

 private:
  T factor_;
};

// ---------------------------------------------------------------------------
// broadcasting binary ops

enum class Broadcast { none, over_channels, over_space };

// Index of the small operand's element feeding full-tensor element (n, c, p).
inline std::size_t small_index(Broadcast mode, const Shape& full, std::size_t n, std::size_t c,
                               std::size_t p) {
  switch (mode) {
    case Broadcast::over_channels:
      return n * full.plane() + p;
    case Broadcast::over_space:
      return n * full.c + c;
    case Broadcast::none:
      break;
  }
  return (n * full.c + c) * full.plane() + p;
}

template <typename T>
class BinaryOp final : public Op<T> {
 public:
  enum class Kind { mul, add };
  BinaryOp(Kind kind, Broadcast mode, std::size_t full_index)
      : kind_(kind), mode_(mode), full_(full_index) {}
  std::string_view name() const override { return kind_ == Kind::mul ? "mul" : "add"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& f = *in[full_];
    const Tensor<T>& sm = *in[1 - full_];
    const Shape s = f.shape();
    Tensor<T> out(s);
    std::size_t i = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t p = 0; p < s.plane(); ++p, ++i) {
          const T b = sm[small_index(mode_, s, n, c, p)];
          // keep operand order a op b for bit-reproducibility regardless of which is full
          const T a0 = full_ == 0 ? f[i] : b;
          const T b0 = full_ == 0 ? b : f[i];
          out[i] = kind_ == Kind::mul ? a0 * b0 : a0 + b0;
        }
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const Tensor<T>& f = *in[full_];
    const Tensor<T>& sm = *in[1 - full_];
    Tensor<T>* gf = grads[full_];
    Tensor<T>* gs = grads[1 - full_];
    const Shape s = f.shape();
    std::size_t i = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t p = 0; p < s.plane(); ++p, ++i) {
          const std::size_t j = small_index(mode_, s, n, c, p);
          const T g = gout[i];
          if (kind_ == Kind::mul) {
            if (gf) (*gf)[i] += g * sm[j];
            if (gs) (*gs)[j] += g * f[i];
          } else {
            if (gf) (*gf)[i] += g;
            if (gs) (*gs)[j] += g;
          }
        }
      }
    }
  }

 private:
  Kind kind_;
  Broadcast mode_;
  std::size_t full_;
};

std::optional<Broadcast> classify(const Shape& full, const Shape& small) {
  if (full == small) return Broadcast::none;
  if (small.n != full.n) return std::nullopt;
  if (small.c == 1 && small.h == full.h && small.w == full.w && full.c > 1) {
    return Broadcast::over_channels;
  }
  if (small.c == full.c && small.h == 1 && small.w == 1 && full.plane() > 1) {
    return Broadcast::over_space;
  }
  return std::nullopt;
}

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, typename BinaryOp<T>::Kind kind) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (auto m = classify(sa, sb)) {
    return a.tape()->apply(std::make_unique<BinaryOp<T>>(kind, *m, 0), {a, b});
  }
  if (auto m = classify(sb, sa)) {
    return a.tape()->apply(std::make_unique<BinaryOp<T>>(kind, *m, 1), {a, b});
  }
  throw DimensionError("illegal broadcast between " + sa.str() + " and " + sb.str());
}

// ---------------------------------------------------------------------------
// channel concat / slice

template <typename T>
class ConcatOp final : public Op<T> {
 public:
  std::string_view name() const override { return "concat_channels"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    Shape s = in[0]->shape();
    s.c = 0;
    for (const auto* t : in) s.c += t->shape().c;
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      std::size_t c0 = 0;
      for (const auto* t : in) {
        const std::size_t len = t->shape().c * s.plane();
        const T* src = t->raw() + t->offset(n, 0, 0, 0);
        std::copy(src, src + len, out.raw() + out.offset(n, c0, 0, 0));
        c0 += t->shape().c;
      }
    }
    return out;
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const Shape s = gout.shape();
    for (std::size_t n = 0; n < s.n; ++n) {
      std::size_t c0 = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t cc = in[k]->shape().c;
        if (grads[k]) {
          const T* src = gout.raw() + gout.offset(n, c0, 0, 0);
          T* dst = grads[k]->raw() + grads[k]->offset(n, 0, 0, 0);
          for (std::size_t i = 0; i < cc * s.plane(); ++i) dst[i] += src[i];
        }
        c0 += cc;
      }
    }
  }
};

template <typename T>
class SliceOp final : public Op<T> {
 public:
  SliceOp(std::size_t start, std::size_t count) : start_(start), count_(count) {}
  std::string_view name() const override { return "slice_channels"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    Shape s = x.shape();
    s.c = count_;
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = x.raw() + x.offset(n, start_, 0, 0);
      std::copy(src, src + count_ * s.plane(), out.raw() + out.offset(n, 0, 0, 0));
    }
    return out;
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const Shape s = gout.shape();
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = gout.raw() + gout.offset(n, 0, 0, 0);
      T* dst = grads[0]->raw() + in[0]->offset(n, start_, 0, 0);
      for (std::size_t i = 0; i < count_ * s.plane(); ++i) dst[i] += src[i];
    }
  }

 private:
  std::size_t start_;
  std::size_t count_;
};

// ---------------------------------------------------------------------------
// shift

template <typename T>
class Shift2dOp final : public Op<T> {
 public:
  Shift2dOp(ShiftAxis axis, int sign, std::size_t step) : axis_(axis), sign_(sign), step_(step) {}
  std::string_view name() const override { return "shift2d"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Shape s = in[0]->shape();
    Tensor<T> out(s);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      kernels::shift_plane_into(in[0]->raw() + nc * s.plane(), out.raw() + nc * s.plane(), s.h,
                                s.w, axis_, sign_, step_);
    }
    return out;
  }
  // The adjoint of a zero-fill translation is the opposite translation.
  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    const Shape s = gout.shape();
    std::vector<T> tmp(s.plane());
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      kernels::shift_plane_into(gout.raw() + nc * s.plane(), tmp.data(), s.h, s.w, axis_, -sign_,
                                step_);
      T* gx = grads[0]->raw() + nc * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += tmp[i];
    }
  }

 private:
  ShiftAxis axis_;
  int sign_;
  std::size_t step_;
};

// ---------------------------------------------------------------------------
// binary cross-entropy

template <typename T>
class BceWithLogitsOp final : public Op<T> {
 public:
  BceWithLogitsOp(Tensor<T> targets, Tensor<T> weights, T normalizer)
      : targets_(std::move(targets)), weights_(std::move(weights)), normalizer_(normalizer) {}
  std::string_view name() const override { return "bce_with_logits"; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    auto z = in[0]->data();
    T acc{0};
    for (std::size_t i = 0; i < z.size(); ++i) {
      const T w = weights_[i];
      if (w == T{0}) continue;
      const T l = std::max(z[i], T{0}) - z[i] * targets_[i] + std::log1p(std::exp(-std::abs(z[i])));
      acc += w * l;
    }
    return Tensor<T>::scalar(acc / normalizer_);
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> grads) override {
    auto z = in[0]->data();
    auto gz = grads[0]->data();
    const T g = gout.item() / normalizer_;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const T w = weights_[i];
      if (w == T{0}) continue;
      gz[i] += g * w * (kernels::sigmoid(z[i]) - targets_[i]);
    }
  }

 private:
  Tensor<T> targets_;
  Tensor<T> weights_;
  T normalizer_;
};

template <typename T>
Tape<T>& tape_of(Var<T> v) {
  if (!v.valid()) throw UsageError("operation on an unbound variable");
  return *v.tape();
}

}  // namespace

namespace kernels {

template <typename T>
void shift_plane_into(const T* src, T* dst, std::size_t h, std::size_t w, ShiftAxis axis, int sign,
                      std::size_t step) {
  std::fill(dst, dst + h * w, T{0});
  if (axis == ShiftAxis::width) {
    if (step >= w) return;
    for (std::size_t r = 0; r < h; ++r) {
      const T* s = src + r * w;
      T* d = dst + r * w;
      if (sign > 0) {
        std::copy(s, s + (w - step), d + step);
      } else {
        std::copy(s + step, s + w, d);
      }
    }
  } else {
    if (step >= h) return;
    if (sign > 0) {
      std::copy(src, src + (h - step) * w, dst + step * w);
    } else {
      std::copy(src + step * w, src + h * w, dst);
    }
  }
}

template void shift_plane_into<float>(const float*, float*, std::size_t, std::size_t, ShiftAxis,
                                      int, std::size_t);
template void shift_plane_into<double>(const double*, double*, std::size_t, std::size_t,
                                       ShiftAxis, int, std::size_t);

}  // namespace kernels

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, Conv2dOptions opt) {
  Tape<T>& tape = tape_of(x);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (opt.stride == 0) throw ConfigError("conv2d stride must be positive", "stride");
  if (opt.groups == 0) throw ConfigError("conv2d groups must be positive", "groups");
  if (xs.c % opt.groups != 0 || ws.n % opt.groups != 0) {
    throw ConfigError("conv2d groups=" + std::to_string(opt.groups) +
                          " must divide C_in=" + std::to_string(xs.c) +
                          " and C_out=" + std::to_string(ws.n),
                      "groups");
  }
  if (ws.h != ws.w) throw DimensionError("conv2d kernel must be square, got " + ws.str());
  if (ws.c != xs.c / opt.groups) {
    throw DimensionError("conv2d kernel " + ws.str() + " incompatible with input " + xs.str() +
                         " and groups=" + std::to_string(opt.groups));
  }
  if (conv_out_extent(xs.h, ws.h, opt.stride, opt.pad) == 0 ||
      conv_out_extent(xs.w, ws.w, opt.stride, opt.pad) == 0) {
    throw DimensionError("conv2d output would be empty for input " + xs.str() + " kernel " +
                         ws.str());
  }
  if (b) {
    if (b->shape() != Shape{1, ws.n, 1, 1}) {
      throw DimensionError("conv2d bias must be [1," + std::to_string(ws.n) + ",1,1], got " +
                           b->shape().str());
    }
    return tape.apply(std::make_unique<Conv2dOp<T>>(opt, true), {x, w, *b});
  }
  return tape.apply(std::make_unique<Conv2dOp<T>>(opt, false), {x, w});
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return tape_of(x).apply(std::make_unique<SigmoidOp<T>>(), {x});
}

template <typename T>
Var<T> relu(Var<T> x) {
  return tape_of(x).apply(std::make_unique<ReluOp<T>>(), {x});
}

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormArgs<T> args) {
  if (!(args.eps > 0.0)) throw ConfigError("batchnorm eps must be positive", "eps");
  const std::size_t c = x.shape().c;
  const Shape ps{1, c, 1, 1};
  if (gamma.shape() != ps || beta.shape() != ps) {
    throw DimensionError("batchnorm gamma/beta must be " + ps.str());
  }
  if (!args.training) {
    if (!args.running || args.running->mean.size() != c || args.running->var.size() != c) {
      throw UsageError("batchnorm inference requires running statistics for every channel");
    }
  }
  return tape_of(x).apply(std::make_unique<BatchNormOp<T>>(args), {x, gamma, beta});
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  return tape_of(x).apply(std::make_unique<GlobalAvgPoolOp<T>>(), {x});
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  tape_of(a);
  return binary(a, b, BinaryOp<T>::Kind::mul);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  tape_of(a);
  return binary(a, b, BinaryOp<T>::Kind::add);
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return tape_of(x).apply(std::make_unique<ScaleOp<T>>(factor), {x});
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_channels needs at least one input");
  const Shape s0 = parts[0].shape();
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw DimensionError("concat_channels inputs disagree: " + s0.str() + " vs " + s.str());
    }
  }
  return tape_of(parts[0]).apply(std::make_unique<ConcatOp<T>>(), parts);
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t start, std::size_t count) {
  if (count == 0 || start + count > x.shape().c) {
    throw DimensionError("channel slice [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + x.shape().str());
  }
  return tape_of(x).apply(std::make_unique<SliceOp<T>>(start, count), {x});
}

template <typename T>
std::vector<Var<T>> split_channels(Var<T> x, std::span<const std::size_t> counts) {
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  if (total != x.shape().c) {
    throw DimensionError("split counts sum to " + std::to_string(total) + " but tensor has " +
                         std::to_string(x.shape().c) + " channels");
  }
  std::vector<Var<T>> out;
  std::size_t start = 0;
  for (std::size_t c : counts) {
    out.push_back(slice_channels(x, start, c));
    start += c;
  }
  return out;
}

template <typename T>
Var<T> shift2d(Var<T> x, ShiftAxis axis, int sign, std::size_t step) {
  const Shape s = x.shape();
  const std::size_t extent = axis == ShiftAxis::width ? s.w : s.h;
  if (step == 0) throw ConfigError("shift step must be positive", "step");
  if (step >= extent) {
    throw ConfigError("shift step " + std::to_string(step) + " must be smaller than the " +
                          (axis == ShiftAxis::width ? "width " : "height ") +
                          std::to_string(extent),
                      "step");
  }
  if (sign == 0) throw ConfigError("shift sign must be +1 or -1", "sign");
  return tape_of(x).apply(std::make_unique<Shift2dOp<T>>(axis, sign > 0 ? 1 : -1, step), {x});
}

template <typename T>
Var<T> sum(Var<T> x) {
  return tape_of(x).apply(std::make_unique<SumOp<T>>(T{1}), {x});
}

template <typename T>
Var<T> mean(Var<T> x) {
  return tape_of(x).apply(std::make_unique<SumOp<T>>(T{1} / static_cast<T>(x.value().numel())),
                          {x});
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& weights,
                       T normalizer) {
  if (targets.shape() != logits.shape() || weights.shape() != logits.shape()) {
    throw DimensionError("bce targets/weights must match logits shape " + logits.shape().str());
  }
  if (!(normalizer > T{0})) throw ConfigError("bce normalizer must be positive", "normalizer");
  return tape_of(logits).apply(
      std::make_unique<BceWithLogitsOp<T>>(targets, weights, normalizer), {logits});
}

#define MDET_INSTANTIATE_OPS(T)                                                               \
  template Var<T> conv2d<T>(Var<T>, Var<T>, std::optional<Var<T>>,  Conv2dOptions);            \
  template Var<T> sigmoid<T>(Var<T>);                                                         \
  template Var<T> relu<T>(Var<T>);                                                            \
  template Var<T> batchnorm2d<T>(Var<T>, Var<T>, Var<T>, BatchNormArgs<T>);                   \
  template Var<T> global_avg_pool<T>(Var<T>);                                                 \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                     \
  template Var<T> add<T>(Var<T>, Var<T>);                                                     \
  template Var<T> scale<T>(Var<T>, T);                                                        \
  template Var<T> concat_channels<T>(std::span<const Var<T>>);                                \
  template Var<T> slice_channels<T>(Var<T>, std::size_t, std::size_t);                        \
  template std::vector<Var<T>> split_channels<T>(Var<T>, std::span<const std::size_t>);       \
  template Var<T> shift2d<T>(Var<T>, ShiftAxis, int, std::size_t);                            \
  template Var<T> sum<T>(Var<T>);                                                             \
  template Var<T> mean<T>(Var<T>);                                                            \
  template Var<T> bce_with_logits<T>(Var<T>, const Tensor<T>&, const Tensor<T>&, T);

MDET_INSTANTIATE_OPS(float)
MDET_INSTANTIATE_OPS(double)

#undef MDET_INSTANTIATE_OPS

}  // namespace mdet
