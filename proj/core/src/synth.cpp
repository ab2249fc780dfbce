#include "mdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdet/error.hpp"
#include "mdet/random.hpp"

namespace mdet {
namespace {

constexpr int kPlacementAttempts = 100;

std::size_t draw_side(const SynthSceneSpec& spec, Rng& rng) {
  const double span = static_cast<double>(spec.max_side - spec.min_side + 1);
  const auto extra = static_cast<std::size_t>(std::floor(span * std::pow(rng.uniform(), spec.size_bias)));
  return std::min(spec.min_side + extra, spec.max_side);
}

std::size_t draw_class(const SynthSceneSpec& spec, Rng& rng) {
  double total = 0.0;
  for (double w : spec.class_weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t c = 0; c < spec.class_weights.size(); ++c) {
    if (u < spec.class_weights[c]) return c;
    u -= spec.class_weights[c];
  }
  return spec.class_weights.size() - 1;
}

void fill_rect(Tensor32& img, std::size_t x1, std::size_t y1, std::size_t x2, std::size_t y2,
               const std::array<float, 3>& rgb) {
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = y1; y < y2; ++y) {
      for (std::size_t x = x1; x < x2; ++x) img.at(0, c, y, x) = rgb[c];
    }
  }
}

void render_background(const SynthSceneSpec& spec, Rng& rng, Tensor32& img) {
  const std::size_t s = spec.image_size;
  const double gray = rng.uniform(0.3, 0.6);
  std::array<double, 3> base{};
  for (double& b : base) b = gray + spec.clutter * rng.uniform(-0.05, 0.05);
  // Two low-frequency waves plus pixel noise, both scaled by clutter.
  std::array<double, 6> wave{};
  for (std::size_t i = 0; i < 2; ++i) {
    wave[3 * i] = rng.uniform(0.02, 0.15);                     // frequency in cycles/px
    wave[3 * i + 1] = rng.uniform(0.0, std::numbers::pi);      // orientation
    wave[3 * i + 2] = rng.uniform(0.0, 2.0 * std::numbers::pi);  // phase
  }
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      double tex = 0.0;
      for (std::size_t i = 0; i < 2; ++i) {
        const double f = 2.0 * std::numbers::pi * wave[3 * i];
        const double t = std::cos(wave[3 * i + 1]) * static_cast<double>(x) +
                         std::sin(wave[3 * i + 1]) * static_cast<double>(y);
        tex += 0.08 * std::sin(f * t + wave[3 * i + 2]);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = spec.clutter > 0.0 ? 0.04 * rng.normal() : 0.0;
        const double v = base[c] + spec.clutter * (tex + noise);
        img.at(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  // Achromatic distractor patches.
  const auto patches = static_cast<std::size_t>(std::floor(spec.clutter * 6.0 + rng.uniform()));
  for (std::size_t i = 0; i < patches; ++i) {
    const auto w = static_cast<std::size_t>(rng.uniform_int(2, 10));
    const auto h = static_cast<std::size_t>(rng.uniform_int(2, 10));
    const auto x1 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(s - w)));
    const auto y1 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(s - h)));
    const auto level = static_cast<float>(rng.uniform(0.1, 0.9));
    fill_rect(img, x1, y1, x1 + w, y1 + h, {level, level, level});
  }
}

bool overlaps(const BoxXYXY& a, const BoxXYXY& b) {
  return a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2;
}

}  // namespace

void SynthSceneSpec::validate() const {
  if (image_size < 8) throw ConfigError("image size must be at least 8", "scene.image_size");
  if (num_classes == 0) throw ConfigError("class count must be positive", "scene.num_classes");
  if (min_objects > max_objects) {
    throw ConfigError("object count range is empty", "scene.min_objects");
  }
  if (min_side == 0 || min_side > max_side || max_side > image_size) {
    throw ConfigError("object side range must satisfy 1 <= min <= max <= image size",
                      "scene.min_side");
  }
  if (!(size_bias > 0.0)) throw ConfigError("size bias must be positive", "scene.size_bias");
  if (!(min_blur >= 0.0) || min_blur > max_blur) {
    throw ConfigError("blur range must satisfy 0 <= min <= max", "scene.min_blur");
  }
  if (!(clutter >= 0.0 && clutter <= 1.0)) {
    throw ConfigError("clutter must lie in [0, 1]", "scene.clutter");
  }
  if (class_weights.size() != num_classes) {
    throw ConfigError("need one class weight per class", "scene.class_weights");
  }
  double total = 0.0;
  for (double w : class_weights) {
    if (!(w >= 0.0)) throw ConfigError("class weights must be non-negative", "scene.class_weights");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("class weights sum to zero", "scene.class_weights");
}

std::array<float, 3> class_palette(std::size_t cls, std::size_t num_classes) {
  // HSV with saturation 0.85 and value 0.9.
  const double h = 6.0 * static_cast<double>(cls) / static_cast<double>(num_classes);
  const double v = 0.9;
  const double sat = 0.85;
  const double chroma = v * sat;
  const double xx = chroma * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = v - chroma;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h) % 6) {
    case 0: r = chroma; g = xx; break;
    case 1: r = xx; g = chroma; break;
    case 2: g = chroma; b = xx; break;
    case 3: g = xx; b = chroma; break;
    case 4: r = xx; b = chroma; break;
    default: r = chroma; b = xx; break;
  }
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

Scene generate_scene(const SynthSceneSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, index));
  const std::size_t s = spec.image_size;
  Scene scene{Tensor32(Shape{1, 3, s, s}), {}};
  render_background(spec, rng, scene.image);

  const auto target = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(spec.min_objects), static_cast<std::int64_t>(spec.max_objects)));
  while (scene.objects.size() < target) {
    const std::size_t cls = draw_class(spec, rng);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const std::size_t w = draw_side(spec, rng);
      const std::size_t h = draw_side(spec, rng);
      const auto x1 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(s - w)));
      const auto y1 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(s - h)));
      const BoxXYXY box{static_cast<double>(x1), static_cast<double>(y1),
                        static_cast<double>(x1 + w), static_cast<double>(y1 + h)};
      const bool clear = std::none_of(scene.objects.begin(), scene.objects.end(),
                                      [&](const GroundTruth& g) { return overlaps(g.box, box); });
      if (!clear) continue;
      fill_rect(scene.image, x1, y1, x1 + w, y1 + h, class_palette(cls, spec.num_classes));
      scene.objects.push_back(GroundTruth{box, cls});
      placed = true;
    }
    if (!placed) break;
  }
  if (scene.objects.size() < spec.min_objects) {
    throw ConfigError("could not place " + std::to_string(spec.min_objects) +
                          " non-overlapping objects; reduce object count or size",
                      "scene.max_side");
  }
  gaussian_blur(scene.image, rng.uniform(spec.min_blur, spec.max_blur));
  return scene;
}

std::vector<Scene> generate_scenes(const SynthSceneSpec& spec, std::size_t first,
                                   std::size_t count) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(spec, first + i));
  return out;
}

void gaussian_blur(Tensor32& image, double sigma) {
  if (!(sigma > 0.0)) return;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  const Shape sh = image.shape();
  const auto h = static_cast<std::ptrdiff_t>(sh.h);
  const auto w = static_cast<std::ptrdiff_t>(sh.w);
  std::vector<double> tmp(sh.h * sh.w);
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return std::clamp<std::ptrdiff_t>(v, 0, hi - 1); };
  for (std::size_t n = 0; n < sh.n; ++n) {
    for (std::size_t c = 0; c < sh.c; ++c) {
      float* plane = image.raw() + image.offset(n, c, 0, 0);
      for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
            acc += kernel[static_cast<std::size_t>(k + radius)] * plane[y * w + clampi(x + k, w)];
          }
          tmp[static_cast<std::size_t>(y * w + x)] = acc;
        }
      }
      for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
            acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(clampi(y + k, h) * w + x)];
          }
          plane[y * w + x] = static_cast<float>(acc);
        }
      }
    }
  }
}

}  // namespace mdet
