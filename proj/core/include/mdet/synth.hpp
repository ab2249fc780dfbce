#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mdet/box.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

// Synthetic degraded scenes: palette-coloured rectangles on a cluttered background,
// Gaussian-blurred per image.
struct SynthSceneSpec {
  std::size_t image_size = 64;
  std::size_t num_classes = 3;
  std::size_t min_objects = 1;
  std::size_t max_objects = 6;
  std::size_t min_side = 4;
  std::size_t max_side = 16;
  // Sides are min + floor((max - min + 1) * u^size_bias); > 1 favours small objects.
  double size_bias = 2.0;
  double min_blur = 0.0;
  double max_blur = 1.5;
  // 0 gives a flat background; 1 gives strong texture and distractor patches.
  double clutter = 0.5;
  std::vector<double> class_weights{0.5, 0.3, 0.2};
  std::uint64_t seed = 0;
  std::size_t train_count = 200;
  std::size_t val_count = 50;

  void validate() const;
};

struct GroundTruth {
  BoxXYXY box;
  std::size_t cls = 0;
};

struct Scene {
  Tensor32 image;  // [1, 3, S, S], values in [0, 1] before blur and noise
  std::vector<GroundTruth> objects;
};

// RGB fill of class `cls` among `num_classes`, evenly spaced hues.
std::array<float, 3> class_palette(std::size_t cls, std::size_t num_classes);

// Deterministic in (spec.seed, index).
Scene generate_scene(const SynthSceneSpec& spec, std::size_t index);

std::vector<Scene> generate_scenes(const SynthSceneSpec& spec, std::size_t first,
                                   std::size_t count);

// Validation scenes follow the training indices.
inline std::vector<Scene> training_scenes(const SynthSceneSpec& spec) {
  return generate_scenes(spec, 0, spec.train_count);
}
inline std::vector<Scene> validation_scenes(const SynthSceneSpec& spec) {
  return generate_scenes(spec, spec.train_count, spec.val_count);
}

// Separable Gaussian blur with clamped borders, radius ceil(3 sigma). sigma <= 0 is a no-op.
void gaussian_blur(Tensor32& image, double sigma);

}  // namespace mdet
