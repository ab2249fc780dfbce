#pragma once

#include <filesystem>
#include <vector>

#include "mdet/synth.hpp"

namespace mdet {

// Directory layout:
//   labels.json              format, version, image size, class count, scene list with
//                            split, generator index, image file and labelled boxes
//   scenes/<split>_<i>.tnsr  one [1, 3, S, S] f32 TensorFile per scene
struct Dataset {
  std::size_t image_size = 0;
  std::size_t num_classes = 0;
  std::vector<Scene> train;
  std::vector<Scene> val;
};

void write_dataset(const std::filesystem::path& dir, const SynthSceneSpec& spec);

// Throws FormatError on a malformed manifest or image whose shape disagrees with it.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace mdet
