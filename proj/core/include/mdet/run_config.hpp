#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mdet/train.hpp"

namespace mdet {

// A complete run description as read from a JSON document.
//
// Top-level keys: seed, output_dir, checkpoint_every, scene, model, toggles, shift,
// dbcasa, train, slide, focaler, eval. Every key is optional and defaults to the value
// of the corresponding struct member; unknown keys are rejected.
struct RunConfig {
  ExperimentConfig experiment;
  std::string output_dir = "run";
  // Checkpoint every this many epochs (and always after the last); 0 = last only.
  std::size_t checkpoint_every = 10;

  void validate() const;
};

// Throws ConfigError naming the offending key (dotted path) on unknown keys, wrong
// types or invalid values; FormatError on malformed JSON.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Every key with its value, sorted, two-space indent, trailing newline.
std::string canonical_json(const RunConfig& cfg);

// FNV-1a 64 of the canonical form with output_dir and checkpoint_every removed,
// as 16 lowercase hex digits. Equal hashes mean identical training and evaluation.
std::string config_hash(const RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace mdet
