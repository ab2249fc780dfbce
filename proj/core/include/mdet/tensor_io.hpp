#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include "mdet/tensor.hpp"

namespace mdet {

// Binary tensor file, all integers little-endian:
//   "TNSR" | version u8 = 1 | dtype u8 (0 = f32, 1 = f64) | ndim u8 = 4 | 4 x u64 dims | payload
// The payload is the row-major element array in IEEE little-endian form.
inline constexpr std::uint8_t kTensorFileVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using AnyTensor = std::variant<Tensor32, Tensor64>;

std::string encode_tensor(const Tensor32& t);
std::string encode_tensor(const Tensor64& t);

// Throws FormatError naming the bad field (magic, version, dtype, ndim) or giving
// expected versus actual byte counts for a truncated or oversized payload.
AnyTensor decode_tensor(std::string_view bytes);

void save_tensor(const Tensor32& t, const std::filesystem::path& path);
void save_tensor(const Tensor64& t, const std::filesystem::path& path);
AnyTensor load_tensor(const std::filesystem::path& path);

// Loads and requires the stored dtype to match T.
template <typename T>
Tensor<T> load_tensor_as(const std::filesystem::path& path);

// Whole-file helpers shared by the writers; throw IoError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mdet
