#include "mdet/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mdet/error.hpp"

namespace mdet {
namespace {

constexpr std::array<char, 4> kMagic{'T', 'N', 'S', 'R'};
constexpr std::size_t kHeaderBytes = 4 + 3 + 4 * 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

template <typename T, typename Bits>
std::string encode(const Tensor<T>& t, DType dtype) {
  std::string out(kMagic.begin(), kMagic.end());
  out.push_back(static_cast<char>(kTensorFileVersion));
  out.push_back(static_cast<char>(dtype));
  out.push_back(4);
  const Shape s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) put_u64(out, d);
  out.reserve(out.size() + t.numel() * sizeof(T));
  for (T v : t.data()) {
    const auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(Bits); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

template <typename T, typename Bits>
Tensor<T> decode_payload(const Shape& shape, const unsigned char* p) {
  Tensor<T> t(shape);
  for (std::size_t k = 0; k < t.numel(); ++k) {
    Bits bits = 0;
    for (std::size_t i = sizeof(Bits); i-- > 0;) bits = static_cast<Bits>((bits << 8) | p[k * sizeof(Bits) + i]);
    t[k] = std::bit_cast<T>(bits);
  }
  return t;
}

}  // namespace

std::string encode_tensor(const Tensor32& t) { return encode<float, std::uint32_t>(t, DType::f32); }
std::string encode_tensor(const Tensor64& t) { return encode<double, std::uint64_t>(t, DType::f64); }

AnyTensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("truncated header: expected " + std::to_string(kHeaderBytes) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, kMagic.data(), 4) != 0) {
    throw FormatError("bad magic '" + std::string(bytes.substr(0, 4)) + "' (expected 'TNSR')");
  }
  if (p[4] != kTensorFileVersion) throw FormatError("unsupported version " + std::to_string(p[4]));
  if (p[5] > 1) throw FormatError("unknown dtype " + std::to_string(p[5]));
  if (p[6] != 4) throw FormatError("unsupported ndim " + std::to_string(p[6]) + " (expected 4)");
  const Shape shape{get_u64(p + 7), get_u64(p + 15), get_u64(p + 23), get_u64(p + 31)};
  const auto dtype = static_cast<DType>(p[5]);
  const std::size_t elem = dtype == DType::f32 ? 4 : 8;
  std::size_t expected = elem;
  for (std::size_t d : {shape.n, shape.c, shape.h, shape.w}) {
    if (d == 0) throw FormatError("dims " + shape.str() + " contain a zero extent");
    if (__builtin_mul_overflow(expected, d, &expected)) {
      throw FormatError("payload size mismatch: declared dims " + shape.str() + " overflow, got " +
                        std::to_string(bytes.size() - kHeaderBytes) + " bytes");
    }
  }
  const std::size_t actual = bytes.size() - kHeaderBytes;
  if (actual != expected) {
    throw FormatError("payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(actual));
  }
  if (dtype == DType::f32) return decode_payload<float, std::uint32_t>(shape, p + kHeaderBytes);
  return decode_payload<double, std::uint64_t>(shape, p + kHeaderBytes);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void save_tensor(const Tensor32& t, const std::filesystem::path& path) { write_file(path, encode_tensor(t)); }
void save_tensor(const Tensor64& t, const std::filesystem::path& path) { write_file(path, encode_tensor(t)); }

AnyTensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
Tensor<T> load_tensor_as(const std::filesystem::path& path) {
  AnyTensor any = load_tensor(path);
  if (auto* t = std::get_if<Tensor<T>>(&any)) return std::move(*t);
  throw FormatError(path.string() + ": dtype is " + (std::holds_alternative<Tensor32>(any) ? "f32" : "f64") +
                    ", expected " + (sizeof(T) == 4 ? "f32" : "f64"));
}

template Tensor32 load_tensor_as<float>(const std::filesystem::path&);
template Tensor64 load_tensor_as<double>(const std::filesystem::path&);

}  // namespace mdet
