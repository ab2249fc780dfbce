#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "mdet/ops.hpp"
#include "mdet/param_store.hpp"
#include "mdet/random.hpp"
#include "mdet/tensor.hpp"

namespace mdet::test {

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> from_values(Shape s, std::initializer_list<T> values) {
  return Tensor<T>(s, std::vector<T>(values));
}

// sum(r * y) for a fixed random r: a scalar whose gradient exercises every output element.
template <typename T>
Var<T> random_projection(Var<T> y, std::uint64_t seed) {
  Rng rng(seed);
  Var<T> r = y.tape()->constant(random_tensor<T>(y.shape(), rng));
  return sum(mul(y, r));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mdet_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace mdet::test
