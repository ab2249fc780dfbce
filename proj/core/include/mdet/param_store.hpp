#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mdet/error.hpp"
#include "mdet/random.hpp"
#include "mdet/tape.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

// Name -> tape variable for one forward evaluation.
template <typename T>
class Bindings {
 public:
  void insert(std::string name, Var<T> v) { vars_.insert_or_assign(std::move(name), v); }
  Var<T> operator[](std::string_view name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw UsageError("no bound parameter named '" + std::string(name) + "'");
    return it->second;
  }
  bool contains(std::string_view name) const { return vars_.find(name) != vars_.end(); }
  const std::map<std::string, Var<T>, std::less<>>& all() const { return vars_; }

 private:
  std::map<std::string, Var<T>, std::less<>> vars_;
};

// Named tensors in insertion order. Learnable entries count toward the parameter
// total; frozen entries (e.g. normalization running statistics) do not.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool learnable = true;
  };

  void add(std::string name, Tensor<T> value, bool learnable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'", name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), learnable});
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const Tensor<T>& get(std::string_view name) const { return entries_[locate(name)].value; }
  Tensor<T>& get_mut(std::string_view name) { return entries_[locate(name)].value; }
  bool learnable(std::string_view name) const { return entries_[locate(name)].learnable; }

  void set(std::string_view name, Tensor<T> value) {
    Entry& e = entries_[locate(name)];
    if (e.value.shape() != value.shape()) {
      throw DimensionError("parameter '" + e.name + "' has shape " + e.value.shape().str() +
                           ", cannot assign " + value.shape().str());
    }
    e.value = std::move(value);
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  // Total learnable element count.
  std::size_t learnable_count() const { return count_with_prefix(""); }

  std::size_t count_with_prefix(std::string_view prefix) const {
    std::size_t total = 0;
    for (const auto& e : entries_) {
      if (e.learnable && std::string_view(e.name).starts_with(prefix)) total += e.value.numel();
    }
    return total;
  }

  // Registers every entry on `tape`; learnable entries require gradients.
  Bindings<T> bind(Tape<T>& tape) const {
    Bindings<T> b;
    for (const auto& e : entries_) b.insert(e.name, tape.leaf(e.value, e.learnable, e.name));
    return b;
  }

  void merge(const ParamStore& other) {
    for (const auto& e : other.entries_) add(e.name, e.value, e.learnable);
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.learnable);
    return out;
  }

 private:
  std::size_t locate(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw UsageError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform in +-sqrt(1/fan_in).
template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace mdet
