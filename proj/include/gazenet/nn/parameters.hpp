// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gazenet::nn {

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;

  std::size_t size() const { return values.size(); }
};

inline std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001B3ull;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ull;
};

/// Ordered collection of named tensors. Indices are stable once added.
template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape) {
    if (lookup_.contains(name)) throw std::invalid_argument("duplicate tensor name: " + name);
    const std::size_t index = tensors_.size();
    lookup_.emplace(name, index);
    Tensor<T> t{std::move(name), std::move(shape), {}};
    t.values.assign(shape_size(t.shape), T(0));
    tensors_.push_back(std::move(t));
    return index;
  }

  std::size_t size() const { return tensors_.size(); }
  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  T* data(std::size_t i) { return tensors_[i].values.data(); }
  const T* data(std::size_t i) const { return tensors_[i].values.data(); }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t index(const std::string& name) const {
    auto i = find(name);
    if (!i) throw std::out_of_range("no tensor named " + name);
    return *i;
  }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  void set_zero() {
    for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), T(0));
  }

  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    out.set_zero();
    return out;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& t : tensors_) {
      const std::size_t i = out.add(t.name, t.shape);
      for (std::size_t k = 0; k < t.values.size(); ++k) {
        out[i].values[k] = static_cast<U>(t.values[k]);
      }
    }
    return out;
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.values.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors_) {
      for (T v : t.values) {
        if (!std::isfinite(static_cast<double>(v))) return false;
      }
    }
    return true;
  }

  /// Same names and shapes in the same order.
  bool same_layout(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].name != other[i].name || tensors_[i].shape != other[i].shape) return false;
    }
    return true;
  }

  /// Hash over names, shapes and raw values of tensors whose name starts with
  /// any of `prefixes` (all tensors when empty).
  std::uint64_t content_hash(const std::vector<std::string>& prefixes = {}) const {
    Fnv1a h;
    for (const auto& t : tensors_) {
      bool match = prefixes.empty();
      for (const auto& p : prefixes) match = match || t.name.rfind(p, 0) == 0;
      if (!match) continue;
      h.update(t.name);
      h.update(t.shape.data(), t.shape.size() * sizeof(int));
      h.update(t.values.data(), t.values.size() * sizeof(T));
    }
    return h.value();
  }

 private:
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> lookup_;
};

}  // namespace gazenet::nn
