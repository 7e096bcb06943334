#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "notebert/common.hpp"

namespace notebert {

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel()), T(0));
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
};

template <typename T>
struct ParamSet {
  std::vector<Tensor<T>> arrays;

  int find(const std::string& name) const {
    for (size_t i = 0; i < arrays.size(); ++i)
      if (arrays[i].name == name) return static_cast<int>(i);
    return -1;
  }
  Tensor<T>& at(const std::string& name) {
    int i = find(name);
    if (i < 0) throw DataError("parameter array not found: " + name);
    return arrays[static_cast<size_t>(i)];
  }
  const Tensor<T>& at(const std::string& name) const {
    int i = find(name);
    if (i < 0) throw DataError("parameter array not found: " + name);
    return arrays[static_cast<size_t>(i)];
  }
  bool has(const std::string& name) const { return find(name) >= 0; }

  int64_t total_numel() const {
    int64_t n = 0;
    for (const auto& a : arrays) n += a.numel();
    return n;
  }

  /// Same names/shapes, all zeros.
  ParamSet<T> zeros_like() const {
    ParamSet<T> out;
    out.arrays.reserve(arrays.size());
    for (const auto& a : arrays) out.arrays.emplace_back(a.name, a.shape);
    return out;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    out.arrays.reserve(arrays.size());
    for (const auto& a : arrays) {
      Tensor<U> t(a.name, a.shape);
      for (size_t i = 0; i < a.v.size(); ++i) t.v[i] = static_cast<U>(a.v[i]);
      out.arrays.push_back(std::move(t));
    }
    return out;
  }
};

}  // namespace notebert
