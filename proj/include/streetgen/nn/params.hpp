#pragma once

#include <cstdint>
#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

#include "streetgen/grid.hpp"

namespace streetgen::nn {

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty for non-trainable state
  bool trainable = true;

  std::size_t size() const { return value.size(); }
};

/// Named parameter tensors in insertion order. Spectral-norm power-iteration
/// vectors live here too, as non-trainable entries.
template <class T>
class ParamSet {
 public:
  Param<T>& add(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    Param<T> p{name, std::move(shape), std::vector<T>(n, T{}), {}, trainable};
    if (trainable) p.grad.assign(n, T{});
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Param<T>& at(const std::string& name) { return params_[lookup(name)]; }
  const Param<T>& at(const std::string& name) const { return params_[lookup(name)]; }

  std::deque<Param<T>>& all() { return params_; }
  const std::deque<Param<T>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T{});
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.size();
    return n;
  }

  /// FNV-1a over the bytes of every trainable value.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params_) {
      if (!p.trainable) continue;
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (std::size_t i = 0; i < p.value.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.shape, p.trainable);
      for (std::size_t i = 0; i < p.size(); ++i) q.value[i] = static_cast<U>(p.value[i]);
    }
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  std::deque<Param<T>> params_;  // stable references
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace streetgen::nn
