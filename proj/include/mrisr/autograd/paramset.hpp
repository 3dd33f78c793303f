#pragma once

#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrisr/autograd/tensor.hpp"

namespace mrisr::ag {

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;  // false for running statistics and similar buffers
};

/// Ordered, named collection of parameter tensors plus free-form metadata
/// (network configuration). Copying a ParamSet aliases its tensors; use
/// clone() for an independent copy.
template <typename T>
class ParamSet {
 public:
  std::map<std::string, std::string> meta;

  void add(std::string name, Tensor<T> tensor, bool trainable = true) {
    if (name.empty() || name.find_first_of(" \t\n=") != std::string::npos)
      throw ValidationError("invalid parameter name '" + name + "'");
    if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor), trainable});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& operator[](const std::string& name) const { return entries_[lookup(name)].tensor; }
  Tensor<T>& at(const std::string& name) { return entries_[lookup(name)].tensor; }

  std::size_t size() const { return entries_.size(); }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::vector<ParamEntry<T>>& entries() { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::int64_t parameter_count(bool trainable_only = true) const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable || !trainable_only) n += e.tensor.numel();
    return n;
  }

  std::vector<Tensor<T>> trainable_tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.tensor);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  ParamSet clone() const {
    ParamSet out;
    out.meta = meta;
    for (const auto& e : entries_) out.add(e.name, Tensor<T>(e.tensor.shape(), e.tensor.values()), e.trainable);
    return out;
  }

  /// Entries whose names start with `prefix`, prefix stripped when `strip`.
  ParamSet subset(const std::string& prefix, bool strip = false) const {
    ParamSet out;
    out.meta = meta;
    for (const auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0) out.add(strip ? e.name.substr(prefix.size()) : e.name, e.tensor, e.trainable);
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename To, typename From>
ParamSet<To> cast(const ParamSet<From>& in) {
  ParamSet<To> out;
  out.meta = in.meta;
  for (const auto& e : in.entries())
    out.add(e.name, Tensor<To>(e.tensor.shape(), e.tensor.values().template cast<To>()), e.trainable);
  return out;
}

/// Bitwise comparison of names, order, flags, shapes and values (metadata ignored).
template <typename T>
bool bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.trainable != y.trainable || x.tensor.shape() != y.tensor.shape()) return false;
    if (std::memcmp(x.tensor.data(), y.tensor.data(), sizeof(T) * static_cast<std::size_t>(x.tensor.numel())) != 0)
      return false;
  }
  return true;
}

// Container file layout (all text lines end in '\n'):
//   mrisr-paramset 1
//   meta <key>=<value>                               (zero or more)
//   tensor <name> <trainable 0|1> <d0,d1,...> <offset> <count>
//   end
//   <payload: little-endian float32 values, entries back to back>
// Offsets and counts are in elements.

void save_paramset(const ParamSet<float>& params, const std::filesystem::path& path);
ParamSet<float> load_paramset(const std::filesystem::path& path);

}  // namespace mrisr::ag
