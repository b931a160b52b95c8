#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rtsdoa/rng.hpp"
#include "rtsdoa/tensor.hpp"

namespace rtsdoa::core {

// Named leaf tensors. Insertion order is stable so parameter counting,
// checkpoints and the optimizer all see the same sequence.
template <class S>
class ParameterStore {
 public:
  Tensor<S>& create(const std::string& name, Shape shape) {
    if (index_.count(name))
      throw std::invalid_argument("parameter already exists: " + name);
    index_[name] = values_.size();
    names_.push_back(name);
    values_.emplace_back(std::move(shape));
    return values_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
    return values_[it->second];
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
    return values_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return values_.size(); }

  long long total_params() const {
    long long n = 0;
    for (const auto& t : values_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<Tensor<S>> values_;
};

// Uniform in [-k, k] with k = 1/sqrt(fan_in); biases stay zero.
template <class S>
void init_uniform_fanin(Tensor<S>& t, long long fan_in, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(-k, k));
}

// Flat binary checkpoint: "RTSD", version u32, count u64, then per tensor
// (name_len u32, name, rank u32, dims u64 each, dtype tag u8, raw values).
// Little-endian throughout.
template <class S>
void save_checkpoint(const std::string& path, const ParameterStore<S>& store);

template <class S>
void load_checkpoint(const std::string& path, ParameterStore<S>& store);

}  // namespace rtsdoa::core
