#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "provg/numerics/tensor.hpp"

namespace provg::nx {

enum class Init { kZeros, kOnes, kNormal, kXavier };

struct ParamSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Init init = Init::kXavier;
  double scale = 1.0;  // std for kNormal, gain for kXavier
  bool decay = true;   // subject to decoupled weight decay
};

/// Named, ordered parameter storage. Initial values depend only on
/// (seed, name, shape) so models with overlapping parameter names share
/// their initialization.
template <typename T>
class ParamStore {
 public:
  std::size_t add(const ParamSpec& spec);

  void initialize(std::uint64_t seed);
  void zero_grad();

  std::size_t size() const { return specs_.size(); }
  const ParamSpec& spec(std::size_t i) const { return specs_[i]; }
  Tensor<T>& value(std::size_t i) { return values_[i]; }
  const Tensor<T>& value(std::size_t i) const { return values_[i]; }
  std::vector<T>& grad(std::size_t i) { return grads_[i]; }
  const std::vector<T>& grad(std::size_t i) const { return grads_[i]; }

  /// Index of a named parameter; throws if absent.
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
  std::size_t total_size() const;

 private:
  std::vector<ParamSpec> specs_;
  std::vector<Tensor<T>> values_;
  std::vector<std::vector<T>> grads_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

std::uint64_t fnv1a(const std::string& s);

}  // namespace provg::nx
