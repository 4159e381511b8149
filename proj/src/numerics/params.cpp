#include "provg/numerics/params.hpp"

#include <cmath>
#include <random>

namespace provg::nx {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
std::size_t ParamStore<T>::add(const ParamSpec& spec) {
  if (by_name_.count(spec.name)) throw Error("duplicate parameter name: " + spec.name);
  if (spec.rows == 0 || spec.cols == 0) throw ShapeError("parameter " + spec.name + " has a zero extent");
  by_name_[spec.name] = specs_.size();
  specs_.push_back(spec);
  values_.emplace_back(spec.rows, spec.cols);
  grads_.emplace_back(spec.rows * spec.cols, T(0));
  return specs_.size() - 1;
}

template <typename T>
void ParamStore<T>::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    auto& v = values_[i].data;
    std::mt19937_64 rng(seed ^ (fnv1a(s.name) * 0x9E3779B97F4A7C15ull));
    switch (s.init) {
      case Init::kZeros:
        std::fill(v.begin(), v.end(), T(0));
        break;
      case Init::kOnes:
        std::fill(v.begin(), v.end(), T(1));
        break;
      case Init::kNormal: {
        std::normal_distribution<double> d(0.0, s.scale);
        for (auto& x : v) x = static_cast<T>(d(rng));
        break;
      }
      case Init::kXavier: {
        const double limit = s.scale * std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
        std::uniform_real_distribution<double> d(-limit, limit);
        for (auto& x : v) x = static_cast<T>(d(rng));
        break;
      }
    }
  }
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
std::size_t ParamStore<T>::index(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& s : specs_) n += s.rows * s.cols;
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace provg::nx
