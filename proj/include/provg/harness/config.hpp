#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "provg/harness/model.hpp"
#include "provg/losses/losses.hpp"
#include "provg/nn/dims.hpp"

namespace provg::harness {

struct RunConfig {
  std::string data_dir;
  std::string test_dir;  // optional held-out set used by ablate
  std::string out_dir = "runs/default";

  std::string variant = "progressive";
  std::string ordering = "S-L-V";
  bool pcm = true;
  bool cfm = true;
  bool lcm = true;
  bool fa = true;

  loss::Lambdas lambdas;

  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::array<double, 2> decay_at{0.7, 0.85};
  double decay_factor = 0.1;
  double grad_clip = 0;  // global L2 norm; 0 disables

  int steps = 1000;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int log_every = 1;
  std::string model = "default";  // "default" or "tiny"

  /// Throws ConfigError on any out-of-range field.
  void validate() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static RunConfig from_json(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json() const;

  ModelOptions model_options() const;
  nn::ModelDims dims() const;
  /// Learning rate in effect at zero-based `step`.
  double lr_at(int step) const;
};

/// Applies the keys of a JSON object on top of `base` (same key rules as from_json).
RunConfig apply_overrides(const RunConfig& base, const std::string& json_object);

}  // namespace provg::harness
