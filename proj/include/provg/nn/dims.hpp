#pragma once

#include <array>
#include <cstddef>

namespace provg::nn {

/// Sizes shared by every module of the grounding network.
struct ModelDims {
  std::size_t image_size = 64;
  std::size_t patch = 4;
  std::size_t text_dim = 64;
  std::size_t text_heads = 4;
  std::size_t text_layers = 2;
  std::size_t text_ffn = 128;
  std::size_t max_tokens = 16;
  std::size_t vocab = 0;  // 0 = the lingparse vocabulary size
  std::array<std::size_t, 4> channels{32, 64, 128, 256};
  std::size_t fused = 64;

  /// Side length of backbone stage `i` (0 = finest).
  std::size_t stage_side(std::size_t i) const { return (image_size / patch) >> i; }
  std::size_t stage_positions(std::size_t i) const { return stage_side(i) * stage_side(i); }
  std::size_t vocab_size() const;

  /// Throws ConfigError when sizes cannot form a 4-stage dyadic pyramid.
  void validate() const;

  /// Miniature sizes for gradient checks.
  static ModelDims tiny();
};

}  // namespace provg::nn
