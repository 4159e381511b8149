#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "provg/harness/pipeline.hpp"
#include "provg/synthdata/synthdata.hpp"

namespace provg::test {

/// 32x32 scenes sized for the miniature model.
inline synth::SceneSpec small_scene_spec(std::uint64_t seed) {
  synth::SceneSpec s;
  s.seed = seed;
  s.image_size = 32;
  s.max_objects = 4;
  s.small_radius = {2, 3};
  s.large_radius = {4, 6};
  return s;
}

inline std::vector<harness::Example> small_examples(std::uint64_t seed, std::size_t n) {
  const auto spec = small_scene_spec(seed);
  return harness::prepare(synth::Dataset{spec, synth::generate(spec, n)});
}

inline harness::RunConfig tiny_config(int steps) {
  harness::RunConfig c;
  c.model = "tiny";
  c.steps = steps;
  c.batch_size = 2;
  c.lr = 1e-3;
  return c;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("provg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace provg::test
