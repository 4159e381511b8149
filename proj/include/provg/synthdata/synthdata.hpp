#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "provg/geometry/geometry.hpp"

namespace provg::synth {

enum class Category { kCircle, kSquare, kTriangle };
enum class Color { kRed, kGreen, kBlue, kYellow };
enum class SizeClass { kSmall, kLarge };
enum class Template { kAttribute = 1, kAbsolute = 2, kRelative = 3 };
enum class Region { kLeft, kRight, kTop, kBottom, kCenter };

std::string name(Category c);
std::string name(Color c);
std::string name(Region r);

struct SceneSpec {
  std::uint64_t seed = 0;
  int min_objects = 2;
  int max_objects = 6;
  int image_size = 64;
  std::array<double, 3> template_mix{1.0 / 3, 1.0 / 3, 1.0 / 3};  // T1, T2, T3
  double noise = 0.04;
  std::array<double, 2> small_radius{4, 6};
  std::array<double, 2> large_radius{9, 12};

  void validate() const;
  /// Unknown keys are rejected.
  static SceneSpec from_json(const std::string& text);
  std::string to_json() const;
  bool operator==(const SceneSpec&) const = default;
};

struct SceneObject {
  Category category = Category::kCircle;
  Color color = Color::kRed;
  SizeClass size = SizeClass::kSmall;
  double cx = 0, cy = 0, radius = 0;
};

/// Pixel-centre rasterization of one object on a square canvas.
geo::Mask rasterize(const SceneObject& o, std::size_t size);

struct Expression {
  Template kind = Template::kAttribute;
  Category category = Category::kCircle;
  Color color = Color::kRed;  // unused by T3's target
  Region region = Region::kLeft;
  Category anchor_category = Category::kCircle;
  Color anchor_color = Color::kRed;

  std::string text() const;
};

bool in_region(const SceneObject& o, Region r, double size);
/// Index of the other object whose centre is closest to o (ties to the lower index).
std::size_t nearest_neighbor(const std::vector<SceneObject>& objects, std::size_t i);
/// All objects the expression's semantics select.
std::vector<std::size_t> referents(const std::vector<SceneObject>& objects, const Expression& e,
                                   double size);

struct Sample {
  std::string id;
  std::vector<float> image;  // size*size*3 interleaved RGB, multiples of 1/255
  std::string expression;
  geo::Box gt_box;  // pixel units
  geo::Mask gt_mask;
  // generator-side record, not persisted
  Template kind = Template::kAttribute;
  std::vector<SceneObject> objects;
  std::size_t target = 0;
};

std::string sample_id(std::size_t index);

/// Deterministic in (spec, n); parallel over samples.
std::vector<Sample> generate(const SceneSpec& spec, std::size_t n);

void write_dataset(const std::vector<Sample>& samples, const SceneSpec& spec,
                   const std::filesystem::path& dir);

struct Dataset {
  SceneSpec spec;
  std::vector<Sample> samples;
  std::size_t image_size() const { return static_cast<std::size_t>(spec.image_size); }
};
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace provg::synth
