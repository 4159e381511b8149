#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace provg::geo {

enum class Unit { kNormalized, kPixel };

/// Axis-aligned box in corner form.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  Unit unit = Unit::kPixel;

  static Box from_cxcywh(double cx, double cy, double w, double h, Unit unit);
  std::array<double, 4> cxcywh() const;
  Box canonical() const;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  /// Converts between unit systems for a square canvas of `size` pixels.
  Box to_pixels(double size) const;
  Box to_normalized(double size) const;

  bool operator==(const Box&) const = default;
};

struct IouGiou {
  double iou = 0;
  double giou = 0;
  double intersection = 0;
  double union_area = 0;
};

/// IoU and generalized IoU of two canonical boxes in the same unit.
/// IoU is 0 when the union has zero area. Throws on non-finite input.
IouGiou box_iou_giou(const Box& a, const Box& b);

/// Binary mask, row-major, 1 = foreground.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}
  std::uint8_t& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Minimal enclosing rectangle in pixel units, treating each pixel as a unit
/// cell: x2 = last foreground column + 1. Empty masks give std::nullopt.
std::optional<Box> mask_to_box(const Mask& mask);

struct Overlap {
  double intersection = 0;
  double union_area = 0;
};

Overlap mask_overlap(const Mask& pred, const Mask& gt);
/// Pixel IoU; two empty masks score 1, one empty mask scores 0.
double mask_iou(const Mask& pred, const Mask& gt);

inline constexpr std::array<double, 5> kPrecisionThresholds = {0.5, 0.6, 0.7, 0.8, 0.9};

struct SampleScore {
  double iou = 0;
  double intersection = 0;
  double union_area = 0;
};

struct TrackMetrics {
  std::array<double, 5> precision{};  // Pr@0.5 .. Pr@0.9, IoU >= X
  double oiou = 0;
  double miou = 0;
  std::size_t count = 0;

  bool operator==(const TrackMetrics&) const = default;
};

TrackMetrics dataset_metrics(std::span<const SampleScore> samples);

/// REC scores predicted boxes; RES scores predicted masks; RES-box scores
/// the enclosing rectangles of predicted masks against ground-truth boxes.
struct MetricsReport {
  TrackMetrics rec;
  TrackMetrics res;
  TrackMetrics res_box;

  bool operator==(const MetricsReport&) const = default;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& label, const MetricsReport& m);
/// Fixed-width table with the REC and RES blocks side by side, percentages.
std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace provg::geo
