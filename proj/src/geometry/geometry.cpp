#include "provg/geometry/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "provg/error.hpp"

namespace provg::geo {

Box Box::from_cxcywh(double cx, double cy, double w, double h, Unit unit) {
  return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, unit};
}

std::array<double, 4> Box::cxcywh() const {
  return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

Box Box::canonical() const {
  return Box{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2), unit};
}

Box Box::to_pixels(double size) const {
  if (unit == Unit::kPixel) return *this;
  return Box{x1 * size, y1 * size, x2 * size, y2 * size, Unit::kPixel};
}

Box Box::to_normalized(double size) const {
  if (unit == Unit::kNormalized) return *this;
  return Box{x1 / size, y1 / size, x2 / size, y2 / size, Unit::kNormalized};
}

IouGiou box_iou_giou(const Box& a, const Box& b) {
  for (double v : {a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2})
    if (!std::isfinite(v)) throw Error("box_iou_giou: non-finite coordinate");
  if (a.unit != b.unit) throw Error("box_iou_giou: boxes use different units");
  const Box p = a.canonical(), q = b.canonical();
  const double iw = std::max(0.0, std::min(p.x2, q.x2) - std::max(p.x1, q.x1));
  const double ih = std::max(0.0, std::min(p.y2, q.y2) - std::max(p.y1, q.y1));
  IouGiou r;
  r.intersection = iw * ih;
  r.union_area = p.area() + q.area() - r.intersection;
  r.iou = r.union_area > 0 ? r.intersection / r.union_area : 0.0;
  const double hull = (std::max(p.x2, q.x2) - std::min(p.x1, q.x1)) *
                      (std::max(p.y2, q.y2) - std::min(p.y1, q.y1));
  r.giou = hull > 0 ? r.iou - (hull - r.union_area) / hull : r.iou;
  return r;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

std::optional<Box> mask_to_box(const Mask& mask) {
  std::size_t r0 = mask.height, r1 = 0, c0 = mask.width, c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        any = true;
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (!any) return std::nullopt;
  return Box{static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1 + 1),
             static_cast<double>(r1 + 1), Unit::kPixel};
}

Overlap mask_overlap(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("mask shapes differ: " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
  Overlap o;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    o.intersection += (p && g) ? 1 : 0;
    o.union_area += (p || g) ? 1 : 0;
  }
  return o;
}

double mask_iou(const Mask& pred, const Mask& gt) {
  const auto o = mask_overlap(pred, gt);
  return o.union_area == 0 ? 1.0 : o.intersection / o.union_area;
}

TrackMetrics dataset_metrics(std::span<const SampleScore> samples) {
  if (samples.empty()) throw Error("dataset_metrics needs at least one sample");
  TrackMetrics m;
  m.count = samples.size();
  double inter = 0, uni = 0, iou_sum = 0;
  for (const auto& s : samples) {
    for (std::size_t t = 0; t < kPrecisionThresholds.size(); ++t)
      if (s.iou >= kPrecisionThresholds[t]) m.precision[t] += 1;
    inter += s.intersection;
    uni += s.union_area;
    iou_sum += s.iou;
  }
  for (auto& p : m.precision) p /= static_cast<double>(samples.size());
  m.miou = iou_sum / static_cast<double>(samples.size());
  m.oiou = uni > 0 ? inter / uni : 1.0;
  return m;
}

namespace {

std::string track_csv(const TrackMetrics& t) {
  std::string s;
  char buf[32];
  for (double p : t.precision) {
    std::snprintf(buf, sizeof buf, "%.6f,", p);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "%.6f,%.6f", t.oiou, t.miou);
  return s + buf;
}

std::string track_header(const std::string& prefix) {
  std::string s;
  for (double x : kPrecisionThresholds) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_pr@%.1f,", prefix.c_str(), x);
    s += buf;
  }
  return s + prefix + "_oiou," + prefix + "_miou";
}

}  // namespace

std::string metrics_csv_header() {
  return "label,count," + track_header("rec") + "," + track_header("res") + "," +
         track_header("res_box");
}

std::string metrics_csv_row(const std::string& label, const MetricsReport& m) {
  return label + "," + std::to_string(m.rec.count) + "," + track_csv(m.rec) + "," +
         track_csv(m.res) + "," + track_csv(m.res_box);
}

std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t name_w = 7;
  for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());
  const std::string header = " Pr@0.5 Pr@0.6 Pr@0.7 Pr@0.8 Pr@0.9   oIoU   mIoU";
  auto centered = [&](const std::string& title) {
    const std::size_t left = (header.size() - title.size()) / 2;
    return std::string(left, ' ') + title + std::string(header.size() - left - title.size(), ' ');
  };
  char buf[64];
  auto block = [&](const std::array<double, 5>& precision, double oiou, double miou) {
    std::string s;
    for (double p : precision) {
      std::snprintf(buf, sizeof buf, " %6.2f", 100 * p);
      s += buf;
    }
    std::snprintf(buf, sizeof buf, " %6.2f %6.2f", 100 * oiou, 100 * miou);
    return s + buf;
  };
  const std::string pad(name_w, ' ');
  std::string out = pad + " |" + centered("REC") + " |" + centered("RES") + "\n";
  out += pad + " |" + header + " |" + header + "\n";
  out += std::string(name_w + 2 * (header.size() + 2), '-') + "\n";
  for (const auto& [name, m] : rows) {
    std::string padded = name;
    padded.resize(name_w, ' ');
    out += padded + " |" + block(m.rec.precision, m.rec.oiou, m.rec.miou) + " |" +
           block(m.res_box.precision, m.res.oiou, m.res.miou) + "\n";
  }
  out += "RES Pr@X scores the enclosing rectangles of predicted masks; RES oIoU/mIoU score the masks.\n";
  return out;
}

}  // namespace provg::geo
