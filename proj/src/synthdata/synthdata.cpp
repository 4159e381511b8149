#include "provg/synthdata/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "provg/error.hpp"

namespace provg::synth {

using json = nlohmann::json;

std::string name(Category c) {
  switch (c) {
    case Category::kCircle: return "circle";
    case Category::kSquare: return "square";
    case Category::kTriangle: return "triangle";
  }
  return "?";
}

std::string name(Color c) {
  switch (c) {
    case Color::kRed: return "red";
    case Color::kGreen: return "green";
    case Color::kBlue: return "blue";
    case Color::kYellow: return "yellow";
  }
  return "?";
}

std::string name(Region r) {
  switch (r) {
    case Region::kLeft: return "left";
    case Region::kRight: return "right";
    case Region::kTop: return "top";
    case Region::kBottom: return "bottom";
    case Region::kCenter: return "center";
  }
  return "?";
}

// ---------------------------------------------------------------- spec

void SceneSpec::validate() const {
  if (min_objects < 2 || max_objects > 6 || min_objects > max_objects)
    throw ConfigError("object count range must lie within [2, 6]");
  if (image_size < 16) throw ConfigError("image_size too small");
  double total = 0;
  for (double w : template_mix) {
    if (!std::isfinite(w) || w < 0) throw ConfigError("template_mix weights must be non-negative");
    total += w;
  }
  if (total <= 0) throw ConfigError("template_mix must have a positive weight");
  if (!(noise >= 0 && noise <= 0.5)) throw ConfigError("noise must lie in [0, 0.5]");
  for (const auto* r : {&small_radius, &large_radius})
    if (!((*r)[0] > 1 && (*r)[0] <= (*r)[1])) throw ConfigError("radius ranges must be increasing and > 1");
  if (2 * (large_radius[1] + 1) >= image_size) throw ConfigError("large radius does not fit the canvas");
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scene spec must be a JSON object");
  SceneSpec s;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "seed") s.seed = v.get<std::uint64_t>();
      else if (k == "min_objects") s.min_objects = v.get<int>();
      else if (k == "max_objects") s.max_objects = v.get<int>();
      else if (k == "image_size") s.image_size = v.get<int>();
      else if (k == "template_mix") s.template_mix = v.get<std::array<double, 3>>();
      else if (k == "noise") s.noise = v.get<double>();
      else if (k == "small_radius") s.small_radius = v.get<std::array<double, 2>>();
      else if (k == "large_radius") s.large_radius = v.get<std::array<double, 2>>();
      else throw ConfigError("scene spec: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string SceneSpec::to_json() const {
  json j = {{"seed", seed},
            {"min_objects", min_objects},
            {"max_objects", max_objects},
            {"image_size", image_size},
            {"template_mix", template_mix},
            {"noise", noise},
            {"small_radius", small_radius},
            {"large_radius", large_radius}};
  return j.dump(2);
}

// ---------------------------------------------------------------- scenes

geo::Mask rasterize(const SceneObject& o, std::size_t size) {
  geo::Mask m(size, size);
  const double r = o.radius;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5 - o.cx, py = y + 0.5 - o.cy;
      bool in = false;
      switch (o.category) {
        case Category::kCircle:
          in = px * px + py * py <= r * r;
          break;
        case Category::kSquare:
          in = std::abs(px) <= 0.85 * r && std::abs(py) <= 0.85 * r;
          break;
        case Category::kTriangle:
          // apex up, base at 0.8 r below the centre
          in = py >= -r && py <= 0.8 * r && std::abs(px) <= r * (py + r) / (1.8 * r);
          break;
      }
      m.at(y, x) = in ? 1 : 0;
    }
  }
  return m;
}

std::string Expression::text() const {
  switch (kind) {
    case Template::kAttribute:
      return "the " + name(color) + " " + name(category);
    case Template::kAbsolute:
      return "the " + name(color) + " " + name(category) + " in the " + name(region) + " of the image";
    case Template::kRelative:
      return "the " + name(category) + " near the " + name(anchor_color) + " " + name(anchor_category);
  }
  return {};
}

bool in_region(const SceneObject& o, Region r, double size) {
  const double lo = size / 3, hi = 2 * size / 3;
  switch (r) {
    case Region::kLeft: return o.cx < lo;
    case Region::kRight: return o.cx > hi;
    case Region::kTop: return o.cy < lo;
    case Region::kBottom: return o.cy > hi;
    case Region::kCenter: return o.cx >= lo && o.cx <= hi && o.cy >= lo && o.cy <= hi;
  }
  return false;
}

std::size_t nearest_neighbor(const std::vector<SceneObject>& objects, std::size_t i) {
  std::size_t best = i;
  double best_d = 0;
  for (std::size_t j = 0; j < objects.size(); ++j) {
    if (j == i) continue;
    const double dx = objects[j].cx - objects[i].cx, dy = objects[j].cy - objects[i].cy;
    const double d = dx * dx + dy * dy;
    if (best == i || d < best_d) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

std::vector<std::size_t> referents(const std::vector<SceneObject>& objects, const Expression& e,
                                   double size) {
  std::vector<std::size_t> out;
  if (e.kind == Template::kRelative) {
    std::vector<std::size_t> anchors;
    for (std::size_t j = 0; j < objects.size(); ++j)
      if (objects[j].color == e.anchor_color && objects[j].category == e.anchor_category) anchors.push_back(j);
    if (anchors.size() != 1) return out;  // "the blue square" must itself be unambiguous
    for (std::size_t i = 0; i < objects.size(); ++i)
      if (i != anchors[0] && objects[i].category == e.category && nearest_neighbor(objects, i) == anchors[0])
        out.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    if (o.color != e.color || o.category != e.category) continue;
    if (e.kind == Template::kAbsolute && !in_region(o, e.region, size)) continue;
    out.push_back(i);
  }
  return out;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", index);
  return buf;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::array<std::array<double, 3>, 4> kPalette = {{
    {0.90, 0.16, 0.12},  // red
    {0.18, 0.78, 0.22},  // green
    {0.16, 0.32, 0.92},  // blue
    {0.95, 0.86, 0.12},  // yellow
}};
constexpr std::array<double, 3> kBackground = {0.34, 0.36, 0.30};

struct Candidate {
  Expression expr;
  std::size_t target;
};

bool boxes_clear(const geo::Box& a, const geo::Box& b) {
  // one pixel of clearance keeps masks and rectangles disjoint
  return a.x2 + 1 <= b.x1 || b.x2 + 1 <= a.x1 || a.y2 + 1 <= b.y1 || b.y2 + 1 <= a.y1;
}

std::vector<Candidate> candidates(const std::vector<SceneObject>& objs, Template kind, double size) {
  std::vector<Candidate> out;
  for (std::size_t t = 0; t < objs.size(); ++t) {
    const auto& o = objs[t];
    std::vector<Expression> options;
    Expression e;
    e.kind = kind;
    e.category = o.category;
    e.color = o.color;
    if (kind == Template::kAttribute) {
      options.push_back(e);
    } else if (kind == Template::kAbsolute) {
      for (Region r : {Region::kLeft, Region::kRight, Region::kTop, Region::kBottom, Region::kCenter}) {
        if (!in_region(o, r, size)) continue;
        e.region = r;
        options.push_back(e);
      }
    } else {
      const auto& a = objs[nearest_neighbor(objs, t)];
      e.anchor_category = a.category;
      e.anchor_color = a.color;
      options.push_back(e);
    }
    for (const auto& x : options) {
      auto hits = referents(objs, x, size);
      if (hits.size() != 1 || hits[0] != t) continue;
      // spatial templates must need their spatial phrase
      if (kind != Template::kAttribute) {
        std::size_t same = 0;
        for (const auto& other : objs)
          same += kind == Template::kAbsolute ? (other.category == o.category && other.color == o.color)
                                              : (other.category == o.category);
        if (same < 2) continue;
      }
      out.push_back({x, t});
    }
  }
  return out;
}

Sample generate_one(const SceneSpec& spec, std::size_t index) {
  const auto size = static_cast<std::size_t>(spec.image_size);
  const double fsize = spec.image_size;
  for (std::uint64_t attempt = 0; attempt < 100000; ++attempt) {
    std::mt19937_64 rng(splitmix(spec.seed ^ splitmix(index * 0x100000001B3ull + attempt)));
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto pick = [&](int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng)); };

    std::discrete_distribution<int> mix(spec.template_mix.begin(), spec.template_mix.end());
    const auto kind = static_cast<Template>(mix(rng) + 1);
    const int count = spec.min_objects + pick(spec.max_objects - spec.min_objects + 1);

    std::vector<SceneObject> objs(count);
    for (auto& o : objs) {
      o.category = static_cast<Category>(pick(3));
      o.color = static_cast<Color>(pick(4));
      o.size = static_cast<SizeClass>(pick(2));
    }
    if (kind == Template::kAbsolute) {
      objs[1].category = objs[0].category;
      objs[1].color = objs[0].color;
    } else if (kind == Template::kRelative) {
      objs[1].category = objs[0].category;
    }

    bool placed = true;
    std::vector<geo::Box> boxes;
    std::vector<geo::Mask> masks;
    for (auto& o : objs) {
      const auto& range = o.size == SizeClass::kSmall ? spec.small_radius : spec.large_radius;
      o.radius = uniform(range[0], range[1]);
      bool ok = false;
      for (int tries = 0; tries < 1000 && !ok; ++tries) {
        o.cx = uniform(o.radius + 1, fsize - o.radius - 1);
        o.cy = uniform(o.radius + 1, fsize - o.radius - 1);
        auto m = rasterize(o, size);
        auto b = geo::mask_to_box(m);
        if (!b) continue;
        ok = std::all_of(boxes.begin(), boxes.end(), [&](const geo::Box& q) { return boxes_clear(*b, q); });
        if (ok) {
          boxes.push_back(*b);
          masks.push_back(std::move(m));
        }
      }
      if (!ok) {
        placed = false;
        break;
      }
    }
    if (!placed) continue;

    auto cands = candidates(objs, kind, fsize);
    if (cands.empty()) continue;
    const auto& chosen = cands[pick(static_cast<int>(cands.size()))];

    Sample s;
    s.id = sample_id(index);
    s.kind = kind;
    s.objects = objs;
    s.target = chosen.target;
    s.expression = chosen.expr.text();
    s.gt_mask = masks[chosen.target];
    s.gt_box = boxes[chosen.target];
    s.image.assign(size * size * 3, 0.0f);
    for (std::size_t p = 0; p < size * size; ++p) {
      const int owner = [&] {
        for (std::size_t k = 0; k < masks.size(); ++k)
          if (masks[k].data[p]) return static_cast<int>(k);
        return -1;
      }();
      for (int c = 0; c < 3; ++c) {
        double v = owner < 0 ? kBackground[c] + uniform(-spec.noise, spec.noise)
                             : kPalette[static_cast<int>(objs[owner].color)][c] +
                                   0.5 * uniform(-spec.noise, spec.noise);
        v = std::clamp(v, 0.0, 1.0);
        s.image[3 * p + c] = static_cast<float>(std::lround(v * 255.0) / 255.0);
      }
    }
    return s;
  }
  throw Error("could not generate sample " + sample_id(index));
}

}  // namespace

std::vector<Sample> generate(const SceneSpec& spec, std::size_t n) {
  spec.validate();
  std::vector<Sample> out(n);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      out[i] = generate_one(spec, i);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// ---------------------------------------------------------------- files

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

std::string ppm(const std::vector<float>& rgb, std::size_t size) {
  std::string s = "P3\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size * 3; ++x) {
      if (x) s += ' ';
      s += std::to_string(std::lround(rgb[y * size * 3 + x] * 255.0f));
    }
    s += '\n';
  }
  return s;
}

std::string pgm(const geo::Mask& m) {
  std::string s = "P2\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (x) s += ' ';
      s += m.at(y, x) ? "255" : "0";
    }
    s += '\n';
  }
  return s;
}

// Whitespace-separated integer reader for plain PNM that tracks line numbers.
class PnmReader {
 public:
  explicit PnmReader(const fs::path& p) : path_(p), in_(p) {
    if (!in_) throw IoError("cannot open " + p.string());
  }

  std::string token() {
    std::string t;
    char c;
    while (in_.get(c)) {
      if (c == '#') {
        while (in_.get(c) && c != '\n') {}
        ++line_;
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (c == '\n') {
          if (!t.empty()) {
            in_.unget();
            return t;
          }
          ++line_;
        }
        if (!t.empty()) return t;
        continue;
      }
      t += c;
    }
    if (t.empty()) fail("unexpected end of file");
    return t;
  }

  long integer() {
    auto t = token();
    try {
      std::size_t used = 0;
      long v = std::stol(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      fail("expected an integer, got '" + t + "'");
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(path_.string() + ":" + std::to_string(line_) + ": " + what);
  }

 private:
  fs::path path_;
  std::ifstream in_;
  int line_ = 1;
};

std::vector<float> read_ppm(const fs::path& p, std::size_t size) {
  PnmReader r(p);
  if (r.token() != "P3") r.fail("not a plain PPM (P3) file");
  const long w = r.integer(), h = r.integer(), maxval = r.integer();
  if (w != static_cast<long>(size) || h != static_cast<long>(size))
    r.fail("expected " + std::to_string(size) + "x" + std::to_string(size) + " image");
  if (maxval <= 0 || maxval > 65535) r.fail("bad maxval");
  std::vector<float> rgb(size * size * 3);
  for (auto& v : rgb) {
    const long x = r.integer();
    if (x < 0 || x > maxval) r.fail("sample out of range");
    v = static_cast<float>(static_cast<double>(x) / maxval);
  }
  return rgb;
}

geo::Mask read_pgm(const fs::path& p, std::size_t size) {
  PnmReader r(p);
  if (r.token() != "P2") r.fail("not a plain PGM (P2) file");
  const long w = r.integer(), h = r.integer(), maxval = r.integer();
  if (w != static_cast<long>(size) || h != static_cast<long>(size))
    r.fail("expected " + std::to_string(size) + "x" + std::to_string(size) + " mask");
  if (maxval <= 0) r.fail("bad maxval");
  geo::Mask m(size, size);
  for (auto& v : m.data) {
    const long x = r.integer();
    if (x < 0 || x > maxval) r.fail("sample out of range");
    v = 2 * x > maxval ? 1 : 0;
  }
  return m;
}

}  // namespace

void write_dataset(const std::vector<Sample>& samples, const SceneSpec& spec, const fs::path& dir) {
  const auto size = static_cast<std::size_t>(spec.image_size);
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::string lines;
  for (const auto& s : samples) {
    const std::string image_file = "images/" + s.id + ".ppm", mask_file = "masks/" + s.id + ".pgm";
    write_text(dir / image_file, ppm(s.image, size));
    write_text(dir / mask_file, pgm(s.gt_mask));
    json a = {{"id", s.id},
              {"expression", s.expression},
              {"box", {s.gt_box.x1, s.gt_box.y1, s.gt_box.x2, s.gt_box.y2}},
              {"image_file", image_file},
              {"mask_file", mask_file}};
    lines += a.dump() + "\n";
  }
  write_text(dir / "annotations.jsonl", lines);
  write_text(dir / "spec.json", spec.to_json() + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  Dataset d;
  {
    std::ifstream f(dir / "spec.json");
    if (!f) throw IoError("cannot open " + (dir / "spec.json").string());
    std::stringstream ss;
    ss << f.rdbuf();
    try {
      d.spec = SceneSpec::from_json(ss.str());
    } catch (const ConfigError& e) {
      throw IoError((dir / "spec.json").string() + ": " + e.what());
    }
  }
  const auto ann = dir / "annotations.jsonl";
  std::ifstream f(ann);
  if (!f) throw IoError("cannot open " + ann.string());
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = [&] { return ann.string() + ":" + std::to_string(lineno) + ": "; };
    Sample s;
    std::string image_file, mask_file;
    try {
      auto j = json::parse(line);
      s.id = j.at("id").get<std::string>();
      s.expression = j.at("expression").get<std::string>();
      auto b = j.at("box").get<std::array<double, 4>>();
      s.gt_box = geo::Box{b[0], b[1], b[2], b[3], geo::Unit::kPixel};
      image_file = j.at("image_file").get<std::string>();
      mask_file = j.at("mask_file").get<std::string>();
    } catch (const json::exception& e) {
      throw IoError(where() + e.what());
    }
    if (!fs::exists(dir / mask_file))
      throw IoError(where() + "sample " + s.id + ": mask file missing: " + (dir / mask_file).string());
    if (!fs::exists(dir / image_file))
      throw IoError(where() + "sample " + s.id + ": image file missing: " + (dir / image_file).string());
    s.image = read_ppm(dir / image_file, d.image_size());
    s.gt_mask = read_pgm(dir / mask_file, d.image_size());
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace provg::synth
