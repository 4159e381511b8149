#include "provg/harness/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "provg/error.hpp"

namespace provg::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<Example> prepare(const synth::Dataset& data) {
  std::vector<Example> out;
  out.reserve(data.samples.size());
  const double size = static_cast<double>(data.image_size());
  for (const auto& s : data.samples) {
    Example e;
    e.id = s.id;
    e.image = s.image;
    e.cues = lang::decouple(lang::tokenize(s.expression));
    e.box = s.gt_box;
    e.box_normalized = s.gt_box.to_normalized(size);
    e.mask = s.gt_mask;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Example> load_examples(const fs::path& dir, std::size_t* image_size) {
  auto d = synth::read_dataset(dir);
  if (d.samples.empty()) throw IoError(dir.string() + ": dataset has no samples");
  if (image_size) *image_size = d.image_size();
  return prepare(d);
}

// ---------------------------------------------------------------- optimizer

template <typename T>
AdamW<T>::AdamW(const nx::ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.value(i).numel(), T(0));
    v_.emplace_back(store.value(i).numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(nx::ParamStore<T>& store, double lr, const RunConfig& cfg) {
  ++t_;
  double clip = 1.0;
  if (cfg.grad_clip > 0) {
    double sq = 0;
    for (std::size_t i = 0; i < store.size(); ++i)
      for (T g : store.grad(i)) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) clip = cfg.grad_clip / norm;
  }
  const double bc1 = 1 - std::pow(cfg.beta1, t_), bc2 = 1 - std::pow(cfg.beta2, t_);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& w = store.value(i).data;
    const auto& g = store.grad(i);
    auto& m = m_[i];
    auto& v = v_[i];
    const bool decay = store.spec(i).decay && cfg.weight_decay > 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]) * clip;
      m[k] = static_cast<T>(cfg.beta1 * m[k] + (1 - cfg.beta1) * gk);
      v[k] = static_cast<T>(cfg.beta2 * v[k] + (1 - cfg.beta2) * gk * gk);
      double wk = w[k];
      if (decay) wk -= lr * cfg.weight_decay * wk;
      wk -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
      w[k] = static_cast<T>(wk);
    }
  }
}

// ---------------------------------------------------------------- training

std::string train_log_header() {
  return "step,lr,total,box,box_smooth_l1,box_giou,mask,mask_ce,mask_dice,cons,cons_skipped,wall_time_s";
}

std::string train_log_row(const StepLog& s) {
  std::ostringstream o;
  o.precision(9);
  const auto& l = s.loss;
  o << s.step << ',' << s.lr << ',' << l.total << ',' << l.box << ',' << l.box_smooth_l1 << ','
    << l.box_giou << ',' << l.mask << ',' << l.mask_ce << ',' << l.mask_dice << ',' << l.cons << ','
    << l.cons_skipped << ',';
  o.precision(4);
  o << std::fixed << s.wall_seconds;
  return o.str();
}

namespace {

std::string breakdown(const loss::LossReport& l) {
  std::ostringstream o;
  o << "box=" << l.box << " (smooth_l1=" << l.box_smooth_l1 << ", giou=" << l.box_giou
    << ") mask=" << l.mask << " (ce=" << l.mask_ce << ", dice=" << l.mask_dice << ") cons=" << l.cons;
  return o.str();
}

void add_into(loss::LossReport& acc, const loss::LossReport& r) {
  acc.box_smooth_l1 += r.box_smooth_l1;
  acc.box_giou += r.box_giou;
  acc.box += r.box;
  acc.mask_ce += r.mask_ce;
  acc.mask_dice += r.mask_dice;
  acc.mask += r.mask;
  acc.cons += r.cons;
  acc.cons_skipped += r.cons_skipped;
  acc.total += r.total;
}

void scale(loss::LossReport& r, double s) {
  r.box_smooth_l1 *= s;
  r.box_giou *= s;
  r.box *= s;
  r.mask_ce *= s;
  r.mask_dice *= s;
  r.mask *= s;
  r.cons *= s;
  r.total *= s;
}

// Epoch-wise shuffled order; batches wrap across epoch boundaries.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(seed_ * 0x9E3779B97F4A7C15ull + epoch_++);
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
std::vector<StepLog> train(Model<T>& model, const RunConfig& cfg, const std::vector<Example>& data,
                           std::ostream* log, const std::function<void(const StepLog&)>& progress) {
  cfg.validate();
  if (data.empty()) throw Error("training set is empty");
  model.set_options(cfg.model_options());
  auto& store = model.params();
  AdamW<T> opt(store);
  BatchSampler sampler(data.size(), cfg.seed);
  std::vector<StepLog> history;
  if (log) *log << train_log_header() << '\n';
  const auto start = std::chrono::steady_clock::now();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int step = 0; step < cfg.steps; ++step) {
    store.zero_grad();
    StepLog entry;
    entry.step = step;
    entry.lr = cfg.lr_at(step);
    entry.loss.lambdas = cfg.lambdas;
    for (std::size_t idx : sampler.next(batch)) {
      const auto& ex = data[idx];
      loss::LossReport r;
      try {
        nx::Graph<T> g;
        auto out = model.forward(g, ex.image, ex.cues);
        auto l = loss::sample_loss(g, out.prediction.box, out.prediction.mask_scores, ex.box_normalized,
                                   ex.mask, cfg.lambdas);
        r = l.report;
        if (!std::isfinite(r.total)) throw NonFiniteError("loss total");
        g.backward(l.total, nx::Tensor<T>(1, 1, static_cast<T>(1.0 / batch)));
        g.accumulate_param_grads();
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("training diverged at step " + std::to_string(step) + " on sample " + ex.id +
                             ": " + e.what() + "; components " + breakdown(r));
      }
      add_into(entry.loss, r);
    }
    scale(entry.loss, 1.0 / batch);
    opt.step(store, entry.lr, cfg);
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) *log << train_log_row(entry) << '\n';
    if (progress) progress(entry);
    history.push_back(entry);
  }
  if (log) log->flush();
  return history;
}

// ---------------------------------------------------------------- evaluation

template <typename T>
Prediction predict_one(const Model<T>& model, const Example& ex) {
  nx::Graph<T> g;
  auto out = model.forward(g, ex.image, ex.cues);
  const auto& b = out.prediction.box.value().data;
  Prediction p;
  p.box = geo::Box::from_cxcywh(b[0], b[1], b[2], b[3], geo::Unit::kNormalized);
  p.mask = loss::binarize_scores(out.prediction.mask_scores.value());
  return p;
}

template <typename T>
std::vector<Prediction> predict(const Model<T>& model, const std::vector<Example>& data) {
  std::vector<Prediction> out(data.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.size(); ++i) {
    try {
      out[i] = predict_one(model, data[i]);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

geo::MetricsReport score(const std::vector<Prediction>& preds, const std::vector<Example>& data) {
  if (preds.size() != data.size()) throw Error("prediction count does not match the dataset");
  std::vector<geo::SampleScore> rec, res, res_box;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = preds[i];
    const auto& e = data[i];
    auto r = geo::box_iou_giou(p.box.canonical(), e.box_normalized);
    rec.push_back({r.iou, r.intersection, r.union_area});
    auto o = geo::mask_overlap(p.mask, e.mask);
    res.push_back({geo::mask_iou(p.mask, e.mask), o.intersection, o.union_area});
    if (auto mb = geo::mask_to_box(p.mask)) {
      auto q = geo::box_iou_giou(*mb, e.box);
      res_box.push_back({q.iou, q.intersection, q.union_area});
    } else {
      res_box.push_back({0.0, 0.0, e.box.area()});
    }
  }
  return {geo::dataset_metrics(rec), geo::dataset_metrics(res), geo::dataset_metrics(res_box)};
}

// ---------------------------------------------------------------- checkpoints

namespace {

json dims_json(const nn::ModelDims& d) {
  return {{"image_size", d.image_size}, {"patch", d.patch},           {"text_dim", d.text_dim},
          {"text_heads", d.text_heads}, {"text_layers", d.text_layers}, {"text_ffn", d.text_ffn},
          {"max_tokens", d.max_tokens}, {"vocab", d.vocab_size()},      {"channels", d.channels},
          {"fused", d.fused}};
}

nn::ModelDims dims_from(const json& j) {
  nn::ModelDims d;
  d.image_size = j.at("image_size").get<std::size_t>();
  d.patch = j.at("patch").get<std::size_t>();
  d.text_dim = j.at("text_dim").get<std::size_t>();
  d.text_heads = j.at("text_heads").get<std::size_t>();
  d.text_layers = j.at("text_layers").get<std::size_t>();
  d.text_ffn = j.at("text_ffn").get<std::size_t>();
  d.max_tokens = j.at("max_tokens").get<std::size_t>();
  d.vocab = j.at("vocab").get<std::size_t>();
  d.channels = j.at("channels").get<std::array<std::size_t, 4>>();
  d.fused = j.at("fused").get<std::size_t>();
  return d;
}

void put_le(std::string& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) out += static_cast<char>((bits >> (8 * b)) & 0xFF);
}

float get_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

fs::path blob_path(const fs::path& manifest) {
  auto p = manifest;
  return p.replace_extension(".bin");
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const RunConfig& cfg, int step, const fs::path& manifest) {
  const auto& store = model.params();
  json params = json::array();
  std::string blob;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& v = store.value(i);
    params.push_back({{"name", store.spec(i).name}, {"shape", {v.rows(), v.cols()}}, {"offset", offset}});
    for (T x : v.data) put_le(blob, static_cast<float>(x));
    offset += v.numel();
  }
  const auto bin = blob_path(manifest);
  json m = {{"format_version", kCheckpointFormat},
            {"step", step},
            {"config", json::parse(cfg.to_json())},
            {"dims", dims_json(model.dims())},
            {"blob", bin.filename().string()},
            {"total_floats", offset},
            {"params", params}};
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  {
    std::ofstream f(bin, std::ios::binary);
    if (!f) throw IoError("cannot write " + bin.string());
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream f(manifest, std::ios::binary);
  if (!f) throw IoError("cannot write " + manifest.string());
  f << m.dump(2) << '\n';
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const fs::path& manifest) {
  std::ifstream f(manifest, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + manifest.string());
  LoadedCheckpoint<T> out;
  json m;
  nn::ModelDims dims;
  try {
    m = json::parse(f);
    const int version = m.at("format_version").get<int>();
    if (version != kCheckpointFormat)
      throw IoError(manifest.string() + ": unsupported checkpoint format " + std::to_string(version));
    out.step = m.at("step").get<int>();
    out.config = RunConfig::from_json(m.at("config").dump());
    dims = dims_from(m.at("dims"));
  } catch (const json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }
  if (dims.vocab != nn::ModelDims{}.vocab_size())
    throw IoError(manifest.string() + ": vocabulary size differs from this build");
  out.model = std::make_unique<Model<T>>(dims, out.config.model_options(), out.config.seed);
  auto& store = out.model->params();
  const auto& params = m.at("params");
  if (params.size() != store.size())
    throw IoError(manifest.string() + ": parameter count mismatch (" + std::to_string(params.size()) +
                  " vs " + std::to_string(store.size()) + ")");

  const auto bin = manifest.parent_path() / m.at("blob").get<std::string>();
  std::ifstream bf(bin, std::ios::binary);
  if (!bf) throw IoError("cannot open checkpoint blob " + bin.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  const auto total = m.at("total_floats").get<std::size_t>();
  if (blob.size() != 4 * total || total != store.total_size())
    throw IoError(bin.string() + ": blob holds " + std::to_string(blob.size() / 4) + " floats, expected " +
                  std::to_string(store.total_size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = params[i];
    auto& v = store.value(i);
    const auto name = p.at("name").get<std::string>();
    const auto shape = p.at("shape").get<std::vector<std::size_t>>();
    if (name != store.spec(i).name || shape != v.shape)
      throw IoError(manifest.string() + ": parameter " + std::to_string(i) + " is " + name +
                    nx::shape_string(shape) + ", model expects " + store.spec(i).name + nx::shape_string(v.shape));
    const auto offset = p.at("offset").get<std::size_t>();
    if (offset + v.numel() > total) throw IoError(manifest.string() + ": offset out of range for " + name);
    for (std::size_t k = 0; k < v.numel(); ++k) v.data[k] = static_cast<T>(get_le(&blob[4 * (offset + k)]));
  }
  return out;
}

// ---------------------------------------------------------------- attention export

std::string gray_pgm(const std::vector<double>& values, std::size_t side) {
  if (values.size() != side * side) throw ShapeError("gray_pgm: value count does not match side");
  std::string s = "P2\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      if (x) s += ' ';
      const double v = std::clamp(values[y * side + x], 0.0, 1.0);
      s += std::to_string(std::lround(v * 255.0));
    }
    s += '\n';
  }
  return s;
}

namespace {

// Nearest upsampling of a (side^2) map to (size^2).
std::vector<double> upsample_map(const std::vector<double>& map, std::size_t side, std::size_t size) {
  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) out[y * size + x] = map[(y * side / size) * side + x * side / size];
  return out;
}

template <typename T>
std::vector<double> spatial_map(const std::optional<nx::Tensor<T>>& gate, std::size_t positions) {
  std::vector<double> m(positions, 1.0);
  if (!gate) return m;
  const std::size_t c = gate->cols();
  for (std::size_t p = 0; p < positions; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += gate->data[p * c + k];
    m[p] = s / c;
  }
  return m;
}

}  // namespace

template <typename T>
std::vector<fs::path> export_attention(const Model<T>& model, const Example& ex, const fs::path& dir) {
  nx::Graph<T> g;
  auto out = model.forward(g, ex.image, ex.cues);
  const std::size_t size = model.dims().image_size;
  fs::create_directories(dir);
  std::vector<fs::path> files;
  auto write = [&](const std::string& name, const std::string& text) {
    auto p = dir / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
    files.push_back(p);
  };
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& tr = out.traces[i];
    const std::size_t side = model.dims().stage_side(i), channels = model.dims().channels[i];
    const std::string stem = "stage" + std::to_string(i + 1) + "_";
    write(stem + "context.pgm", gray_pgm(upsample_map(spatial_map(tr.context_gate, side * side), side, size), size));
    write(stem + "spatial.pgm", gray_pgm(upsample_map(spatial_map(tr.spatial_gate, side * side), side, size), size));
    std::vector<double> strip(size * size, 1.0);
    if (tr.attribute_gate)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) strip[y * size + x] = tr.attribute_gate->data[x * channels / size];
    write(stem + "attribute.pgm", gray_pgm(strip, size));
  }
  return files;
}

#define PROVG_INSTANTIATE(T)                                                                          \
  template class AdamW<T>;                                                                            \
  template std::vector<StepLog> train<T>(Model<T>&, const RunConfig&, const std::vector<Example>&,      \
                                         std::ostream*, const std::function<void(const StepLog&)>&);    \
  template Prediction predict_one<T>(const Model<T>&, const Example&);                                \
  template std::vector<Prediction> predict<T>(const Model<T>&, const std::vector<Example>&);          \
  template void save_checkpoint<T>(const Model<T>&, const RunConfig&, int, const fs::path&);          \
  template LoadedCheckpoint<T> load_checkpoint<T>(const fs::path&);                                   \
  template std::vector<fs::path> export_attention<T>(const Model<T>&, const Example&, const fs::path&);
PROVG_INSTANTIATE(float)
PROVG_INSTANTIATE(double)
#undef PROVG_INSTANTIATE

}  // namespace provg::harness
