#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "provg/geometry/geometry.hpp"
#include "provg/harness/config.hpp"
#include "provg/harness/model.hpp"
#include "provg/lingparse/lingparse.hpp"
#include "provg/losses/losses.hpp"
#include "provg/synthdata/synthdata.hpp"

namespace provg::harness {

/// A dataset sample with its expression already parsed.
struct Example {
  std::string id;
  std::vector<float> image;
  lang::LinguisticCues cues;
  geo::Box box;             // pixel units
  geo::Box box_normalized;  // same box on the unit square
  geo::Mask mask;
};

std::vector<Example> prepare(const synth::Dataset& data);
std::vector<Example> load_examples(const std::filesystem::path& dir, std::size_t* image_size = nullptr);

/// Decoupled-weight-decay Adam over a parameter store.
template <typename T>
class AdamW {
 public:
  explicit AdamW(const nx::ParamStore<T>& store);
  /// Applies one update from the gradients held in the store.
  void step(nx::ParamStore<T>& store, double lr, const RunConfig& cfg);
  int steps_taken() const { return t_; }

 private:
  std::vector<std::vector<T>> m_, v_;
  int t_ = 0;
};

struct StepLog {
  int step = 0;
  double lr = 0;
  loss::LossReport loss;  // batch means; cons_skipped is the batch count
  double wall_seconds = 0;
};

std::string train_log_header();
std::string train_log_row(const StepLog& s);

/// Trains in place; writes one CSV row per logged step when `log` is given.
/// Sample order and initialization are fixed by cfg.seed.
template <typename T>
std::vector<StepLog> train(Model<T>& model, const RunConfig& cfg, const std::vector<Example>& data,
                           std::ostream* log = nullptr,
                           const std::function<void(const StepLog&)>& progress = {});

struct Prediction {
  geo::Box box;  // normalized
  geo::Mask mask;
};

template <typename T>
Prediction predict_one(const Model<T>& model, const Example& ex);
template <typename T>
std::vector<Prediction> predict(const Model<T>& model, const std::vector<Example>& data);

/// Scores predictions on the REC, RES and RES-box tracks.
geo::MetricsReport score(const std::vector<Prediction>& preds, const std::vector<Example>& data);

template <typename T>
geo::MetricsReport evaluate(const Model<T>& model, const std::vector<Example>& data) {
  return score(predict(model, data), data);
}

// ---------------------------------------------------------------- checkpoints

inline constexpr int kCheckpointFormat = 1;

/// Writes `manifest` (JSON) and a sibling .bin blob of little-endian float32.
template <typename T>
void save_checkpoint(const Model<T>& model, const RunConfig& cfg, int step,
                     const std::filesystem::path& manifest);

template <typename T>
struct LoadedCheckpoint {
  RunConfig config;
  int step = 0;
  std::unique_ptr<Model<T>> model;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& manifest);

// ---------------------------------------------------------------- attention export

/// Writes stage{1..4}_{context,spatial,attribute}.pgm; returns the paths.
template <typename T>
std::vector<std::filesystem::path> export_attention(const Model<T>& model, const Example& ex,
                                                    const std::filesystem::path& dir);

/// Grayscale PGM text of a side x side map; values clamp to [0,1] then scale to 0..255.
std::string gray_pgm(const std::vector<double>& values, std::size_t side);

}  // namespace provg::harness
