// Command-line front end: data generation, training, evaluation, ablation,
// attention export and cue decoupling.
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "provg/error.hpp"
#include "provg/harness/ablate.hpp"
#include "provg/harness/pipeline.hpp"
#include "provg/lingparse/lingparse.hpp"
#include "provg/synthdata/synthdata.hpp"

namespace fs = std::filesystem;
using namespace provg;

namespace {

int precision_bits() {
  const char* env = std::getenv("PROVG_PRECISION");
  if (!env || !*env) return 32;
  const std::string v = env;
  if (v == "32") return 32;
  if (v == "64") return 64;
  throw ConfigError("PROVG_PRECISION must be 32 or 64, got '" + v + "'");
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--seeds needs at least one seed");
  return out;
}

template <typename T>
void run_train(const std::string& config_path) {
  auto cfg = harness::RunConfig::from_file(config_path);
  if (cfg.data_dir.empty()) throw ConfigError("config needs data_dir");
  std::size_t image_size = 0;
  auto data = harness::load_examples(cfg.data_dir, &image_size);
  auto dims = cfg.dims();
  dims.image_size = image_size;
  harness::Model<T> model(dims, cfg.model_options(), cfg.seed);
  fs::create_directories(cfg.out_dir);
  std::ofstream log(fs::path(cfg.out_dir) / "train_log.csv");
  std::cerr << "training " << cfg.steps << " steps on " << data.size() << " samples ("
            << model.params().total_size() << " parameters, " << sizeof(T) * 8 << "-bit)\n";
  harness::train(model, cfg, data, &log, [&](const harness::StepLog& s) {
    if ((s.step + 1) % 100 == 0 || s.step + 1 == cfg.steps)
      std::cerr << "step " << s.step + 1 << "/" << cfg.steps << " loss " << s.loss.total << " ("
                << s.wall_seconds << " s)\n";
  });
  const auto ckpt = fs::path(cfg.out_dir) / "checkpoint.json";
  harness::save_checkpoint(model, cfg, cfg.steps, ckpt);
  std::vector<std::pair<std::string, geo::MetricsReport>> rows{{"train", harness::evaluate(model, data)}};
  if (!cfg.test_dir.empty()) rows.emplace_back("test", harness::evaluate(model, harness::load_examples(cfg.test_dir)));
  std::string csv = geo::metrics_csv_header() + "\n";
  for (const auto& [label, m] : rows) csv += geo::metrics_csv_row(label, m) + "\n";
  write_file(fs::path(cfg.out_dir) / "metrics.csv", csv);
  std::cout << geo::format_metrics_table(rows);
  std::cout << "checkpoint: " << ckpt.string() << "\n";
}

template <typename T>
void run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& csv_path) {
  auto loaded = harness::load_checkpoint<T>(ckpt);
  std::size_t image_size = 0;
  auto data = harness::load_examples(data_dir, &image_size);
  if (image_size != loaded.model->dims().image_size)
    throw ShapeError("dataset image size " + std::to_string(image_size) + " does not match the checkpoint's " +
                     std::to_string(loaded.model->dims().image_size));
  auto m = harness::evaluate(*loaded.model, data);
  std::cout << geo::format_metrics_table({{fs::path(data_dir).filename().string(), m}});
  const std::string csv = geo::metrics_csv_header() + "\n" + geo::metrics_csv_row(data_dir, m) + "\n";
  if (!csv_path.empty()) write_file(csv_path, csv);
  else std::cout << "\n" << csv;
}

template <typename T>
void run_ablate(const std::string& config_path, const std::string& grid_path, const std::string& seeds) {
  auto cfg = harness::RunConfig::from_file(config_path);
  auto grid = harness::parse_grid(slurp(grid_path));
  auto seed_list = parse_seeds(seeds);
  auto results = harness::ablate<T>(cfg, grid, seed_list, [](const std::string& msg) { std::cerr << msg << "\n"; });
  fs::create_directories(cfg.out_dir);
  write_file(fs::path(cfg.out_dir) / "ablation.csv", harness::ablation_table_csv(results));
  write_file(fs::path(cfg.out_dir) / "ablation_runs.csv", harness::ablation_runs_csv(results));
  std::cout << harness::ablation_table_text(results);
  std::cout << "tables: " << (fs::path(cfg.out_dir) / "ablation.csv").string() << "\n";
}

template <typename T>
void run_export(const std::string& ckpt, const std::string& id, std::string data_dir, std::string out) {
  auto loaded = harness::load_checkpoint<T>(ckpt);
  if (data_dir.empty()) data_dir = loaded.config.data_dir;
  auto data = harness::load_examples(data_dir);
  const harness::Example* ex = nullptr;
  for (const auto& e : data)
    if (e.id == id) ex = &e;
  if (!ex) throw Error("unknown sample id '" + id + "' in " + data_dir);
  if (out.empty()) out = (fs::path(ckpt).parent_path() / "attention" / id).string();
  for (const auto& p : harness::export_attention(*loaded.model, *ex, out)) std::cout << p.string() << "\n";
}

template <typename F32, typename F64>
void dispatch(F32 f32, F64 f64) {
  if (precision_bits() == 64) f64();
  else f32();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive visual grounding on synthetic scenes"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  std::size_t n = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Scene spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--n", n, "Number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);

  std::string ckpt, data_dir, csv_path;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--csv", csv_path, "Write the metrics row here instead of stdout");

  std::string grid_path, seeds;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate a grid of configurations");
  ablate->add_option("--config", config_path, "Base run config JSON")->required()->check(CLI::ExistingFile);
  ablate->add_option("--grid", grid_path, "Grid JSON")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", seeds, "Comma-separated seeds")->required();

  std::string id, attn_out;
  auto* exp = app.add_subcommand("export-attn", "Write attention heatmaps for one sample");
  exp->add_option("--ckpt", ckpt, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  exp->add_option("--id", id, "Sample id")->required();
  exp->add_option("--data", data_dir, "Dataset directory (default: the checkpoint's data_dir)");
  exp->add_option("--out", attn_out, "Output directory (default: <ckpt dir>/attention/<id>)");

  std::vector<std::string> words;
  auto* dec = app.add_subcommand("decouple", "Print the context, spatial and attribute cues");
  dec->add_option("expression", words, "Referring expression")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto spec = synth::SceneSpec::from_json(slurp(spec_path));
      auto samples = synth::generate(spec, n);
      synth::write_dataset(samples, spec, out_dir);
      std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
    } else if (*train) {
      dispatch([&] { run_train<float>(config_path); }, [&] { run_train<double>(config_path); });
    } else if (*eval) {
      dispatch([&] { run_eval<float>(ckpt, data_dir, csv_path); }, [&] { run_eval<double>(ckpt, data_dir, csv_path); });
    } else if (*ablate) {
      dispatch([&] { run_ablate<float>(config_path, grid_path, seeds); },
               [&] { run_ablate<double>(config_path, grid_path, seeds); });
    } else if (*exp) {
      dispatch([&] { run_export<float>(ckpt, id, data_dir, attn_out); },
               [&] { run_export<double>(ckpt, id, data_dir, attn_out); });
    } else if (*dec) {
      std::string expr;
      for (const auto& w : words) expr += (expr.empty() ? "" : " ") + w;
      auto cues = lang::decouple(lang::tokenize(expr));
      std::cout << cues.context.text() << "\n" << cues.spatial.text() << "\n" << cues.attribute.text() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
