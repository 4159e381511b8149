#include "provg/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "provg/error.hpp"

namespace provg::harness {

using json = nlohmann::json;

namespace {

void apply_keys(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "data_dir") c.data_dir = v.get<std::string>();
      else if (k == "test_dir") c.test_dir = v.get<std::string>();
      else if (k == "out_dir") c.out_dir = v.get<std::string>();
      else if (k == "variant") c.variant = v.get<std::string>();
      else if (k == "ordering") c.ordering = v.get<std::string>();
      else if (k == "pcm") c.pcm = v.get<bool>();
      else if (k == "cfm") c.cfm = v.get<bool>();
      else if (k == "lcm") c.lcm = v.get<bool>();
      else if (k == "fa") c.fa = v.get<bool>();
      else if (k == "lambda_box") c.lambdas.box = v.get<double>();
      else if (k == "lambda_mask") c.lambdas.mask = v.get<double>();
      else if (k == "lambda_cons") c.lambdas.cons = v.get<double>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "eps") c.eps = v.get<double>();
      else if (k == "decay_at") c.decay_at = v.get<std::array<double, 2>>();
      else if (k == "decay_factor") c.decay_factor = v.get<double>();
      else if (k == "grad_clip") c.grad_clip = v.get<double>();
      else if (k == "steps") c.steps = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "log_every") c.log_every = v.get<int>();
      else if (k == "model") c.model = v.get<std::string>();
      else throw ConfigError("unknown config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  loss::validate(lambdas);
  pcm::validate(model_options().modulator);
  auto finite_pos = [](double v) { return std::isfinite(v) && v > 0; };
  if (!finite_pos(lr)) throw ConfigError("lr must be positive");
  if (!(std::isfinite(weight_decay) && weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!finite_pos(eps)) throw ConfigError("eps must be positive");
  if (!(decay_at[0] > 0 && decay_at[0] <= decay_at[1] && decay_at[1] <= 1))
    throw ConfigError("decay_at must be increasing fractions in (0, 1]");
  if (!finite_pos(decay_factor) || decay_factor > 1) throw ConfigError("decay_factor must lie in (0, 1]");
  if (!(std::isfinite(grad_clip) && grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (model != "default" && model != "tiny") throw ConfigError("model must be 'default' or 'tiny'");
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  apply_keys(c, parse(text));
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig apply_overrides(const RunConfig& base, const std::string& json_object) {
  RunConfig c = base;
  apply_keys(c, parse(json_object));
  c.validate();
  return c;
}

std::string RunConfig::to_json() const {
  json j = {{"data_dir", data_dir},       {"test_dir", test_dir},
            {"out_dir", out_dir},         {"variant", variant},
            {"ordering", ordering},       {"pcm", pcm},
            {"cfm", cfm},                 {"lcm", lcm},
            {"fa", fa},                   {"lambda_box", lambdas.box},
            {"lambda_mask", lambdas.mask}, {"lambda_cons", lambdas.cons},
            {"lr", lr},                   {"weight_decay", weight_decay},
            {"beta1", beta1},             {"beta2", beta2},
            {"eps", eps},                 {"decay_at", decay_at},
            {"decay_factor", decay_factor}, {"grad_clip", grad_clip},
            {"steps", steps},             {"batch_size", batch_size},
            {"seed", seed},               {"log_every", log_every},
            {"model", model}};
  return j.dump(2);
}

ModelOptions RunConfig::model_options() const {
  ModelOptions o;
  o.modulator.variant = pcm::parse_variant(variant);
  o.modulator.ordering = pcm::parse_ordering(ordering);
  o.modulator.enabled = pcm;
  o.cfm = cfm;
  o.lcm = lcm;
  o.fa = fa;
  return o;
}

nn::ModelDims RunConfig::dims() const {
  return model == "tiny" ? nn::ModelDims::tiny() : nn::ModelDims{};
}

double RunConfig::lr_at(int step) const {
  double r = lr;
  for (double at : decay_at)
    if (step >= static_cast<int>(std::ceil(at * steps))) r *= decay_factor;
  return r;
}

}  // namespace provg::harness
