#include "uda/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace uda {

using nlohmann::json;
using nlohmann::ordered_json;

void TrainingConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("config: steps (K) must be >= 1");
  if (iterations < 1) throw std::invalid_argument("config: iterations (U) must be >= 1");
  thresholds.validate();
  triplet.validate();
  if (beta < 0) throw std::invalid_argument("config: beta must be >= 0");
  if (jitter.brightness < 0 || jitter.contrast < 0 || jitter.saturation < 0 || jitter.hue < 0) {
    throw std::invalid_argument("config: jitter half-ranges must be >= 0");
  }
  step0_optimizer.validate();
  finetune_optimizer.validate();
  if (weights.segmentation < 0 || weights.triplet < 0 || weights.consistency < 0) {
    throw std::invalid_argument("config: loss weights must be >= 0");
  }
  model.validate();
}

namespace {

ordered_json optimizer_json(const OptimizerConfig& o) {
  return {{"base_lr", o.base_lr},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"poly_power", o.poly_power}};
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: key '") + key + "' has the wrong type");
  }
}

void read_optimizer(const json& j, const char* key, OptimizerConfig& o) {
  if (!j.contains(key)) return;
  const json& s = j.at(key);
  reject_unknown(s, {"base_lr", "momentum", "weight_decay", "poly_power"}, key);
  read(s, "base_lr", o.base_lr);
  read(s, "momentum", o.momentum);
  read(s, "weight_decay", o.weight_decay);
  read(s, "poly_power", o.poly_power);
}

}  // namespace

ordered_json to_json(const TrainingConfig& c) {
  return {
      {"steps", c.steps},
      {"iterations", c.iterations},
      {"seed", c.seed},
      {"use_gpa", c.use_gpa},
      {"use_ctl", c.use_ctl},
      {"use_tcr", c.use_tcr},
      {"beta", c.beta},
      {"thresholds", {{"probability", c.thresholds.probability}, {"percentage", c.thresholds.percentage}}},
      {"triplet",
       {{"margin", c.triplet.margin},
        {"negative_mode", c.triplet.negative_mode == NegativeMode::kHardest ? "hardest" : "all"}}},
      {"jitter",
       {{"brightness", c.jitter.brightness},
        {"contrast", c.jitter.contrast},
        {"saturation", c.jitter.saturation},
        {"hue", c.jitter.hue}}},
      {"step0_optimizer", optimizer_json(c.step0_optimizer)},
      {"finetune_optimizer", optimizer_json(c.finetune_optimizer)},
      {"weights",
       {{"segmentation", c.weights.segmentation},
        {"triplet", c.weights.triplet},
        {"consistency", c.weights.consistency}}},
      {"model",
       {{"hidden_channels", c.model.hidden_channels},
        {"feature_channels", c.model.feature_channels},
        {"num_classes", c.model.num_classes}}},
  };
}

TrainingConfig config_from_json(const json& j, const TrainingConfig& base) {
  TrainingConfig c = base;
  reject_unknown(j,
                 {"steps", "iterations", "seed", "use_gpa", "use_ctl", "use_tcr", "beta",
                  "thresholds", "triplet", "jitter", "step0_optimizer", "finetune_optimizer",
                  "weights", "model"},
                 "");
  read(j, "steps", c.steps);
  read(j, "iterations", c.iterations);
  read(j, "seed", c.seed);
  read(j, "use_gpa", c.use_gpa);
  read(j, "use_ctl", c.use_ctl);
  read(j, "use_tcr", c.use_tcr);
  read(j, "beta", c.beta);
  if (j.contains("thresholds")) {
    const json& s = j["thresholds"];
    reject_unknown(s, {"probability", "percentage"}, "thresholds");
    read(s, "probability", c.thresholds.probability);
    read(s, "percentage", c.thresholds.percentage);
  }
  if (j.contains("triplet")) {
    const json& s = j["triplet"];
    reject_unknown(s, {"margin", "negative_mode"}, "triplet");
    read(s, "margin", c.triplet.margin);
    if (s.contains("negative_mode")) {
      const std::string mode = s["negative_mode"].get<std::string>();
      if (mode == "hardest") {
        c.triplet.negative_mode = NegativeMode::kHardest;
      } else if (mode == "all") {
        c.triplet.negative_mode = NegativeMode::kAll;
      } else {
        throw std::invalid_argument("config: triplet.negative_mode must be 'hardest' or 'all'");
      }
    }
  }
  if (j.contains("jitter")) {
    const json& s = j["jitter"];
    reject_unknown(s, {"brightness", "contrast", "saturation", "hue"}, "jitter");
    read(s, "brightness", c.jitter.brightness);
    read(s, "contrast", c.jitter.contrast);
    read(s, "saturation", c.jitter.saturation);
    read(s, "hue", c.jitter.hue);
  }
  read_optimizer(j, "step0_optimizer", c.step0_optimizer);
  read_optimizer(j, "finetune_optimizer", c.finetune_optimizer);
  if (j.contains("weights")) {
    const json& s = j["weights"];
    reject_unknown(s, {"segmentation", "triplet", "consistency"}, "weights");
    read(s, "segmentation", c.weights.segmentation);
    read(s, "triplet", c.weights.triplet);
    read(s, "consistency", c.weights.consistency);
  }
  if (j.contains("model")) {
    const json& s = j["model"];
    reject_unknown(s, {"hidden_channels", "feature_channels", "num_classes"}, "model");
    read(s, "hidden_channels", c.model.hidden_channels);
    read(s, "feature_channels", c.model.feature_channels);
    read(s, "num_classes", c.model.num_classes);
  }
  c.validate();
  return c;
}

TrainingConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open config");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": malformed config: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace uda
