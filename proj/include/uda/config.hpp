#pragma once

#include "uda/imgproc.hpp"
#include "uda/regularizers.hpp"
#include "uda/segmodel.hpp"
#include "uda/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>

namespace uda {

struct LossWeights {
  double segmentation = 1.0;
  double triplet = 1.0;
  double consistency = 1.0;
};

/// Every scalar the training pipeline consumes.
struct TrainingConfig {
  int steps = 3;          // K: step 0 plus K - 1 self-training steps
  int iterations = 2000;  // U: SGD iterations per step
  ThresholdConfig thresholds;
  TripletConfig triplet;
  double beta = 0.01;
  JitterParams jitter;
  OptimizerConfig step0_optimizer{5e-4, 0.9, 1e-4, 0.9, 2000};
  OptimizerConfig finetune_optimizer{2.5e-4, 0.9, 1e-4, 0.9, 2000};
  std::uint64_t seed = 0;
  bool use_gpa = true;
  bool use_ctl = true;
  bool use_tcr = true;
  LossWeights weights;
  ModelConfig model;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

nlohmann::ordered_json to_json(const TrainingConfig& cfg);

/// Starts from `base` and applies the keys present in `j`. Unknown keys are
/// rejected with std::invalid_argument.
TrainingConfig config_from_json(const nlohmann::json& j, const TrainingConfig& base = {});
TrainingConfig load_config(const std::filesystem::path& path);

}  // namespace uda
