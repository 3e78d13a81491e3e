#pragma once

#include "uda/config.hpp"
#include "uda/datagen.hpp"
#include "uda/regularizers.hpp"
#include "uda/segmodel.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uda {

using Model = SegModel<float>;

struct EvalResult {
  std::vector<double> iou;           // per class; NaN where not counted
  std::vector<std::uint8_t> counted;  // class appears in labels or predictions
  double miou = 0.0;
  Eigen::MatrixX<std::int64_t> confusion;  // rows: ground truth, cols: prediction
};

/// Confusion-matrix IoU over all images of `eval`.
EvalResult evaluate(const Model& model, const LabeledSet& eval);
EvalResult evaluate_predictions(std::span<const LabelMap> truth,
                                std::span<const std::vector<int>> predicted, int num_classes);

struct StepReport {
  int step = 0;
  double seg_loss = 0.0;          // mean source L_seg
  double target_seg_loss = 0.0;   // mean L_seg on valid pseudo labels
  double triplet_loss = 0.0;      // mean L_triplet
  double consistency_loss = 0.0;  // mean L_cst
  double first_window_loss = 0.0;  // mean total loss over the first tenth of the step
  double last_window_loss = 0.0;   // mean total loss over the last tenth of the step
  std::vector<double> thresholds;
  std::vector<double> valid_fraction;
  std::optional<EvalResult> eval;
};

nlohmann::ordered_json to_json(const StepReport& report);
nlohmann::ordered_json to_json(const EvalResult& eval);

/// Step 0: trains T_0 from scratch on (aligned, jittered) source images.
Model step0_coarse(const TrainingConfig& cfg, const LabeledSet& source, const UnlabeledSet& target,
                   StepReport* report = nullptr);

/// What a self-training step derives from the frozen previous model.
struct StepTargets {
  PseudoLabelSet pseudo;
  std::optional<CategoryCenters> centers;
};

StepTargets prepare_step(const Model& previous, const TrainingConfig& cfg,
                         const LabeledSet& source, const UnlabeledSet& target, int step_index);

/// Step i >= 1: finetunes a copy of `previous` with pseudo labels, and the
/// triplet and consistency terms when enabled. `previous` is never modified.
Model step_k(const Model& previous, const TrainingConfig& cfg, const LabeledSet& source,
             const UnlabeledSet& target, int step_index, StepReport* report = nullptr);

struct PipelineOptions {
  const LabeledSet* eval = nullptr;
  std::filesystem::path out_dir;  // checkpoints and reports.jsonl when non-empty
  std::optional<Model> resume_model;
  int resume_step = -1;  // step index that produced resume_model
};

struct PipelineResult {
  Model model;
  std::vector<StepReport> reports;
};

/// Step 0 followed by K - 1 self-training steps.
PipelineResult run_pipeline(const TrainingConfig& cfg, const LabeledSet& source,
                            const UnlabeledSet& target, const PipelineOptions& options = {});

// ---------------------------------------------------------------------------
// Ablation over the component toggles.

struct AblationVariant {
  std::string name;
  bool use_gpa;
  bool use_ctl;
  bool use_tcr;
  bool coarse_only;  // stop after step 0
};

const std::vector<AblationVariant>& ablation_variants();

struct AblationRow {
  std::string variant;
  std::uint64_t seed;
  double miou;
};

/// Runs every variant for every seed and scores it on `eval`. Variants that
/// share a step-0 configuration reuse the same T_0.
std::vector<AblationRow> ablate(const TrainingConfig& cfg, const LabeledSet& source,
                                const UnlabeledSet& target, const LabeledSet& eval,
                                std::span<const std::uint64_t> seeds, int threads = 1);

std::string ablation_csv(std::span<const AblationRow> rows);
nlohmann::ordered_json ablation_json(std::span<const AblationRow> rows);
/// Mean mIoU per variant over seeds, in ablation_variants() order.
std::vector<std::pair<std::string, double>> ablation_means(std::span<const AblationRow> rows);

}  // namespace uda
