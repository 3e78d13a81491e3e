#include "uda/pipeline.hpp"

#include "uda/random.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace uda {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Independent random streams so that toggling one component never shifts the
// randomness seen by another.
enum Stream : std::uint64_t {
  kInit = 1,
  kSourceIndex,
  kReferenceIndex,
  kSourceJitter,
  kTargetIndex,
  kTargetJitter,
  kCenterReference,
};

std::uint64_t stream_seed(const TrainingConfig& cfg, int step, int iter, Stream s) {
  return derive_seed({cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(iter), s});
}

std::size_t pick(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

JitterParams jitter_with_seed(const TrainingConfig& cfg, std::uint64_t seed) {
  JitterParams p = cfg.jitter;
  p.seed = seed;
  return p;
}

void check_inputs(const LabeledSet& source, const UnlabeledSet& target) {
  if (source.images.empty()) throw std::invalid_argument("pipeline: source set is empty");
  if (target.images.empty()) throw std::invalid_argument("pipeline: target set is empty");
  if (source.images.size() != source.labels.size()) {
    throw std::invalid_argument("pipeline: source images and labels differ in count");
  }
}

/// Source image for one iteration: aligned to a random target reference when
/// GPA is on, then jittered.
RgbImage source_sample(const TrainingConfig& cfg, const LabeledSet& source,
                       const UnlabeledSet& target, int step, int iter, std::size_t& index) {
  index = pick(stream_seed(cfg, step, iter, kSourceIndex), source.images.size());
  const std::size_t ref = pick(stream_seed(cfg, step, iter, kReferenceIndex), target.images.size());
  RgbImage img = cfg.use_gpa ? photometric_align(source.images[index], target.images[ref], cfg.beta)
                             : source.images[index];
  return color_jitter(img, jitter_with_seed(cfg, stream_seed(cfg, step, iter, kSourceJitter)));
}

struct LossTrace {
  std::vector<double> total;
  double seg = 0, target_seg = 0, triplet = 0, consistency = 0;

  void finish(StepReport& r, int step) const {
    const double n = static_cast<double>(total.size());
    r.step = step;
    r.seg_loss = seg / n;
    r.target_seg_loss = target_seg / n;
    r.triplet_loss = triplet / n;
    r.consistency_loss = consistency / n;
    const std::size_t window = std::max<std::size_t>(1, total.size() / 10);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < window; ++i) {
      first += total[i];
      last += total[total.size() - 1 - i];
    }
    r.first_window_loss = first / static_cast<double>(window);
    r.last_window_loss = last / static_cast<double>(window);
  }
};

OptimizerConfig with_total(OptimizerConfig o, int total) {
  o.total_iters = total;
  return o;
}

ordered_json nullable_vector(const std::vector<double>& v) {
  ordered_json out = ordered_json::array();
  for (double x : v) out.push_back(std::isnan(x) ? ordered_json(nullptr) : ordered_json(x));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate_predictions(std::span<const LabelMap> truth,
                                std::span<const std::vector<int>> predicted, int num_classes) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("evaluate: prediction and label counts differ");
  }
  EvalResult r;
  r.confusion = Eigen::MatrixX<std::int64_t>::Zero(num_classes, num_classes);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (truth[k].labels.size() != predicted[k].size()) {
      throw std::invalid_argument("evaluate: prediction size differs from label map");
    }
    for (std::size_t j = 0; j < predicted[k].size(); ++j) {
      const int y = truth[k].labels[j];
      if (y < 0 || y >= num_classes) continue;
      ++r.confusion(y, predicted[k][j]);
    }
  }
  r.iou.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  r.counted.assign(num_classes, 0);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto tp = r.confusion(c, c);
    const auto uni = r.confusion.row(c).sum() + r.confusion.col(c).sum() - tp;
    if (uni == 0) continue;
    r.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
    r.counted[c] = 1;
    sum += r.iou[c];
    ++counted;
  }
  r.miou = counted ? sum / counted : 0.0;
  return r;
}

EvalResult evaluate(const Model& model, const LabeledSet& eval) {
  std::vector<std::vector<int>> predicted;
  predicted.reserve(eval.images.size());
  for (const auto& img : eval.images) {
    predicted.push_back(model.predict(image_tensor<float>(img)).labels);
  }
  return evaluate_predictions(eval.labels, predicted, model.config().num_classes);
}

ordered_json to_json(const EvalResult& e) {
  return {{"miou", e.miou}, {"iou", nullable_vector(e.iou)}};
}

ordered_json to_json(const StepReport& r) {
  ordered_json j{{"step", r.step},
                 {"seg_loss", r.seg_loss},
                 {"target_seg_loss", r.target_seg_loss},
                 {"triplet_loss", r.triplet_loss},
                 {"consistency_loss", r.consistency_loss},
                 {"first_window_loss", r.first_window_loss},
                 {"last_window_loss", r.last_window_loss},
                 {"thresholds", r.thresholds},
                 {"valid_fraction", r.valid_fraction}};
  if (r.eval) j["eval"] = to_json(*r.eval);
  return j;
}

// ---------------------------------------------------------------------------
// Training steps

Model step0_coarse(const TrainingConfig& cfg, const LabeledSet& source, const UnlabeledSet& target,
                   StepReport* report) {
  cfg.validate();
  check_inputs(source, target);
  Model model(cfg.model, stream_seed(cfg, 0, 0, kInit));
  const OptimizerConfig opt = with_total(cfg.step0_optimizer, cfg.iterations);
  LossTrace trace;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::size_t index = 0;
    const RgbImage img = source_sample(cfg, source, target, 0, it, index);
    const auto acts = model.forward(image_tensor<float>(img));
    auto ce = cross_entropy<float>(acts.logits, source.labels[index].labels);
    model.backward(acts, ce.grad * static_cast<float>(cfg.weights.segmentation));
    auto params = model.parameters();
    sgd_step<float>(params, opt, it);
    trace.seg += ce.loss;
    trace.total.push_back(cfg.weights.segmentation * ce.loss);
  }
  if (report) trace.finish(*report, 0);
  return model;
}

StepTargets prepare_step(const Model& previous, const TrainingConfig& cfg,
                         const LabeledSet& source, const UnlabeledSet& target, int step_index) {
  StepTargets t;
  std::vector<Tensor<float>> clean;
  clean.reserve(target.images.size());
  for (const auto& img : target.images) clean.push_back(image_tensor<float>(img));
  t.pseudo = generate_pseudo_labels<float>(previous, clean, cfg.thresholds);

  if (cfg.use_ctl) {
    CenterAccumulator acc(cfg.model.num_classes, cfg.model.feature_channels);
    for (std::size_t i = 0; i < source.images.size(); ++i) {
      const std::size_t ref = pick(
          stream_seed(cfg, step_index, static_cast<int>(i), kCenterReference), target.images.size());
      const RgbImage img = cfg.use_gpa
                               ? photometric_align(source.images[i], target.images[ref], cfg.beta)
                               : source.images[i];
      acc.add(previous.forward(image_tensor<float>(img)).features, source.labels[i].labels);
    }
    t.centers = acc.finalize();
  }
  return t;
}

Model step_k(const Model& previous, const TrainingConfig& cfg, const LabeledSet& source,
             const UnlabeledSet& target, int step_index, StepReport* report) {
  cfg.validate();
  check_inputs(source, target);
  if (step_index < 1) throw std::invalid_argument("step_k: step index must be >= 1");

  const StepTargets targets = prepare_step(previous, cfg, source, target, step_index);
  Model model = previous;
  for (auto* p : model.parameters()) p->momentum.setZero();
  const OptimizerConfig opt = with_total(cfg.finetune_optimizer, cfg.iterations);
  const auto w_seg = static_cast<float>(cfg.weights.segmentation);
  const auto w_tri = static_cast<float>(cfg.weights.triplet);
  const auto w_cst = static_cast<float>(cfg.weights.consistency);

  LossTrace trace;
  for (int it = 0; it < cfg.iterations; ++it) {
    double total = 0.0;

    // Source: L_seg (+ L_triplet) on an aligned, jittered image.
    std::size_t si = 0;
    const RgbImage src = source_sample(cfg, source, target, step_index, it, si);
    const auto src_acts = model.forward(image_tensor<float>(src));
    auto ce = cross_entropy<float>(src_acts.logits, source.labels[si].labels);
    Matrix<float> grad_features;
    if (cfg.use_ctl) {
      auto tri = triplet_loss<float>(src_acts.features, source.labels[si].labels, *targets.centers,
                                     cfg.triplet);
      grad_features = tri.grad * w_tri;
      trace.triplet += tri.loss;
      total += cfg.weights.triplet * tri.loss;
    }
    model.backward(src_acts, ce.grad * w_seg, grad_features);
    trace.seg += ce.loss;
    total += cfg.weights.segmentation * ce.loss;

    // Target: L_seg on valid pseudo labels of the clean image.
    const std::size_t ti = pick(stream_seed(cfg, step_index, it, kTargetIndex), target.images.size());
    const PseudoLabelMap& pseudo = targets.pseudo.maps[ti];
    const auto tgt_acts = model.forward(image_tensor<float>(target.images[ti]));
    auto tce = cross_entropy<float>(tgt_acts.logits, pseudo.labels, pseudo.valid);
    if (tce.contributing > 0) model.backward(tgt_acts, tce.grad * w_seg);
    trace.target_seg += tce.loss;
    total += cfg.weights.segmentation * tce.loss;

    // Target: consistency between the jittered view and the clean pseudo labels.
    if (cfg.use_tcr) {
      const RgbImage jittered = color_jitter(
          target.images[ti], jitter_with_seed(cfg, stream_seed(cfg, step_index, it, kTargetJitter)));
      const auto jit_acts = model.forward(image_tensor<float>(jittered));
      auto cst = consistency_loss<float>(pseudo, jit_acts.logits);
      if (cst.contributing > 0) model.backward(jit_acts, cst.grad * w_cst);
      trace.consistency += cst.loss;
      total += cfg.weights.consistency * cst.loss;
    }

    auto params = model.parameters();
    sgd_step<float>(params, opt, it);
    trace.total.push_back(total);
  }
  if (report) {
    trace.finish(*report, step_index);
    report->thresholds = targets.pseudo.thresholds;
    report->valid_fraction = targets.pseudo.valid_fraction();
  }
  return model;
}

PipelineResult run_pipeline(const TrainingConfig& cfg, const LabeledSet& source,
                            const UnlabeledSet& target, const PipelineOptions& options) {
  cfg.validate();
  check_inputs(source, target);
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  auto write_outputs = [&](const Model& model, const std::vector<StepReport>& reports, int step) {
    if (options.out_dir.empty()) return;
    char name[32];
    std::snprintf(name, sizeof(name), "step_%d.ckpt", step);
    try {
      save_checkpoint(model, options.out_dir / name);
      std::ofstream os(options.out_dir / "reports.jsonl", std::ios::trunc);
      if (!os) throw std::runtime_error("cannot open reports.jsonl");
      for (const auto& r : reports) os << to_json(r).dump() << "\n";
    } catch (const std::exception& e) {
      throw std::runtime_error("step " + std::to_string(step) + ": " + e.what());
    }
  };

  PipelineResult result{Model(cfg.model, 0), {}};
  int first_step = 0;
  if (options.resume_model) {
    if (options.resume_step < 0 || options.resume_step >= cfg.steps) {
      throw std::invalid_argument("run_pipeline: resume step outside [0, K)");
    }
    result.model = *options.resume_model;
    first_step = options.resume_step + 1;
  }
  for (int step = first_step; step < cfg.steps; ++step) {
    StepReport report;
    result.model = step == 0 ? step0_coarse(cfg, source, target, &report)
                             : step_k(result.model, cfg, source, target, step, &report);
    if (options.eval) report.eval = evaluate(result.model, *options.eval);
    result.reports.push_back(std::move(report));
    write_outputs(result.model, result.reports, step);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> variants = {
      {"source_only", false, false, false, true},
      {"ctl_tcr", false, true, true, false},
      {"gpa_only", true, false, false, true},
      {"gpa_tcr", true, false, true, false},
      {"gpa_ctl", true, true, false, false},
      {"full", true, true, true, false},
  };
  return variants;
}

std::vector<AblationRow> ablate(const TrainingConfig& cfg, const LabeledSet& source,
                                const UnlabeledSet& target, const LabeledSet& eval,
                                std::span<const std::uint64_t> seeds, int threads) {
  cfg.validate();
  const auto& variants = ablation_variants();
  std::vector<AblationRow> rows(seeds.size() * variants.size());

  // One job per (seed, step-0 alignment setting); each trains T_0 once and then
  // every variant that starts from it.
  struct Job {
    std::size_t seed_index;
    bool use_gpa;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    jobs.push_back({s, true});
    jobs.push_back({s, false});
  }

  auto run_job = [&](const Job& job) {
    TrainingConfig base = cfg;
    base.seed = seeds[job.seed_index];
    base.use_gpa = job.use_gpa;
    const Model t0 = step0_coarse(base, source, target);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const auto& variant = variants[v];
      if (variant.use_gpa != job.use_gpa) continue;
      Model model = t0;
      if (!variant.coarse_only) {
        TrainingConfig vc = base;
        vc.use_ctl = variant.use_ctl;
        vc.use_tcr = variant.use_tcr;
        for (int step = 1; step < vc.steps; ++step) model = step_k(model, vc, source, target, step);
      }
      rows[job.seed_index * variants.size() + v] = {variant.name, seeds[job.seed_index],
                                                    evaluate(model, eval).miou};
    }
  };

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        run_job(jobs[j]);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "variant,gpa,ctl,tcr,seed,miou\n";
  for (const auto& r : rows) {
    const AblationVariant* v = nullptr;
    for (const auto& cand : ablation_variants()) {
      if (cand.name == r.variant) v = &cand;
    }
    char miou[32];
    std::snprintf(miou, sizeof(miou), "%.6f", r.miou);
    os << r.variant << "," << (v && v->use_gpa) << "," << (v && v->use_ctl) << ","
       << (v && v->use_tcr) << "," << r.seed << "," << miou << "\n";
  }
  return os.str();
}

std::vector<std::pair<std::string, double>> ablation_means(std::span<const AblationRow> rows) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& v : ablation_variants()) {
    double sum = 0;
    int n = 0;
    for (const auto& r : rows) {
      if (r.variant == v.name) {
        sum += r.miou;
        ++n;
      }
    }
    if (n) out.emplace_back(v.name, sum / n);
  }
  return out;
}

ordered_json ablation_json(std::span<const AblationRow> rows) {
  ordered_json runs = ordered_json::array();
  for (const auto& r : rows) runs.push_back({{"variant", r.variant}, {"seed", r.seed}, {"miou", r.miou}});
  ordered_json means = ordered_json::object();
  for (const auto& [name, m] : ablation_means(rows)) means[name] = m;
  return {{"runs", runs}, {"mean_miou", means}};
}

}  // namespace uda
