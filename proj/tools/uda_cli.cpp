// Command-line front end. Exit codes: 0 success, 1 internal error, 2 usage,
// parse or IO error.

#include "uda/config.hpp"
#include "uda/datagen.hpp"
#include "uda/gradcheck.hpp"
#include "uda/imgproc.hpp"
#include "uda/netpbm.hpp"
#include "uda/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr const char* kOutputEnv = "UDA_OUTPUT_DIR";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flag value, else the output-directory environment override, else an error.
fs::path output_dir(const std::string& flag, const char* what) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  throw UsageError(std::string(what) + ": --out is required (or set " + kOutputEnv + ")");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << text;
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed JSON: " + e.what());
  }
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Training configuration shared by train and ablate.

struct TrainingFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  int steps = uda::TrainingConfig{}.steps;
  int iterations = uda::TrainingConfig{}.iterations;
  bool use_gpa = true;
  bool use_ctl = true;
  bool use_tcr = true;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* iterations_opt = nullptr;
  CLI::Option* gpa_opt = nullptr;
  CLI::Option* ctl_opt = nullptr;
  CLI::Option* tcr_opt = nullptr;

  void add_to(CLI::App* app, bool with_toggles) {
    app->add_option("--config", config_path, "JSON training config; flags override its values")
        ->check(CLI::ExistingFile);
    seed_opt = app->add_option("--seed", seed, "Master seed (required unless the config has one)");
    steps_opt = app->add_option("--steps", steps, "K: step 0 plus K-1 self-training steps");
    iterations_opt = app->add_option("--iterations", iterations, "U: SGD iterations per step");
    if (with_toggles) {
      gpa_opt = app->add_option("--use-gpa", use_gpa, "Global photometric alignment on source images");
      ctl_opt = app->add_option("--use-ctl", use_ctl, "Category-oriented triplet loss");
      tcr_opt = app->add_option("--use-tcr", use_tcr, "Target consistency regularization");
    }
  }

  uda::TrainingConfig resolve() const {
    uda::TrainingConfig cfg;
    bool has_seed = false;
    if (!config_path.empty()) {
      const json j = read_json_file(config_path);
      cfg = uda::config_from_json(j);
      has_seed = j.contains("seed");
    }
    if (seed_opt->count()) {
      cfg.seed = seed;
      has_seed = true;
    }
    if (!has_seed) throw UsageError("a seed is required: pass --seed or set \"seed\" in the config");
    if (steps_opt->count()) cfg.steps = steps;
    if (iterations_opt->count()) cfg.iterations = iterations;
    if (gpa_opt && gpa_opt->count()) cfg.use_gpa = use_gpa;
    if (ctl_opt && ctl_opt->count()) cfg.use_ctl = use_ctl;
    if (tcr_opt && tcr_opt->count()) cfg.use_tcr = use_tcr;
    cfg.validate();
    return cfg;
  }
};

struct DataFlags {
  std::string data_dir;
  std::string source;
  std::string target;

  void add_to(CLI::App* app) {
    app->add_option("--data", data_dir, "Benchmark directory written by gen-data");
    app->add_option("--source", source, "Labelled source manifest (overrides --data)");
    app->add_option("--target", target, "Unlabelled target manifest (overrides --data)");
  }

  std::pair<fs::path, fs::path> resolve() const {
    fs::path s = source, t = target;
    if (!data_dir.empty()) {
      const auto paths = uda::benchmark_paths(data_dir);
      if (s.empty()) s = paths.source_train;
      if (t.empty()) t = paths.target_train;
    }
    if (s.empty() || t.empty()) throw UsageError("pass --data or both --source and --target");
    return {s, t};
  }
};

uda::LabeledSet load_labeled_manifest(const fs::path& path, const char* role) {
  const auto m = uda::read_manifest(path);
  if (!m.labelled()) {
    throw UsageError(path.string() + ": " + role + " manifest must carry labels");
  }
  return uda::load_labeled(m);
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_data(const std::string& out_flag, const std::string& spec_path,
                 const CLI::Option* seed_opt, std::uint64_t seed, bool as_json) {
  uda::BenchmarkSpec spec = uda::default_benchmark();
  bool has_seed = false;
  if (!spec_path.empty()) {
    const json j = read_json_file(spec_path);
    spec = uda::benchmark_from_json(j);
    has_seed = j.contains("seed");
  }
  if (seed_opt->count()) {
    spec.seed = seed;
    has_seed = true;
  }
  if (!has_seed) throw UsageError("gen-data: pass --seed or set \"seed\" in the spec file");
  const fs::path out = output_dir(out_flag, "gen-data");
  const auto paths = uda::generate_benchmark(spec, out);
  ordered_json j{{"out", out.string()},
                 {"seed", spec.seed},
                 {"source_train", paths.source_train.string()},
                 {"target_train", paths.target_train.string()},
                 {"target_train_gt", paths.target_train_gt.string()},
                 {"target_eval", paths.target_eval.string()}};
  if (as_json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "wrote benchmark to " << out.string() << "\n";
  }
  return kExitOk;
}

ordered_json lab_means(const uda::RgbImage& img) {
  const auto lab = uda::rgb_to_lab(img);
  return {{"L", lab.L.mean()}, {"a", lab.a.mean()}, {"b", lab.b.mean()}};
}

/// Aligns one file, writes the PPM and its JSON sidecar; returns the sidecar.
ordered_json align_one(const fs::path& src_path, const uda::RgbImage& ref, const fs::path& out,
                       double beta) {
  const uda::RgbImage src = uda::read_ppm(src_path);
  const auto result = uda::align_photometric(src, ref, beta);
  uda::write_ppm(out, result.image);
  const ordered_json src_m = lab_means(src), ref_m = lab_means(ref), out_m = lab_means(result.image);
  ordered_json deltas;
  for (const char* c : {"L", "a", "b"}) {
    deltas[c] = {{"out_minus_src", out_m[c].get<double>() - src_m[c].get<double>()},
                 {"out_minus_ref", out_m[c].get<double>() - ref_m[c].get<double>()}};
  }
  ordered_json side{{"src", src_path.string()},
                    {"out", out.string()},
                    {"beta", beta},
                    {"gamma", result.gamma.gamma},
                    {"objective", result.gamma.objective_value},
                    {"iterations", result.gamma.iterations},
                    {"mean_src", src_m},
                    {"mean_ref", ref_m},
                    {"mean_out", out_m},
                    {"mean_delta", deltas}};
  write_text(out.string() + ".json", side.dump(2) + "\n");
  return side;
}

int cmd_align(const std::string& src, const std::string& ref_path, const std::string& out,
              const std::string& manifest, double beta, bool as_json) {
  if (ref_path.empty()) throw UsageError("align: --ref is required");
  const uda::RgbImage ref = uda::read_ppm(ref_path);
  if (manifest.empty()) {
    if (src.empty() || out.empty()) throw UsageError("align: --src and --out are required");
    const auto side = align_one(src, ref, out, beta);
    if (as_json) {
      std::cout << side.dump(2) << "\n";
    } else {
      std::cout << "gamma " << fixed(side["gamma"].get<double>()) << ", wrote " << out << "\n";
    }
    return kExitOk;
  }

  const fs::path out_dir = output_dir(out, "align");
  fs::create_directories(out_dir);
  const auto m = uda::read_manifest(manifest);
  ordered_json failures = ordered_json::array();
  std::size_t ok = 0;
  for (std::size_t i = 0; i < m.count(); ++i) {
    const fs::path in = m.image_path(i);
    try {
      align_one(in, ref, out_dir / in.filename(), beta);
      ++ok;
    } catch (const std::exception& e) {
      failures.push_back({{"image", in.string()}, {"error", e.what()}});
    }
  }
  ordered_json summary{{"processed", m.count()}, {"succeeded", ok}, {"failures", failures}};
  write_text(out_dir / "align_summary.json", summary.dump(2) + "\n");
  if (as_json) {
    std::cout << summary.dump(2) << "\n";
  } else {
    std::cout << ok << "/" << m.count() << " images aligned into " << out_dir.string() << "\n";
    for (const auto& f : failures) std::cerr << "error: " << f["error"].get<std::string>() << "\n";
  }
  return ok == m.count() ? kExitOk : kExitUsage;
}

int cmd_gamma_solve(const std::string& src_path, const std::string& ref_path, double beta,
                    bool as_json) {
  const auto lightness_histogram = [](const std::string& path) {
    const auto lab = uda::rgb_to_lab(uda::read_ppm(path));
    return uda::channel_histogram(lab.L / 100.0, 0.0, 1.0);
  };
  const auto src = lightness_histogram(src_path), ref = lightness_histogram(ref_path);
  uda::GammaSolverOptions options;
  options.beta = beta;
  const auto sol = uda::solve_gamma(src, ref, options);
  ordered_json j{{"gamma", sol.gamma},
                 {"objective", sol.objective_value},
                 {"objective_at_identity", uda::gamma_objective(1.0, src, ref, beta)},
                 {"iterations", sol.iterations},
                 {"src_mean", src.mean()},
                 {"ref_mean", ref.mean()}};
  if (as_json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "gamma " << fixed(sol.gamma) << "\n";
  }
  return kExitOk;
}

int cmd_train(const TrainingFlags& tf, const DataFlags& df, const std::string& eval_path,
              const std::string& out_flag, const std::string& resume, int resume_step,
              bool as_json) {
  const uda::TrainingConfig cfg = tf.resolve();
  const fs::path out = output_dir(out_flag, "train");
  const auto [source_path, target_path] = df.resolve();
  const uda::LabeledSet source = load_labeled_manifest(source_path, "source");
  const uda::UnlabeledSet target = uda::load_unlabeled(uda::read_manifest(target_path));
  std::optional<uda::LabeledSet> eval;
  if (!eval_path.empty()) eval = load_labeled_manifest(eval_path, "eval");

  uda::PipelineOptions options;
  options.out_dir = out;
  options.eval = eval ? &*eval : nullptr;
  if (!resume.empty()) {
    if (resume_step < 0) throw UsageError("train: --resume needs --resume-step");
    options.resume_model = uda::load_checkpoint<float>(resume);
    options.resume_step = resume_step;
  }
  fs::create_directories(out);
  write_text(out / "config.json", uda::to_json(cfg).dump(2) + "\n");
  const auto result = uda::run_pipeline(cfg, source, target, options);
  const fs::path final_ckpt = out / ("step_" + std::to_string(cfg.steps - 1) + ".ckpt");

  ordered_json reports = ordered_json::array();
  for (const auto& r : result.reports) reports.push_back(uda::to_json(r));
  ordered_json j{{"out", out.string()}, {"checkpoint", final_ckpt.string()}, {"reports", reports}};
  if (as_json) {
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& r : result.reports) {
      std::cout << "step " << r.step << ": seg " << fixed(r.seg_loss, 4);
      if (r.eval) std::cout << ", mIoU " << fixed(r.eval->miou, 4);
      std::cout << "\n";
    }
    std::cout << "final checkpoint " << final_ckpt.string() << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& manifest, const std::string& data,
             bool as_json) {
  fs::path m = manifest;
  if (m.empty() && !data.empty()) m = uda::benchmark_paths(data).target_eval;
  if (m.empty()) throw UsageError("eval: pass --manifest or --data");
  const auto model = uda::load_checkpoint<float>(model_path);
  const auto result = uda::evaluate(model, load_labeled_manifest(m, "eval"));
  if (as_json) {
    std::cout << uda::to_json(result).dump(2) << "\n";
  } else {
    std::cout << "mIoU " << fixed(result.miou) << "\n";
  }
  return kExitOk;
}

int cmd_ablate(const TrainingFlags& tf, const DataFlags& df, const std::string& eval_path,
               int num_seeds, int threads, const std::string& out, bool as_json) {
  if (num_seeds < 1) throw UsageError("ablate: --seeds must be >= 1");
  if (threads < 1) throw UsageError("ablate: --threads must be >= 1");
  const uda::TrainingConfig cfg = tf.resolve();
  const auto [source_path, target_path] = df.resolve();
  fs::path eval_manifest = eval_path;
  if (eval_manifest.empty() && !df.data_dir.empty()) {
    eval_manifest = uda::benchmark_paths(df.data_dir).target_eval;
  }
  if (eval_manifest.empty()) throw UsageError("ablate: pass --eval or --data");
  const auto source = load_labeled_manifest(source_path, "source");
  const auto target = uda::load_unlabeled(uda::read_manifest(target_path));
  const auto eval = load_labeled_manifest(eval_manifest, "eval");

  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < num_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  const auto rows = uda::ablate(cfg, source, target, eval, seeds, threads);
  const std::string csv = uda::ablation_csv(rows);
  const ordered_json j = uda::ablation_json(rows);
  if (!out.empty()) {
    const fs::path dir = out;
    fs::create_directories(dir);
    write_text(dir / "ablation.csv", csv);
    write_text(dir / "ablation.json", j.dump(2) + "\n");
  }
  std::cout << (as_json ? j.dump(2) + "\n" : csv);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int instances, bool as_json) {
  if (instances < 1) throw UsageError("gradcheck: --instances must be >= 1");
  const auto report = uda::run_gradchecks(seed, instances);
  ordered_json suites = ordered_json::array();
  for (const auto& s : report.suites) {
    suites.push_back({{"name", s.name},
                      {"instances", s.instances},
                      {"max_relative_error", s.max_relative_error},
                      {"tolerance", s.tolerance},
                      {"passed", s.passed()}});
  }
  if (as_json) {
    std::cout << ordered_json{{"passed", report.passed()}, {"suites", suites}}.dump(2) << "\n";
  } else {
    for (const auto& s : report.suites) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-16s %s  max rel err %.3e (tol %.0e, %d instances)\n",
                    s.name.c_str(), s.passed() ? "PASS" : "FAIL", s.max_relative_error,
                    s.tolerance, s.instances);
      std::cout << line;
    }
  }
  return report.passed() ? kExitOk : kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adaptive segmentation toolkit: photometric alignment, synthetic benchmark, "
               "self-training pipeline and verification harnesses.\nWhen --out is omitted, the "
               "UDA_OUTPUT_DIR environment variable names the output directory."};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "Machine-readable JSON on stdout");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic two-domain benchmark");
  std::string gen_out, gen_spec;
  std::uint64_t gen_seed = uda::default_benchmark().seed;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--spec", gen_spec, "Benchmark spec JSON (keys of benchmark.json)")
      ->check(CLI::ExistingFile);
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Generation seed (required unless the spec has one)");

  // align
  auto* align = app.add_subcommand("align", "Photometrically align a source image to a reference");
  std::string align_src, align_ref, align_out, align_manifest;
  double align_beta = uda::GammaSolverOptions{}.beta;
  std::uint64_t align_seed = 0;
  align->add_option("--src", align_src, "Source PPM");
  align->add_option("--ref", align_ref, "Reference PPM");
  align->add_option("--out", align_out, "Output PPM, or output directory in batch mode");
  align->add_option("--manifest", align_manifest, "Batch mode: align every image of this manifest");
  align->add_option("--beta", align_beta, "Gamma regularization weight")->check(CLI::NonNegativeNumber);
  align->add_option("--seed", align_seed, "Accepted for uniformity; alignment is deterministic");

  // gamma-solve
  auto* gamma = app.add_subcommand("gamma-solve", "Solve the lightness gamma between two images");
  std::string gamma_src, gamma_ref;
  double gamma_beta = uda::GammaSolverOptions{}.beta;
  gamma->add_option("--src", gamma_src, "Source PPM")->required();
  gamma->add_option("--ref", gamma_ref, "Reference PPM")->required();
  gamma->add_option("--beta", gamma_beta, "Gamma regularization weight")->check(CLI::NonNegativeNumber);

  // train
  auto* train = app.add_subcommand("train", "Run step 0 and the self-training steps");
  TrainingFlags train_flags;
  DataFlags train_data;
  std::string train_eval, train_out, train_resume;
  int train_resume_step = -1;
  train_flags.add_to(train, true);
  train_data.add_to(train);
  train->add_option("--eval", train_eval, "Labelled manifest scored after every step");
  train->add_option("--out", train_out, "Directory for checkpoints and reports.jsonl");
  train->add_option("--resume", train_resume, "Checkpoint to resume from");
  train->add_option("--resume-step", train_resume_step, "Step index that produced --resume");

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labelled manifest");
  std::string eval_model, eval_manifest, eval_data;
  eval->add_option("--model", eval_model, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "Labelled manifest");
  eval->add_option("--data", eval_data, "Benchmark directory; uses its target_eval split");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Run the six component variants over several seeds");
  TrainingFlags abl_flags;
  DataFlags abl_data;
  std::string abl_eval, abl_out;
  int abl_seeds = 3, abl_threads = 1;
  abl_flags.add_to(abl, false);
  abl_data.add_to(abl);
  abl->add_option("--eval", abl_eval, "Labelled eval manifest (default: target_eval of --data)");
  abl->add_option("--seeds", abl_seeds, "Number of seeds, starting at --seed");
  abl->add_option("--threads", abl_threads, "Worker threads; results do not depend on it");
  abl->add_option("--out", abl_out, "Directory for ablation.csv and ablation.json");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of every backward pass");
  std::uint64_t grad_seed = 0;
  int grad_instances = 20;
  grad->add_option("--seed", grad_seed, "Seed for the random instances");
  grad->add_option("--instances", grad_instances, "Instances per suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, gen_spec, gen_seed_opt, gen_seed, as_json);
    if (*align) return cmd_align(align_src, align_ref, align_out, align_manifest, align_beta, as_json);
    if (*gamma) return cmd_gamma_solve(gamma_src, gamma_ref, gamma_beta, as_json);
    if (*train) {
      return cmd_train(train_flags, train_data, train_eval, train_out, train_resume,
                       train_resume_step, as_json);
    }
    if (*eval) return cmd_eval(eval_model, eval_manifest, eval_data, as_json);
    if (*abl) return cmd_ablate(abl_flags, abl_data, abl_eval, abl_seeds, abl_threads, abl_out, as_json);
    if (*grad) return cmd_gradcheck(grad_seed, grad_instances, as_json);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::runtime_error& e) {  // IO and parse failures, filesystem errors included
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
