#include "ndet/commands.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "ndet/architectures.hpp"
#include "ndet/common.hpp"
#include "ndet/config.hpp"
#include "ndet/features.hpp"
#include "ndet/scoring.hpp"
#include "ndet/signal.hpp"

namespace fs = std::filesystem;

namespace ndet {
namespace {

// ---------------------------------------------------------------------------
// Shared option plumbing
// ---------------------------------------------------------------------------

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string model_dir;
  std::string system_kind;  // non-empty overrides the config's [system] kind
  std::string fa_mode;      // non-empty overrides the config's fa_mode
  std::string name;         // row label for score output
  std::string axis;         // ablate: "optimizer" or "activation"
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 1;
  std::vector<std::string> inputs;
};

ExperimentConfig load_config(const CliOptions& opt) {
  if (opt.config_path.empty()) throw ConfigError("--config is required");
  const std::string* kind = opt.system_kind.empty() ? nullptr : &opt.system_kind;
  ExperimentConfig cfg = load_experiment_config(opt.config_path, kind);
  if (opt.seed_set) {
    cfg.seed = opt.seed;
    cfg.system.seed = opt.seed;
  }
  if (!opt.fa_mode.empty()) cfg.fa_mode = fa_mode_from_string(opt.fa_mode);
  cfg.system.validate();
  cfg.smoothing.validate();
  return cfg;
}

void require_out(const CliOptions& opt) {
  if (opt.out_dir.empty()) throw ConfigError("--out is required");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(strf("cannot create directory %s: %s", dir.c_str(), ec.message().c_str()));
}

// Canonical config copy dropped into every output directory.
void write_config_copy(const ExperimentConfig& cfg, const std::string& dir,
                       std::vector<std::string>& names) {
  const std::string path = dir + "/experiment.txt";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_experiment_config(os, cfg);
  if (!os) throw DataError("short write to " + path);
  names.push_back("experiment.txt");
}

// Re-reads an existing manifest and rewrites it with extra entries included.
void extend_manifest(const std::string& dir, const std::vector<std::string>& extra) {
  std::vector<std::string> names = extra;
  std::ifstream is(dir + "/manifest.txt");
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t sep = line.find("  ");
    if (sep != std::string::npos && sep + 2 < line.size()) names.push_back(line.substr(sep + 2));
  }
  write_manifest(dir, names);
}

// Runs fn(0..n-1) over `jobs` worker threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(jobs, n);
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Input resolution
// ---------------------------------------------------------------------------

// Positional inputs may be record files or directories holding them.
std::vector<std::string> expand_records(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (const std::string& arg : args) {
    if (fs::is_directory(arg)) {
      std::vector<std::string> found;
      for (const fs::directory_entry& entry : fs::directory_iterator(arg)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ndeg")
          found.push_back(entry.path().string());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw DataError("no .ndeg records under " + arg);
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(arg)) {
      out.push_back(arg);
    } else {
      throw DataError("no such record or directory: " + arg);
    }
  }
  if (out.empty()) throw DataError("at least one record is required");
  return out;
}

std::string ann_path_for(const std::string& record_path) {
  fs::path p(record_path);
  p.replace_extension(".ann");
  return p.string();
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

Corpus load_corpus(const std::vector<std::string>& record_paths) {
  Corpus corpus;
  corpus.reserve(record_paths.size());
  for (const std::string& rec_path : record_paths) {
    EegRecord rec = load_record(rec_path);
    AnnotationSet ann = load_annotations(ann_path_for(rec_path));
    corpus.emplace_back(std::move(rec), std::move(ann));
  }
  return corpus;
}

// Pairs of (posterior CSV, annotation CSV), given as alternating positionals.
std::vector<std::pair<std::string, std::string>> pair_inputs(
    const std::vector<std::string>& args) {
  if (args.empty() || args.size() % 2 != 0)
    throw ConfigError("expected alternating POSTERIOR.csv ANNOTATION.ann pairs");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < args.size(); i += 2) pairs.emplace_back(args[i], args[i + 1]);
  return pairs;
}

EpochLabelTrack reference_track(const std::string& ann_path, std::size_t epochs) {
  EpochLabelTrack ref = annotations_to_epoch_labels(load_annotations(ann_path));
  if (ref.size() != epochs)
    throw DataError(strf("%s covers %zu epochs but the posterior track has %zu", ann_path.c_str(),
                         ref.size(), epochs));
  return ref;
}

// Aggregates smoothed epoch-level confusion counts over several records.
ConfusionCounts accumulate_counts(
    const std::vector<std::pair<PosteriorTrack, EpochLabelTrack>>& pairs,
    const SmoothingParams& smoothing) {
  ConfusionCounts total;
  for (const auto& [post, ref] : pairs) {
    const SmoothResult smoothed = smooth_hypotheses(post, smoothing);
    const ConfusionCounts c = score_epochs(ref, smoothed.track);
    total.tp += c.tp;
    total.tn += c.tn;
    total.fp += c.fp;
    total.fn += c.fn;
    total.fp_runs += c.fp_runs;
    total.total_duration_s += c.total_duration_s;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  require_out(opt);
  ensure_dir(opt.out_dir);
  std::vector<std::string> names;
  double total_s = 0.0;
  double seiz_s = 0.0;
  for (std::size_t i = 0; i < cfg.synth_records; ++i) {
    auto [rec, ann] = synthesize_record(cfg.synth, cfg.seed + i);
    const std::string stem = strf("rec_%03zu", i);
    save_record(rec, opt.out_dir + "/" + stem + ".ndeg");
    save_annotations(ann, opt.out_dir + "/" + stem + ".ann");
    names.push_back(stem + ".ndeg");
    names.push_back(stem + ".ann");
    total_s += rec.duration_s();
    seiz_s += ann.seizure_seconds();
    std::fprintf(stderr, "[synth] %s: %.1f s, %.1f s seizure\n", stem.c_str(), rec.duration_s(),
                 ann.seizure_seconds());
  }
  write_config_copy(cfg, opt.out_dir, names);
  write_manifest(opt.out_dir, names);
  const double frac = total_s > 0.0 ? seiz_s / total_s : 0.0;
  std::printf("synth: %zu records, %.1f s total, %.1f%% seizure -> %s\n", cfg.synth_records,
              total_s, 100.0 * frac, opt.out_dir.c_str());
  return 0;
}

int cmd_features(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  require_out(opt);
  ensure_dir(opt.out_dir);
  const std::vector<std::string> records = expand_records(opt.inputs);
  std::vector<std::string> names(records.size());
  parallel_for(records.size(), opt.jobs, [&](std::size_t i) {
    const EegRecord rec = load_record(records[i]);
    const FeatureSequence feats = extract_features(rec, cfg.system.features);
    const std::string name = stem_of(records[i]) + ".ndft";
    save_features(feats, opt.out_dir + "/" + name);
    names[i] = name;
    std::fprintf(stderr, "[features] %s: %zu frames x %zu ch x %zu\n", name.c_str(),
                 feats.frames(), feats.channels(), feats.dim());
  });
  write_config_copy(cfg, opt.out_dir, names);
  write_manifest(opt.out_dir, names);
  std::printf("features: %zu records -> %s\n", records.size(), opt.out_dir.c_str());
  return 0;
}

int cmd_train(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  require_out(opt);
  const std::vector<std::string> records = expand_records(opt.inputs);
  const Corpus corpus = load_corpus(records);
  SystemArtifact art = train_system(cfg.system, corpus);
  save_system(art, opt.out_dir);
  std::vector<std::string> extra;
  write_config_copy(cfg, opt.out_dir, extra);
  extend_manifest(opt.out_dir, extra);
  const double final_loss = art.stats.loss_trace.empty() ? 0.0 : art.stats.loss_trace.back();
  std::printf("train %s: %zu records, %zu samples, final loss %.6g -> %s\n",
              to_string(cfg.system.kind), records.size(), art.stats.train_samples, final_loss,
              opt.out_dir.c_str());
  return 0;
}

int cmd_infer(const CliOptions& opt) {
  if (opt.model_dir.empty()) throw ConfigError("--model is required");
  require_out(opt);
  ensure_dir(opt.out_dir);
  const std::vector<std::string> records = expand_records(opt.inputs);
  std::vector<std::string> names(records.size());
  // Each worker keeps a private artifact: network forward passes mutate layer
  // caches, so a shared instance is not thread-safe.
  std::atomic<std::size_t> next{0};
  auto run_worker = [&] {
    SystemArtifact art = load_system(opt.model_dir);
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      const EegRecord rec = load_record(records[i]);
      const PosteriorTrack post = infer_system(art, rec);
      const std::string name = stem_of(records[i]) + "_post.csv";
      save_posteriors(post, opt.out_dir + "/" + name);
      names[i] = name;
      std::fprintf(stderr, "[infer] %s: %zu epochs\n", name.c_str(), post.size());
    }
  };
  if (opt.jobs <= 1 || records.size() <= 1) {
    run_worker();
  } else {
    std::vector<std::thread> pool;
    std::mutex err_mutex;
    std::exception_ptr first_error;
    const std::size_t count = std::min(opt.jobs, records.size());
    for (std::size_t t = 0; t < count; ++t) {
      pool.emplace_back([&] {
        try {
          run_worker();
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          next.store(records.size());
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  std::ifstream cfg_is(opt.model_dir + "/config.txt");
  if (!cfg_is) throw DataError("cannot read " + opt.model_dir + "/config.txt");
  const SystemConfig sys = read_system_config(cfg_is);
  write_manifest(opt.out_dir, names);
  std::printf("infer %s: %zu records -> %s\n", to_string(sys.kind), records.size(),
              opt.out_dir.c_str());
  return 0;
}

int cmd_score(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  require_out(opt);
  ensure_dir(opt.out_dir);
  const auto paths = pair_inputs(opt.inputs);
  std::vector<std::pair<PosteriorTrack, EpochLabelTrack>> pairs;
  for (const auto& [post_path, ann_path] : paths) {
    PosteriorTrack post = load_posteriors(post_path);
    EpochLabelTrack ref = reference_track(ann_path, post.size());
    pairs.emplace_back(std::move(post), std::move(ref));
  }
  const ConfusionCounts counts = accumulate_counts(pairs, cfg.smoothing);
  const Metrics m = metrics(counts, cfg.fa_mode);
  const std::string label = opt.name.empty() ? to_string(cfg.system.kind) : opt.name;
  const std::string csv_path = opt.out_dir + "/metrics.csv";
  write_metrics_csv({{label, m}}, csv_path);
  std::vector<std::string> names{"metrics.csv"};
  write_config_copy(cfg, opt.out_dir, names);
  write_manifest(opt.out_dir, names);
  std::printf("score %s: sensitivity %.4f specificity %.4f fa/24h %.2f -> %s\n", label.c_str(),
              m.sensitivity, m.specificity, m.fa_per_24h, csv_path.c_str());
  return 0;
}

int cmd_det(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  require_out(opt);
  ensure_dir(opt.out_dir);
  const auto paths = pair_inputs(opt.inputs);
  std::vector<std::pair<PosteriorTrack, EpochLabelTrack>> pairs;
  for (const auto& [post_path, ann_path] : paths) {
    PosteriorTrack post = load_posteriors(post_path);
    EpochLabelTrack ref = reference_track(ann_path, post.size());
    pairs.emplace_back(std::move(post), std::move(ref));
  }
  const std::vector<double> thresholds = uniform_thresholds(cfg.det_points);
  DetCurve curve;
  curve.points.reserve(thresholds.size());
  for (const double t : thresholds) {
    SmoothingParams sp = cfg.smoothing;
    sp.threshold = t;
    const ConfusionCounts counts = accumulate_counts(pairs, sp);
    const Metrics m = metrics(counts, cfg.fa_mode);
    DetPoint p;
    p.threshold = t;
    p.sensitivity = m.sensitivity;
    p.specificity = m.specificity;
    p.fa_per_24h = m.fa_per_24h;
    p.false_positive_rate = 1.0 - m.specificity;
    p.miss_rate = 1.0 - m.sensitivity;
    curve.points.push_back(p);
  }
  const std::string csv_path = opt.out_dir + "/det.csv";
  write_det_csv(curve, csv_path);
  std::vector<std::string> names{"det.csv"};
  write_config_copy(cfg, opt.out_dir, names);
  write_manifest(opt.out_dir, names);
  std::printf("det: %zu points over %zu records -> %s\n", curve.points.size(), pairs.size(),
              csv_path.c_str());
  return 0;
}

// One train+eval cycle used per ablation variant.
Metrics evaluate_variant(const SystemConfig& sys, const Corpus& train, const Corpus& eval,
                         const SmoothingParams& smoothing, FaMode mode) {
  SystemArtifact art = train_system(sys, train);
  std::vector<std::pair<PosteriorTrack, EpochLabelTrack>> pairs;
  pairs.reserve(eval.size());
  for (const auto& [rec, ann] : eval) {
    PosteriorTrack post = infer_system(art, rec);
    EpochLabelTrack ref = annotations_to_epoch_labels(ann);
    ref.labels.resize(post.size(), EventLabel::Bckg);
    pairs.emplace_back(std::move(post), std::move(ref));
  }
  return metrics(accumulate_counts(pairs, smoothing), mode);
}

int cmd_ablate(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  require_out(opt);
  ensure_dir(opt.out_dir);
  if (opt.axis != "optimizer" && opt.axis != "activation")
    throw ConfigError("--axis must be optimizer or activation");
  if (cfg.system.kind == SystemKind::HmmOnly)
    throw ConfigError("ablation requires a neural system (decoder-only has no such axis)");
  if (opt.inputs.size() != 2)
    throw ConfigError("expected two positional arguments: TRAIN_DIR EVAL_DIR");
  const Corpus train = load_corpus(expand_records({opt.inputs[0]}));
  const Corpus eval = load_corpus(expand_records({opt.inputs[1]}));

  std::vector<std::pair<std::string, Metrics>> rows;
  if (opt.axis == "optimizer") {
    static const OptimizerKind kOrder[] = {
        OptimizerKind::Sgd,     OptimizerKind::Rmsprop, OptimizerKind::Adagrad,
        OptimizerKind::Adadelta, OptimizerKind::Adam,   OptimizerKind::Adamax,
        OptimizerKind::Nadam};
    for (const OptimizerKind kind : kOrder) {
      SystemConfig sys = cfg.system;
      sys.optimizer.kind = kind;
      sys.optimizer.lr = -1.0;   // per-kind default step size
      sys.optimizer.rho = -1.0;  // per-kind default smoothing factor
      std::fprintf(stderr, "[ablate] optimizer %s\n", to_string(kind));
      rows.emplace_back(to_string(kind), evaluate_variant(sys, train, eval, cfg.smoothing,
                                                          cfg.fa_mode));
    }
  } else {
    static const ActivationKind kOrder[] = {ActivationKind::Linear,   ActivationKind::Tanh,
                                            ActivationKind::Sigmoid,  ActivationKind::Softsign,
                                            ActivationKind::Relu,     ActivationKind::Elu};
    for (const ActivationKind kind : kOrder) {
      SystemConfig sys = cfg.system;
      sys.activation = kind;
      std::fprintf(stderr, "[ablate] activation %s\n", to_string(kind));
      rows.emplace_back(to_string(kind), evaluate_variant(sys, train, eval, cfg.smoothing,
                                                          cfg.fa_mode));
    }
  }
  const std::string csv_name = "ablate_" + opt.axis + ".csv";
  const std::string csv_path = opt.out_dir + "/" + csv_name;
  {
    std::ofstream os(csv_path, std::ios::binary);
    if (!os) throw DataError("cannot write " + csv_path);
    os << "variant,sensitivity,specificity,fa_per_24h\n";
    for (const auto& [label, m] : rows)
      os << strf("%s,%.17g,%.17g,%.17g\n", label.c_str(), m.sensitivity, m.specificity,
                 m.fa_per_24h);
    if (!os) throw DataError("short write to " + csv_path);
  }
  std::vector<std::string> names{csv_name};
  write_config_copy(cfg, opt.out_dir, names);
  write_manifest(opt.out_dir, names);
  std::printf("ablate %s %s: %zu variants -> %s\n", opt.axis.c_str(), to_string(cfg.system.kind),
              rows.size(), csv_path.c_str());
  return 0;
}

int cmd_describe(const CliOptions& opt) {
  ExperimentConfig cfg = load_config(opt);
  const PipelineDesc pipeline = build_system(cfg.system);
  std::fputs(describe(pipeline).c_str(), stdout);
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CliOptions opt;
  CLI::App app{"Sequential EEG seizure-event detection experiments"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* cmd, bool with_out) {
    cmd->add_option("--config", opt.config_path, "experiment config file");
    cmd->add_option("--seed", opt.seed, "override the experiment seed")
        ->each([&](const std::string&) { opt.seed_set = true; });
    cmd->add_option("--system", opt.system_kind, "override the system kind")
        ->check(CLI::IsMember({"hmm", "hmm_sda", "hmm_lstm", "ipca_lstm", "cnn_mlp", "cnn_lstm"}));
    cmd->add_option("--fa-mode", opt.fa_mode, "false-alarm counting mode")
        ->check(CLI::IsMember({"event", "epoch"}));
    if (with_out) cmd->add_option("--out", opt.out_dir, "output directory");
    return cmd;
  };

  int (*selected)(const CliOptions&) = nullptr;
  auto bind = [&](CLI::App* cmd, int (*fn)(const CliOptions&)) {
    cmd->callback([&selected, fn] { selected = fn; });
  };

  CLI::App* synth = add_common(app.add_subcommand("synth", "synthesize a labeled corpus"), true);
  bind(synth, &cmd_synth);

  CLI::App* features =
      add_common(app.add_subcommand("features", "extract cepstral features from records"), true);
  features->add_option("--jobs", opt.jobs, "worker threads over records");
  features->add_option("records", opt.inputs, "record files or directories")->required();
  bind(features, &cmd_features);

  CLI::App* train = add_common(app.add_subcommand("train", "train a detection system"), true);
  train->add_option("records", opt.inputs, "record files or directories (annotations alongside)")
      ->required();
  bind(train, &cmd_train);

  CLI::App* infer =
      add_common(app.add_subcommand("infer", "emit per-epoch seizure posteriors"), true);
  infer->add_option("--model", opt.model_dir, "trained system directory")->required();
  infer->add_option("--jobs", opt.jobs, "worker threads over records");
  infer->add_option("records", opt.inputs, "record files or directories")->required();
  bind(infer, &cmd_infer);

  CLI::App* score =
      add_common(app.add_subcommand("score", "score posteriors against annotations"), true);
  score->add_option("--name", opt.name, "row label for the metrics table");
  score->add_option("pairs", opt.inputs, "alternating POSTERIOR.csv ANNOTATION.ann")->required();
  bind(score, &cmd_score);

  CLI::App* det = add_common(app.add_subcommand("det", "sweep the decision threshold"), true);
  det->add_option("pairs", opt.inputs, "alternating POSTERIOR.csv ANNOTATION.ann")->required();
  bind(det, &cmd_det);

  CLI::App* ablate = add_common(
      app.add_subcommand("ablate", "train/eval the same system across one hyperparameter axis"),
      true);
  ablate->add_option("--axis", opt.axis, "optimizer or activation")->required();
  ablate->add_option("dirs", opt.inputs, "TRAIN_DIR EVAL_DIR")->required();
  bind(ablate, &cmd_ablate);

  CLI::App* describe_cmd =
      add_common(app.add_subcommand("describe", "print the system's stage table"), false);
  bind(describe_cmd, &cmd_describe);

  try {
    app.parse(argc, argv);
    if (!selected) throw ConfigError("no command selected");
    return selected(opt);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.error_class().c_str(), e.what());
    const std::string cls = e.error_class();
    if (cls == "config") return 2;
    if (cls == "data") return 3;
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 4;
  }
}

}  // namespace ndet
