#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ndet/config.hpp"
#include "testutil.hpp"

using namespace ndet;
using ndet_test::TempDir;

TEST_CASE("defaults parse from an empty document") {
  std::istringstream is("");
  const ExperimentConfig cfg = parse_experiment_config(is, "inline");
  CHECK(cfg.seed == 1);
  CHECK(cfg.system.kind == SystemKind::HmmOnly);
  CHECK(cfg.system.channels == 22);
  CHECK(cfg.det_points == 101);
  CHECK(cfg.smoothing.threshold == 0.5);
}

TEST_CASE("canonical serialization round-trips bit-exactly") {
  std::istringstream is(
      "[experiment]\n"
      "seed = 99\n"
      "fa_mode = epoch\n"
      "[synth]\n"
      "duration_s = 123.456789012345\n"
      "seizure_fraction = 0.0925\n"
      "[system]\n"
      "kind = cnn_lstm\n"
      "noise_std = 0.05\n"
      "[optimizer]\n"
      "lr = 0.00037\n"
      "[smoothing]\n"
      "threshold = 0.61\n");
  const ExperimentConfig cfg = parse_experiment_config(is, "inline");
  CHECK(cfg.seed == 99);
  CHECK(cfg.fa_mode == FaMode::Epoch);
  CHECK(cfg.system.kind == SystemKind::CnnLstm);
  CHECK(cfg.system.noise_std == 0.05);
  CHECK(cfg.system.optimizer.lr == 0.00037);
  CHECK(cfg.synth.duration_s == 123.456789012345);

  const std::string text = experiment_config_text(cfg);
  std::istringstream is2(text);
  const ExperimentConfig cfg2 = parse_experiment_config(is2, "inline");
  CHECK(experiment_config_text(cfg2) == text);
  CHECK(cfg2.synth.duration_s == cfg.synth.duration_s);
  CHECK(cfg2.system.optimizer.lr == cfg.system.optimizer.lr);
}

TEST_CASE("unknown keys and malformed lines are rejected with line numbers") {
  auto parse = [](const std::string& body) {
    std::istringstream is(body);
    return parse_experiment_config(is, "doc");
  };
  CHECK_THROWS_WITH_AS(parse("[system]\nnot_a_key = 3\n"),
                       doctest::Contains("doc line 2"), ConfigError);
  CHECK_THROWS_AS(parse("[nosuchsection]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("orphan = 1\n"), ConfigError);          // key before any section
  CHECK_THROWS_AS(parse("[system\nkind = hmm\n"), ConfigError); // unterminated header
  CHECK_THROWS_AS(parse("[system]\nkind hmm\n"), ConfigError);  // missing equals
  CHECK_THROWS_AS(parse("[system]\nkind = hmm\nkind = hmm\n"), ConfigError);  // duplicate
  CHECK_THROWS_AS(parse("[system]\nkind = resnet\n"), ConfigError);
  CHECK_THROWS_AS(parse("[system]\nchannels = -3\n"), ConfigError);
}

TEST_CASE("comments and blank lines are ignored") {
  std::istringstream is(
      "# leading comment\n"
      "\n"
      "[experiment]\n"
      "; alternative comment style\n"
      "seed = 5\n");
  CHECK(parse_experiment_config(is, "inline").seed == 5);
}

TEST_CASE("kind-dependent defaults resolve before other keys apply") {
  std::istringstream is(
      "[system]\n"
      "kind = cnn_lstm\n");
  const ExperimentConfig cfg = parse_experiment_config(is, "inline");
  // The frame-stack system defaults to elu activation and mse loss.
  CHECK(cfg.system.activation == ActivationKind::Elu);
  CHECK(cfg.system.loss == LossKind::Mse);

  std::istringstream is2("[system]\nkind = cnn_mlp\n");
  const ExperimentConfig cfg2 = parse_experiment_config(is2, "inline");
  CHECK(cfg2.system.activation == ActivationKind::Relu);
  CHECK(cfg2.system.loss == LossKind::CrossEntropy);
}

TEST_CASE("an explicit kind override beats the file entry") {
  std::istringstream is("[system]\nkind = hmm\n");
  const std::string override_kind = "ipca_lstm";
  const ExperimentConfig cfg = parse_experiment_config(is, "inline", &override_kind);
  CHECK(cfg.system.kind == SystemKind::IpcaLstm);
}

TEST_CASE("the experiment seed propagates into the system unless overridden") {
  std::istringstream a("[experiment]\nseed = 42\n");
  const ExperimentConfig ca = parse_experiment_config(a, "inline");
  CHECK(ca.seed == 42);
  CHECK(ca.system.seed == 42);

  std::istringstream b("[system]\nseed = 7\n[experiment]\nseed = 42\n");
  const ExperimentConfig cb = parse_experiment_config(b, "inline");
  CHECK(cb.seed == 42);
  CHECK(cb.system.seed == 7);
}

TEST_CASE("system-only documents round-trip through artifact storage") {
  SystemConfig sys = SystemConfig::defaults_for(SystemKind::HmmSda);
  sys.seed = 1234;
  sys.pca_dim = 18;
  sys.sda.hidden_sizes = {64, 32};
  std::ostringstream os;
  write_system_config(os, sys);
  std::istringstream is(os.str());
  const SystemConfig back = read_system_config(is);
  CHECK(back.kind == SystemKind::HmmSda);
  CHECK(back.seed == 1234);
  CHECK(back.pca_dim == 18);
  CHECK(back.sda.hidden_sizes == std::vector<std::size_t>{64, 32});

  // Experiment-level sections do not belong in an artifact document.
  std::istringstream bad("[smoothing]\nthreshold = 0.5\n");
  CHECK_THROWS_AS(read_system_config(bad), ConfigError);
}

TEST_CASE("config files load from disk with the path in error messages") {
  TempDir tmp;
  {
    std::ofstream os(tmp.file("e.txt"));
    os << "[experiment]\nseed = 3\n";
  }
  CHECK(load_experiment_config(tmp.file("e.txt")).seed == 3);
  CHECK_THROWS_AS(load_experiment_config(tmp.file("missing.txt")), ConfigError);
}
