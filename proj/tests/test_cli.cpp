// Drives the installed command-line binary end to end through synthetic
// corpora: happy paths, error exit codes, and byte-level reproducibility.
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "testutil.hpp"

using ndet_test::TempDir;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(NDET_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  CmdResult r;
  while (fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

void write_config(const std::string& path, const std::string& extra = "") {
  std::ofstream os(path);
  os << "[experiment]\n"
        "seed = 11\n"
        "[synth]\n"
        "records = 2\n"
        "duration_s = 90\n"
        "channels = 4\n"
        "seizure_fraction = 0.15\n"
        "[system]\n"
        "kind = hmm\n"
        "channels = 4\n"
        "[hmm]\n"
        "num_components = 2\n"
        "iterations = 3\n"
     << extra;
}

}  // namespace

TEST_CASE("full pipeline runs and reruns byte-identically") {
  TempDir tmp;
  const std::string cfg = tmp.file("exp.txt");
  write_config(cfg);

  auto stage_dirs = [&](const std::string& tag) {
    return std::vector<std::string>{tmp.file("corpus" + tag), tmp.file("model" + tag),
                                    tmp.file("post" + tag), tmp.file("scored" + tag),
                                    tmp.file("det" + tag)};
  };

  for (const std::string& tag : {"A", "B"}) {
    const auto dirs = stage_dirs(tag);
    CmdResult r = run_cli("synth --config " + cfg + " --out " + dirs[0]);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.rfind("synth: 2 records", 0) == 0);

    r = run_cli("train --config " + cfg + " --out " + dirs[1] + " " + dirs[0]);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.rfind("train hmm:", 0) == 0);

    r = run_cli("infer --model " + dirs[1] + " --out " + dirs[2] + " " + dirs[0]);
    REQUIRE(r.exit_code == 0);

    r = run_cli("score --config " + cfg + " --out " + dirs[3] + " " + dirs[2] +
                "/rec_000_post.csv " + dirs[0] + "/rec_000.ann " + dirs[2] +
                "/rec_001_post.csv " + dirs[0] + "/rec_001.ann");
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.rfind("score hmm:", 0) == 0);

    r = run_cli("det --config " + cfg + " --out " + dirs[4] + " " + dirs[2] +
                "/rec_000_post.csv " + dirs[0] + "/rec_000.ann");
    REQUIRE(r.exit_code == 0);
  }

  // Identical config + seed must reproduce every artifact byte for byte.
  const auto a = stage_dirs("A");
  const auto b = stage_dirs("B");
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(slurp(a[i] + "/manifest.txt") == slurp(b[i] + "/manifest.txt"));
  CHECK(slurp(a[2] + "/rec_000_post.csv") == slurp(b[2] + "/rec_000_post.csv"));
  CHECK(slurp(a[3] + "/metrics.csv") == slurp(b[3] + "/metrics.csv"));
  CHECK(slurp(a[4] + "/det.csv") == slurp(b[4] + "/det.csv"));

  // Output directories are self-describing.
  CHECK(file_exists(a[0] + "/experiment.txt"));
  CHECK(file_exists(a[1] + "/experiment.txt"));
  CHECK(file_exists(a[1] + "/config.txt"));
  const std::string det_csv = slurp(a[4] + "/det.csv");
  CHECK(det_csv.rfind("threshold,sensitivity,specificity,fa_per_24h,fpr,miss", 0) == 0);

  // A different seed actually changes the data.
  CmdResult r = run_cli("synth --config " + cfg + " --seed 12 --out " + tmp.file("corpusC"));
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(tmp.file("corpusC") + "/manifest.txt") != slurp(a[0] + "/manifest.txt"));
}

TEST_CASE("feature extraction writes one sequence file per record") {
  TempDir tmp;
  const std::string cfg = tmp.file("exp.txt");
  write_config(cfg);
  REQUIRE(run_cli("synth --config " + cfg + " --out " + tmp.file("corpus")).exit_code == 0);
  const CmdResult r =
      run_cli("features --config " + cfg + " --out " + tmp.file("feats") + " " +
              tmp.file("corpus"));
  REQUIRE(r.exit_code == 0);
  CHECK(file_exists(tmp.file("feats") + "/rec_000.ndft"));
  CHECK(file_exists(tmp.file("feats") + "/rec_001.ndft"));
  CHECK(file_exists(tmp.file("feats") + "/manifest.txt"));

  // Record-level threading must not change the outputs.
  const CmdResult r2 =
      run_cli("features --config " + cfg + " --jobs 2 --out " + tmp.file("feats2") + " " +
              tmp.file("corpus"));
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(tmp.file("feats") + "/manifest.txt") == slurp(tmp.file("feats2") + "/manifest.txt"));
}

TEST_CASE("describe prints the stage table for the configured system") {
  TempDir tmp;
  const std::string cfg = tmp.file("exp.txt");
  write_config(cfg);
  const CmdResult r = run_cli("describe --config " + cfg);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("epoch_scores") != std::string::npos);

  // Full-montage geometry for the image system (4 channels would collapse
  // under three halvings).
  std::ofstream(tmp.file("full.txt")) << "[system]\nkind = hmm\n";
  const CmdResult r2 = run_cli("describe --config " + tmp.file("full.txt") + " --system cnn_mlp");
  REQUIRE(r2.exit_code == 0);
  CHECK(r2.out.find("feature_image") != std::string::npos);
  CHECK(r2.out.find("dense 1024->512") != std::string::npos);
}

TEST_CASE("failures map to documented exit codes") {
  TempDir tmp;
  const std::string cfg = tmp.file("exp.txt");
  write_config(cfg);

  // 2: configuration problems.
  CHECK(run_cli("synth --config " + tmp.file("missing.txt") + " --out " + tmp.file("x"))
            .exit_code == 2);
  std::ofstream(tmp.file("bad.txt")) << "[system]\nbogus = 1\n";
  CHECK(run_cli("synth --config " + tmp.file("bad.txt") + " --out " + tmp.file("x")).exit_code ==
        2);
  CHECK(run_cli("definitely-not-a-command").exit_code == 2);
  CHECK(run_cli("ablate --config " + cfg + " --axis sauce --out " + tmp.file("x") + " a b")
            .exit_code == 2);

  // 3: missing or malformed data.
  CHECK(run_cli("train --config " + cfg + " --out " + tmp.file("m") + " " +
                tmp.file("nonexistent_dir"))
            .exit_code == 3);
  CHECK(run_cli("infer --model " + tmp.file("no_model") + " --out " + tmp.file("p") + " " +
                tmp.file("also_missing"))
            .exit_code == 3);
}

TEST_CASE("false-alarm mode flag switches the aggregation") {
  TempDir tmp;
  const std::string cfg = tmp.file("exp.txt");
  write_config(cfg);
  // Hand-built posterior/annotation pair with one 2-epoch false alarm.
  std::ofstream(tmp.file("p.csv")) << "epoch,p_seiz\n0,0\n1,0.9\n2,0.9\n3,0\n4,0\n5,0\n";
  std::ofstream(tmp.file("r.ann")) << "start_s,stop_s,label\n0.0000,6.0000,bckg\n";
  const std::string base = "score --config " + cfg + " --name x ";
  const std::string pair = " " + tmp.file("p.csv") + " " + tmp.file("r.ann");

  // Smoothing would delete the 2 s run at the default 3 s minimum; disable it.
  std::ofstream(tmp.file("exp2.txt")) << slurp(cfg) << "[smoothing]\nmin_event_s = 0\n";
  const std::string cfg2 = tmp.file("exp2.txt");
  const CmdResult ev = run_cli("score --config " + cfg2 + " --out " + tmp.file("se") + pair);
  REQUIRE(ev.exit_code == 0);
  const CmdResult ep = run_cli("score --config " + cfg2 + " --fa-mode epoch --out " +
                               tmp.file("sp") + pair);
  REQUIRE(ep.exit_code == 0);
  // One run of two FP epochs: 14400/day as an event, 28800/day as epochs.
  CHECK(slurp(tmp.file("se") + "/metrics.csv").find("14400") != std::string::npos);
  CHECK(slurp(tmp.file("sp") + "/metrics.csv").find("28800") != std::string::npos);
}
