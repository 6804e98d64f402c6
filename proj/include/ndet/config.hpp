// Line-oriented experiment configuration: `[section]` headers over
// `key = value` pairs, unknown keys rejected, canonical serialization that
// round-trips bit-exactly.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ndet/architectures.hpp"
#include "ndet/scoring.hpp"
#include "ndet/signal.hpp"

namespace ndet {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  FaMode fa_mode = FaMode::Event;
  std::size_t det_points = 101;
  std::size_t synth_records = 2;
  SynthConfig synth;
  SystemConfig system;
  SmoothingParams smoothing;
};

// `kind_override`, when non-null, supersedes both the built-in default and
// any `[system] kind` entry before kind-dependent defaults are resolved.
// Throws ConfigError naming the source and line for unknown or malformed
// entries.
ExperimentConfig parse_experiment_config(std::istream& is, const std::string& source_name,
                                         const std::string* kind_override = nullptr);
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::string* kind_override = nullptr);

// Every key in a fixed order; parsing the output reproduces the input config.
void write_experiment_config(std::ostream& os, const ExperimentConfig& cfg);
std::string experiment_config_text(const ExperimentConfig& cfg);

// The system-only subset stored inside trained-system artifacts.
void write_system_config(std::ostream& os, const SystemConfig& cfg);
SystemConfig read_system_config(std::istream& is);

}  // namespace ndet
