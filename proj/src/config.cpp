#include "ndet/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "ndet/common.hpp"

namespace ndet {

namespace {

struct RawEntry {
  std::string section;
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<RawEntry> tokenize(std::istream& is, const std::string& src) {
  std::vector<RawEntry> entries;
  std::set<std::pair<std::string, std::string>> seen;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError(strf("%s line %zu: malformed section header '%s'", src.c_str(),
                               lineno, t.c_str()));
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(strf("%s line %zu: expected 'key = value', got '%s'", src.c_str(),
                             lineno, t.c_str()));
    }
    RawEntry e;
    e.section = section;
    e.key = trim(t.substr(0, eq));
    e.value = trim(t.substr(eq + 1));
    e.line = lineno;
    if (e.section.empty()) {
      throw ConfigError(strf("%s line %zu: key '%s' before any [section]", src.c_str(),
                             lineno, e.key.c_str()));
    }
    if (e.key.empty()) {
      throw ConfigError(strf("%s line %zu: empty key", src.c_str(), lineno));
    }
    if (!seen.insert({e.section, e.key}).second) {
      throw ConfigError(strf("%s line %zu: duplicate key [%s] %s", src.c_str(), lineno,
                             e.section.c_str(), e.key.c_str()));
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

[[noreturn]] void bad_value(const std::string& src, const RawEntry& e, const char* want) {
  throw ConfigError(strf("%s line %zu: [%s] %s: expected %s, got '%s'", src.c_str(), e.line,
                         e.section.c_str(), e.key.c_str(), want, e.value.c_str()));
}

double as_double(const std::string& src, const RawEntry& e) {
  char* end = nullptr;
  const double v = std::strtod(e.value.c_str(), &end);
  if (end == e.value.c_str() || *end != '\0') bad_value(src, e, "a number");
  return v;
}

std::uint64_t as_u64(const std::string& src, const RawEntry& e) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (ec != std::errc() || p != e.value.data() + e.value.size()) {
    bad_value(src, e, "a non-negative integer");
  }
  return v;
}

std::size_t as_size(const std::string& src, const RawEntry& e) {
  return static_cast<std::size_t>(as_u64(src, e));
}

int as_int(const std::string& src, const RawEntry& e) {
  int v = 0;
  const auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (ec != std::errc() || p != e.value.data() + e.value.size()) {
    bad_value(src, e, "an integer");
  }
  return v;
}

std::uint32_t as_u32(const std::string& src, const RawEntry& e) {
  const std::uint64_t v = as_u64(src, e);
  if (v > 0xffffffffull) bad_value(src, e, "a 32-bit integer");
  return static_cast<std::uint32_t>(v);
}

bool as_bool(const std::string& src, const RawEntry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  bad_value(src, e, "true or false");
}

std::vector<std::size_t> as_size_list(const std::string& src, const RawEntry& e) {
  std::vector<std::size_t> out;
  std::stringstream ss(e.value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) bad_value(src, e, "a comma-separated integer list");
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      bad_value(src, e, "a comma-separated integer list");
    }
    out.push_back(v);
  }
  if (out.empty()) bad_value(src, e, "a comma-separated integer list");
  return out;
}

// Shortest decimal form that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

// Returns true when the entry belongs to one of the system sections.
bool apply_system_entry(SystemConfig& sys, const std::string& src, const RawEntry& e,
                        bool skip_kind) {
  const std::string& s = e.section;
  const std::string& k = e.key;
  if (s == "features") {
    FeatureConfig& f = sys.features;
    if (k == "frame_s") f.frame_s = as_double(src, e);
    else if (k == "window_s") f.window_s = as_double(src, e);
    else if (k == "num_filters") f.num_filters = as_size(src, e);
    else if (k == "base_dim") f.base_dim = as_size(src, e);
    else if (k == "total_dim") f.total_dim = as_size(src, e);
    else if (k == "preemphasis") f.preemphasis = as_double(src, e);
    else if (k == "energy_floor") f.energy_floor = as_double(src, e);
    else if (k == "delta_halfwidth") f.delta_halfwidth = as_size(src, e);
    else return false;
    return true;
  }
  if (s == "hmm") {
    TrainOptions& h = sys.hmm;
    if (k == "num_states") h.num_states = as_size(src, e);
    else if (k == "num_components") h.num_components = as_size(src, e);
    else if (k == "iterations") h.iterations = as_size(src, e);
    else if (k == "variance_floor_factor") h.variance_floor_factor = as_double(src, e);
    else if (k == "kmeans_iterations") h.kmeans_iterations = as_size(src, e);
    else if (k == "self_loop_init") h.self_loop_init = as_double(src, e);
    else return false;
    return true;
  }
  if (s == "sda") {
    SdaConfig& a = sys.sda;
    if (k == "hidden_sizes") a.hidden_sizes = as_size_list(src, e);
    else if (k == "corruption") a.corruption = as_double(src, e);
    else if (k == "pretrain_lr") a.pretrain_lr = as_double(src, e);
    else if (k == "pretrain_epochs") a.pretrain_epochs = as_size(src, e);
    else if (k == "pretrain_batch") a.pretrain_batch = as_size(src, e);
    else if (k == "finetune_lr") a.finetune_lr = as_double(src, e);
    else if (k == "finetune_epochs") a.finetune_epochs = as_size(src, e);
    else if (k == "finetune_batch") a.finetune_batch = as_size(src, e);
    else return false;
    return true;
  }
  if (s == "optimizer") {
    OptimizerConfig& o = sys.optimizer;
    try {
      if (k == "kind") o.kind = optimizer_from_string(e.value);
      else if (k == "lr") o.lr = as_double(src, e);
      else if (k == "decay") o.decay = as_double(src, e);
      else if (k == "beta1") o.beta1 = as_double(src, e);
      else if (k == "beta2") o.beta2 = as_double(src, e);
      else if (k == "epsilon") o.eps = as_double(src, e);
      else if (k == "rho") o.rho = as_double(src, e);
      else return false;
    } catch (const ConfigError& err) {
      throw ConfigError(strf("%s line %zu: %s", src.c_str(), e.line, err.what()));
    }
    return true;
  }
  if (s == "system") {
    try {
      if (k == "kind") {
        if (!skip_kind) sys.kind = system_kind_from_string(e.value);
      } else if (k == "channels") sys.channels = as_size(src, e);
      else if (k == "supervector_window") sys.supervector_window = as_size(src, e);
      else if (k == "context_epochs") sys.context_epochs = as_size(src, e);
      else if (k == "frame_stack_epochs") sys.frame_stack_epochs = as_size(src, e);
      else if (k == "pca_dim") sys.pca_dim = as_size(src, e);
      else if (k == "ipca_dim") sys.ipca_dim = as_size(src, e);
      else if (k == "ipca_batch") sys.ipca_batch = as_size(src, e);
      else if (k == "ipca_sequence") sys.ipca_sequence = as_size(src, e);
      else if (k == "lstm_hidden") sys.lstm_hidden = as_size(src, e);
      else if (k == "ipca_lstm_hidden") sys.ipca_lstm_hidden = as_size(src, e);
      else if (k == "bilstm_hidden1") sys.bilstm_hidden1 = as_size(src, e);
      else if (k == "bilstm_hidden2") sys.bilstm_hidden2 = as_size(src, e);
      else if (k == "conv1d_filters") sys.conv1d_filters = as_size(src, e);
      else if (k == "conv1d_kernel") sys.conv1d_kernel = as_size(src, e);
      else if (k == "pool1d") sys.pool1d = as_size(src, e);
      else if (k == "hmm_temperature") sys.hmm_temperature = as_double(src, e);
      else if (k == "activation") sys.activation = activation_from_string(e.value);
      else if (k == "loss") sys.loss = loss_from_string(e.value);
      else if (k == "dropout_dense") sys.dropout_dense = as_double(src, e);
      else if (k == "dropout_conv") sys.dropout_conv = as_double(src, e);
      else if (k == "noise_std") sys.noise_std = as_double(src, e);
      else if (k == "balance_ratio") sys.balance_ratio = as_double(src, e);
      else if (k == "max_per_class") sys.max_per_class = as_size(src, e);
      else if (k == "net_epochs") sys.net_epochs = as_size(src, e);
      else if (k == "net_batch") sys.net_batch = as_size(src, e);
      else if (k == "clip_norm") sys.clip_norm = as_double(src, e);
      else if (k == "seed") sys.seed = as_u64(src, e);
      else if (k == "log_progress") sys.log_progress = as_bool(src, e);
      else return false;
    } catch (const ConfigError& err) {
      if (std::string(err.what()).rfind(src, 0) == 0) throw;
      throw ConfigError(strf("%s line %zu: %s", src.c_str(), e.line, err.what()));
    }
    return true;
  }
  return false;
}

bool apply_experiment_entry(ExperimentConfig& cfg, const std::string& src,
                            const RawEntry& e, bool skip_kind) {
  if (apply_system_entry(cfg.system, src, e, skip_kind)) return true;
  const std::string& s = e.section;
  const std::string& k = e.key;
  if (s == "experiment") {
    try {
      if (k == "seed") {
        cfg.seed = as_u64(src, e);
        cfg.system.seed = cfg.seed;
      } else if (k == "fa_mode") cfg.fa_mode = fa_mode_from_string(e.value);
      else if (k == "det_points") cfg.det_points = as_size(src, e);
      else return false;
    } catch (const ConfigError& err) {
      if (std::string(err.what()).rfind(src, 0) == 0) throw;
      throw ConfigError(strf("%s line %zu: %s", src.c_str(), e.line, err.what()));
    }
    return true;
  }
  if (s == "synth") {
    SynthConfig& y = cfg.synth;
    if (k == "records") cfg.synth_records = as_size(src, e);
    else if (k == "duration_s") y.duration_s = as_double(src, e);
    else if (k == "channels") y.channels = as_u32(src, e);
    else if (k == "sample_rate_hz") y.sample_rate_hz = as_u32(src, e);
    else if (k == "seizure_count") y.seizure_count = as_int(src, e);
    else if (k == "seizure_fraction") y.seizure_fraction = as_double(src, e);
    else if (k == "seizure_min_s") y.seizure_min_s = as_double(src, e);
    else if (k == "seizure_max_s") y.seizure_max_s = as_double(src, e);
    else if (k == "artifact_rate_per_min") y.artifact_rate_per_min = as_double(src, e);
    else if (k == "artifact_min_s") y.artifact_min_s = as_double(src, e);
    else if (k == "artifact_max_s") y.artifact_max_s = as_double(src, e);
    else if (k == "background_rms_uv") y.background_rms_uv = as_double(src, e);
    else if (k == "seizure_snr_db") y.seizure_snr_db = as_double(src, e);
    else if (k == "artifact_snr_db") y.artifact_snr_db = as_double(src, e);
    else if (k == "seizure_channel_fraction")
      y.seizure_channel_fraction = as_double(src, e);
    else if (k == "artifact_rhythmic_fraction")
      y.artifact_rhythmic_fraction = as_double(src, e);
    else if (k == "edge_margin_s") y.edge_margin_s = as_double(src, e);
    else if (k == "event_gap_s") y.event_gap_s = as_double(src, e);
    else return false;
    return true;
  }
  if (s == "smoothing") {
    SmoothingParams& p = cfg.smoothing;
    if (k == "threshold") p.threshold = as_double(src, e);
    else if (k == "min_event_s") p.min_event_s = as_double(src, e);
    else if (k == "merge_gap_s") p.merge_gap_s = as_double(src, e);
    else if (k == "prior_weight") p.prior_weight = as_double(src, e);
    else return false;
    return true;
  }
  return false;
}

SystemKind resolve_kind(const std::vector<RawEntry>& entries, const std::string& src,
                        const std::string* kind_override) {
  if (kind_override) return system_kind_from_string(*kind_override);
  for (const RawEntry& e : entries) {
    if (e.section == "system" && e.key == "kind") {
      try {
        return system_kind_from_string(e.value);
      } catch (const ConfigError& err) {
        throw ConfigError(strf("%s line %zu: %s", src.c_str(), e.line,
                               err.what()));
      }
    }
  }
  return SystemKind::HmmOnly;
}

}  // namespace

ExperimentConfig parse_experiment_config(std::istream& is, const std::string& source_name,
                                         const std::string* kind_override) {
  const std::vector<RawEntry> entries = tokenize(is, source_name);
  ExperimentConfig cfg;
  cfg.system = SystemConfig::defaults_for(resolve_kind(entries, source_name, kind_override));
  // The experiment seed is the master: apply it first so a [system] seed key
  // can still override it regardless of file order.
  for (const RawEntry& e : entries) {
    if (e.section == "experiment" && e.key == "seed") {
      apply_experiment_entry(cfg, source_name, e, kind_override != nullptr);
    }
  }
  for (const RawEntry& e : entries) {
    if (e.section == "experiment" && e.key == "seed") continue;
    if (!apply_experiment_entry(cfg, source_name, e, kind_override != nullptr)) {
      throw ConfigError(strf("%s line %zu: unknown key [%s] %s", source_name.c_str(),
                             e.line, e.section.c_str(), e.key.c_str()));
    }
  }
  cfg.smoothing.validate();
  if (cfg.det_points < 2) {
    throw ConfigError(strf("%s: det_points must be at least 2", source_name.c_str()));
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::string* kind_override) {
  std::ifstream is(path);
  if (!is) throw ConfigError(strf("cannot open config file %s", path.c_str()));
  return parse_experiment_config(is, path, kind_override);
}

namespace {

void write_system_sections(std::ostream& os, const SystemConfig& sys) {
  os << "[system]\n";
  os << "kind = " << to_string(sys.kind) << '\n';
  os << "seed = " << fmt(sys.seed) << '\n';
  os << "channels = " << fmt(sys.channels) << '\n';
  os << "supervector_window = " << fmt(sys.supervector_window) << '\n';
  os << "context_epochs = " << fmt(sys.context_epochs) << '\n';
  os << "frame_stack_epochs = " << fmt(sys.frame_stack_epochs) << '\n';
  os << "pca_dim = " << fmt(sys.pca_dim) << '\n';
  os << "ipca_dim = " << fmt(sys.ipca_dim) << '\n';
  os << "ipca_batch = " << fmt(sys.ipca_batch) << '\n';
  os << "ipca_sequence = " << fmt(sys.ipca_sequence) << '\n';
  os << "lstm_hidden = " << fmt(sys.lstm_hidden) << '\n';
  os << "ipca_lstm_hidden = " << fmt(sys.ipca_lstm_hidden) << '\n';
  os << "bilstm_hidden1 = " << fmt(sys.bilstm_hidden1) << '\n';
  os << "bilstm_hidden2 = " << fmt(sys.bilstm_hidden2) << '\n';
  os << "conv1d_filters = " << fmt(sys.conv1d_filters) << '\n';
  os << "conv1d_kernel = " << fmt(sys.conv1d_kernel) << '\n';
  os << "pool1d = " << fmt(sys.pool1d) << '\n';
  os << "hmm_temperature = " << fmt(sys.hmm_temperature) << '\n';
  os << "activation = " << to_string(sys.activation) << '\n';
  os << "loss = " << to_string(sys.loss) << '\n';
  os << "dropout_dense = " << fmt(sys.dropout_dense) << '\n';
  os << "dropout_conv = " << fmt(sys.dropout_conv) << '\n';
  os << "noise_std = " << fmt(sys.noise_std) << '\n';
  os << "balance_ratio = " << fmt(sys.balance_ratio) << '\n';
  os << "max_per_class = " << fmt(sys.max_per_class) << '\n';
  os << "net_epochs = " << fmt(sys.net_epochs) << '\n';
  os << "net_batch = " << fmt(sys.net_batch) << '\n';
  os << "clip_norm = " << fmt(sys.clip_norm) << '\n';
  os << "log_progress = " << fmt(sys.log_progress) << '\n';
  os << '\n';
  const FeatureConfig& f = sys.features;
  os << "[features]\n";
  os << "frame_s = " << fmt(f.frame_s) << '\n';
  os << "window_s = " << fmt(f.window_s) << '\n';
  os << "num_filters = " << fmt(f.num_filters) << '\n';
  os << "base_dim = " << fmt(f.base_dim) << '\n';
  os << "total_dim = " << fmt(f.total_dim) << '\n';
  os << "preemphasis = " << fmt(f.preemphasis) << '\n';
  os << "energy_floor = " << fmt(f.energy_floor) << '\n';
  os << "delta_halfwidth = " << fmt(f.delta_halfwidth) << '\n';
  os << '\n';
  const TrainOptions& h = sys.hmm;
  os << "[hmm]\n";
  os << "num_states = " << fmt(h.num_states) << '\n';
  os << "num_components = " << fmt(h.num_components) << '\n';
  os << "iterations = " << fmt(h.iterations) << '\n';
  os << "variance_floor_factor = " << fmt(h.variance_floor_factor) << '\n';
  os << "kmeans_iterations = " << fmt(h.kmeans_iterations) << '\n';
  os << "self_loop_init = " << fmt(h.self_loop_init) << '\n';
  os << '\n';
  const SdaConfig& a = sys.sda;
  os << "[sda]\n";
  os << "hidden_sizes = ";
  for (std::size_t i = 0; i < a.hidden_sizes.size(); ++i) {
    if (i > 0) os << ',';
    os << a.hidden_sizes[i];
  }
  os << '\n';
  os << "corruption = " << fmt(a.corruption) << '\n';
  os << "pretrain_lr = " << fmt(a.pretrain_lr) << '\n';
  os << "pretrain_epochs = " << fmt(a.pretrain_epochs) << '\n';
  os << "pretrain_batch = " << fmt(a.pretrain_batch) << '\n';
  os << "finetune_lr = " << fmt(a.finetune_lr) << '\n';
  os << "finetune_epochs = " << fmt(a.finetune_epochs) << '\n';
  os << "finetune_batch = " << fmt(a.finetune_batch) << '\n';
  os << '\n';
  const OptimizerConfig& o = sys.optimizer;
  os << "[optimizer]\n";
  os << "kind = " << to_string(o.kind) << '\n';
  os << "lr = " << fmt(o.lr) << '\n';
  os << "decay = " << fmt(o.decay) << '\n';
  os << "beta1 = " << fmt(o.beta1) << '\n';
  os << "beta2 = " << fmt(o.beta2) << '\n';
  os << "epsilon = " << fmt(o.eps) << '\n';
  os << "rho = " << fmt(o.rho) << '\n';
}

}  // namespace

void write_experiment_config(std::ostream& os, const ExperimentConfig& cfg) {
  os << "[experiment]\n";
  os << "seed = " << fmt(cfg.seed) << '\n';
  os << "fa_mode = " << to_string(cfg.fa_mode) << '\n';
  os << "det_points = " << fmt(cfg.det_points) << '\n';
  os << '\n';
  const SynthConfig& y = cfg.synth;
  os << "[synth]\n";
  os << "records = " << fmt(cfg.synth_records) << '\n';
  os << "duration_s = " << fmt(y.duration_s) << '\n';
  os << "channels = " << fmt(static_cast<std::uint64_t>(y.channels)) << '\n';
  os << "sample_rate_hz = " << fmt(static_cast<std::uint64_t>(y.sample_rate_hz)) << '\n';
  os << "seizure_count = " << fmt(y.seizure_count) << '\n';
  os << "seizure_fraction = " << fmt(y.seizure_fraction) << '\n';
  os << "seizure_min_s = " << fmt(y.seizure_min_s) << '\n';
  os << "seizure_max_s = " << fmt(y.seizure_max_s) << '\n';
  os << "artifact_rate_per_min = " << fmt(y.artifact_rate_per_min) << '\n';
  os << "artifact_min_s = " << fmt(y.artifact_min_s) << '\n';
  os << "artifact_max_s = " << fmt(y.artifact_max_s) << '\n';
  os << "background_rms_uv = " << fmt(y.background_rms_uv) << '\n';
  os << "seizure_snr_db = " << fmt(y.seizure_snr_db) << '\n';
  os << "artifact_snr_db = " << fmt(y.artifact_snr_db) << '\n';
  os << "seizure_channel_fraction = " << fmt(y.seizure_channel_fraction) << '\n';
  os << "artifact_rhythmic_fraction = " << fmt(y.artifact_rhythmic_fraction) << '\n';
  os << "edge_margin_s = " << fmt(y.edge_margin_s) << '\n';
  os << "event_gap_s = " << fmt(y.event_gap_s) << '\n';
  os << '\n';
  write_system_sections(os, cfg.system);
  os << '\n';
  const SmoothingParams& p = cfg.smoothing;
  os << "[smoothing]\n";
  os << "threshold = " << fmt(p.threshold) << '\n';
  os << "min_event_s = " << fmt(p.min_event_s) << '\n';
  os << "merge_gap_s = " << fmt(p.merge_gap_s) << '\n';
  os << "prior_weight = " << fmt(p.prior_weight) << '\n';
}

std::string experiment_config_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  write_experiment_config(os, cfg);
  return os.str();
}

void write_system_config(std::ostream& os, const SystemConfig& cfg) {
  write_system_sections(os, cfg);
}

SystemConfig read_system_config(std::istream& is) {
  const std::string src = "system config";
  const std::vector<RawEntry> entries = tokenize(is, src);
  SystemConfig sys = SystemConfig::defaults_for(resolve_kind(entries, src, nullptr));
  for (const RawEntry& e : entries) {
    if (!apply_system_entry(sys, src, e, false)) {
      throw ConfigError(strf("%s line %zu: unknown key [%s] %s", src.c_str(), e.line,
                             e.section.c_str(), e.key.c_str()));
    }
  }
  return sys;
}

}  // namespace ndet
