#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "badpix/checkpoint.hpp"
#include "badpix/common.hpp"
#include "badpix/defects.hpp"
#include "badpix/image.hpp"

namespace badpix {

/// Flat key-value configuration with dotted section keys:
///   dataset.width = 128   # comment
/// One file fully determines a run.
class KvConfig {
 public:
  static KvConfig from_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected 'key = value'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string val = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": empty key");
      cfg.kv_[key] = val;
    }
    return cfg;
  }

  static KvConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& val) { kv_[key] = val; }

  std::string get(const std::string& key, const std::string& def = "") const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }

  int get_int(const std::string& key, int def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
      return std::stoi(it->second);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': not an integer: '" +
                        it->second + "'");
    }
  }

  double get_double(const std::string& key, double def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': not a number: '" +
                        it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': not a boolean: '" + v + "'");
  }

  std::vector<double> get_list_double(const std::string& key,
                                      std::vector<double> def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::vector<double> out;
    for (const auto& tok : split_commas(it->second)) {
      try {
        out.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad list entry '" + tok +
                          "'");
      }
    }
    return out;
  }

  std::vector<int> get_list_int(const std::string& key,
                                std::vector<int> def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::vector<int> out;
    for (const auto& tok : split_commas(it->second)) {
      try {
        out.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad list entry '" + tok +
                          "'");
      }
    }
    return out;
  }

  std::vector<std::uint64_t> get_list_u64(const std::string& key,
                                          std::vector<std::uint64_t> def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::vector<std::uint64_t> out;
    for (const auto& tok : split_commas(it->second)) {
      try {
        out.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad list entry '" + tok +
                          "'");
      }
    }
    return out;
  }

  /// Canonical sorted "key = value" text; std::map keeps keys ordered.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
    return out;
  }

  std::uint64_t digest() const { return fnv1a64(canonical()); }

 private:
  std::map<std::string, std::string> kv_;

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
  }
};

enum class StrategyChoice { auto_select, mlp, ae, nearest, linear, median };

inline StrategyChoice strategy_from_string(const std::string& s) {
  if (s == "auto") return StrategyChoice::auto_select;
  if (s == "mlp") return StrategyChoice::mlp;
  if (s == "ae") return StrategyChoice::ae;
  if (s == "nearest") return StrategyChoice::nearest;
  if (s == "linear") return StrategyChoice::linear;
  if (s == "median") return StrategyChoice::median;
  throw ConfigError("unknown strategy '" + s + "'");
}

inline const char* to_string(StrategyChoice s) {
  switch (s) {
    case StrategyChoice::auto_select: return "auto";
    case StrategyChoice::mlp: return "mlp";
    case StrategyChoice::ae: return "ae";
    case StrategyChoice::nearest: return "nearest";
    case StrategyChoice::linear: return "linear";
    case StrategyChoice::median: return "median";
  }
  return "?";
}

/// Full declarative description of an injection + train + eval run.
struct ExperimentConfig {
  // dataset
  std::string dataset_kind = "synthetic";  // synthetic | directory
  SceneKind scene = SceneKind::mixture;
  int width = 160;
  int height = 160;
  float flat_level = 0.5f;
  CfaPattern pattern = CfaPattern::rggb;
  int bit_depth = 16;
  std::string dataset_dir;
  int train_frames = 4;
  int test_frames = 2;

  // defects
  double rate = 0.01;
  double delta = 0.7;
  DefectKind defect_kind = DefectKind::deviation;

  // detector
  int det_depth = 3;
  int det_base_channels = 8;
  int det_tile = 32;
  int det_epochs = 12;
  double det_lr = 0.001;
  int det_batch = 16;
  std::string det_checkpoint;

  // corrector (MLP bank)
  int mlp_patch_size = 5;
  int mlp_hidden = 64;
  std::vector<int> mlp_neighbor_errors = {0, 2, 4};
  int mlp_epochs = 50;
  double mlp_lr = 0.01;
  int mlp_samples = 3000;
  int mlp_batch = 16;
  std::string mlp_bank_dir;

  // autoencoder
  int ae_input_size = 20;
  int ae_token_patch = 5;
  int ae_embed_dim = 16;
  int ae_encoder_layers = 2;
  int ae_decoder_layers = 2;
  int ae_heads = 2;
  int ae_mlp_ratio = 3;
  int ae_epochs = 40;
  double ae_lr = 0.01;
  int ae_warmup = 5;
  int ae_batch = 16;
  std::string ae_checkpoint;

  // pipeline
  int calibration_frames = 1;
  double detect_threshold = 0.5;
  double strategy_threshold = 0.40;
  bool train_stages = true;
  StrategyChoice strategy = StrategyChoice::auto_select;

  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs/out";
  int jobs = 1;

  // sweep
  std::vector<double> sweep_rates;
  std::vector<StrategyChoice> sweep_strategies = {StrategyChoice::mlp,
                                                  StrategyChoice::ae};

  KvConfig raw;

  static ExperimentConfig from(const KvConfig& kv) {
    ExperimentConfig c;
    c.raw = kv;
    c.dataset_kind = kv.get("dataset.kind", c.dataset_kind);
    if (c.dataset_kind != "synthetic" && c.dataset_kind != "directory")
      throw ConfigError("dataset.kind must be synthetic or directory");
    c.scene = scene_kind_from_string(kv.get("dataset.scene", "mixture"));
    c.width = kv.get_int("dataset.width", c.width);
    c.height = kv.get_int("dataset.height", c.height);
    c.flat_level = static_cast<float>(kv.get_double("dataset.level", 0.5));
    c.pattern = cfa_pattern_from_string(kv.get("dataset.pattern", "rggb"));
    c.bit_depth = kv.get_int("dataset.bit_depth", c.bit_depth);
    c.dataset_dir = kv.get("dataset.dir", "");
    c.train_frames = kv.get_int("dataset.train_frames", c.train_frames);
    c.test_frames = kv.get_int("dataset.test_frames", c.test_frames);

    c.rate = kv.get_double("defect.rate", c.rate);
    c.delta = kv.get_double("defect.delta", c.delta);
    c.defect_kind = defect_kind_from_string(kv.get("defect.kind", "deviation"));

    c.det_depth = kv.get_int("detector.depth", c.det_depth);
    c.det_base_channels = kv.get_int("detector.base_channels", c.det_base_channels);
    c.det_tile = kv.get_int("detector.tile", c.det_tile);
    c.det_epochs = kv.get_int("detector.epochs", c.det_epochs);
    c.det_lr = kv.get_double("detector.lr", c.det_lr);
    c.det_batch = kv.get_int("detector.batch", c.det_batch);
    c.det_checkpoint = kv.get("detector.checkpoint", "");

    c.mlp_patch_size = kv.get_int("corrector.patch_size", c.mlp_patch_size);
    c.mlp_hidden = kv.get_int("corrector.hidden", c.mlp_hidden);
    c.mlp_neighbor_errors =
        kv.get_list_int("corrector.neighbor_errors", c.mlp_neighbor_errors);
    c.mlp_epochs = kv.get_int("corrector.epochs", c.mlp_epochs);
    c.mlp_lr = kv.get_double("corrector.lr", c.mlp_lr);
    c.mlp_samples = kv.get_int("corrector.samples", c.mlp_samples);
    c.mlp_batch = kv.get_int("corrector.batch", c.mlp_batch);
    c.mlp_bank_dir = kv.get("corrector.bank_dir", "");

    c.ae_input_size = kv.get_int("ae.input_size", c.ae_input_size);
    c.ae_token_patch = kv.get_int("ae.token_patch", c.ae_token_patch);
    c.ae_embed_dim = kv.get_int("ae.embed_dim", c.ae_embed_dim);
    c.ae_encoder_layers = kv.get_int("ae.encoder_layers", c.ae_encoder_layers);
    c.ae_decoder_layers = kv.get_int("ae.decoder_layers", c.ae_decoder_layers);
    c.ae_heads = kv.get_int("ae.heads", c.ae_heads);
    c.ae_mlp_ratio = kv.get_int("ae.mlp_ratio", c.ae_mlp_ratio);
    c.ae_epochs = kv.get_int("ae.epochs", c.ae_epochs);
    c.ae_lr = kv.get_double("ae.lr", c.ae_lr);
    c.ae_warmup = kv.get_int("ae.warmup", c.ae_warmup);
    c.ae_batch = kv.get_int("ae.batch", c.ae_batch);
    c.ae_checkpoint = kv.get("ae.checkpoint", "");

    c.calibration_frames =
        kv.get_int("pipeline.calibration_frames", c.calibration_frames);
    c.detect_threshold =
        kv.get_double("pipeline.detect_threshold", c.detect_threshold);
    c.strategy_threshold =
        kv.get_double("pipeline.strategy_threshold", c.strategy_threshold);
    c.train_stages = kv.get_bool("pipeline.train", c.train_stages);
    c.strategy = strategy_from_string(kv.get("pipeline.strategy", "auto"));

    c.seeds = kv.get_list_u64("seeds", c.seeds);
    c.output_dir = kv.get("output.dir", c.output_dir);
    c.jobs = kv.get_int("jobs", c.jobs);

    c.sweep_rates = kv.get_list_double("sweep.rates", {});
    if (kv.has("sweep.strategies")) {
      c.sweep_strategies.clear();
      std::istringstream ss(kv.get("sweep.strategies"));
      std::string tok;
      while (std::getline(ss, tok, ','))
        c.sweep_strategies.push_back(strategy_from_string(
            tok.substr(tok.find_first_not_of(' '),
                       tok.find_last_not_of(' ') - tok.find_first_not_of(' ') + 1)));
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (strategy_threshold < 0.0 || strategy_threshold > 1.0)
      throw ConfigError("pipeline.strategy_threshold must be in [0,1]");
    if (detect_threshold < 0.0 || detect_threshold > 1.0)
      throw ConfigError("pipeline.detect_threshold must be in [0,1]");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (rate < 0.0 || rate > 1.0)
      throw ConfigError("defect.rate must be in [0,1]");
    if (delta <= 0.0 || delta > 1.0)
      throw ConfigError("defect.delta must be in (0,1]");
    if (train_frames < 1 || test_frames < 1)
      throw ConfigError("dataset.train_frames and test_frames must be >= 1");
    if (calibration_frames < 1)
      throw ConfigError("pipeline.calibration_frames must be >= 1");
    if (dataset_kind == "directory" && dataset_dir.empty())
      throw ConfigError("dataset.dir is required for directory datasets");
  }

  std::uint64_t digest() const { return raw.digest(); }
};

}  // namespace badpix
