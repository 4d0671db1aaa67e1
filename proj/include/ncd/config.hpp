#pragma once

// Flat key=value run configuration with typed validation.

#include <cstdint>
#include <string>
#include <vector>

#include "ncd/dataio.hpp"
#include "ncd/model.hpp"

namespace ncd {

enum class BranchConfig { kGlobalOnly, kLocalOnly, kGlobalGlobal, kLocalLocal, kGlobalLocal };
enum class LabelMode { kRsSoft, kRsHard, kCosineSoft, kCosineHard, kMixed };

std::string to_string(BranchConfig b);
std::string to_string(LabelMode m);
BranchConfig parse_branch_config(const std::string& s);
LabelMode parse_label_mode(const std::string& s);

struct TrainConfig {
  Index k_global = 5;
  Index k_local = 30;
  double tau = 0.07;
  Index bank_capacity_v = 2048;
  Index bank_capacity_bp = 2048;
  Index bank_capacity_bg = 2048;
  Index labeled_batch = 128;
  Index unlabeled_batch = 64;
  int epochs = 200;
  double lr = 0.1;
  double lr_decay_factor = 10.0;
  std::vector<int> lr_decay_epochs{170};
  double momentum = 0.9;
  double lambda = 50.0;
  double ramp_length = 150.0;
  bool ramp_per_step = false;
  bool use_bce = true;
  bool use_jsd = true;
  bool use_ce = true;
  bool use_mse = true;
  BranchConfig branch_config = BranchConfig::kGlobalLocal;
  LabelMode label_mode = LabelMode::kRsSoft;
  double cosine_threshold = 0.9;
  /// Local BCE starts once the part dictionary holds this many entries
  /// (0 = k_local).
  Index local_warmup_parts = 0;
  bool augment_flip = true;
  Index augment_translate = 4;
  double augment_noise = 0.02;

  int pretrain_epochs = 10;
  std::string pretrain_optimizer = "adam";  // adam | sgd (momentum)
  double pretrain_lr = 0.003;
  Index pretrain_batch = 128;

  bool operator==(const TrainConfig&) const = default;

  /// Learning rate in effect during `epoch` (1-based).
  double lr_at_epoch(int epoch) const;
  Index warmup_parts() const { return local_warmup_parts > 0 ? local_warmup_parts : k_local; }
};

struct RunConfig {
  SynthConfig synth;
  std::vector<int> labeled_classes{0, 1, 2, 3, 4};
  bool open_world = false;
  double open_world_labeled_fraction = 0.5;
  std::vector<Index> extractor_channels{16, 32, 64};
  std::vector<Index> extractor_strides{2, 2, 1};
  Index proj_dim = 128;
  Index proj_kernel = 3;
  TrainConfig train;
  std::uint64_t seed = 0;

  bool operator==(const RunConfig& o) const;

  /// Model shape for a split with the given class counts.
  ModelConfig model_config(Index num_labeled, Index num_unlabeled) const;

  /// Every violated field, one per entry; empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;
};

bool operator==(const SynthConfig& a, const SynthConfig& b);

/// Parses "key = value" lines ('#' starts a comment). Unknown keys and bad
/// values are collected and reported together.
RunConfig parse_config(const std::string& text, const RunConfig& defaults = {});
RunConfig load_config(const std::string& path);

/// Canonical text of every key, in a fixed order; parse_config(echo(c)) == c.
std::string echo_config(const RunConfig& cfg);

/// Applies one "key=value" override.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace ncd
