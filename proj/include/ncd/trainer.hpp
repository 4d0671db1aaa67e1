#pragma once

// Discovery-phase training: batch composition, bank maintenance, SGD with
// step decay, the supervised extractor initialisation and checkpoints.

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ncd/config.hpp"
#include "ncd/dataio.hpp"
#include "ncd/losses.hpp"
#include "ncd/membank.hpp"
#include "ncd/model.hpp"
#include "ncd/objective.hpp"

namespace ncd {

struct PretrainReport {
  double train_acc = 0.0;  // temporary head, labelled split, un-augmented
  double final_loss = 0.0;
};

/// Fresh model for `cfg` with seeded initial weights.
TwoBranchModel<float> build_model(const RunConfig& cfg, Index num_labeled, Index num_unlabeled);

/// Trains the extractor, followed by the global projection stage and a
/// temporary C^l-way head, with cross-entropy on the labelled split. The
/// projection is then copied into the local branch, the head into both
/// labelled heads, and the extractor is frozen.
PretrainReport pretrain_extractor(TwoBranchModel<float>& model, const LabeledSet& labeled,
                                  const RunConfig& cfg);

/// One row of the metrics log.
struct StepRecord {
  long step = 0;
  int epoch = 0;
  LossBreakdown losses;
};

/// Called once per epoch with the model; returns the evaluation ACC.
using EpochEvaluator = std::function<double(const TwoBranchModel<float>&, int predict_branch)>;

class Trainer {
 public:
  Trainer(RunConfig cfg, TwoBranchModel<float> model, const LabeledSet& labeled,
          const UnlabeledSet& unlabeled);

  /// One optimisation step on the given image indices. Order: forward both
  /// views, targets and distributions against the current banks, losses and
  /// one SGD step, then enqueue this step's detached features.
  LossBreakdown train_step(const std::vector<Index>& labeled_idx, const std::vector<Index>& unlabeled_idx);

  /// One pass over the unlabelled split; labelled batches are drawn cyclically.
  std::vector<StepRecord> train_epoch();

  /// Runs the remaining epochs. Step rows and per-epoch ACC rows go to
  /// `metrics` (CSV) when given.
  void train(const EpochEvaluator& evaluator, std::ostream* metrics);

  const TwoBranchModel<float>& model() const { return model_; }
  TwoBranchModel<float>& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  const BranchPlan& plan() const { return plan_; }
  int epoch() const { return epoch_; }
  long step() const { return step_; }
  double current_lr() const { return cfg_.train.lr_at_epoch(epoch_ + 1); }
  std::vector<double> epoch_acc() const { return epoch_acc_; }

  const FifoBank<float>& dictionary(int br) const { return dictionaries_[br]; }
  const FifoBank<float>& feature_bank(int br) const { return banks_[br]; }
  FifoBank<float>& dictionary(int br) { return dictionaries_[br]; }
  FifoBank<float>& feature_bank(int br) { return banks_[br]; }

  /// Bank contents the most recent step trained against (B_g, B_p).
  const std::array<Mat<float>, 2>& last_bank_snapshots() const { return last_snapshots_; }
  const std::map<std::string, Mat<float>>& velocity() const { return velocity_; }

  /// Restores counters and optimiser state (used when loading a checkpoint).
  void restore_state(int epoch, long step, std::map<std::string, Mat<float>> velocity);

  static void write_metrics_header(std::ostream& out);
  static void write_step_row(std::ostream& out, const StepRecord& r);
  static void write_acc_row(std::ostream& out, int epoch, double acc);

 private:
  /// Extractor output for the stacked [labelled, unlabelled, labelled', unlabelled'] batch.
  Mat<float> step_features(const std::vector<Index>& labeled_idx, const std::vector<Index>& unlabeled_idx) const;
  void sgd_step(double lr);

  RunConfig cfg_;
  BranchPlan plan_;
  TwoBranchModel<float> model_;
  const LabeledSet* labeled_;
  const UnlabeledSet* unlabeled_;
  std::array<FifoBank<float>, 2> dictionaries_;
  std::array<FifoBank<float>, 2> banks_;
  std::array<Mat<float>, 2> last_snapshots_;
  std::map<std::string, Mat<float>> velocity_;
  int epoch_ = 0;  // completed epochs
  long step_ = 0;  // completed steps
  std::vector<Index> labeled_queue_;
  std::size_t labeled_cursor_ = 0;
  long labeled_pass_ = 0;
  std::vector<double> epoch_acc_;
  Mat<float> labeled_features_;
  Mat<float> unlabeled_features_;
};

// Checkpoint container ("NCDCKPT1"): config echo followed by named
// single-precision blocks.

struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Mat<float>>> blocks;  // rank-2 row-major payloads

  const Mat<float>* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model parameters, freeze flag and, when `trainer` is given, optimiser
/// state, banks and counters.
Checkpoint make_checkpoint(const RunConfig& cfg, const TwoBranchModel<float>& model,
                           const Trainer* trainer = nullptr);

/// Rebuilds the model stored in `ckpt`.
TwoBranchModel<float> model_from_checkpoint(const Checkpoint& ckpt, RunConfig* cfg_out = nullptr);

/// Copies parameters present in `ckpt` into `model` (shapes must match).
void load_model_params(const Checkpoint& ckpt, TwoBranchModel<float>& model);

/// Restores banks, optimiser state and counters into `trainer`.
void restore_trainer(const Checkpoint& ckpt, Trainer& trainer);

}  // namespace ncd
