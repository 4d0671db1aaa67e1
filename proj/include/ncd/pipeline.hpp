#pragma once

// End-to-end runs shared by the command line tool and the acceptance suite:
// split, pretrain, discover, evaluate.

#include <optional>
#include <string>

#include "ncd/config.hpp"
#include "ncd/dataio.hpp"
#include "ncd/evaluation.hpp"
#include "ncd/trainer.hpp"

namespace ncd {

/// Closed-world or open-world split of `bundle` as configured.
Split make_split(const DatasetBundle& bundle, const RunConfig& cfg);

/// Hungarian-matched ACC of `branch`'s unlabelled head on the unlabelled split.
double unlabeled_acc(const TwoBranchModel<float>& model, const Split& split, int branch);

/// k-means on the pooled extractor features of the unlabelled split.
double kmeans_acc(const TwoBranchModel<float>& model, const Split& split, std::uint64_t seed);

struct RunResult {
  PretrainReport pretrain;
  double acc = 0.0;         // final ACC, prediction branch
  double kmeans_acc = -1.0; // only when requested
  std::optional<OpenWorldReport> open_world;
  std::vector<double> epoch_acc;
  std::string metrics_csv;
  Checkpoint checkpoint;
  std::vector<int> assignments;
};

struct RunOptions {
  bool kmeans = false;
  bool epoch_eval = true;
};

/// Part dictionary holding one randomly located part per image of `images`,
/// taken from `branch`'s projection maps; the newest `capacity` parts stay.
FifoBank<float> part_dictionary(const TwoBranchModel<float>& model, const ImageSet& images, int branch,
                                Index capacity, std::uint64_t seed);

/// Pairwise pseudo labels over `images` as the trainer derives them for
/// `branch` under `cfg.label_mode`: z is ranked for global-kind branches,
/// similarity profiles against `dictionary` for local-kind ones and for the
/// mixed mode.
PairwiseLabelMatrix pseudo_labels(const TwoBranchModel<float>& model, const ImageSet& images,
                                  const TrainConfig& cfg, int branch, bool local_kind,
                                  const FifoBank<float>* dictionary);

/// Pretrains on the labelled split, then trains the discovery phase.
RunResult run_pipeline(const RunConfig& cfg, const DatasetBundle& bundle, const RunOptions& opts = {});

/// Discovery phase only, starting from a pretrained, frozen model.
RunResult run_discovery(const RunConfig& cfg, const Split& split, TwoBranchModel<float> model,
                        const RunOptions& opts = {});

}  // namespace ncd
