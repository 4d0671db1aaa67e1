#include "ncd/pipeline.hpp"

#include <numeric>
#include <random>
#include <sstream>

namespace ncd {

Split make_split(const DatasetBundle& bundle, const RunConfig& cfg) {
  if (cfg.open_world) {
    return split_open_world(bundle, cfg.labeled_classes, cfg.open_world_labeled_fraction, cfg.synth.seed);
  }
  return split_classes(bundle, cfg.labeled_classes);
}

double unlabeled_acc(const TwoBranchModel<float>& model, const Split& split, int branch) {
  const auto pred = predict_clusters(model, split.unlabeled.images, branch);
  return clustering_acc(pred.assignments, split.truth.labels, split.truth.num_classes).acc;
}

double kmeans_acc(const TwoBranchModel<float>& model, const Split& split, std::uint64_t seed) {
  const Eigen::MatrixXd feats = frozen_features(model, split.unlabeled.images).cast<double>();
  const auto km = kmeans_baseline(feats, split.truth.num_classes, stream_seed(seed, Stream::kKMeans));
  return clustering_acc(km.result.assignments, split.truth.labels, split.truth.num_classes).acc;
}

FifoBank<float> part_dictionary(const TwoBranchModel<float>& model, const ImageSet& images, int branch,
                                Index capacity, std::uint64_t seed) {
  FifoBank<float> dict(capacity, model.embed_dim());
  std::mt19937_64 rng(stream_seed(seed, Stream::kParts, 1ULL << 40, static_cast<std::uint64_t>(branch)));
  for (Index start = 0; start < images.size(); start += 256) {
    const Index count = std::min<Index>(256, images.size() - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    const auto fwd = model.forward(gather_batch<float>(images, idx), count);
    Mat<float> parts(count, model.embed_dim());
    for (Index i = 0; i < count; ++i) parts.row(i) = sample_part(fwd.map(branch, i), rng).transpose();
    for (Index r = 0; r < count; r += capacity) {
      dict.enqueue(parts.middleRows(r, std::min(capacity, count - r)));
    }
  }
  return dict;
}

PairwiseLabelMatrix pseudo_labels(const TwoBranchModel<float>& model, const ImageSet& images,
                                  const TrainConfig& cfg, int branch, bool local_kind,
                                  const FifoBank<float>* dictionary) {
  if (branch != kGlobalBranch && branch != kLocalBranch) {
    throw std::invalid_argument("pseudo_labels: branch must be 0 or 1");
  }
  if (images.size() == 0) throw std::invalid_argument("pseudo_labels: no images");
  StepBatch<float> batch;
  batch.n_unlabeled = images.size();
  std::vector<Index> idx(static_cast<std::size_t>(images.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  // compute_targets only reads the unlabelled rows, which lead the batch
  // when there are no labelled images.
  const auto fwd = model.forward(gather_batch<float>(images, idx), images.size());
  BranchPlan plan;
  plan.active = {branch == kGlobalBranch, branch == kLocalBranch};
  plan.local_kind = {false, false};
  plan.local_kind[branch] = local_kind;
  std::array<const FifoBank<float>*, 2> dicts{nullptr, nullptr};
  dicts[branch] = dictionary;
  StepTargets t = compute_targets(fwd, batch, dicts, cfg, plan);
  if (!t.bce[branch]) {
    throw std::invalid_argument("pseudo_labels: part dictionary holds " +
                                std::to_string(dictionary ? dictionary->count() : 0) + " parts, needs " +
                                std::to_string(std::max(cfg.warmup_parts(), cfg.k_local)));
  }
  return *t.bce[branch];
}

RunResult run_discovery(const RunConfig& cfg, const Split& split, TwoBranchModel<float> model,
                        const RunOptions& opts) {
  RunResult out;
  Trainer trainer(cfg, std::move(model), split.labeled, split.unlabeled);
  std::ostringstream metrics;
  EpochEvaluator eval;
  if (opts.epoch_eval) {
    eval = [&split](const TwoBranchModel<float>& m, int branch) { return unlabeled_acc(m, split, branch); };
  }
  trainer.train(eval, &metrics);
  out.metrics_csv = metrics.str();
  out.epoch_acc = trainer.epoch_acc();
  const int branch = trainer.plan().predict_branch;
  out.assignments = predict_clusters(trainer.model(), split.unlabeled.images, branch).assignments;
  out.acc = clustering_acc(out.assignments, split.truth.labels, split.truth.num_classes).acc;
  if (cfg.open_world) out.open_world = open_world_eval(trainer.model(), split.unlabeled.images, split.truth, branch);
  if (opts.kmeans) out.kmeans_acc = kmeans_acc(trainer.model(), split, cfg.seed);
  out.checkpoint = make_checkpoint(cfg, trainer.model(), &trainer);
  return out;
}

RunResult run_pipeline(const RunConfig& cfg, const DatasetBundle& bundle, const RunOptions& opts) {
  const Split split = make_split(bundle, cfg);
  TwoBranchModel<float> model =
      build_model(cfg, split.labeled.num_classes(), static_cast<Index>(split.novel_class_ids.size()));
  const PretrainReport pre = pretrain_extractor(model, split.labeled, cfg);
  RunResult out = run_discovery(cfg, split, std::move(model), opts);
  out.pretrain = pre;
  return out;
}

}  // namespace ncd
