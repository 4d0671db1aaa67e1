#pragma once

// One step of the discovery objective: pseudo-label targets from the
// current banks, the weighted loss sum and its backward pass.

#include <array>
#include <optional>

#include "ncd/config.hpp"
#include "ncd/losses.hpp"
#include "ncd/membank.hpp"
#include "ncd/model.hpp"
#include "ncd/rankstats.hpp"

namespace ncd {

/// Which branch slots train, and what each one ranks.
struct BranchPlan {
  std::array<bool, 2> active{true, true};
  /// true: ranks similarity profiles over a part dictionary; false: ranks z.
  std::array<bool, 2> local_kind{false, true};
  /// Branch needs its own part dictionary.
  std::array<bool, 2> needs_dictionary{false, true};
  bool distill = true;
  int predict_branch = kGlobalBranch;
};

BranchPlan plan_branches(const TrainConfig& cfg);

/// Images of one step, stacked as [labelled, unlabelled, labelled', unlabelled']
/// where primes are the augmented counterparts. `images` may stay empty when
/// the caller runs the forward pass itself.
template <typename Scalar>
struct StepBatch {
  Mat<Scalar> images;
  Index n_labeled = 0;
  Index n_unlabeled = 0;
  std::vector<int> labels;

  Index total() const { return 2 * (n_labeled + n_unlabeled); }
  Index lab_rows() const { return 0; }
  Index unl_rows() const { return n_labeled; }
  Index lab_aug_rows() const { return n_labeled + n_unlabeled; }
  Index unl_aug_rows() const { return 2 * n_labeled + n_unlabeled; }
};

/// Pairwise BCE targets per branch slot; empty while a branch is warming up
/// or has no unlabelled samples.
struct StepTargets {
  std::array<std::optional<PairwiseLabelMatrix>, 2> bce;
  std::array<Eigen::MatrixXd, 2> profiles;  // M x e similarity profiles (local-kind slots)
};

template <typename Scalar>
StepTargets compute_targets(const ForwardOutput<Scalar>& fwd, const StepBatch<Scalar>& batch,
                            const std::array<const FifoBank<Scalar>*, 2>& dictionaries,
                            const TrainConfig& cfg, const BranchPlan& plan) {
  StepTargets out;
  const Index m = batch.n_unlabeled;
  if (m == 0) return out;
  for (int br = 0; br < 2; ++br) {
    if (!plan.active[br]) continue;
    const bool uses_profile = plan.local_kind[br] || cfg.label_mode == LabelMode::kMixed;
    Eigen::MatrixXd profiles;
    if (uses_profile) {
      const auto* dict = dictionaries[br];
      if (dict == nullptr || dict->count() < std::max(cfg.warmup_parts(), cfg.k_local)) continue;
      const Mat<Scalar> unit = unit_dictionary(dict->snapshot(), ZeroNorm::kZero);
      profiles.resize(m, dict->count());
      for (Index i = 0; i < m; ++i) {
        profiles.row(i) =
            similarity_profile_unit(fwd.map(br, batch.unl_rows() + i), unit, ZeroNorm::kZero).template cast<double>().transpose();
      }
      out.profiles[br] = profiles;
    }
    const Eigen::MatrixXd z = fwd.z[br].middleRows(batch.unl_rows(), m).template cast<double>();
    const Eigen::MatrixXd& ranked = plan.local_kind[br] ? profiles : z;
    const Index k = plan.local_kind[br] ? cfg.k_local : cfg.k_global;
    switch (cfg.label_mode) {
      case LabelMode::kRsSoft:
        out.bce[br] = pairwise_label_matrix(ranked, RankConfig{k, RankMode::kSoft});
        break;
      case LabelMode::kRsHard:
        out.bce[br] = pairwise_label_matrix(ranked, RankConfig{k, RankMode::kHard});
        break;
      case LabelMode::kCosineSoft:
        out.bce[br] = cosine_labels(ranked, CosineMode::kSoft, cfg.cosine_threshold);
        break;
      case LabelMode::kCosineHard:
        out.bce[br] = cosine_labels(ranked, CosineMode::kHard, cfg.cosine_threshold);
        break;
      case LabelMode::kMixed:
        out.bce[br] = mixed_pos_neg_labels(
            pairwise_label_matrix(profiles, RankConfig{cfg.k_local, RankMode::kHard}),
            pairwise_label_matrix(z, RankConfig{cfg.k_global, RankMode::kHard}));
        break;
    }
  }
  return out;
}

/// Evaluates every enabled loss term for a forward pass. When `cache` is
/// given, gradients are accumulated into the model parameters.
template <typename Scalar>
LossBreakdown step_objective(TwoBranchModel<Scalar>& model, const ForwardOutput<Scalar>& fwd,
                             const ForwardCache<Scalar>* cache, const StepBatch<Scalar>& batch,
                             const StepTargets& targets, const Mat<Scalar>& bank_global,
                             const Mat<Scalar>& bank_local, const TrainConfig& cfg,
                             const BranchPlan& plan, double ramp_weight) {
  const Index n = batch.n_labeled;
  const Index m = batch.n_unlabeled;
  const Index rows = batch.total();
  if (fwd.batch != rows) throw std::invalid_argument("step_objective: forward batch size mismatch");
  const bool want_grad = cache != nullptr;
  OutputGrads<Scalar> grads;
  for (int br = 0; br < 2; ++br) {
    if (!plan.active[br] || !want_grad) continue;
    grads.z[br] = Mat<Scalar>::Zero(rows, fwd.z[br].cols());
    grads.logits_l[br] = Mat<Scalar>::Zero(rows, fwd.logits_l[br].cols());
    grads.logits_u[br] = Mat<Scalar>::Zero(rows, fwd.logits_u[br].cols());
  }
  // Probability-space gradients, pulled back through the softmax at the end.
  std::array<Mat<Scalar>, 2> dprob_l, dprob_u;
  for (int br = 0; br < 2; ++br) {
    if (!plan.active[br] || !want_grad) continue;
    dprob_l[br] = Mat<Scalar>::Zero(rows, fwd.probs_l[br].cols());
    dprob_u[br] = Mat<Scalar>::Zero(rows, fwd.probs_u[br].cols());
  }

  LossBreakdown out;
  out.ramp_weight = ramp_weight;

  if (cfg.use_bce && m > 0) {
    for (int br = 0; br < 2; ++br) {
      if (!plan.active[br] || !targets.bce[br]) continue;
      const Mat<Scalar> p = fwd.probs_u[br].middleRows(batch.unl_rows(), m);
      Mat<Scalar> dp;
      const double v = static_cast<double>(pairwise_bce(*targets.bce[br], p, want_grad ? &dp : nullptr));
      (br == kGlobalBranch ? out.bce_g : out.bce_p) = v;
      if (want_grad) dprob_u[br].middleRows(batch.unl_rows(), m) += dp;
    }
  }

  if (cfg.use_jsd && plan.distill && m > 0 && bank_global.rows() > 0 && bank_local.rows() > 0) {
    Mat<Scalar> dzg, dzp;
    out.jsd = static_cast<double>(distill_loss<Scalar>(
        fwd.z[kGlobalBranch].middleRows(batch.unl_rows(), m),
        fwd.z[kLocalBranch].middleRows(batch.unl_rows(), m), bank_global, bank_local,
        static_cast<Scalar>(cfg.tau), want_grad ? &dzg : nullptr, want_grad ? &dzp : nullptr,
        ZeroNorm::kZero));
    if (want_grad) {
      grads.z[kGlobalBranch].middleRows(batch.unl_rows(), m) += dzg;
      grads.z[kLocalBranch].middleRows(batch.unl_rows(), m) += dzp;
    }
  }

  if (cfg.use_ce && n > 0) {
    for (int br = 0; br < 2; ++br) {
      if (!plan.active[br]) continue;
      Mat<Scalar> dl;
      out.ce += static_cast<double>(cross_entropy<Scalar>(fwd.logits_l[br].middleRows(batch.lab_rows(), n),
                                                          batch.labels, want_grad ? &dl : nullptr));
      if (want_grad) grads.logits_l[br].middleRows(batch.lab_rows(), n) += dl;
      if (model.config().open_world) {
        // Seen classes occupy the first C^l outputs of the extended head.
        out.ce += static_cast<double>(cross_entropy<Scalar>(
            fwd.logits_u[br].middleRows(batch.lab_rows(), n), batch.labels, want_grad ? &dl : nullptr));
        if (want_grad) grads.logits_u[br].middleRows(batch.lab_rows(), n) += dl;
      }
    }
  }

  if (cfg.use_mse) {
    const Scalar w = static_cast<Scalar>(ramp_weight);
    for (int br = 0; br < 2; ++br) {
      if (!plan.active[br]) continue;
      Mat<Scalar> da, db;
      out.mse += static_cast<double>(mse_head<Scalar>(fwd.probs_l[br].middleRows(batch.lab_rows(), n),
                                                      fwd.probs_l[br].middleRows(batch.lab_aug_rows(), n),
                                                      want_grad ? &da : nullptr, want_grad ? &db : nullptr));
      if (want_grad && n > 0) {
        dprob_l[br].middleRows(batch.lab_rows(), n) += w * da;
        dprob_l[br].middleRows(batch.lab_aug_rows(), n) += w * db;
      }
      out.mse += static_cast<double>(mse_head<Scalar>(fwd.probs_u[br].middleRows(batch.unl_rows(), m),
                                                      fwd.probs_u[br].middleRows(batch.unl_aug_rows(), m),
                                                      want_grad ? &da : nullptr, want_grad ? &db : nullptr));
      if (want_grad && m > 0) {
        dprob_u[br].middleRows(batch.unl_rows(), m) += w * da;
        dprob_u[br].middleRows(batch.unl_aug_rows(), m) += w * db;
      }
    }
  }

  out.finalize();

  if (want_grad) {
    for (int br = 0; br < 2; ++br) {
      if (!plan.active[br]) continue;
      grads.logits_l[br] += softmax_backward<Scalar>(fwd.probs_l[br], dprob_l[br]);
      grads.logits_u[br] += softmax_backward<Scalar>(fwd.probs_u[br], dprob_u[br]);
    }
    model.backward(*cache, fwd, grads);
  }
  return out;
}

}  // namespace ncd
