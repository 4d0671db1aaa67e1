#pragma once

// Cluster assignment, Hungarian-matched clustering accuracy, open-world
// scoring and the k-means baseline.

#include <cstdint>
#include <string>
#include <vector>

#include "ncd/common.hpp"
#include "ncd/dataio.hpp"
#include "ncd/model.hpp"

namespace ncd {

enum class AssignmentSource { kGlobalHead, kLocalHead, kKMeans };

std::string to_string(AssignmentSource s);

struct AssignmentResult {
  std::vector<int> assignments;
  AssignmentSource source = AssignmentSource::kGlobalHead;
};

struct AccReport {
  double acc = 0.0;
  std::vector<int> permutation;  // cluster index -> class index
  Eigen::MatrixXi confusion;     // rows: cluster, cols: class
};

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
int argmax(const Eigen::DenseBase<Derived>& v) {
  int best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = static_cast<int>(i);
  }
  return best;
}

/// Argmax per row of an N x C probability matrix.
AssignmentResult assign_from_probs(const Eigen::Ref<const Eigen::MatrixXf>& probs,
                                   AssignmentSource source);

/// Bijection row -> column maximising the summed weight. Exact O(C^3)
/// shortest-augmenting-path Hungarian method.
std::vector<int> linear_assignment_max(const Eigen::MatrixXd& weights);

/// Optimal cluster -> class permutation for a square count matrix.
std::vector<int> hungarian_match(const Eigen::MatrixXi& confusion);

/// Accuracy under the best one-to-one mapping of clusters to classes. The
/// confusion matrix is square with side max(num_classes, clusters seen).
AccReport clustering_acc(const std::vector<int>& assignments, const std::vector<int>& truth,
                         Index num_classes = 0);

struct OpenWorldReport {
  double seen_acc = 0.0;
  double novel_acc = 0.0;
  Index seen_count = 0;
  Index novel_count = 0;
};

/// Scores an open-world unlabelled head (N x (C^l + C^u) probabilities).
/// Seen instances: plain accuracy of the argmax over the first C^l outputs.
/// Novel instances: clustering accuracy of the argmax over the last C^u.
OpenWorldReport open_world_scores(const Eigen::Ref<const Eigen::MatrixXf>& probs,
                                  const HiddenLabels& truth, Index num_labeled);

struct KMeansResult {
  AssignmentResult result;
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
};

/// Lloyd's k-means with k-means++ seeding; the lowest-inertia run of
/// `restarts` is kept.
KMeansResult kmeans_baseline(const Eigen::MatrixXd& features, Index clusters, std::uint64_t seed,
                             int restarts = 10, int max_iters = 100);

// Model-level helpers (single precision, batched forward passes).

/// Unlabelled-head probabilities of `branch` for every image.
Eigen::MatrixXf unlabeled_head_probs(const TwoBranchModel<float>& model, const ImageSet& images,
                                     int branch, Index batch = 256);

/// Pooled embeddings z of both branches: first = global, second = local.
std::pair<Eigen::MatrixXf, Eigen::MatrixXf> embeddings(const TwoBranchModel<float>& model,
                                                       const ImageSet& images, Index batch = 256);

/// Spatially pooled extractor output (the frozen representation).
Eigen::MatrixXf frozen_features(const TwoBranchModel<float>& model, const ImageSet& images,
                                Index batch = 256);

/// Cluster index per image from the unlabelled head of `branch`; the model
/// is not modified.
AssignmentResult predict_clusters(const TwoBranchModel<float>& model, const ImageSet& images,
                                  int branch = kGlobalBranch);

OpenWorldReport open_world_eval(const TwoBranchModel<float>& model, const ImageSet& images,
                                const HiddenLabels& truth, int branch = kGlobalBranch);

}  // namespace ncd
