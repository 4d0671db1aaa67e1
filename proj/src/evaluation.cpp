#include "ncd/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace ncd {

std::string to_string(AssignmentSource s) {
  switch (s) {
    case AssignmentSource::kGlobalHead:
      return "global-head";
    case AssignmentSource::kLocalHead:
      return "local-head";
    case AssignmentSource::kKMeans:
      return "kmeans";
  }
  return "unknown";
}

AssignmentResult assign_from_probs(const Eigen::Ref<const Eigen::MatrixXf>& probs,
                                   AssignmentSource source) {
  AssignmentResult out;
  out.source = source;
  out.assignments.reserve(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) out.assignments.push_back(argmax(probs.row(i)));
  return out;
}

std::vector<int> linear_assignment_max(const Eigen::MatrixXd& weights) {
  const Index n = weights.rows();
  if (n != weights.cols()) {
    throw std::invalid_argument("hungarian_match: matrix is " + std::to_string(weights.rows()) +
                                "x" + std::to_string(weights.cols()) + ", expected square");
  }
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  const double top = weights.maxCoeff();
  // Minimise cost = top - weight with 1-based potentials (row 0 / col 0 are sentinels).
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index row = 1; row <= n; ++row) {
    match[0] = row;
    Index col0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(col0)] = true;
      const Index r0 = match[static_cast<std::size_t>(col0)];
      double delta = inf;
      Index col1 = 0;
      for (Index c = 1; c <= n; ++c) {
        if (used[static_cast<std::size_t>(c)]) continue;
        const double cost = top - weights(r0 - 1, c - 1);
        const double cur = cost - u[static_cast<std::size_t>(r0)] - v[static_cast<std::size_t>(c)];
        if (cur < minv[static_cast<std::size_t>(c)]) {
          minv[static_cast<std::size_t>(c)] = cur;
          way[static_cast<std::size_t>(c)] = col0;
        }
        if (minv[static_cast<std::size_t>(c)] < delta) {
          delta = minv[static_cast<std::size_t>(c)];
          col1 = c;
        }
      }
      for (Index c = 0; c <= n; ++c) {
        if (used[static_cast<std::size_t>(c)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(c)])] += delta;
          v[static_cast<std::size_t>(c)] -= delta;
        } else {
          minv[static_cast<std::size_t>(c)] -= delta;
        }
      }
      col0 = col1;
    } while (match[static_cast<std::size_t>(col0)] != 0);
    do {
      const Index col1 = way[static_cast<std::size_t>(col0)];
      match[static_cast<std::size_t>(col0)] = match[static_cast<std::size_t>(col1)];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<int> perm(static_cast<std::size_t>(n), -1);
  for (Index c = 1; c <= n; ++c) {
    perm[static_cast<std::size_t>(match[static_cast<std::size_t>(c)] - 1)] = static_cast<int>(c - 1);
  }
  return perm;
}

std::vector<int> hungarian_match(const Eigen::MatrixXi& confusion) {
  if ((confusion.array() < 0).any()) {
    throw std::invalid_argument("hungarian_match: negative count");
  }
  return linear_assignment_max(confusion.cast<double>());
}

AccReport clustering_acc(const std::vector<int>& assignments, const std::vector<int>& truth,
                         Index num_classes) {
  if (assignments.size() != truth.size()) {
    throw std::invalid_argument("clustering_acc: " + std::to_string(assignments.size()) +
                                " assignments vs " + std::to_string(truth.size()) + " labels");
  }
  Index c = num_classes;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (assignments[i] < 0 || truth[i] < 0) throw std::invalid_argument("clustering_acc: negative index");
    c = std::max<Index>(c, std::max(assignments[i], truth[i]) + 1);
  }
  AccReport out;
  out.confusion = Eigen::MatrixXi::Zero(c, c);
  for (std::size_t i = 0; i < truth.size(); ++i) out.confusion(assignments[i], truth[i]) += 1;
  out.permutation = hungarian_match(out.confusion);
  long matched = 0;
  for (Index k = 0; k < c; ++k) matched += out.confusion(k, out.permutation[static_cast<std::size_t>(k)]);
  out.acc = truth.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(truth.size());
  return out;
}

OpenWorldReport open_world_scores(const Eigen::Ref<const Eigen::MatrixXf>& probs,
                                  const HiddenLabels& truth, Index num_labeled) {
  if (static_cast<Index>(truth.labels.size()) != probs.rows() ||
      truth.seen.size() != truth.labels.size()) {
    throw std::invalid_argument("open_world_eval: truth does not match the evaluated images");
  }
  const Index num_novel = probs.cols() - num_labeled;
  if (num_novel < 1) throw StateError("open_world_eval: head has no novel-class outputs");
  OpenWorldReport out;
  long seen_hits = 0;
  std::vector<int> novel_pred, novel_truth;
  for (Index i = 0; i < probs.rows(); ++i) {
    const int y = truth.labels[static_cast<std::size_t>(i)];
    if (truth.seen[static_cast<std::size_t>(i)]) {
      ++out.seen_count;
      if (argmax(probs.row(i).head(num_labeled)) == y) ++seen_hits;
    } else {
      ++out.novel_count;
      novel_pred.push_back(argmax(probs.row(i).tail(num_novel)));
      novel_truth.push_back(y - static_cast<int>(num_labeled));
    }
  }
  out.seen_acc = out.seen_count ? static_cast<double>(seen_hits) / static_cast<double>(out.seen_count) : 0.0;
  out.novel_acc = out.novel_count ? clustering_acc(novel_pred, novel_truth, num_novel).acc : 0.0;
  return out;
}

namespace {

double assign_points(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centroids, std::vector<int>& labels) {
  double inertia = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double d = (x.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    inertia += best_d;
  }
  return inertia;
}

}  // namespace

KMeansResult kmeans_baseline(const Eigen::MatrixXd& features, Index clusters, std::uint64_t seed,
                             int restarts, int max_iters) {
  const Index n = features.rows();
  if (clusters < 1) throw std::invalid_argument("kmeans_baseline: clusters must be positive");
  if (n < clusters) {
    throw std::invalid_argument("kmeans_baseline: " + std::to_string(n) + " points for " +
                                std::to_string(clusters) + " clusters");
  }
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  best.result.source = AssignmentSource::kKMeans;
  for (int run = 0; run < restarts; ++run) {
    std::mt19937_64 rng(stream_seed(seed, Stream::kKMeans, static_cast<std::uint64_t>(run)));
    // k-means++ seeding.
    Eigen::MatrixXd centroids(clusters, features.cols());
    std::uniform_int_distribution<Index> first(0, n - 1);
    centroids.row(0) = features.row(first(rng));
    Eigen::VectorXd d2(n);
    for (Index i = 0; i < n; ++i) d2(i) = (features.row(i) - centroids.row(0)).squaredNorm();
    for (Index c = 1; c < clusters; ++c) {
      const double total = d2.sum();
      Index pick = 0;
      if (total > 0) {
        double target = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (pick = 0; pick < n - 1; ++pick) {
          target -= d2(pick);
          if (target < 0) break;
        }
      } else {
        pick = first(rng);
      }
      centroids.row(c) = features.row(pick);
      for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (features.row(i) - centroids.row(c)).squaredNorm());
    }
    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    std::vector<int> previous;
    double inertia = 0.0;
    for (int it = 0; it < max_iters; ++it) {
      inertia = assign_points(features, centroids, labels);
      if (labels == previous) break;
      previous = labels;
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(clusters, features.cols());
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(clusters);
      for (Index i = 0; i < n; ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += features.row(i);
        counts(labels[static_cast<std::size_t>(i)]) += 1.0;
      }
      for (Index c = 0; c < clusters; ++c) {
        if (counts(c) > 0) centroids.row(c) = sums.row(c) / counts(c);
      }
    }
    inertia = assign_points(features, centroids, labels);
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.centroids = centroids;
      best.result.assignments = labels;
    }
  }
  return best;
}

namespace {

template <typename Fn>
void for_each_batch(const ImageSet& images, Index batch, Fn&& fn) {
  const Index n = images.size();
  for (Index start = 0; start < n; start += batch) {
    const Index end = std::min(n, start + batch);
    std::vector<Index> idx(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    fn(start, end - start, gather_batch<float>(images, idx));
  }
}

}  // namespace

Eigen::MatrixXf unlabeled_head_probs(const TwoBranchModel<float>& model, const ImageSet& images,
                                     int branch, Index batch) {
  Eigen::MatrixXf out(images.size(), model.config().unlabeled_head_dim());
  for_each_batch(images, batch, [&](Index start, Index count, const Mat<float>& x) {
    const auto fwd = model.forward(x, count);
    out.middleRows(start, count) = fwd.probs_u[branch];
  });
  return out;
}

std::pair<Eigen::MatrixXf, Eigen::MatrixXf> embeddings(const TwoBranchModel<float>& model,
                                                       const ImageSet& images, Index batch) {
  Eigen::MatrixXf zg(images.size(), model.embed_dim());
  Eigen::MatrixXf zp(images.size(), model.embed_dim());
  for_each_batch(images, batch, [&](Index start, Index count, const Mat<float>& x) {
    const auto fwd = model.forward(x, count);
    zg.middleRows(start, count) = fwd.z[kGlobalBranch];
    zp.middleRows(start, count) = fwd.z[kLocalBranch];
  });
  return {zg, zp};
}

Eigen::MatrixXf frozen_features(const TwoBranchModel<float>& model, const ImageSet& images,
                                Index batch) {
  Eigen::MatrixXf out(images.size(), model.feature_channels());
  for_each_batch(images, batch, [&](Index start, Index count, const Mat<float>& x) {
    out.middleRows(start, count) = global_average_pool(model.extract(x, count, nullptr), count);
  });
  return out;
}

AssignmentResult predict_clusters(const TwoBranchModel<float>& model, const ImageSet& images,
                                  int branch) {
  const auto source = branch == kGlobalBranch ? AssignmentSource::kGlobalHead : AssignmentSource::kLocalHead;
  return assign_from_probs(unlabeled_head_probs(model, images, branch), source);
}

OpenWorldReport open_world_eval(const TwoBranchModel<float>& model, const ImageSet& images,
                                const HiddenLabels& truth, int branch) {
  if (!model.config().open_world) {
    throw StateError("open_world_eval: model was not built in open-world mode");
  }
  return open_world_scores(unlabeled_head_probs(model, images, branch), truth,
                           model.config().num_labeled);
}

}  // namespace ncd
