#pragma once

// Pairwise pseudo-labels for unlabelled samples: top-k ranking statistics
// (hard and soft), cosine-similarity labellers and the mixed
// local-positive / global-negative variant.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ncd/common.hpp"

namespace ncd {

enum class RankMode { kHard, kSoft };

struct RankConfig {
  Index k = 5;
  RankMode mode = RankMode::kSoft;
};

/// M x M pseudo-labels in [0, 1]. `mask(i, j) == false` removes the pair
/// from the loss.
struct PairwiseLabelMatrix {
  Eigen::MatrixXd labels;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;

  Index size() const { return labels.rows(); }

  static PairwiseLabelMatrix ones(Index m) {
    PairwiseLabelMatrix out;
    out.labels = Eigen::MatrixXd::Ones(m, m);
    out.mask.setConstant(m, m, true);
    return out;
  }
};

/// Indices of the k largest entries, returned in ascending index order.
/// Equal values rank the lower index first.
template <typename Derived>
std::vector<Index> top_k_index_set(const Eigen::DenseBase<Derived>& v, Index k) {
  const Index n = v.size();
  if (k < 1 || k > n) {
    throw std::invalid_argument("top_k_index_set: k=" + std::to_string(k) +
                                " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  auto ranks_before = [&v](Index a, Index b) {
    const auto va = v(a);
    const auto vb = v(b);
    return va > vb || (va == vb && a < b);
  };
  if (k < n) {
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), ranks_before);
  }
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

inline Index count_shared(const std::vector<Index>& a, const std::vector<Index>& b) {
  Index shared = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++shared;
      ++ia;
      ++ib;
    }
  }
  return shared;
}

template <typename A, typename B>
void check_same_size(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("ranking statistics: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                ")");
  }
}

}  // namespace detail

/// |top_k(a) ∩ top_k(b)| / k
template <typename A, typename B>
double soft_rs(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, Index k) {
  detail::check_same_size(a, b);
  const auto ta = top_k_index_set(a, k);
  const auto tb = top_k_index_set(b, k);
  return static_cast<double>(detail::count_shared(ta, tb)) / static_cast<double>(k);
}

/// 1 iff the two top-k index sets coincide.
template <typename A, typename B>
int hard_rs(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, Index k) {
  detail::check_same_size(a, b);
  return top_k_index_set(a, k) == top_k_index_set(b, k) ? 1 : 0;
}

/// Ranking-statistics labels between all rows of `z` (one sample per row).
template <typename Derived>
PairwiseLabelMatrix pairwise_label_matrix(const Eigen::MatrixBase<Derived>& z,
                                          const RankConfig& cfg) {
  const Index m = z.rows();
  if (m < 1) throw std::invalid_argument("pairwise_label_matrix: empty batch");
  std::vector<std::vector<Index>> sets;
  sets.reserve(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) sets.push_back(top_k_index_set(z.row(i), cfg.k));

  PairwiseLabelMatrix out = PairwiseLabelMatrix::ones(m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = i + 1; j < m; ++j) {
      const auto& si = sets[static_cast<std::size_t>(i)];
      const auto& sj = sets[static_cast<std::size_t>(j)];
      double s = 0.0;
      if (cfg.mode == RankMode::kSoft) {
        s = static_cast<double>(detail::count_shared(si, sj)) / static_cast<double>(cfg.k);
      } else {
        s = si == sj ? 1.0 : 0.0;
      }
      out.labels(i, j) = s;
      out.labels(j, i) = s;
    }
  }
  return out;
}

enum class CosineMode { kHard, kSoft };

/// Cosine-similarity labels. Soft mode clamps the score to [0, 1]; hard mode
/// thresholds it.
Eigen::MatrixXd cosine_similarity_rows(const Eigen::Ref<const Eigen::MatrixXd>& z);
PairwiseLabelMatrix cosine_labels(const Eigen::Ref<const Eigen::MatrixXd>& z, CosineMode mode,
                                  double threshold = 0.9);

/// Single-branch variant: positives from `local`, negatives from `global`.
/// Pairs that are neither (local 0, global 1) are masked out.
PairwiseLabelMatrix mixed_pos_neg_labels(const PairwiseLabelMatrix& local,
                                         const PairwiseLabelMatrix& global);

}  // namespace ncd
