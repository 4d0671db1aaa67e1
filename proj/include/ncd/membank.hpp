#pragma once

// Fixed-capacity FIFO feature banks (part dictionary and the two
// distillation banks), part sampling and local similarity profiles.

#include <random>
#include <string>

#include "ncd/common.hpp"

namespace ncd {

template <typename Scalar>
class FifoBank {
 public:
  FifoBank() = default;

  FifoBank(Index capacity, Index dim) : capacity_(capacity), dim_(dim) {
    if (capacity < 1 || dim < 1) {
      throw std::invalid_argument("FifoBank: capacity and dim must be positive (got " +
                                  std::to_string(capacity) + ", " + std::to_string(dim) + ")");
    }
    storage_.setZero(capacity, dim);
  }

  Index capacity() const { return capacity_; }
  Index dim() const { return dim_; }
  Index count() const { return count_; }
  bool empty() const { return count_ == 0; }
  bool full() const { return count_ == capacity_; }

  /// Appends `batch` (one feature per row); the oldest rows fall out once
  /// the bank is full. The values are copied, so later changes to the
  /// producing parameters never reach stored rows.
  template <typename Derived>
  void enqueue(const Eigen::MatrixBase<Derived>& batch) {
    if (batch.rows() > capacity_) {
      throw std::invalid_argument("FifoBank::enqueue: batch of " + std::to_string(batch.rows()) +
                                  " rows exceeds capacity " + std::to_string(capacity_));
    }
    if (batch.cols() != dim_) {
      throw std::invalid_argument("FifoBank::enqueue: row dim " + std::to_string(batch.cols()) +
                                  " != bank dim " + std::to_string(dim_));
    }
    for (Index r = 0; r < batch.rows(); ++r) {
      storage_.row(head_) = batch.row(r).template cast<Scalar>();
      head_ = (head_ + 1) % capacity_;
    }
    count_ = std::min(capacity_, count_ + batch.rows());
  }

  /// Row `i` in insertion order (0 = oldest).
  auto row(Index i) const { return storage_.row(physical(i)); }

  /// Immutable copy of the stored rows, oldest first.
  Mat<Scalar> snapshot() const {
    Mat<Scalar> out(count_, dim_);
    for (Index i = 0; i < count_; ++i) out.row(i) = storage_.row(physical(i));
    return out;
  }

  /// Replaces the content with `rows` (oldest first); used when restoring.
  void restore(const Mat<Scalar>& rows) {
    if (rows.rows() > capacity_ || rows.cols() != dim_) {
      throw std::invalid_argument("FifoBank::restore: incompatible shape");
    }
    storage_.setZero();
    head_ = 0;
    count_ = 0;
    enqueue(rows);
  }

 private:
  Index physical(Index i) const {
    const Index oldest = (head_ - count_ + capacity_) % capacity_;
    return (oldest + i) % capacity_;
  }

  Index capacity_ = 0;
  Index dim_ = 0;
  Index count_ = 0;
  Index head_ = 0;  // next write slot
  Mat<Scalar> storage_;
};

template <typename Scalar>
FifoBank<Scalar> new_bank(Index capacity, Index dim) {
  return FifoBank<Scalar>(capacity, dim);
}

/// Uniform spatial location of a d x (h*w) feature map.
template <typename Derived, typename Rng>
Index sample_location(const Eigen::MatrixBase<Derived>& feature_map, Rng& rng) {
  if (feature_map.cols() < 1 || feature_map.rows() < 1) {
    throw std::invalid_argument("sample_part: empty feature map");
  }
  std::uniform_int_distribution<Index> pick(0, feature_map.cols() - 1);
  return pick(rng);
}

/// One part vector: the column at a uniformly drawn location.
template <typename Derived, typename Rng>
Vec<typename Derived::Scalar> sample_part(const Eigen::MatrixBase<Derived>& feature_map,
                                          Rng& rng) {
  return feature_map.col(sample_location(feature_map, rng));
}

/// Zero vectors have no direction. kReject raises; kZero treats their cosine
/// with anything as 0 (used during training, where ReLU maps can go dark).
enum class ZeroNorm { kReject, kZero };

namespace detail {

template <typename Derived>
Mat<typename Derived::Scalar> unit_columns(const Eigen::MatrixBase<Derived>& m, const char* what,
                                           ZeroNorm policy = ZeroNorm::kReject) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out = m;
  for (Index c = 0; c < out.cols(); ++c) {
    const Scalar n = out.col(c).norm();
    if (!(n > Scalar(0))) {
      if (policy == ZeroNorm::kZero && n == Scalar(0)) continue;
      throw std::invalid_argument(std::string("similarity_profile: zero-norm ") + what + " " +
                                  std::to_string(c));
    }
    out.col(c) /= n;
  }
  return out;
}

}  // namespace detail

/// Rows of `dictionary` scaled to unit length; transposed so each column is
/// one entry (d x e).
template <typename Derived>
Mat<typename Derived::Scalar> unit_dictionary(const Eigen::MatrixBase<Derived>& dictionary,
                                              ZeroNorm policy = ZeroNorm::kReject) {
  if (dictionary.rows() < 1) throw std::invalid_argument("similarity_profile: empty dictionary");
  return detail::unit_columns(dictionary.transpose(), "dictionary row", policy);
}

/// Mean over locations of the cosine similarity between every column of
/// `feature_map` (d x h*w) and every column of `unit_dict` (d x e).
template <typename A, typename B>
Vec<typename A::Scalar> similarity_profile_unit(const Eigen::MatrixBase<A>& feature_map,
                                                const Eigen::MatrixBase<B>& unit_dict,
                                                ZeroNorm policy = ZeroNorm::kReject) {
  using Scalar = typename A::Scalar;
  if (feature_map.rows() != unit_dict.rows()) {
    throw std::invalid_argument("similarity_profile: feature dim " +
                                std::to_string(feature_map.rows()) + " != dictionary dim " +
                                std::to_string(unit_dict.rows()));
  }
  if (feature_map.cols() < 1) throw std::invalid_argument("similarity_profile: empty feature map");
  const Mat<Scalar> q = detail::unit_columns(feature_map, "feature column", policy);
  const Vec<Scalar> mean_q = q.rowwise().mean();
  // mean_j <v, q_j> = <v, mean_j q_j>
  return unit_dict.transpose() * mean_q;
}

template <typename Derived, typename Scalar>
Vec<Scalar> similarity_profile(const Eigen::MatrixBase<Derived>& feature_map,
                               const FifoBank<Scalar>& dictionary) {
  if (dictionary.empty()) throw std::invalid_argument("similarity_profile: empty dictionary");
  if (feature_map.rows() != dictionary.dim()) {
    throw std::invalid_argument("similarity_profile: feature dim mismatch");
  }
  const Mat<Scalar> dict = unit_dictionary(dictionary.snapshot());
  return similarity_profile_unit(feature_map.template cast<Scalar>(), dict);
}

}  // namespace ncd
