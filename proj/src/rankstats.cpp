#include "ncd/rankstats.hpp"

namespace ncd {

Eigen::MatrixXd cosine_similarity_rows(const Eigen::Ref<const Eigen::MatrixXd>& z) {
  const Eigen::VectorXd norms = z.rowwise().norm();
  for (Index i = 0; i < z.rows(); ++i) {
    if (!(norms(i) > 0.0)) {
      throw std::invalid_argument("cosine_labels: row " + std::to_string(i) + " has zero norm");
    }
  }
  const Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * z;
  return unit * unit.transpose();
}

PairwiseLabelMatrix cosine_labels(const Eigen::Ref<const Eigen::MatrixXd>& z, CosineMode mode,
                                  double threshold) {
  if (z.rows() < 1) throw std::invalid_argument("cosine_labels: empty batch");
  const Eigen::MatrixXd cos = cosine_similarity_rows(z);
  PairwiseLabelMatrix out = PairwiseLabelMatrix::ones(z.rows());
  for (Index i = 0; i < z.rows(); ++i) {
    for (Index j = 0; j < z.rows(); ++j) {
      if (i == j) continue;
      // Symmetrise so both triangles see the same rounding.
      const double c = i < j ? cos(i, j) : cos(j, i);
      out.labels(i, j) =
          mode == CosineMode::kSoft ? std::clamp(c, 0.0, 1.0) : (c >= threshold ? 1.0 : 0.0);
    }
  }
  return out;
}

namespace {

void check_hard(const PairwiseLabelMatrix& s, const char* which) {
  const bool binary = (s.labels.array() == 0.0 || s.labels.array() == 1.0).all();
  if (!binary) {
    throw std::invalid_argument(std::string("mixed_pos_neg_labels: ") + which +
                                " labels are not hard (0/1)");
  }
}

}  // namespace

PairwiseLabelMatrix mixed_pos_neg_labels(const PairwiseLabelMatrix& local,
                                         const PairwiseLabelMatrix& global) {
  if (local.labels.rows() != global.labels.rows() || local.labels.cols() != global.labels.cols() ||
      local.labels.rows() != local.labels.cols()) {
    throw std::invalid_argument("mixed_pos_neg_labels: shape mismatch");
  }
  check_hard(local, "local");
  check_hard(global, "global");
  const Index m = local.size();
  PairwiseLabelMatrix out = PairwiseLabelMatrix::ones(m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (i == j) continue;
      if (local.labels(i, j) == 1.0) {
        out.labels(i, j) = 1.0;
      } else if (global.labels(i, j) == 0.0) {
        out.labels(i, j) = 0.0;
      } else {
        out.labels(i, j) = 0.0;
        out.mask(i, j) = false;
      }
    }
  }
  return out;
}

}  // namespace ncd
