#pragma once

// Loss terms of the discovery objective. Each term optionally writes its
// gradient with respect to its direct inputs; samples are rows throughout.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ncd/common.hpp"
#include "ncd/membank.hpp"
#include "ncd/nn.hpp"
#include "ncd/rankstats.hpp"

namespace ncd {

inline constexpr double kBceEps = 1e-7;

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace detail

/// -(1/M^2) sum_ij mask_ij [s_ij log(p_i.p_j) + (1-s_ij) log(1-p_i.p_j)]
/// with p_i.p_j clamped to [eps, 1-eps]. `probs` is M x C.
template <typename Scalar>
Scalar pairwise_bce(const PairwiseLabelMatrix& s, const Mat<Scalar>& probs,
                    Mat<Scalar>* dprobs = nullptr) {
  const Index m = probs.rows();
  if (s.labels.rows() != m || s.labels.cols() != m) {
    throw std::invalid_argument("pairwise_bce: label matrix is " + std::to_string(s.labels.rows()) +
                                "x" + std::to_string(s.labels.cols()) + ", batch is " +
                                std::to_string(m));
  }
  detail::require_finite(probs, "pairwise_bce");
  detail::require_finite(s.labels, "pairwise_bce");
  const Mat<Scalar> inner = probs * probs.transpose();
  const Scalar eps = static_cast<Scalar>(kBceEps);
  const Scalar scale = Scalar(1) / static_cast<Scalar>(m * m);
  Mat<Scalar> g;
  if (dprobs != nullptr) g = Mat<Scalar>::Zero(m, m);
  Scalar total = 0;
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (!s.mask(i, j)) continue;
      const Scalar label = static_cast<Scalar>(s.labels(i, j));
      const Scalar raw = inner(i, j);
      const Scalar q = std::clamp(raw, eps, Scalar(1) - eps);
      total -= label * std::log(q) + (Scalar(1) - label) * std::log(Scalar(1) - q);
      if (dprobs != nullptr && raw == q) {
        g(i, j) = -scale * (label / q - (Scalar(1) - label) / (Scalar(1) - q));
      }
    }
  }
  if (dprobs != nullptr) *dprobs = (g + g.transpose()) * probs;
  return total * scale;
}

template <typename Scalar>
Scalar dual_bce(const PairwiseLabelMatrix& s_global, const Mat<Scalar>& p_global,
                const PairwiseLabelMatrix& s_local, const Mat<Scalar>& p_local) {
  return pairwise_bce(s_global, p_global) + pairwise_bce(s_local, p_local);
}

/// Logits z_hat . b_hat_j / tau against every bank row (rows of `bank_unit`
/// already scaled to unit length).
template <typename Scalar>
Vec<Scalar> similarity_logits(const Vec<Scalar>& z_unit, const Mat<Scalar>& bank_unit, Scalar tau) {
  return bank_unit * z_unit / tau;
}

/// Rows of `rows` scaled to unit length.
template <typename Scalar>
Mat<Scalar> unit_rows(const Mat<Scalar>& rows, const char* what, ZeroNorm policy = ZeroNorm::kReject) {
  Mat<Scalar> out = rows;
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar n = out.row(r).norm();
    if (!(n > Scalar(0))) {
      if (policy == ZeroNorm::kZero && n == Scalar(0)) continue;
      throw std::invalid_argument(std::string(what) + ": zero-norm row " + std::to_string(r));
    }
    out.row(r) /= n;
  }
  return out;
}

/// Softmax over temperature-scaled cosine similarities of z to the bank rows.
template <typename Scalar>
Vec<Scalar> sim_distribution(const Vec<Scalar>& z, const FifoBank<Scalar>& bank, Scalar tau) {
  if (bank.empty()) throw std::invalid_argument("sim_distribution: empty bank");
  if (!(tau > Scalar(0))) throw std::invalid_argument("sim_distribution: tau must be positive");
  const Scalar n = z.norm();
  if (!(n > Scalar(0))) throw std::invalid_argument("sim_distribution: zero embedding");
  const Mat<Scalar> b = unit_rows(bank.snapshot(), "sim_distribution");
  const Vec<Scalar> logits = similarity_logits<Scalar>(z / n, b, tau);
  return softmax_rows(logits.transpose()).transpose();
}

/// sum_i p_i ln(p_i / q_i), with 0 ln 0 = 0.
template <typename Scalar>
Scalar kl(const Vec<Scalar>& p, const Vec<Scalar>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl: length mismatch");
  Scalar total = 0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) == Scalar(0)) continue;
    if (q(i) == Scalar(0)) {
      throw std::domain_error("kl: q[" + std::to_string(i) + "] = 0 where p > 0 (divergence is infinite)");
    }
    total += p(i) * std::log(p(i) / q(i));
  }
  return total;
}

/// Symmetrised KL: (KL(p||q) + KL(q||p)) / 2.
template <typename Scalar>
Scalar jsd_sym(const Vec<Scalar>& p, const Vec<Scalar>& q) {
  return Scalar(0.5) * (kl(p, q) + kl(q, p));
}

namespace detail {

/// Symmetrised KL between softmax(la) and softmax(lb), with its gradient
/// with respect to both logit vectors.
template <typename Scalar>
Scalar jsd_from_logits(const Vec<Scalar>& la, const Vec<Scalar>& lb, Vec<Scalar>* dla,
                       Vec<Scalar>* dlb) {
  const Vec<Scalar> log_a = log_softmax_rows(la.transpose()).transpose();
  const Vec<Scalar> log_b = log_softmax_rows(lb.transpose()).transpose();
  const Vec<Scalar> a = log_a.array().exp();
  const Vec<Scalar> b = log_b.array().exp();
  const Vec<Scalar> diff = log_a - log_b;
  const Scalar kl_ab = a.dot(diff);
  const Scalar kl_ba = -b.dot(diff);
  if (dla != nullptr) {
    *dla = Scalar(0.5) * (a.cwiseProduct(diff) + a - b - kl_ab * a);
  }
  if (dlb != nullptr) {
    *dlb = Scalar(0.5) * (-b.cwiseProduct(diff) + b - a - kl_ba * b);
  }
  return Scalar(0.5) * (kl_ab + kl_ba);
}

}  // namespace detail

/// Mean over the batch of jsd_sym(p^p(z_p, B_p), p^g(z_g, B_g)). Bank
/// snapshots are constants; gradients are written for both embeddings.
/// Under ZeroNorm::kZero an all-zero embedding or bank row has cosine 0 with
/// everything (uniform logits) and receives no gradient.
template <typename Scalar>
Scalar distill_loss(const Mat<Scalar>& z_global, const Mat<Scalar>& z_local,
                    const Mat<Scalar>& bank_global, const Mat<Scalar>& bank_local, Scalar tau,
                    Mat<Scalar>* dz_global = nullptr, Mat<Scalar>* dz_local = nullptr,
                    ZeroNorm policy = ZeroNorm::kReject) {
  if (bank_global.rows() == 0 || bank_local.rows() == 0) {
    throw std::invalid_argument("distill_loss: empty bank");
  }
  if (bank_global.rows() != bank_local.rows()) {
    throw std::invalid_argument("distill_loss: banks hold different numbers of rows");
  }
  if (z_global.rows() != z_local.rows()) {
    throw std::invalid_argument("distill_loss: branch batch sizes differ");
  }
  const Index m = z_global.rows();
  const Mat<Scalar> bg = unit_rows(bank_global, "distill_loss bank_global", policy);
  const Mat<Scalar> bp = unit_rows(bank_local, "distill_loss bank_local", policy);
  const Vec<Scalar> ng = z_global.rowwise().norm();
  const Vec<Scalar> np = z_local.rowwise().norm();
  for (Index i = 0; i < m; ++i) {
    const bool dark = ng(i) == Scalar(0) || np(i) == Scalar(0);
    if (!(ng(i) > Scalar(0) && np(i) > Scalar(0)) && !(dark && policy == ZeroNorm::kZero)) {
      throw std::invalid_argument("distill_loss: zero embedding at row " + std::to_string(i));
    }
  }
  const Mat<Scalar> ug = unit_rows(z_global, "distill_loss", ZeroNorm::kZero);
  const Mat<Scalar> up = unit_rows(z_local, "distill_loss", ZeroNorm::kZero);
  // Row i of la / lb: logits of p^p and p^g for sample i against the banks.
  const Scalar inv_tau = Scalar(1) / tau;
  const Mat<Scalar> log_a = log_softmax_rows(Mat<Scalar>(inv_tau * up * bp.transpose()));
  const Mat<Scalar> log_b = log_softmax_rows(Mat<Scalar>(inv_tau * ug * bg.transpose()));
  const Mat<Scalar> a = log_a.array().exp();
  const Mat<Scalar> b = log_b.array().exp();
  const Mat<Scalar> diff = log_a - log_b;
  const Vec<Scalar> kl_ab = a.cwiseProduct(diff).rowwise().sum();
  const Vec<Scalar> kl_ba = -b.cwiseProduct(diff).rowwise().sum();
  const Scalar total = Scalar(0.5) * (kl_ab.sum() + kl_ba.sum());
  // d/dla and d/dlb of 0.5 (KL(a||b) + KL(b||a)) with a = softmax(la), b = softmax(lb).
  auto pull_back = [&](const Mat<Scalar>& dl, const Mat<Scalar>& u, const Mat<Scalar>& bank,
                       const Vec<Scalar>& norms) {
    const Mat<Scalar> du = inv_tau * dl * bank;
    const Vec<Scalar> along = u.cwiseProduct(du).rowwise().sum();
    Mat<Scalar> dz = du - u.cwiseProduct(along.replicate(1, u.cols()));
    for (Index i = 0; i < m; ++i) {
      if (norms(i) > Scalar(0)) {
        dz.row(i) /= norms(i) * static_cast<Scalar>(m);
      } else {
        dz.row(i).setZero();
      }
    }
    return dz;
  };
  if (dz_local != nullptr) {
    const Mat<Scalar> dla =
        Scalar(0.5) * (a.cwiseProduct(diff) + a - b - a.cwiseProduct(kl_ab.replicate(1, a.cols())));
    *dz_local = pull_back(dla, up, bp, np);
  }
  if (dz_global != nullptr) {
    const Mat<Scalar> dlb =
        Scalar(0.5) * (-b.cwiseProduct(diff) + b - a - b.cwiseProduct(kl_ba.replicate(1, b.cols())));
    *dz_global = pull_back(dlb, ug, bg, ng);
  }
  return total / static_cast<Scalar>(m);
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
template <typename Scalar>
Scalar cross_entropy(const Mat<Scalar>& logits, const std::vector<int>& labels,
                     Mat<Scalar>* dlogits = nullptr) {
  const Index n = logits.rows();
  if (static_cast<Index>(labels.size()) != n) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  detail::require_finite(logits, "cross_entropy");
  const Mat<Scalar> logp = log_softmax_rows(logits);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(logits.cols()) + ")");
    }
    total -= logp(i, y);
  }
  if (dlogits != nullptr) {
    *dlogits = logp.array().exp();
    for (Index i = 0; i < n; ++i) (*dlogits)(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
    *dlogits /= static_cast<Scalar>(n);
  }
  return n > 0 ? total / static_cast<Scalar>(n) : Scalar(0);
}

/// Cross-entropy on both labelled heads (global and local).
template <typename Scalar>
Scalar ce_two_heads(const Mat<Scalar>& logits_global, const Mat<Scalar>& logits_local,
                    const std::vector<int>& labels, Mat<Scalar>* d_global = nullptr,
                    Mat<Scalar>* d_local = nullptr) {
  return cross_entropy(logits_global, labels, d_global) +
         cross_entropy(logits_local, labels, d_local);
}

/// (1/n) sum_i ||p_i - p_hat_i||^2 for one head.
template <typename Scalar>
Scalar mse_head(const Mat<Scalar>& p, const Mat<Scalar>& p_hat, Mat<Scalar>* dp = nullptr,
                Mat<Scalar>* dp_hat = nullptr) {
  if (p.rows() != p_hat.rows() || p.cols() != p_hat.cols()) {
    throw std::invalid_argument("mse_consistency: views are misaligned (" +
                                std::to_string(p.rows()) + " vs " + std::to_string(p_hat.rows()) +
                                " rows)");
  }
  if (p.rows() == 0) {
    if (dp != nullptr) dp->setZero(p.rows(), p.cols());
    if (dp_hat != nullptr) dp_hat->setZero(p.rows(), p.cols());
    return 0;
  }
  const Scalar n = static_cast<Scalar>(p.rows());
  const Mat<Scalar> diff = p - p_hat;
  if (dp != nullptr) *dp = Scalar(2) * diff / n;
  if (dp_hat != nullptr) *dp_hat = Scalar(-2) * diff / n;
  return diff.squaredNorm() / n;
}

/// lambda * exp(-5 (1 - min(t, r)/r)^2)
inline double ramp_up(double t, double r, double lambda) {
  if (!(r > 0.0)) throw std::invalid_argument("ramp_up: r must be positive");
  const double x = 1.0 - std::min(std::max(t, 0.0), r) / r;
  return lambda * std::exp(-5.0 * x * x);
}

struct LossBreakdown {
  double bce_g = 0;
  double bce_p = 0;
  double jsd = 0;
  double ce = 0;
  double mse = 0;
  double ramp_weight = 0;
  double total = 0;

  /// Fills `total` and rejects non-finite components by name.
  void finalize();
};

inline void LossBreakdown::finalize() {
  const std::pair<const char*, double> parts[] = {
      {"bce_g", bce_g}, {"bce_p", bce_p}, {"jsd", jsd}, {"ce", ce}, {"mse", mse},
      {"ramp_weight", ramp_weight}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite loss component: ") + name);
  }
  total = bce_g + bce_p + jsd + ce + ramp_weight * mse;
}

}  // namespace ncd
