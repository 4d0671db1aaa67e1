#pragma once

// Two-branch network: a shared (frozen) convolutional extractor, one
// projection stage per branch, pooled embeddings and four linear heads.

#include <array>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ncd/common.hpp"
#include "ncd/nn.hpp"

namespace ncd {

struct ModelConfig {
  Index image_channels = 3;
  Index image_size = 32;
  std::vector<Index> extractor_channels{16, 32, 64};
  std::vector<Index> extractor_strides{2, 2, 1};
  Index proj_dim = 128;
  Index proj_kernel = 3;
  Index num_labeled = 5;    // C^l
  Index num_unlabeled = 5;  // C^u
  bool open_world = false;

  Index unlabeled_head_dim() const { return open_world ? num_labeled + num_unlabeled : num_unlabeled; }
  void validate() const;
};

inline void ModelConfig::validate() const {
  if (image_channels < 1 || image_size < 1 || proj_dim < 1 || proj_kernel < 1 ||
      num_labeled < 1 || num_unlabeled < 1) {
    throw std::invalid_argument("ModelConfig: sizes must be positive");
  }
  if (extractor_channels.empty() || extractor_channels.size() != extractor_strides.size()) {
    throw std::invalid_argument("ModelConfig: extractor_channels/extractor_strides mismatch");
  }
  for (std::size_t i = 0; i < extractor_channels.size(); ++i) {
    if (extractor_channels[i] < 1 || extractor_strides[i] < 1) {
      throw std::invalid_argument("ModelConfig: extractor stages must be positive");
    }
  }
}

enum Branch : int { kGlobalBranch = 0, kLocalBranch = 1 };

template <typename Scalar>
struct ForwardOutput {
  Index batch = 0;
  Index map_h = 0;
  Index map_w = 0;
  Mat<Scalar> features;                  // extractor output, d0 x B*hw
  std::array<Mat<Scalar>, 2> maps;       // projection outputs, d x B*hw
  std::array<Mat<Scalar>, 2> z;          // pooled embeddings, B x d
  std::array<Mat<Scalar>, 2> logits_l;   // B x C^l
  std::array<Mat<Scalar>, 2> logits_u;   // B x C^u (or C^l + C^u)
  std::array<Mat<Scalar>, 2> probs_l;
  std::array<Mat<Scalar>, 2> probs_u;

  Index locations() const { return map_h * map_w; }
  /// d x hw feature map of image b in branch `br`.
  auto map(int br, Index b) const { return maps[br].middleCols(b * locations(), locations()); }
};

template <typename Scalar>
struct ForwardCache {
  Mat<Scalar> input;
  std::vector<typename ConvRelu<Scalar>::Cache> extractor;
  std::array<typename ConvRelu<Scalar>::Cache, 2> proj;
};

/// Upstream gradients for one backward pass. Empty matrices mean "no
/// gradient from this output".
template <typename Scalar>
struct OutputGrads {
  std::array<Mat<Scalar>, 2> z;
  std::array<Mat<Scalar>, 2> logits_l;
  std::array<Mat<Scalar>, 2> logits_u;
};

template <typename Scalar>
class TwoBranchModel {
 public:
  using ParamVisitor = std::function<void(Param<Scalar>&, bool trainable)>;
  using ConstParamVisitor = std::function<void(const Param<Scalar>&, bool trainable)>;

  TwoBranchModel() = default;

  explicit TwoBranchModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Index ch = cfg_.image_channels;
    Index size = cfg_.image_size;
    for (std::size_t i = 0; i < cfg_.extractor_channels.size(); ++i) {
      ConvGeometry g{ch, cfg_.extractor_channels[i], 3, cfg_.extractor_strides[i], size, size};
      extractor_.emplace_back(g, "extractor." + std::to_string(i));
      ch = g.out_channels;
      size = g.out_h();
    }
    feature_channels_ = ch;
    map_size_ = size;
    const ConvGeometry pg{ch, cfg_.proj_dim, cfg_.proj_kernel, 1, size, size};
    static const std::array<const char*, 2> kNames{"global", "local"};
    for (int br = 0; br < 2; ++br) {
      const std::string n = kNames[br];
      proj_[br] = ConvRelu<Scalar>(pg, "proj_" + n);
      head_l_[br] = Linear<Scalar>(cfg_.proj_dim, cfg_.num_labeled, "head_l_" + n);
      head_u_[br] = Linear<Scalar>(cfg_.proj_dim, cfg_.unlabeled_head_dim(), "head_u_" + n);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  Index feature_channels() const { return feature_channels_; }
  Index map_size() const { return map_size_; }
  Index embed_dim() const { return cfg_.proj_dim; }
  Index image_elems() const { return cfg_.image_channels * cfg_.image_size * cfg_.image_size; }

  template <typename Rng>
  void init(Rng& rng) {
    for (auto& c : extractor_) c.init(rng);
    for (int br = 0; br < 2; ++br) {
      proj_[br].init(rng);
      head_l_[br].init(rng);
      head_u_[br].init(rng);
    }
  }

  bool extractor_frozen() const { return frozen_; }
  void set_extractor_frozen(bool frozen) { frozen_ = frozen; }

  bool training_started() const { return training_started_; }
  void mark_training_started() { training_started_ = true; }

  /// Rebuilds the unlabelled heads for open-world (C^l + C^u outputs) or
  /// closed-world (C^u outputs) operation.
  template <typename Rng>
  void set_open_world(bool open_world, Rng& rng) {
    if (training_started_) {
      throw StateError("extended_head_mode: heads cannot be rebuilt after training started");
    }
    cfg_.open_world = open_world;
    static const std::array<const char*, 2> kNames{"global", "local"};
    for (int br = 0; br < 2; ++br) {
      head_u_[br] = Linear<Scalar>(cfg_.proj_dim, cfg_.unlabeled_head_dim(),
                                   std::string("head_u_") + kNames[br]);
      head_u_[br].init(rng);
    }
  }

  /// Extractor output for a batch of images (image_channels x B*H*W).
  Mat<Scalar> extract(const Mat<Scalar>& images, Index batch, ForwardCache<Scalar>* cache) const {
    if (images.rows() != cfg_.image_channels ||
        images.cols() != batch * cfg_.image_size * cfg_.image_size) {
      throw std::invalid_argument("forward: expected " + std::to_string(cfg_.image_channels) +
                                  " x " + std::to_string(batch * cfg_.image_size * cfg_.image_size) +
                                  " input, got " + std::to_string(images.rows()) + " x " +
                                  std::to_string(images.cols()));
    }
    if (cache != nullptr) cache->extractor.resize(extractor_.size());
    Mat<Scalar> h = images.array() - Scalar(0.5);
    for (std::size_t i = 0; i < extractor_.size(); ++i) {
      h = extractor_[i].forward(h, batch, cache ? &cache->extractor[i] : nullptr);
    }
    return h;
  }

  ForwardOutput<Scalar> forward(const Mat<Scalar>& images, Index batch,
                                ForwardCache<Scalar>* cache = nullptr) const {
    return forward_features(extract(images, batch, cache), batch, cache);
  }

  /// Projections and heads on extractor output (feature_channels x B*h*w).
  ForwardOutput<Scalar> forward_features(Mat<Scalar> features, Index batch,
                                         ForwardCache<Scalar>* cache = nullptr) const {
    if (features.rows() != feature_channels_ || features.cols() != batch * map_size_ * map_size_) {
      throw std::invalid_argument("forward_features: feature shape mismatch");
    }
    ForwardOutput<Scalar> out;
    out.batch = batch;
    out.map_h = map_size_;
    out.map_w = map_size_;
    out.features = std::move(features);
    for (int br = 0; br < 2; ++br) {
      out.maps[br] = proj_[br].forward(out.features, batch, cache ? &cache->proj[br] : nullptr);
      out.z[br] = global_average_pool(out.maps[br], batch);
      out.logits_l[br] = head_l_[br].forward(out.z[br]);
      out.logits_u[br] = head_u_[br].forward(out.z[br]);
      out.probs_l[br] = softmax_rows(out.logits_l[br]);
      out.probs_u[br] = softmax_rows(out.logits_u[br]);
    }
    return out;
  }

  /// Single image (image_channels x H*W).
  ForwardOutput<Scalar> forward(const Mat<Scalar>& image) const { return forward(image, 1); }

  /// Accumulates parameter gradients. The extractor is skipped entirely
  /// while frozen, so its gradients stay exactly zero.
  void backward(const ForwardCache<Scalar>& cache, const ForwardOutput<Scalar>& fwd,
                const OutputGrads<Scalar>& grads) {
    Mat<Scalar> dfeat;
    const Index hw = fwd.locations();
    for (int br = 0; br < 2; ++br) {
      Mat<Scalar> dz = Mat<Scalar>::Zero(fwd.batch, cfg_.proj_dim);
      bool any = false;
      if (grads.z[br].size() > 0) {
        dz += grads.z[br];
        any = true;
      }
      if (grads.logits_l[br].size() > 0) {
        dz += head_l_[br].backward(fwd.z[br], grads.logits_l[br]);
        any = true;
      }
      if (grads.logits_u[br].size() > 0) {
        dz += head_u_[br].backward(fwd.z[br], grads.logits_u[br]);
        any = true;
      }
      if (!any) continue;
      const Mat<Scalar> dmap = global_average_pool_backward(dz, hw);
      Mat<Scalar> dpf = proj_[br].backward(cache.proj[br], dmap, !frozen_);
      if (!frozen_) {
        if (dfeat.size() == 0) {
          dfeat = std::move(dpf);
        } else {
          dfeat += dpf;
        }
      }
    }
    if (!frozen_ && dfeat.size() > 0) extractor_backward(cache, dfeat);
  }

  /// Backward through the extractor only (used when training it directly).
  void extractor_backward(const ForwardCache<Scalar>& cache, Mat<Scalar> dfeat) {
    for (std::size_t i = extractor_.size(); i-- > 0;) {
      dfeat = extractor_[i].backward(cache.extractor[i], dfeat, i > 0);
    }
  }

  void for_each_param(const ParamVisitor& fn) {
    for (auto& c : extractor_) {
      fn(c.weight, !frozen_);
      fn(c.bias, !frozen_);
    }
    for (int br = 0; br < 2; ++br) {
      fn(proj_[br].weight, true);
      fn(proj_[br].bias, true);
      fn(head_l_[br].weight, true);
      fn(head_l_[br].bias, true);
      fn(head_u_[br].weight, true);
      fn(head_u_[br].bias, true);
    }
  }

  void for_each_param(const ConstParamVisitor& fn) const {
    const_cast<TwoBranchModel*>(this)->for_each_param(
        [&fn](Param<Scalar>& p, bool trainable) { fn(p, trainable); });
  }

  void zero_grad() {
    for_each_param([](Param<Scalar>& p, bool) { p.zero_grad(); });
  }

  /// Order-sensitive FNV-1a hash over the raw bytes of the extractor weights.
  std::uint64_t extractor_checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& c : extractor_) {
      for (const auto* p : {&c.weight, &c.bias}) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        for (std::size_t i = 0; i < sizeof(Scalar) * static_cast<std::size_t>(p->value.size()); ++i) {
          h = (h ^ bytes[i]) * 1099511628211ULL;
        }
      }
    }
    return h;
  }

  std::vector<ConvRelu<Scalar>>& extractor_layers() { return extractor_; }
  ConvRelu<Scalar>& projection(int br) { return proj_[br]; }
  Linear<Scalar>& head_l(int br) { return head_l_[br]; }
  Linear<Scalar>& head_u(int br) { return head_u_[br]; }
  const Linear<Scalar>& head_u(int br) const { return head_u_[br]; }

 private:
  ModelConfig cfg_;
  std::vector<ConvRelu<Scalar>> extractor_;
  std::array<ConvRelu<Scalar>, 2> proj_;
  std::array<Linear<Scalar>, 2> head_l_;
  std::array<Linear<Scalar>, 2> head_u_;
  Index feature_channels_ = 0;
  Index map_size_ = 0;
  bool frozen_ = false;
  bool training_started_ = false;
};

/// Copy of `src` with every parameter converted to `To`.
template <typename To, typename From>
TwoBranchModel<To> cast_model(const TwoBranchModel<From>& src) {
  TwoBranchModel<To> dst(src.config());
  std::vector<const Param<From>*> from;
  src.for_each_param([&from](const Param<From>& p, bool) { from.push_back(&p); });
  std::size_t i = 0;
  dst.for_each_param([&](Param<To>& p, bool) {
    p.value = from[i++]->value.template cast<To>();
    p.zero_grad();
  });
  dst.set_extractor_frozen(src.extractor_frozen());
  return dst;
}

}  // namespace ncd
