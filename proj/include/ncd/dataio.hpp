#pragma once

// Synthetic part-structured image datasets, the NCDD1 container, class
// splits and training-time augmentation.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ncd/common.hpp"

namespace ncd {

/// Contiguous N x C x H x W single-precision images.
struct ImageSet {
  Index channels = 3;
  Index height = 0;
  Index width = 0;
  std::vector<float> pixels;

  Index image_elems() const { return channels * height * width; }
  Index size() const { return image_elems() == 0 ? 0 : static_cast<Index>(pixels.size()) / image_elems(); }

  const float* data(Index i) const { return pixels.data() + i * image_elems(); }
  float* data(Index i) { return pixels.data() + i * image_elems(); }

  /// Image i as channels x (H*W), the layout the model consumes.
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> image(
      Index i) const {
    return {data(i), channels, height * width};
  }

  void append(const float* img) { pixels.insert(pixels.end(), img, img + image_elems()); }
};

struct DatasetBundle {
  ImageSet images;
  std::vector<std::uint32_t> labels;
  std::vector<std::string> class_names;
  std::vector<int> labeled_classes;
  std::vector<int> unlabeled_classes;

  Index size() const { return images.size(); }
  Index num_classes() const { return static_cast<Index>(class_names.size()); }
  /// Throws unless the split manifest partitions the class set.
  void validate() const;
};

struct SynthConfig {
  Index num_classes = 10;
  Index images_per_class = 500;
  Index image_size = 32;
  Index motif_pool = 12;
  Index motifs_per_class = 3;
  Index motif_size = 4;
  Index motifs_per_image = 3;
  double noise_sigma = 0.05;
  double tint_strength = 0.05;
  /// Per-image random colour cast shared by no class (nuisance factor).
  double color_jitter = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

DatasetBundle synth_generate(const SynthConfig& cfg);

/// Labelled half of a split. `labels` are remapped to [0, C^l) in the order
/// of `class_ids`.
struct LabeledSet {
  ImageSet images;
  std::vector<int> labels;
  std::vector<int> class_ids;
  Index num_classes() const { return static_cast<Index>(class_ids.size()); }
};

/// Unlabelled images. Their ground truth lives in a separate HiddenLabels
/// value that only the evaluation code receives.
struct UnlabeledSet {
  ImageSet images;
  Index size() const { return images.size(); }
};

struct HiddenLabels {
  std::vector<int> labels;  // remapped: novel classes to [0, C^u); in open world, seen to [0, C^l) and novel to C^l + j
  std::vector<bool> seen;   // open world only: true for instances of labelled classes
  Index num_classes = 0;
};

struct Split {
  LabeledSet labeled;
  UnlabeledSet unlabeled;
  HiddenLabels truth;
  std::vector<int> novel_class_ids;
};

/// Labelled classes keep all their images with labels; the remaining classes
/// become the unlabelled set.
Split split_classes(const DatasetBundle& bundle, const std::vector<int>& labeled_class_ids);

/// Open-world split: a `labeled_fraction` of each seen class is labelled, the
/// rest of the seen images join the novel-class images in the unlabelled set.
Split split_open_world(const DatasetBundle& bundle, const std::vector<int>& labeled_class_ids,
                       double labeled_fraction, std::uint64_t seed);

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path);
DatasetBundle load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const DatasetBundle& bundle);
DatasetBundle decode_dataset(const std::vector<std::uint8_t>& bytes);

struct AugmentPolicy {
  bool flip = true;
  Index max_translate = 4;
  double noise_sigma = 0.02;

  static AugmentPolicy identity() { return {false, 0, 0.0}; }
};

/// Horizontal mirror of one C x H x W image.
void hflip(const float* src, float* dst, Index channels, Index height, Index width);

/// Random flip, translation (edge-replicated) and Gaussian pixel noise,
/// clamped to [0, 1].
void augment(const float* src, float* dst, Index channels, Index height, Index width,
             std::mt19937_64& rng, const AugmentPolicy& policy);

/// Stacks images `indices` into the model input layout:
/// channels x (B*H*W), column b*H*W + y*W + x.
template <typename Scalar>
Mat<Scalar> gather_batch(const ImageSet& set, const std::vector<Index>& indices) {
  const Index hw = set.height * set.width;
  Mat<Scalar> out(set.channels, static_cast<Index>(indices.size()) * hw);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    out.middleCols(static_cast<Index>(b) * hw, hw) = set.image(indices[b]).template cast<Scalar>();
  }
  return out;
}

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace ncd
