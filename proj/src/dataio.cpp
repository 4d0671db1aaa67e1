#include "ncd/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ncd/binio.hpp"

namespace ncd {

namespace {

constexpr char kMagic[] = "NCDD1";
constexpr std::size_t kMagicLen = 5;
constexpr std::uint8_t kVersion = 1;

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& t : split(s, ',')) out.push_back(std::stoi(t));
  return out;
}

struct Motif {
  std::vector<float> pixels;  // C x S x S
};

}  // namespace

void DatasetBundle::validate() const {
  const Index c = num_classes();
  std::set<int> labeled(labeled_classes.begin(), labeled_classes.end());
  std::set<int> unlabeled(unlabeled_classes.begin(), unlabeled_classes.end());
  if (labeled.size() != labeled_classes.size() || unlabeled.size() != unlabeled_classes.size()) {
    throw std::invalid_argument("dataset manifest: duplicate class id in split");
  }
  for (int id : labeled) {
    if (unlabeled.count(id)) {
      throw std::invalid_argument("dataset manifest: class " + std::to_string(id) +
                                  " is both labelled and unlabelled");
    }
  }
  for (int id = 0; id < c; ++id) {
    if (!labeled.count(id) && !unlabeled.count(id)) {
      throw std::invalid_argument("dataset manifest: class " + std::to_string(id) +
                                  " is in neither split");
    }
  }
  if (static_cast<Index>(labeled.size() + unlabeled.size()) != c) {
    throw std::invalid_argument("dataset manifest: split references unknown class ids");
  }
  if (static_cast<Index>(labels.size()) != size()) {
    throw std::invalid_argument("dataset: label count differs from image count");
  }
  for (auto y : labels) {
    if (static_cast<Index>(y) >= c) throw std::invalid_argument("dataset: label out of range");
  }
}

void SynthConfig::validate() const {
  std::vector<std::string> bad;
  if (num_classes < 2) bad.emplace_back("num_classes");
  if (images_per_class < 1) bad.emplace_back("images_per_class");
  if (image_size < 1) bad.emplace_back("image_size");
  if (motif_pool < 1) bad.emplace_back("motif_pool");
  if (motifs_per_class < 1 || motifs_per_class > motif_pool) bad.emplace_back("motifs_per_class");
  if (motif_size < 1 || motif_size > image_size) bad.emplace_back("motif_size");
  if (motifs_per_image < 1) bad.emplace_back("motifs_per_image");
  if (noise_sigma < 0) bad.emplace_back("noise_sigma");
  if (tint_strength < 0) bad.emplace_back("tint_strength");
  if (color_jitter < 0) bad.emplace_back("color_jitter");
  if (!bad.empty()) {
    std::string msg = "invalid synth config:";
    for (const auto& b : bad) msg += " " + b;
    throw std::invalid_argument(msg);
  }
}

DatasetBundle synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const Index s = cfg.motif_size;
  const Index size = cfg.image_size;
  const Index free = size - s + 1;
  if (cfg.motifs_per_image * s * s > size * size / 2) {
    throw std::invalid_argument("synth_generate: infeasible placement (" +
                                std::to_string(cfg.motifs_per_image) + " motifs of " +
                                std::to_string(s) + "x" + std::to_string(s) + " in " +
                                std::to_string(size) + "x" + std::to_string(size) + ")");
  }
  std::mt19937_64 rng(stream_seed(cfg.seed, Stream::kData));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Motif> pool(static_cast<std::size_t>(cfg.motif_pool));
  for (auto& m : pool) {
    std::array<double, 3> color{unit(rng), unit(rng), unit(rng)};
    std::vector<int> bits(static_cast<std::size_t>(s * s));
    do {
      for (auto& b : bits) b = unit(rng) < 0.5 ? 1 : 0;
    } while (s > 1 && (std::count(bits.begin(), bits.end(), 1) == 0 ||
                       std::count(bits.begin(), bits.end(), 0) == 0));
    m.pixels.resize(static_cast<std::size_t>(3 * s * s));
    for (Index c = 0; c < 3; ++c) {
      for (Index p = 0; p < s * s; ++p) {
        const double v = bits[static_cast<std::size_t>(p)] ? color[c] : 1.0 - color[c];
        m.pixels[static_cast<std::size_t>(c * s * s + p)] = static_cast<float>(v);
      }
    }
  }

  // Each class owns a distinct motif subset and a fixed tint.
  std::vector<std::vector<int>> class_motifs;
  std::set<std::vector<int>> used;
  std::vector<std::array<double, 3>> tints;
  for (Index c = 0; c < cfg.num_classes; ++c) {
    std::vector<int> subset;
    for (int attempt = 0;; ++attempt) {
      std::vector<int> ids(static_cast<std::size_t>(cfg.motif_pool));
      std::iota(ids.begin(), ids.end(), 0);
      std::shuffle(ids.begin(), ids.end(), rng);
      subset.assign(ids.begin(), ids.begin() + cfg.motifs_per_class);
      std::sort(subset.begin(), subset.end());
      if (!used.count(subset)) break;
      if (attempt > 1000) {
        throw std::invalid_argument("synth_generate: motif pool too small for distinct classes");
      }
    }
    used.insert(subset);
    class_motifs.push_back(subset);
    std::array<double, 3> t{gauss(rng), gauss(rng), gauss(rng)};
    const double n = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]) + 1e-12;
    for (auto& v : t) v *= cfg.tint_strength / n;
    tints.push_back(t);
  }

  DatasetBundle out;
  out.images.channels = 3;
  out.images.height = size;
  out.images.width = size;
  out.images.pixels.reserve(static_cast<std::size_t>(cfg.num_classes * cfg.images_per_class * 3 * size * size));
  std::vector<float> img(static_cast<std::size_t>(3 * size * size));
  std::uniform_int_distribution<Index> pos(0, free - 1);
  for (Index c = 0; c < cfg.num_classes; ++c) {
    out.class_names.push_back("class_" + std::to_string(c));
    const auto& motifs = class_motifs[static_cast<std::size_t>(c)];
    for (Index i = 0; i < cfg.images_per_class; ++i) {
      std::array<double, 3> jitter{};
      for (auto& j : jitter) j = (2.0 * unit(rng) - 1.0) * cfg.color_jitter;
      for (Index ch = 0; ch < 3; ++ch) {
        const double base = 0.5 + tints[static_cast<std::size_t>(c)][ch] + jitter[ch];
        for (Index p = 0; p < size * size; ++p) {
          img[static_cast<std::size_t>(ch * size * size + p)] =
              static_cast<float>(base + cfg.noise_sigma * gauss(rng));
        }
      }
      std::vector<int> chosen = motifs;
      std::shuffle(chosen.begin(), chosen.end(), rng);
      std::vector<int> placed;
      for (Index k = 0; k < cfg.motifs_per_image; ++k) {
        placed.push_back(k < static_cast<Index>(chosen.size())
                             ? chosen[static_cast<std::size_t>(k)]
                             : motifs[static_cast<std::size_t>(rng() % motifs.size())]);
      }
      std::vector<std::pair<Index, Index>> boxes;
      for (int id : placed) {
        Index y = 0, x = 0;
        bool ok = false;
        for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
          y = pos(rng);
          x = pos(rng);
          ok = std::all_of(boxes.begin(), boxes.end(), [&](const auto& b) {
            return y + s <= b.first || b.first + s <= y || x + s <= b.second || b.second + s <= x;
          });
        }
        if (!ok) throw std::invalid_argument("synth_generate: infeasible placement");
        boxes.emplace_back(y, x);
        const auto& m = pool[static_cast<std::size_t>(id)].pixels;
        for (Index ch = 0; ch < 3; ++ch) {
          for (Index dy = 0; dy < s; ++dy) {
            for (Index dx = 0; dx < s; ++dx) {
              img[static_cast<std::size_t>(ch * size * size + (y + dy) * size + x + dx)] =
                  m[static_cast<std::size_t>(ch * s * s + dy * s + dx)];
            }
          }
        }
      }
      for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
      out.images.append(img.data());
      out.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  for (Index c = 0; c < cfg.num_classes; ++c) {
    (c < cfg.num_classes / 2 ? out.labeled_classes : out.unlabeled_classes).push_back(static_cast<int>(c));
  }
  return out;
}

namespace {

std::vector<int> check_class_ids(const DatasetBundle& bundle, const std::vector<int>& ids) {
  std::set<int> set;
  for (int id : ids) {
    if (id < 0 || id >= bundle.num_classes()) {
      throw std::invalid_argument("split_classes: unknown class id " + std::to_string(id));
    }
    set.insert(id);
  }
  if (set.empty()) throw std::invalid_argument("split_classes: no labelled classes");
  if (static_cast<Index>(set.size()) == bundle.num_classes()) {
    throw std::invalid_argument("split_classes: every class is labelled; nothing to discover");
  }
  return {set.begin(), set.end()};
}

}  // namespace

Split split_classes(const DatasetBundle& bundle, const std::vector<int>& labeled_class_ids) {
  const auto labeled = check_class_ids(bundle, labeled_class_ids);
  Split out;
  out.labeled.class_ids = labeled;
  for (int c = 0; c < bundle.num_classes(); ++c) {
    if (!std::binary_search(labeled.begin(), labeled.end(), c)) out.novel_class_ids.push_back(c);
  }
  std::vector<int> remap(static_cast<std::size_t>(bundle.num_classes()), -1);
  for (std::size_t i = 0; i < labeled.size(); ++i) remap[static_cast<std::size_t>(labeled[i])] = static_cast<int>(i);
  for (std::size_t i = 0; i < out.novel_class_ids.size(); ++i) {
    remap[static_cast<std::size_t>(out.novel_class_ids[i])] = static_cast<int>(i);
  }
  for (auto* set : {&out.labeled.images, &out.unlabeled.images}) {
    set->channels = bundle.images.channels;
    set->height = bundle.images.height;
    set->width = bundle.images.width;
  }
  for (Index i = 0; i < bundle.size(); ++i) {
    const int y = static_cast<int>(bundle.labels[static_cast<std::size_t>(i)]);
    if (std::binary_search(labeled.begin(), labeled.end(), y)) {
      out.labeled.images.append(bundle.images.data(i));
      out.labeled.labels.push_back(remap[static_cast<std::size_t>(y)]);
    } else {
      out.unlabeled.images.append(bundle.images.data(i));
      out.truth.labels.push_back(remap[static_cast<std::size_t>(y)]);
    }
  }
  out.truth.num_classes = static_cast<Index>(out.novel_class_ids.size());
  return out;
}

Split split_open_world(const DatasetBundle& bundle, const std::vector<int>& labeled_class_ids,
                       double labeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0)) {
    throw std::invalid_argument("split_open_world: labeled_fraction must be in (0, 1)");
  }
  const auto seen = check_class_ids(bundle, labeled_class_ids);
  Split out;
  out.labeled.class_ids = seen;
  for (int c = 0; c < bundle.num_classes(); ++c) {
    if (!std::binary_search(seen.begin(), seen.end(), c)) out.novel_class_ids.push_back(c);
  }
  const int cl = static_cast<int>(seen.size());
  std::vector<int> remap(static_cast<std::size_t>(bundle.num_classes()), -1);
  for (std::size_t i = 0; i < seen.size(); ++i) remap[static_cast<std::size_t>(seen[i])] = static_cast<int>(i);
  for (std::size_t i = 0; i < out.novel_class_ids.size(); ++i) {
    remap[static_cast<std::size_t>(out.novel_class_ids[i])] = cl + static_cast<int>(i);
  }
  for (auto* set : {&out.labeled.images, &out.unlabeled.images}) {
    set->channels = bundle.images.channels;
    set->height = bundle.images.height;
    set->width = bundle.images.width;
  }
  // Per seen class, a seeded subset of images keeps its label.
  std::mt19937_64 rng(stream_seed(seed, Stream::kData, 0x6f77));
  std::vector<bool> keep_label(static_cast<std::size_t>(bundle.size()), false);
  for (int c : seen) {
    std::vector<Index> members;
    for (Index i = 0; i < bundle.size(); ++i) {
      if (static_cast<int>(bundle.labels[static_cast<std::size_t>(i)]) == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < n; ++k) keep_label[static_cast<std::size_t>(members[k])] = true;
  }
  for (Index i = 0; i < bundle.size(); ++i) {
    const int y = static_cast<int>(bundle.labels[static_cast<std::size_t>(i)]);
    const int mapped = remap[static_cast<std::size_t>(y)];
    if (keep_label[static_cast<std::size_t>(i)]) {
      out.labeled.images.append(bundle.images.data(i));
      out.labeled.labels.push_back(mapped);
    } else {
      out.unlabeled.images.append(bundle.images.data(i));
      out.truth.labels.push_back(mapped);
      out.truth.seen.push_back(mapped < cl);
    }
  }
  out.truth.num_classes = cl + static_cast<Index>(out.novel_class_ids.size());
  return out;
}

std::vector<std::uint8_t> encode_dataset(const DatasetBundle& bundle) {
  bundle.validate();
  ByteWriter w;
  w.raw(kMagic, kMagicLen);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(bundle.size()));
  w.u32(static_cast<std::uint32_t>(bundle.images.channels));
  w.u32(static_cast<std::uint32_t>(bundle.images.height));
  w.u32(static_cast<std::uint32_t>(bundle.images.width));
  w.raw(bundle.images.pixels.data(), bundle.images.pixels.size() * sizeof(float));
  w.raw(bundle.labels.data(), bundle.labels.size() * sizeof(std::uint32_t));
  std::string manifest;
  manifest += "class_names=";
  for (std::size_t i = 0; i < bundle.class_names.size(); ++i) {
    if (i) manifest += ',';
    manifest += bundle.class_names[i];
  }
  manifest += "\nlabeled_classes=" + join_ints(bundle.labeled_classes);
  manifest += "\nunlabeled_classes=" + join_ints(bundle.unlabeled_classes) + "\n";
  w.str(manifest);
  const auto& b = w.buffer();
  return {b.begin(), b.end()};
}

DatasetBundle decode_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes.data(), bytes.size());
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError("bad magic: expected \"NCDD1\"", 0);
  }
  r.bytes(kMagicLen, "magic");
  const auto version = r.u8("version");
  if (version != kVersion) {
    throw FormatError("unsupported NCDD1 version " + std::to_string(version), r.offset() - 1);
  }
  DatasetBundle out;
  const std::uint64_t n = r.u32("N");
  out.images.channels = r.u32("C");
  out.images.height = r.u32("H");
  out.images.width = r.u32("W");
  const std::uint64_t pix = n * static_cast<std::uint64_t>(out.images.image_elems());
  const std::uint64_t payload = pix * sizeof(float) + n * sizeof(std::uint32_t);
  if (payload + 4 > r.remaining()) {
    throw FormatError("header dims (N=" + std::to_string(n) + ", C=" +
                          std::to_string(out.images.channels) + ", H=" +
                          std::to_string(out.images.height) + ", W=" +
                          std::to_string(out.images.width) + ") exceed payload of " +
                          std::to_string(r.remaining()) + " bytes",
                      r.offset());
  }
  out.images.pixels.resize(static_cast<std::size_t>(pix));
  r.copy(out.images.pixels.data(), static_cast<std::size_t>(pix) * sizeof(float), "images");
  out.labels.resize(static_cast<std::size_t>(n));
  r.copy(out.labels.data(), static_cast<std::size_t>(n) * sizeof(std::uint32_t), "labels");
  const std::size_t manifest_at = r.offset();
  const std::string manifest = r.str("manifest");
  if (!r.done()) {
    throw FormatError("trailing bytes after manifest (header dims inconsistent with payload)",
                      r.offset());
  }
  bool have_names = false;
  for (const auto& line : split(manifest, '\n')) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "class_names") {
      out.class_names = split(value, ',');
      have_names = true;
    } else if (key == "labeled_classes") {
      out.labeled_classes = parse_ints(value);
    } else if (key == "unlabeled_classes") {
      out.unlabeled_classes = parse_ints(value);
    }
  }
  if (!have_names) throw FormatError("manifest lacks class_names", manifest_at);
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what(), manifest_at);
  }
  return out;
}

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = encode_dataset(bundle);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

DatasetBundle load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

void hflip(const float* src, float* dst, Index channels, Index height, Index width) {
  for (Index c = 0; c < channels; ++c) {
    for (Index y = 0; y < height; ++y) {
      const float* row = src + (c * height + y) * width;
      float* out = dst + (c * height + y) * width;
      if (row == out) {
        std::reverse(out, out + width);
      } else {
        std::reverse_copy(row, row + width, out);
      }
    }
  }
}

void augment(const float* src, float* dst, Index channels, Index height, Index width,
             std::mt19937_64& rng, const AugmentPolicy& policy) {
  const Index n = channels * height * width;
  std::vector<float> tmp(src, src + n);
  if (policy.flip && std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
    hflip(tmp.data(), tmp.data(), channels, height, width);
  }
  if (policy.max_translate > 0) {
    std::uniform_int_distribution<Index> shift(-policy.max_translate, policy.max_translate);
    const Index dy = shift(rng);
    const Index dx = shift(rng);
    if (dy != 0 || dx != 0) {
      std::vector<float> moved(static_cast<std::size_t>(n));
      for (Index c = 0; c < channels; ++c) {
        for (Index y = 0; y < height; ++y) {
          const Index sy = std::clamp<Index>(y - dy, 0, height - 1);
          for (Index x = 0; x < width; ++x) {
            const Index sx = std::clamp<Index>(x - dx, 0, width - 1);
            moved[static_cast<std::size_t>((c * height + y) * width + x)] =
                tmp[static_cast<std::size_t>((c * height + sy) * width + sx)];
          }
        }
      }
      tmp.swap(moved);
    }
  }
  if (policy.noise_sigma > 0) {
    // Box-Muller, two normals per 64-bit draw.
    constexpr double kTwoPi = 6.283185307179586;
    constexpr double kInv32 = 1.0 / 4294967296.0;
    for (std::size_t i = 0; i < tmp.size(); i += 2) {
      const std::uint64_t bits = rng();
      const double u1 = (static_cast<double>(bits >> 32) + 0.5) * kInv32;
      const double u2 = (static_cast<double>(bits & 0xffffffffULL) + 0.5) * kInv32;
      const double r = policy.noise_sigma * std::sqrt(-2.0 * std::log(u1));
      tmp[i] = static_cast<float>(tmp[i] + r * std::cos(kTwoPi * u2));
      if (i + 1 < tmp.size()) tmp[i + 1] = static_cast<float>(tmp[i + 1] + r * std::sin(kTwoPi * u2));
    }
  }
  for (Index i = 0; i < n; ++i) dst[i] = std::clamp(tmp[static_cast<std::size_t>(i)], 0.0f, 1.0f);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace ncd
