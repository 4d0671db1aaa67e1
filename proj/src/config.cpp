#include "ncd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace ncd {

std::string to_string(BranchConfig b) {
  switch (b) {
    case BranchConfig::kGlobalOnly:
      return "global-only";
    case BranchConfig::kLocalOnly:
      return "local-only";
    case BranchConfig::kGlobalGlobal:
      return "global+global";
    case BranchConfig::kLocalLocal:
      return "local+local";
    case BranchConfig::kGlobalLocal:
      return "global+local";
  }
  return "?";
}

std::string to_string(LabelMode m) {
  switch (m) {
    case LabelMode::kRsSoft:
      return "rs-soft";
    case LabelMode::kRsHard:
      return "rs-hard";
    case LabelMode::kCosineSoft:
      return "cosine-soft";
    case LabelMode::kCosineHard:
      return "cosine-hard";
    case LabelMode::kMixed:
      return "mixed";
  }
  return "?";
}

BranchConfig parse_branch_config(const std::string& s) {
  for (auto b : {BranchConfig::kGlobalOnly, BranchConfig::kLocalOnly, BranchConfig::kGlobalGlobal,
                 BranchConfig::kLocalLocal, BranchConfig::kGlobalLocal}) {
    if (to_string(b) == s) return b;
  }
  throw std::invalid_argument("unknown branch config '" + s + "'");
}

LabelMode parse_label_mode(const std::string& s) {
  if (s == "mixed-local-pos-global-neg") return LabelMode::kMixed;
  for (auto m : {LabelMode::kRsSoft, LabelMode::kRsHard, LabelMode::kCosineSoft,
                 LabelMode::kCosineHard, LabelMode::kMixed}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown label mode '" + s + "'");
}

double TrainConfig::lr_at_epoch(int epoch) const {
  double lr_now = lr;
  for (int boundary : lr_decay_epochs) {
    if (epoch > boundary) lr_now /= lr_decay_factor;
  }
  return lr_now;
}

bool operator==(const SynthConfig& a, const SynthConfig& b) {
  return a.num_classes == b.num_classes && a.images_per_class == b.images_per_class &&
         a.image_size == b.image_size && a.motif_pool == b.motif_pool &&
         a.motifs_per_class == b.motifs_per_class && a.motif_size == b.motif_size &&
         a.motifs_per_image == b.motifs_per_image && a.noise_sigma == b.noise_sigma &&
         a.tint_strength == b.tint_strength && a.color_jitter == b.color_jitter && a.seed == b.seed;
}

bool RunConfig::operator==(const RunConfig& o) const {
  return synth == o.synth && labeled_classes == o.labeled_classes && open_world == o.open_world &&
         open_world_labeled_fraction == o.open_world_labeled_fraction &&
         extractor_channels == o.extractor_channels && extractor_strides == o.extractor_strides &&
         proj_dim == o.proj_dim && proj_kernel == o.proj_kernel && train == o.train && seed == o.seed;
}

ModelConfig RunConfig::model_config(Index num_labeled, Index num_unlabeled) const {
  ModelConfig m;
  m.image_size = synth.image_size;
  m.extractor_channels = extractor_channels;
  m.extractor_strides = extractor_strides;
  m.proj_dim = proj_dim;
  m.proj_kernel = proj_kernel;
  m.num_labeled = num_labeled;
  m.num_unlabeled = num_unlabeled;
  m.open_world = open_world;
  return m;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected an unsigned integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true/false, got '" + s + "'");
}

template <typename T>
std::vector<T> to_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<T>(to_int(item)));
  }
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define NCD_INT(name, expr)                                                        \
  Field {                                                                          \
    name, [](const RunConfig& c) { return std::to_string(c.expr); },               \
        [](RunConfig& c, const std::string& v) { c.expr = static_cast<decltype(c.expr)>(to_int(v)); } \
  }
#define NCD_U64(name, expr)                                          \
  Field {                                                            \
    name, [](const RunConfig& c) { return std::to_string(c.expr); }, \
        [](RunConfig& c, const std::string& v) { c.expr = to_u64(v); } \
  }
#define NCD_DBL(name, expr)                                          \
  Field {                                                            \
    name, [](const RunConfig& c) { return fmt_double(c.expr); },     \
        [](RunConfig& c, const std::string& v) { c.expr = to_double(v); } \
  }
#define NCD_BOOL(name, expr)                                                    \
  Field {                                                                       \
    name, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.expr = to_bool(v); }         \
  }
#define NCD_LIST(name, expr, T)                                      \
  Field {                                                            \
    name, [](const RunConfig& c) { return join(c.expr); },           \
        [](RunConfig& c, const std::string& v) { c.expr = to_list<T>(v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      NCD_U64("seed", seed),
      // synthetic data
      NCD_INT("num_classes", synth.num_classes),
      NCD_INT("images_per_class", synth.images_per_class),
      NCD_INT("image_size", synth.image_size),
      NCD_INT("motif_pool", synth.motif_pool),
      NCD_INT("motifs_per_class", synth.motifs_per_class),
      NCD_INT("motif_size", synth.motif_size),
      NCD_INT("motifs_per_image", synth.motifs_per_image),
      NCD_DBL("noise_sigma", synth.noise_sigma),
      NCD_DBL("tint_strength", synth.tint_strength),
      NCD_DBL("color_jitter", synth.color_jitter),
      NCD_U64("data_seed", synth.seed),
      // split
      NCD_LIST("labeled_classes", labeled_classes, int),
      NCD_BOOL("open_world", open_world),
      NCD_DBL("open_world_labeled_fraction", open_world_labeled_fraction),
      // model
      NCD_LIST("extractor_channels", extractor_channels, Index),
      NCD_LIST("extractor_strides", extractor_strides, Index),
      NCD_INT("proj_dim", proj_dim),
      NCD_INT("proj_kernel", proj_kernel),
      // pseudo-labels, banks, distillation
      NCD_INT("k_global", train.k_global),
      NCD_INT("k_local", train.k_local),
      NCD_DBL("tau", train.tau),
      NCD_INT("bank_capacity_v", train.bank_capacity_v),
      NCD_INT("bank_capacity_bp", train.bank_capacity_bp),
      NCD_INT("bank_capacity_bg", train.bank_capacity_bg),
      NCD_INT("local_warmup_parts", train.local_warmup_parts),
      Field{"branch_config", [](const RunConfig& c) { return to_string(c.train.branch_config); },
            [](RunConfig& c, const std::string& v) { c.train.branch_config = parse_branch_config(v); }},
      Field{"label_mode", [](const RunConfig& c) { return to_string(c.train.label_mode); },
            [](RunConfig& c, const std::string& v) { c.train.label_mode = parse_label_mode(v); }},
      NCD_DBL("cosine_threshold", train.cosine_threshold),
      NCD_BOOL("use_bce", train.use_bce),
      NCD_BOOL("use_jsd", train.use_jsd),
      NCD_BOOL("use_ce", train.use_ce),
      NCD_BOOL("use_mse", train.use_mse),
      // optimisation
      NCD_INT("labeled_batch", train.labeled_batch),
      NCD_INT("unlabeled_batch", train.unlabeled_batch),
      NCD_INT("epochs", train.epochs),
      NCD_DBL("lr", train.lr),
      NCD_DBL("lr_decay_factor", train.lr_decay_factor),
      NCD_LIST("lr_decay_epochs", train.lr_decay_epochs, int),
      NCD_DBL("momentum", train.momentum),
      NCD_DBL("lambda", train.lambda),
      NCD_DBL("ramp_length", train.ramp_length),
      NCD_BOOL("ramp_per_step", train.ramp_per_step),
      NCD_BOOL("augment_flip", train.augment_flip),
      NCD_INT("augment_translate", train.augment_translate),
      NCD_DBL("augment_noise", train.augment_noise),
      // extractor initialisation: supervised cross-entropy on the labelled split
      Field{"extractor_init", [](const RunConfig&) { return std::string("supervised-ce"); },
            [](RunConfig&, const std::string& v) {
              if (v != "supervised-ce") throw std::invalid_argument("only 'supervised-ce' is supported");
            }},
      NCD_INT("pretrain_epochs", train.pretrain_epochs),
      Field{"pretrain_optimizer", [](const RunConfig& c) { return c.train.pretrain_optimizer; },
            [](RunConfig& c, const std::string& v) { c.train.pretrain_optimizer = v; }},
      NCD_DBL("pretrain_lr", train.pretrain_lr),
      NCD_INT("pretrain_batch", train.pretrain_batch),
  };
  return kFields;
}

#undef NCD_INT
#undef NCD_U64
#undef NCD_DBL
#undef NCD_BOOL
#undef NCD_LIST

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> bad;
  try {
    synth.validate();
  } catch (const std::invalid_argument& e) {
    bad.emplace_back(e.what());
  }
  const auto& t = train;
  auto require = [&bad](bool ok, const char* what) {
    if (!ok) bad.emplace_back(what);
  };
  require(!labeled_classes.empty(), "labeled_classes: must not be empty");
  for (int c : labeled_classes) {
    if (c < 0 || c >= synth.num_classes) {
      bad.emplace_back("labeled_classes: id " + std::to_string(c) + " outside [0, num_classes)");
    }
  }
  require(static_cast<Index>(labeled_classes.size()) < synth.num_classes,
          "labeled_classes: at least one class must stay unlabelled");
  require(open_world_labeled_fraction > 0 && open_world_labeled_fraction < 1,
          "open_world_labeled_fraction: must be in (0, 1)");
  require(!extractor_channels.empty() && extractor_channels.size() == extractor_strides.size(),
          "extractor_channels/extractor_strides: lengths must match and be non-zero");
  for (auto v : extractor_channels) require(v > 0, "extractor_channels: must be positive");
  for (auto v : extractor_strides) require(v > 0, "extractor_strides: must be positive");
  require(proj_dim > 0, "proj_dim: must be positive");
  require(proj_kernel > 0 && proj_kernel % 2 == 1, "proj_kernel: must be a positive odd number");
  require(t.k_global >= 1, "k_global: must be >= 1");
  require(t.k_global <= proj_dim, "k_global: must not exceed proj_dim");
  require(t.k_local >= 1, "k_local: must be >= 1");
  require(t.k_local <= t.bank_capacity_v, "k_local: must not exceed bank_capacity_v");
  require(t.tau > 0, "tau: must be positive");
  require(t.bank_capacity_v > 0, "bank_capacity_v: must be positive");
  require(t.bank_capacity_bp > 0, "bank_capacity_bp: must be positive");
  require(t.bank_capacity_bg > 0, "bank_capacity_bg: must be positive");
  require(t.bank_capacity_bp == t.bank_capacity_bg,
          "bank_capacity_bp/bank_capacity_bg: distillation banks must have equal capacity");
  require(t.labeled_batch > 0, "labeled_batch: must be positive");
  require(t.unlabeled_batch > 1, "unlabeled_batch: must be at least 2");
  require(t.labeled_batch + t.unlabeled_batch <= t.bank_capacity_v,
          "bank_capacity_v: must hold one step of parts (labeled_batch + unlabeled_batch)");
  require(t.labeled_batch + t.unlabeled_batch <= t.bank_capacity_bg,
          "bank_capacity_bg: must hold one step of features");
  require(t.epochs > 0, "epochs: must be positive");
  require(t.lr > 0, "lr: must be positive");
  require(t.lr_decay_factor > 0, "lr_decay_factor: must be positive");
  require(t.momentum >= 0 && t.momentum < 1, "momentum: must be in [0, 1)");
  require(t.lambda > 0, "lambda: must be positive");
  require(t.ramp_length > 0, "ramp_length: must be positive");
  require(t.cosine_threshold >= -1 && t.cosine_threshold <= 1, "cosine_threshold: must be in [-1, 1]");
  require(t.local_warmup_parts >= 0, "local_warmup_parts: must be >= 0");
  require(t.augment_translate >= 0, "augment_translate: must be >= 0");
  require(t.augment_noise >= 0, "augment_noise: must be >= 0");
  require(t.pretrain_epochs >= 0, "pretrain_epochs: must be >= 0");
  require(t.pretrain_optimizer == "adam" || t.pretrain_optimizer == "sgd",
          "pretrain_optimizer: must be adam or sgd");
  require(t.pretrain_lr > 0, "pretrain_lr: must be positive");
  require(t.pretrain_batch > 0, "pretrain_batch: must be positive");
  return bad;
}

void RunConfig::validate() const {
  const auto bad = violations();
  if (bad.empty()) return;
  std::string msg = "invalid config: ";
  for (std::size_t i = 0; i < bad.size(); ++i) {
    if (i) msg += "; ";
    msg += bad[i];
  }
  throw std::invalid_argument(msg);
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw std::invalid_argument("unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(key + ": " + e.what());
  }
}

RunConfig parse_config(const std::string& text, const RunConfig& defaults) {
  RunConfig cfg = defaults;
  std::vector<std::string> errors;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (const auto& v : cfg.violations()) errors.push_back(v);
  if (!errors.empty()) {
    std::string msg = "invalid config: ";
    for (std::size_t i = 0; i < errors.size(); ++i) {
      if (i) msg += "; ";
      msg += errors[i];
    }
    throw std::invalid_argument(msg);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace ncd
