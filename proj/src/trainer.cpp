#include "ncd/trainer.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <random>
#include <thread>

#include "ncd/binio.hpp"

namespace ncd {

BranchPlan plan_branches(const TrainConfig& cfg) {
  BranchPlan p;
  switch (cfg.branch_config) {
    case BranchConfig::kGlobalOnly:
      p.active = {true, false};
      p.local_kind = {false, false};
      break;
    case BranchConfig::kLocalOnly:
      p.active = {false, true};
      p.local_kind = {false, true};
      break;
    case BranchConfig::kGlobalGlobal:
      p.active = {true, true};
      p.local_kind = {false, false};
      break;
    case BranchConfig::kLocalLocal:
      p.active = {true, true};
      p.local_kind = {true, true};
      break;
    case BranchConfig::kGlobalLocal:
      p.active = {true, true};
      p.local_kind = {false, true};
      break;
  }
  for (int br = 0; br < 2; ++br) {
    p.needs_dictionary[br] = p.active[br] && (p.local_kind[br] || cfg.label_mode == LabelMode::kMixed);
  }
  p.distill = p.active[0] && p.active[1];
  p.predict_branch = p.active[kGlobalBranch] ? kGlobalBranch : kLocalBranch;
  return p;
}

TwoBranchModel<float> build_model(const RunConfig& cfg, Index num_labeled, Index num_unlabeled) {
  TwoBranchModel<float> model(cfg.model_config(num_labeled, num_unlabeled));
  std::mt19937_64 rng(stream_seed(cfg.seed, Stream::kInit));
  model.init(rng);
  return model;
}

namespace {

int num_workers() {
  if (const char* env = std::getenv("NCD_NUM_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Augments images [0, count) of `dst` in place from `src` using per-image
/// seeds, so the result is independent of the worker count.
void augment_images(const ImageSet& src, const std::vector<Index>& idx, ImageSet& dst,
                    const AugmentPolicy& policy, std::uint64_t seed, Stream stream, std::uint64_t tag) {
  const auto n = static_cast<Index>(idx.size());
  dst.channels = src.channels;
  dst.height = src.height;
  dst.width = src.width;
  dst.pixels.resize(static_cast<std::size_t>(n * src.image_elems()));
  auto work = [&](Index begin, Index end) {
    for (Index j = begin; j < end; ++j) {
      std::mt19937_64 rng(stream_seed(seed, stream, tag, static_cast<std::uint64_t>(j)));
      augment(src.data(idx[static_cast<std::size_t>(j)]), dst.data(j), src.channels, src.height,
              src.width, rng, policy);
    }
  };
  const int workers = std::min<int>(num_workers(), static_cast<int>(std::max<Index>(n, 1)));
  if (workers <= 1) {
    work(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const Index chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const Index b = w * chunk;
    const Index e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& t : pool) t.join();
}

AugmentPolicy policy_of(const TrainConfig& t) {
  return AugmentPolicy{t.augment_flip, t.augment_translate, t.augment_noise};
}

/// Extractor output for every image of `set`, in image order.
Mat<float> extract_all(const TwoBranchModel<float>& model, const ImageSet& set) {
  const Index n = set.size();
  const Index hw = model.map_size() * model.map_size();
  Mat<float> out(model.feature_channels(), n * hw);
  for (Index start = 0; start < n; start += 256) {
    const Index count = std::min<Index>(256, n - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    out.middleCols(start * hw, count * hw) = model.extract(gather_batch<float>(set, idx), count, nullptr);
  }
  return out;
}

}  // namespace

PretrainReport pretrain_extractor(TwoBranchModel<float>& model, const LabeledSet& labeled,
                                  const RunConfig& cfg) {
  const Index n = labeled.images.size();
  if (n == 0) throw std::invalid_argument("pretrain_extractor: empty labelled split");
  if (labeled.num_classes() != model.config().num_labeled) {
    throw std::invalid_argument("pretrain_extractor: labelled split has " +
                                std::to_string(labeled.num_classes()) + " classes, model expects " +
                                std::to_string(model.config().num_labeled));
  }
  const auto& t = cfg.train;
  model.set_extractor_frozen(false);
  std::mt19937_64 rng(stream_seed(cfg.seed, Stream::kPretrain));
  // extractor -> projection stage -> pooled -> temporary C^l-way head. The
  // trained projection stage seeds both branches afterwards.
  auto& proj = model.projection(kGlobalBranch);
  Linear<float> head(model.embed_dim(), labeled.num_classes(), "pretrain_head");
  head.init(rng);
  auto& layers = model.extractor_layers();
  std::vector<Param<float>*> params;
  for (auto& l : layers) {
    params.push_back(&l.weight);
    params.push_back(&l.bias);
  }
  for (auto* p : {&proj.weight, &proj.bias, &head.weight, &head.bias}) params.push_back(p);
  // First and second moments (Adam) or velocity and unused (SGD).
  std::vector<Mat<float>> velocity, second;
  for (auto* p : params) {
    velocity.push_back(Mat<float>::Zero(p->value.rows(), p->value.cols()));
    second.push_back(Mat<float>::Zero(p->value.rows(), p->value.cols()));
  }
  const bool adam = t.pretrain_optimizer == "adam";
  constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kAdamEps = 1e-8f;

  auto logits_of = [&](const Mat<float>& x, Index count, ForwardCache<float>* cache, Mat<float>* pooled) {
    const Mat<float> feat = model.extract(x, count, cache);
    const Mat<float> map = proj.forward(feat, count, cache ? &cache->proj[kGlobalBranch] : nullptr);
    *pooled = global_average_pool(map, count);
    return head.forward(*pooled);
  };

  const AugmentPolicy policy = policy_of(t);
  PretrainReport report;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  long step = 0;
  for (int epoch = 0; epoch < t.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    // Cosine decay keeps the short schedule stable at the end.
    const double lr = t.pretrain_lr * 0.5 *
                      (1.0 + std::cos(3.14159265358979323846 * epoch / std::max(1, t.pretrain_epochs)));
    for (Index start = 0; start < n; start += t.pretrain_batch) {
      const Index count = std::min(t.pretrain_batch, n - start);
      std::vector<Index> idx(order.begin() + start, order.begin() + start + count);
      ImageSet aug;
      augment_images(labeled.images, idx, aug, policy, cfg.seed, Stream::kPretrain,
                     static_cast<std::uint64_t>(step));
      std::vector<Index> all(static_cast<std::size_t>(count));
      std::iota(all.begin(), all.end(), Index{0});
      std::vector<int> y;
      for (Index i : idx) y.push_back(labeled.labels[static_cast<std::size_t>(i)]);

      for (auto* p : params) p->zero_grad();
      ForwardCache<float> cache;
      Mat<float> pooled;
      const Mat<float> logits = logits_of(gather_batch<float>(aug, all), count, &cache, &pooled);
      Mat<float> dlogits;
      report.final_loss = cross_entropy<float>(logits, y, &dlogits);
      const Mat<float> dpooled = head.backward(pooled, dlogits);
      const Index hw = model.map_size() * model.map_size();
      model.extractor_backward(
          cache, proj.backward(cache.proj[kGlobalBranch], global_average_pool_backward(dpooled, hw), true));
      const auto rate = static_cast<float>(lr);
      const float c1 = 1.0f - std::pow(kBeta1, static_cast<float>(step + 1));
      const float c2 = 1.0f - std::pow(kBeta2, static_cast<float>(step + 1));
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Mat<float>& g = params[k]->grad;
        if (adam) {
          velocity[k] = kBeta1 * velocity[k] + (1.0f - kBeta1) * g;
          second[k] = kBeta2 * second[k] + (1.0f - kBeta2) * g.cwiseProduct(g);
          params[k]->value.array() -=
              rate * (velocity[k].array() / c1) / ((second[k].array() / c2).sqrt() + kAdamEps);
        } else {
          velocity[k] = static_cast<float>(t.momentum) * velocity[k] + g;
          params[k]->value -= rate * velocity[k];
        }
      }
      ++step;
    }
  }
  long hits = 0;
  for (Index start = 0; start < n; start += 256) {
    const Index count = std::min<Index>(256, n - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    Mat<float> pooled;
    const Mat<float> logits = logits_of(gather_batch<float>(labeled.images, idx), count, nullptr, &pooled);
    for (Index i = 0; i < count; ++i) {
      Index best = 0;
      logits.row(i).maxCoeff(&best);
      if (best == labeled.labels[static_cast<std::size_t>(start + i)]) ++hits;
    }
  }
  report.train_acc = static_cast<double>(hits) / static_cast<double>(n);

  // Both branches start from the trained projection stage, and both
  // labelled heads from the temporary head.
  auto& other = model.projection(kLocalBranch);
  other.weight.value = proj.weight.value;
  other.bias.value = proj.bias.value;
  for (int br = 0; br < 2; ++br) {
    model.head_l(br).weight.value = head.weight.value;
    model.head_l(br).bias.value = head.bias.value;
  }
  model.set_extractor_frozen(true);
  model.zero_grad();
  return report;
}

Trainer::Trainer(RunConfig cfg, TwoBranchModel<float> model, const LabeledSet& labeled,
                 const UnlabeledSet& unlabeled)
    : cfg_(std::move(cfg)),
      plan_(plan_branches(cfg_.train)),
      model_(std::move(model)),
      labeled_(&labeled),
      unlabeled_(&unlabeled) {
  cfg_.validate();
  if (!model_.extractor_frozen()) {
    throw StateError("Trainer: the extractor must be pretrained and frozen before discovery");
  }
  if (model_.config().open_world != cfg_.open_world) {
    throw StateError("Trainer: model head mode does not match open_world setting");
  }
  if (labeled.images.size() == 0) throw std::invalid_argument("Trainer: empty labelled split");
  const Index d = model_.embed_dim();
  for (int br = 0; br < 2; ++br) {
    if (plan_.needs_dictionary[br]) dictionaries_[br] = FifoBank<float>(cfg_.train.bank_capacity_v, d);
    if (plan_.active[br]) {
      banks_[br] = FifoBank<float>(br == kGlobalBranch ? cfg_.train.bank_capacity_bg : cfg_.train.bank_capacity_bp, d);
    }
  }
  labeled_features_ = extract_all(model_, labeled.images);
  unlabeled_features_ = extract_all(model_, unlabeled.images);
  model_.zero_grad();
}

void Trainer::restore_state(int epoch, long step, std::map<std::string, Mat<float>> velocity) {
  epoch_ = epoch;
  step_ = step;
  velocity_ = std::move(velocity);
  if (step_ > 0) model_.mark_training_started();
}

Mat<float> Trainer::step_features(const std::vector<Index>& labeled_idx,
                                  const std::vector<Index>& unlabeled_idx) const {
  // The extractor is frozen, so primary views come from the cache computed
  // at construction; only the augmented views go through it again.
  const AugmentPolicy policy = policy_of(cfg_.train);
  ImageSet lab_aug, unl_aug;
  augment_images(labeled_->images, labeled_idx, lab_aug, policy, cfg_.seed, Stream::kAugment,
                 static_cast<std::uint64_t>(2 * step_));
  augment_images(unlabeled_->images, unlabeled_idx, unl_aug, policy, cfg_.seed, Stream::kAugment,
                 static_cast<std::uint64_t>(2 * step_ + 1));
  const auto n = static_cast<Index>(labeled_idx.size());
  const auto m = static_cast<Index>(unlabeled_idx.size());
  const Index hw = labeled_->images.height * labeled_->images.width;
  Mat<float> images(labeled_->images.channels, (n + m) * hw);
  for (Index j = 0; j < n; ++j) images.middleCols(j * hw, hw) = lab_aug.image(j);
  for (Index j = 0; j < m; ++j) images.middleCols((n + j) * hw, hw) = unl_aug.image(j);
  const Mat<float> aug = model_.extract(images, n + m, nullptr);

  const Index fhw = model_.map_size() * model_.map_size();
  Mat<float> feats(model_.feature_channels(), 2 * (n + m) * fhw);
  Index col = 0;
  for (Index i : labeled_idx) {
    feats.middleCols(col, fhw) = labeled_features_.middleCols(i * fhw, fhw);
    col += fhw;
  }
  for (Index i : unlabeled_idx) {
    feats.middleCols(col, fhw) = unlabeled_features_.middleCols(i * fhw, fhw);
    col += fhw;
  }
  feats.middleCols(col, aug.cols()) = aug;
  return feats;
}

void Trainer::sgd_step(double lr) {
  const auto mu = static_cast<float>(cfg_.train.momentum);
  const auto rate = static_cast<float>(lr);
  model_.for_each_param([&](Param<float>& p, bool trainable) {
    if (!trainable) return;
    auto& v = velocity_[p.name];
    if (v.size() == 0) v = Mat<float>::Zero(p.value.rows(), p.value.cols());
    v = mu * v + p.grad;
    p.value -= rate * v;
  });
}

LossBreakdown Trainer::train_step(const std::vector<Index>& labeled_idx,
                                  const std::vector<Index>& unlabeled_idx) {
  StepBatch<float> batch;
  batch.n_labeled = static_cast<Index>(labeled_idx.size());
  batch.n_unlabeled = static_cast<Index>(unlabeled_idx.size());
  for (Index i : labeled_idx) batch.labels.push_back(labeled_->labels[static_cast<std::size_t>(i)]);
  model_.zero_grad();
  ForwardCache<float> cache;
  const ForwardOutput<float> fwd =
      model_.forward_features(step_features(labeled_idx, unlabeled_idx), batch.total(), &cache);

  std::array<const FifoBank<float>*, 2> dicts{nullptr, nullptr};
  for (int br = 0; br < 2; ++br) {
    if (plan_.needs_dictionary[br]) dicts[br] = &dictionaries_[br];
  }
  const StepTargets targets = compute_targets(fwd, batch, dicts, cfg_.train, plan_);
  for (int br = 0; br < 2; ++br) {
    last_snapshots_[br] = plan_.active[br] ? banks_[br].snapshot() : Mat<float>();
  }
  const double t = cfg_.train.ramp_per_step ? static_cast<double>(step_) : static_cast<double>(epoch_);
  const double ramp = ramp_up(t, cfg_.train.ramp_length, cfg_.train.lambda);
  const LossBreakdown losses =
      step_objective(model_, fwd, &cache, batch, targets, last_snapshots_[kGlobalBranch],
                     last_snapshots_[kLocalBranch], cfg_.train, plan_, ramp);
  sgd_step(cfg_.train.lr_at_epoch(epoch_ + 1));
  model_.mark_training_started();

  // Features computed before the update are queued only now, so a step never
  // sees its own entries.
  const Index fresh = batch.n_labeled + batch.n_unlabeled;
  for (int br = 0; br < 2; ++br) {
    if (plan_.needs_dictionary[br]) {
      std::mt19937_64 rng(stream_seed(cfg_.seed, Stream::kParts, static_cast<std::uint64_t>(step_),
                                      static_cast<std::uint64_t>(br)));
      Mat<float> parts(fresh, model_.embed_dim());
      for (Index i = 0; i < fresh; ++i) parts.row(i) = sample_part(fwd.map(br, i), rng).transpose();
      dictionaries_[br].enqueue(parts);
    }
    if (plan_.active[br]) banks_[br].enqueue(fwd.z[br].topRows(fresh));
  }
  ++step_;
  return losses;
}

std::vector<StepRecord> Trainer::train_epoch() {
  const Index m = unlabeled_->size();
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(stream_seed(cfg_.seed, Stream::kShuffle, static_cast<std::uint64_t>(epoch_)));
  std::shuffle(order.begin(), order.end(), rng);
  const Index nl = labeled_->images.size();
  auto next_labeled = [&]() {
    if (labeled_cursor_ >= labeled_queue_.size()) {
      labeled_queue_.resize(static_cast<std::size_t>(nl));
      std::iota(labeled_queue_.begin(), labeled_queue_.end(), Index{0});
      std::mt19937_64 lrng(stream_seed(cfg_.seed, Stream::kShuffle, 1ULL << 40,
                                       static_cast<std::uint64_t>(labeled_pass_++)));
      std::shuffle(labeled_queue_.begin(), labeled_queue_.end(), lrng);
      labeled_cursor_ = 0;
    }
    return labeled_queue_[labeled_cursor_++];
  };
  std::vector<StepRecord> records;
  const Index ub = cfg_.train.unlabeled_batch;
  for (Index start = 0; start < m; start += ub) {
    const Index count = std::min(ub, m - start);
    if (count < 2) break;  // a single image has no pairs
    std::vector<Index> unl(order.begin() + start, order.begin() + start + count);
    std::vector<Index> lab;
    for (Index i = 0; i < cfg_.train.labeled_batch; ++i) lab.push_back(next_labeled());
    StepRecord rec;
    rec.epoch = epoch_ + 1;
    rec.step = step_ + 1;
    rec.losses = train_step(lab, unl);
    records.push_back(rec);
  }
  ++epoch_;
  return records;
}

void Trainer::write_metrics_header(std::ostream& out) {
  out << "row,step,epoch,bce_g,bce_p,jsd,ce,mse,ramp_weight,total,acc\n";
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void Trainer::write_step_row(std::ostream& out, const StepRecord& r) {
  const auto& l = r.losses;
  out << "step," << r.step << ',' << r.epoch << ',' << fmt(l.bce_g) << ',' << fmt(l.bce_p) << ','
      << fmt(l.jsd) << ',' << fmt(l.ce) << ',' << fmt(l.mse) << ',' << fmt(l.ramp_weight) << ','
      << fmt(l.total) << ",\n";
}

void Trainer::write_acc_row(std::ostream& out, int epoch, double acc) {
  out << "acc,," << epoch << ",,,,,,,," << fmt(acc) << "\n";
}

void Trainer::train(const EpochEvaluator& evaluator, std::ostream* metrics) {
  if (metrics != nullptr && step_ == 0) write_metrics_header(*metrics);
  while (epoch_ < cfg_.train.epochs) {
    const auto records = train_epoch();
    if (metrics != nullptr) {
      for (const auto& r : records) write_step_row(*metrics, r);
    }
    if (evaluator) {
      const double acc = evaluator(model_, plan_.predict_branch);
      epoch_acc_.push_back(acc);
      if (metrics != nullptr) write_acc_row(*metrics, epoch_, acc);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[] = "NCDCKPT1";
constexpr std::size_t kCkptMagicLen = 8;

Mat<float> scalar_block(double v) { return Mat<float>::Constant(1, 1, static_cast<float>(v)); }

}  // namespace

const Mat<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : blocks) {
    if (n == name) return &m;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kCkptMagic, kCkptMagicLen);
  w.str(ckpt.config_text);
  for (const auto& [name, m] : ckpt.blocks) {
    w.str(name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    w.raw(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(float));
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto* data = reinterpret_cast<const std::uint8_t*>(bytes.data());
  ByteReader r(data, bytes.size());
  if (bytes.size() < kCkptMagicLen || std::memcmp(data, kCkptMagic, kCkptMagicLen) != 0) {
    throw FormatError("bad magic: expected \"NCDCKPT1\"", 0);
  }
  r.bytes(kCkptMagicLen, "magic");
  Checkpoint out;
  out.config_text = r.str("config echo");
  while (!r.done()) {
    const std::string name = r.str("block name");
    const std::uint32_t rank = r.u32("block rank");
    if (rank < 1 || rank > 2) throw FormatError("block '" + name + "' has unsupported rank", r.offset() - 4);
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t k = 0; k < rank; ++k) dims[k] = r.u32("block dims");
    const std::uint64_t count = dims[0] * dims[1];
    r.need(static_cast<std::size_t>(count * sizeof(float)), "block payload");
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
    r.copy(rm.data(), static_cast<std::size_t>(count * sizeof(float)), "block payload");
    out.blocks.emplace_back(name, Mat<float>(rm));
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_checkpoint(std::string(bytes.begin(), bytes.end()));
}

Checkpoint make_checkpoint(const RunConfig& cfg, const TwoBranchModel<float>& model,
                           const Trainer* trainer) {
  Checkpoint ckpt;
  ckpt.config_text = echo_config(cfg);
  model.for_each_param([&ckpt](const Param<float>& p, bool) {
    ckpt.blocks.emplace_back("model." + p.name, p.value);
  });
  ckpt.blocks.emplace_back("model.extractor_frozen", scalar_block(model.extractor_frozen() ? 1.0 : 0.0));
  if (trainer != nullptr) {
    for (const auto& [name, v] : trainer->velocity()) ckpt.blocks.emplace_back("opt." + name, v);
    static const char* kBranch[2] = {"global", "local"};
    for (int br = 0; br < 2; ++br) {
      if (trainer->plan().needs_dictionary[br]) {
        ckpt.blocks.emplace_back(std::string("bank.V.") + kBranch[br], trainer->dictionary(br).snapshot());
      }
      if (trainer->plan().active[br]) {
        ckpt.blocks.emplace_back(std::string("bank.B.") + kBranch[br], trainer->feature_bank(br).snapshot());
      }
    }
    ckpt.blocks.emplace_back("state.epoch", scalar_block(trainer->epoch()));
    ckpt.blocks.emplace_back("state.step", scalar_block(static_cast<double>(trainer->step())));
    const auto acc = trainer->epoch_acc();
    if (!acc.empty()) {
      ckpt.blocks.emplace_back("state.epoch_acc",
                               Eigen::Map<const Eigen::VectorXd>(acc.data(), static_cast<Index>(acc.size())).cast<float>());
    }
  }
  return ckpt;
}

void load_model_params(const Checkpoint& ckpt, TwoBranchModel<float>& model) {
  model.for_each_param([&ckpt](Param<float>& p, bool) {
    const Mat<float>* m = ckpt.find("model." + p.name);
    if (m == nullptr) throw FormatError("checkpoint lacks block model." + p.name, 0);
    if (m->rows() != p.value.rows() || m->cols() != p.value.cols()) {
      throw FormatError("checkpoint block model." + p.name + " has shape " + std::to_string(m->rows()) +
                            "x" + std::to_string(m->cols()) + ", model expects " +
                            std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()),
                        0);
    }
    p.value = *m;
    p.zero_grad();
  });
  if (const auto* f = ckpt.find("model.extractor_frozen")) model.set_extractor_frozen((*f)(0, 0) != 0.0f);
}

TwoBranchModel<float> model_from_checkpoint(const Checkpoint& ckpt, RunConfig* cfg_out) {
  const RunConfig cfg = parse_config(ckpt.config_text);
  const auto cl = static_cast<Index>(cfg.labeled_classes.size());
  TwoBranchModel<float> model(cfg.model_config(cl, cfg.synth.num_classes - cl));
  load_model_params(ckpt, model);
  if (cfg_out != nullptr) *cfg_out = cfg;
  return model;
}

void restore_trainer(const Checkpoint& ckpt, Trainer& trainer) {
  static const char* kBranch[2] = {"global", "local"};
  for (int br = 0; br < 2; ++br) {
    if (const auto* v = ckpt.find(std::string("bank.V.") + kBranch[br]); v && trainer.plan().needs_dictionary[br]) {
      trainer.dictionary(br).restore(*v);
    }
    if (const auto* b = ckpt.find(std::string("bank.B.") + kBranch[br]); b && trainer.plan().active[br]) {
      trainer.feature_bank(br).restore(*b);
    }
  }
  std::map<std::string, Mat<float>> velocity;
  for (const auto& [name, m] : ckpt.blocks) {
    if (name.rfind("opt.", 0) == 0) velocity[name.substr(4)] = m;
  }
  const auto* e = ckpt.find("state.epoch");
  const auto* s = ckpt.find("state.step");
  trainer.restore_state(e ? static_cast<int>((*e)(0, 0)) : 0, s ? static_cast<long>((*s)(0, 0)) : 0,
                        std::move(velocity));
}

}  // namespace ncd
