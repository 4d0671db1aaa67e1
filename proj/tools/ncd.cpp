// Command line front end: synth, pretrain, discover, eval, label and
// dump-embeddings. Every command writes into its --out directory, finishing
// with manifest.json; failures print one JSON line on stderr.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ncd/pipeline.hpp"

#ifndef NCD_BUILD_ID
#define NCD_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ncd;

namespace {

/// Error carrying the category reported to the caller.
struct CliError : std::runtime_error {
  CliError(std::string k, const std::string& msg) : std::runtime_error(msg), kind(std::move(k)) {}
  std::string kind;
};

int exit_code(const std::string& kind) {
  if (kind == "usage") return 2;
  if (kind == "config") return 3;
  if (kind == "io" || kind == "format") return 4;
  if (kind == "state") return 5;
  return 1;
}

int fail(const std::string& kind, const std::string& msg) {
  std::cerr << json{{"error", kind}, {"message", msg}}.dump() << "\n";
  return exit_code(kind);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string weights;
  std::string checkpoint;
  std::string branch_config;
  std::vector<std::string> disable;
  std::string mode;
  std::optional<double> threshold;
  bool open_world = false;
  std::string branch = "predict";
  Index limit = 0;
};

RunConfig configure(const Options& o, const std::string& fallback_text, bool seed_is_data_seed) {
  try {
    RunConfig cfg;
    if (!o.config.empty()) {
      cfg = load_config(o.config);
    } else if (!fallback_text.empty()) {
      cfg = parse_config(fallback_text);
    }
    for (const auto& kv : o.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) (seed_is_data_seed ? cfg.synth.seed : cfg.seed) = *o.seed;
    if (!o.branch_config.empty()) cfg.train.branch_config = parse_branch_config(o.branch_config);
    for (const auto& d : o.disable) {
      if (d == "bce") cfg.train.use_bce = false;
      else if (d == "jsd") cfg.train.use_jsd = false;
      else if (d == "ce") cfg.train.use_ce = false;
      else if (d == "mse") cfg.train.use_mse = false;
    }
    if (!o.mode.empty()) cfg.train.label_mode = parse_label_mode(o.mode);
    if (o.threshold) cfg.train.cosine_threshold = *o.threshold;
    cfg.validate();
    return cfg;
  } catch (const std::invalid_argument& e) {
    throw CliError("config", e.what());
  } catch (const std::runtime_error& e) {
    throw CliError("io", e.what());
  }
}

/// Collects outputs and writes the run manifest last.
class Run {
 public:
  Run(std::string command, const Options& o) : command_(std::move(command)), dir_(o.out), started_(utc_now()) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw CliError("io", "cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  void write(const std::string& name, const std::string& bytes) {
    write_file_atomic(dir_ / name, bytes);
    outputs_[name] = (dir_ / name).string();
  }
  fs::path path(const std::string& name) {
    outputs_[name] = (dir_ / name).string();
    return dir_ / name;
  }
  json& results() { return results_; }

  void finish(const RunConfig& cfg, std::uint64_t seed) {
    json m{{"command", command_},
           {"config", echo_config(cfg)},
           {"seed", seed},
           {"build", NCD_BUILD_ID},
           {"started", started_},
           {"finished", utc_now()},
           {"outputs", outputs_},
           {"results", results_}};
    write_file_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path dir_;
  std::string started_;
  json outputs_ = json::object();
  json results_ = json::object();
};

DatasetBundle read_data(const std::string& path) {
  if (path.empty()) throw CliError("usage", "--data is required");
  return load_dataset(path);
}

Checkpoint read_checkpoint(const std::string& path) {
  if (path.empty()) throw CliError("usage", "--checkpoint is required");
  return load_checkpoint(path);
}

int branch_of(const std::string& name, const RunConfig& cfg) {
  if (name == "global") return kGlobalBranch;
  if (name == "local") return kLocalBranch;
  return plan_branches(cfg.train).predict_branch;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void cmd_synth(const Options& o) {
  const RunConfig cfg = configure(o, "", true);
  Run run("synth", o);
  const DatasetBundle bundle = synth_generate(cfg.synth);
  save_dataset(bundle, run.path("data.ncdd"));
  run.results() = {{"images", bundle.size()}, {"classes", bundle.num_classes()}};
  run.finish(cfg, cfg.synth.seed);
}

void cmd_pretrain(const Options& o) {
  const RunConfig cfg = configure(o, "", false);
  const DatasetBundle bundle = read_data(o.data);
  Run run("pretrain", o);
  const Split split = make_split(bundle, cfg);
  TwoBranchModel<float> model =
      build_model(cfg, split.labeled.num_classes(), static_cast<Index>(split.novel_class_ids.size()));
  const PretrainReport rep = pretrain_extractor(model, split.labeled, cfg);
  save_checkpoint(make_checkpoint(cfg, model), run.path("pretrained.ckpt"));
  run.results() = {{"train_acc", rep.train_acc}, {"final_loss", rep.final_loss}};
  run.finish(cfg, cfg.seed);
}

void cmd_discover(const Options& o) {
  if (o.weights.empty()) throw CliError("usage", "--weights is required");
  const Checkpoint pre = load_checkpoint(o.weights);
  const RunConfig cfg = configure(o, pre.config_text, false);
  const DatasetBundle bundle = read_data(o.data);
  Run run("discover", o);
  const Split split = make_split(bundle, cfg);
  TwoBranchModel<float> model =
      build_model(cfg, split.labeled.num_classes(), static_cast<Index>(split.novel_class_ids.size()));
  load_model_params(pre, model);
  if (!model.extractor_frozen()) throw CliError("state", "weights in " + o.weights + " are not pretrained");
  const RunResult res = run_discovery(cfg, split, std::move(model));
  save_checkpoint(res.checkpoint, run.path("checkpoint.ckpt"));
  run.write("metrics.csv", res.metrics_csv);
  run.results() = {{"acc", res.acc}, {"epoch_acc", res.epoch_acc}};
  if (res.open_world) {
    run.results()["seen_acc"] = res.open_world->seen_acc;
    run.results()["novel_acc"] = res.open_world->novel_acc;
  }
  run.finish(cfg, cfg.seed);
}

void cmd_eval(const Options& o) {
  const Checkpoint ckpt = read_checkpoint(o.checkpoint);
  RunConfig cfg;
  const TwoBranchModel<float> model = model_from_checkpoint(ckpt, &cfg);
  const DatasetBundle bundle = read_data(o.data);
  Run run("eval", o);
  const Split split = make_split(bundle, cfg);
  const int branch = branch_of(o.branch, cfg);
  const AssignmentResult pred = predict_clusters(model, split.unlabeled.images, branch);
  const AccReport rep = clustering_acc(pred.assignments, split.truth.labels, split.truth.num_classes);

  std::ostringstream conf;
  conf << "cluster";
  for (Index c = 0; c < rep.confusion.cols(); ++c) conf << ",class_" << c;
  conf << "\n";
  for (Index r = 0; r < rep.confusion.rows(); ++r) {
    conf << r;
    for (Index c = 0; c < rep.confusion.cols(); ++c) conf << "," << rep.confusion(r, c);
    conf << "\n";
  }
  run.write("confusion.csv", conf.str());
  std::ostringstream assign;
  assign << "image,cluster,class\n";
  for (std::size_t i = 0; i < pred.assignments.size(); ++i) {
    assign << i << "," << pred.assignments[i] << "," << split.truth.labels[i] << "\n";
  }
  run.write("assignments.csv", assign.str());

  json report{{"acc", rep.acc},
              {"permutation", rep.permutation},
              {"branch", branch == kGlobalBranch ? "global" : "local"},
              {"source", to_string(pred.source)},
              {"images", pred.assignments.size()}};
  if (o.open_world) {
    const OpenWorldReport ow = open_world_eval(model, split.unlabeled.images, split.truth, branch);
    report["seen_acc"] = ow.seen_acc;
    report["novel_acc"] = ow.novel_acc;
    report["seen_count"] = ow.seen_count;
    report["novel_count"] = ow.novel_count;
  }
  run.write("report.json", report.dump(2) + "\n");
  run.results() = report;
  run.finish(cfg, cfg.seed);
}

void cmd_label(const Options& o) {
  const Checkpoint ckpt = read_checkpoint(o.checkpoint);
  RunConfig stored;
  const TwoBranchModel<float> model = model_from_checkpoint(ckpt, &stored);
  Options local = o;
  local.config.clear();
  const RunConfig cfg = configure(local, echo_config(stored), false);
  const DatasetBundle bundle = read_data(o.data);
  Run run("label", o);
  const Split split = make_split(bundle, cfg);

  const BranchPlan plan = plan_branches(cfg.train);
  const int branch = o.branch == "local" ? kLocalBranch : kGlobalBranch;
  const bool local_kind = plan.active[branch] ? plan.local_kind[branch] : branch == kLocalBranch;

  ImageSet images = split.unlabeled.images;
  if (o.limit > 0 && o.limit < images.size()) images.pixels.resize(static_cast<std::size_t>(o.limit * images.image_elems()));

  std::optional<FifoBank<float>> dict;
  if (local_kind || cfg.train.label_mode == LabelMode::kMixed) {
    const char* name = branch == kGlobalBranch ? "bank.V.global" : "bank.V.local";
    if (const Mat<float>* v = ckpt.find(name); v != nullptr && v->rows() > 0) {
      dict.emplace(std::max(cfg.train.bank_capacity_v, v->rows()), model.embed_dim());
      dict->restore(*v);
    } else {
      dict = part_dictionary(model, bundle.images, branch, cfg.train.bank_capacity_v, cfg.seed);
    }
  }
  const PairwiseLabelMatrix L =
      pseudo_labels(model, images, cfg.train, branch, local_kind, dict ? &*dict : nullptr);

  std::string csv = "row,col,label,mask\n";
  for (Index i = 0; i < L.size(); ++i) {
    for (Index j = 0; j < L.size(); ++j) {
      csv += std::to_string(i) + "," + std::to_string(j) + "," + fmt(L.labels(i, j)) + "," +
             (L.mask(i, j) ? "1" : "0") + "\n";
    }
  }
  run.write("labels.csv", csv);
  run.results() = {{"mode", to_string(cfg.train.label_mode)},
                   {"branch", branch == kGlobalBranch ? "global" : "local"},
                   {"ranks", local_kind ? "similarity-profile" : "embedding"},
                   {"images", L.size()},
                   {"dictionary_parts", dict ? dict->count() : 0}};
  run.finish(cfg, cfg.seed);
}

void cmd_dump_embeddings(const Options& o) {
  const Checkpoint ckpt = read_checkpoint(o.checkpoint);
  RunConfig cfg;
  const TwoBranchModel<float> model = model_from_checkpoint(ckpt, &cfg);
  const DatasetBundle bundle = read_data(o.data);
  Run run("dump-embeddings", o);
  const auto [zg, zp] = embeddings(model, bundle.images);
  std::ostringstream csv;
  csv << "image,class,branch";
  for (Index d = 0; d < zg.cols(); ++d) csv << ",z" << d;
  csv << "\n";
  for (int br = 0; br < 2; ++br) {
    const Eigen::MatrixXf& z = br == 0 ? zg : zp;
    for (Index i = 0; i < z.rows(); ++i) {
      csv << i << "," << bundle.labels[static_cast<std::size_t>(i)] << "," << (br == 0 ? "global" : "local");
      for (Index d = 0; d < z.cols(); ++d) csv << "," << fmt(z(i, d));
      csv << "\n";
    }
  }
  run.write("embeddings.csv", csv.str());
  run.results() = {{"images", zg.rows()}, {"dim", zg.cols()}};
  run.finish(cfg, cfg.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Novel class discovery with global and part-level ranking statistics"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&o](CLI::App* c) {
    c->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
    c->add_option("--set", o.sets, "config override key=value (repeatable)");
    c->add_option("--seed", o.seed, "run seed (data seed for synth)");
  };
  auto add_out = [&o](CLI::App* c) { c->add_option("--out", o.out, "output directory")->required(); };
  auto add_data = [&o](CLI::App* c) { c->add_option("--data", o.data, "NCDD1 dataset")->required()->check(CLI::ExistingFile); };
  auto add_ckpt = [&o](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "NCDCKPT1 checkpoint")->required()->check(CLI::ExistingFile);
  };
  auto add_train_switches = [&o](CLI::App* c) {
    c->add_option("--branch-config", o.branch_config, "global-only | local-only | global+global | local+local | global+local");
    c->add_option("--disable", o.disable, "losses to switch off")
        ->delimiter(',')
        ->check(CLI::IsMember({"bce", "jsd", "ce", "mse"}));
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_config(synth);
  add_out(synth);

  auto* pretrain = app.add_subcommand("pretrain", "supervised extractor pretraining on the labelled split");
  add_config(pretrain);
  add_data(pretrain);
  add_out(pretrain);

  auto* discover = app.add_subcommand("discover", "discovery training from pretrained weights");
  add_config(discover);
  add_data(discover);
  discover->add_option("--weights", o.weights, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
  add_train_switches(discover);
  add_out(discover);

  auto* eval = app.add_subcommand("eval", "clustering accuracy on the unlabelled split");
  add_ckpt(eval);
  add_data(eval);
  eval->add_flag("--open-world", o.open_world, "also report seen/novel accuracy");
  eval->add_option("--branch", o.branch, "global | local | predict")->check(CLI::IsMember({"global", "local", "predict"}));
  add_out(eval);

  auto* label = app.add_subcommand("label", "pairwise pseudo labels of the unlabelled split");
  add_ckpt(label);
  add_data(label);
  label->add_option("--mode", o.mode, "rs-soft | rs-hard | cosine-soft | cosine-hard | mixed");
  label->add_option("--threshold", o.threshold, "cosine-hard threshold");
  label->add_option("--branch", o.branch, "global | local")->check(CLI::IsMember({"global", "local"}));
  label->add_option("--limit", o.limit, "use the first N unlabelled images");
  label->add_option("--set", o.sets, "config override key=value (repeatable)");
  add_out(label);

  auto* dump = app.add_subcommand("dump-embeddings", "pooled global and local embeddings as CSV");
  add_ckpt(dump);
  add_data(dump);
  add_out(dump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what());
  }

  try {
    if (*synth) cmd_synth(o);
    else if (*pretrain) cmd_pretrain(o);
    else if (*discover) cmd_discover(o);
    else if (*eval) cmd_eval(o);
    else if (*label) cmd_label(o);
    else if (*dump) cmd_dump_embeddings(o);
  } catch (const CliError& e) {
    return fail(e.kind, e.what());
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const StateError& e) {
    return fail("state", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("invalid-argument", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
