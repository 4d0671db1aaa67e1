#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "ncd/pipeline.hpp"

using namespace ncd;

namespace {

struct Run {
  RunConfig cfg;
  DatasetBundle data;
  Split split;
  TwoBranchModel<float> model;
};

Run prepare(RunConfig cfg) {
  Run r;
  r.cfg = cfg;
  r.data = synth_generate(cfg.synth);
  r.split = make_split(r.data, cfg);
  r.model = build_model(cfg, r.split.labeled.num_classes(), static_cast<Index>(r.split.novel_class_ids.size()));
  pretrain_extractor(r.model, r.split.labeled, cfg);
  return r;
}

std::vector<Index> range(Index from, Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), from);
  return v;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("learning-rate schedule") {
    TrainConfig t;
    CHECK(t.lr_at_epoch(1) == 0.1);
    CHECK(t.lr_at_epoch(170) == 0.1);
    CHECK(t.lr_at_epoch(171) == doctest::Approx(0.01));
    CHECK(t.lr_at_epoch(200) == doctest::Approx(0.01));
  }

  TEST_CASE("pretraining reaches 0.9 labelled accuracy on the desk dataset") {
    RunConfig cfg = load_config(NCD_DESK_CONFIG);
    for (std::uint64_t seed : {1u, 2u}) {
      cfg.seed = seed;
      cfg.synth.seed = seed;
      const DatasetBundle data = synth_generate(cfg.synth);
      const Split split = make_split(data, cfg);
      TwoBranchModel<float> model = build_model(cfg, 5, 5);
      const PretrainReport rep = pretrain_extractor(model, split.labeled, cfg);
      INFO("seed ", seed);
      CHECK(rep.train_acc >= 0.9);
      CHECK(model.extractor_frozen());
    }
  }

  TEST_CASE("trainer requires a frozen extractor") {
    Run r = prepare(testing::tiny_config());
    TwoBranchModel<float> fresh = build_model(r.cfg, 2, 2);
    CHECK_THROWS_AS(Trainer(r.cfg, fresh, r.split.labeled, r.split.unlabeled), StateError);
  }

  TEST_CASE("banks are read before the step's own features are queued") {
    Run r = prepare(testing::tiny_config());
    Trainer tr(r.cfg, r.model, r.split.labeled, r.split.unlabeled);
    const Index fresh = 4 + 6;
    const std::uint64_t extractor = tr.model().extractor_checksum();

    tr.train_step(range(0, 4), range(0, 6));
    CHECK(tr.last_bank_snapshots()[kGlobalBranch].rows() == 0);
    CHECK(tr.feature_bank(kGlobalBranch).count() == fresh);
    CHECK(tr.dictionary(kLocalBranch).count() == fresh);

    const Eigen::MatrixXf before = tr.feature_bank(kGlobalBranch).snapshot();
    tr.train_step(range(4, 4), range(6, 6));
    CHECK(tr.last_bank_snapshots()[kGlobalBranch] == before);
    CHECK(tr.dictionary(kLocalBranch).count() == 2 * fresh);

    // Rows that survive a step keep their exact bits.
    const Eigen::MatrixXf after_two = tr.feature_bank(kGlobalBranch).snapshot();
    tr.train_step(range(8, 4), range(12, 6));
    const Eigen::MatrixXf after_three = tr.feature_bank(kGlobalBranch).snapshot();
    const Index cap = r.cfg.train.bank_capacity_bg;
    CHECK(after_three.rows() == cap);
    CHECK(after_three.topRows(cap - fresh) == after_two.bottomRows(cap - fresh));
    CHECK(tr.dictionary(kLocalBranch).count() == std::min<Index>(3 * fresh, r.cfg.train.bank_capacity_v));
    CHECK(tr.model().extractor_checksum() == extractor);
  }

  TEST_CASE("disabled loss components are exactly zero") {
    for (const char* off : {"bce", "jsd", "ce", "mse"}) {
      RunConfig cfg = testing::tiny_config();
      const std::string name = off;
      cfg.train.use_bce = name != "bce";
      cfg.train.use_jsd = name != "jsd";
      cfg.train.use_ce = name != "ce";
      cfg.train.use_mse = name != "mse";
      Run r = prepare(cfg);
      Trainer tr(cfg, r.model, r.split.labeled, r.split.unlabeled);
      LossBreakdown l;
      for (int s = 0; s < 3; ++s) l = tr.train_step(range(4 * s, 4), range(6 * s, 6));
      INFO(name);
      if (name == "bce") {
        CHECK(l.bce_g == 0.0);
        CHECK(l.bce_p == 0.0);
      } else {
        CHECK(l.bce_g > 0.0);
      }
      CHECK((name == "jsd") == (l.jsd == 0.0));
      CHECK((name == "ce") == (l.ce == 0.0));
      CHECK((name == "mse") == (l.mse == 0.0));
    }
  }

  TEST_CASE("metrics csv and determinism") {
    auto run_once = [] {
      Run r = prepare(testing::tiny_config());
      Trainer tr(r.cfg, r.model, r.split.labeled, r.split.unlabeled);
      std::ostringstream csv;
      tr.train([&r](const TwoBranchModel<float>& m, int br) { return unlabeled_acc(m, r.split, br); }, &csv);
      return csv.str();
    };
    const std::string a = run_once();
    CHECK(a == run_once());
    std::istringstream in(a);
    std::string line;
    std::getline(in, line);
    CHECK(line == "row,step,epoch,bce_g,bce_p,jsd,ce,mse,ramp_weight,total,acc");
    int steps = 0, accs = 0;
    while (std::getline(in, line)) {
      CHECK(std::count(line.begin(), line.end(), ',') == 10);
      steps += line.rfind("step,", 0) == 0;
      accs += line.rfind("acc,", 0) == 0;
    }
    CHECK(steps == 2 * 4);  // 24 unlabelled images, batches of 6, two epochs
    CHECK(accs == 2);
  }

  TEST_CASE("checkpoint round trip reproduces assignments") {
    RunConfig cfg = testing::tiny_config();
    const DatasetBundle data = synth_generate(cfg.synth);
    const RunResult res = run_pipeline(cfg, data, {false, false});
    const Checkpoint back = decode_checkpoint(encode_checkpoint(res.checkpoint));
    RunConfig echoed;
    const TwoBranchModel<float> model = model_from_checkpoint(back, &echoed);
    CHECK(echoed == cfg);
    CHECK(model.extractor_frozen());
    const Split split = make_split(data, cfg);
    CHECK(predict_clusters(model, split.unlabeled.images).assignments == res.assignments);
    CHECK(back.find("bank.B.global") != nullptr);
    CHECK((*back.find("state.epoch"))(0, 0) == 2.0f);

    Trainer resumed(cfg, model, split.labeled, split.unlabeled);
    restore_trainer(back, resumed);
    CHECK(resumed.epoch() == 2);
    CHECK(resumed.feature_bank(kGlobalBranch).snapshot() == *back.find("bank.B.global"));

    std::string bytes = encode_checkpoint(res.checkpoint);
    bytes[0] = 'Z';
    CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("NCDCKPT1"), FormatError);
  }

  TEST_CASE("open-world training step") {
    RunConfig cfg = testing::tiny_config();
    cfg.open_world = true;
    Run r = prepare(cfg);
    CHECK(r.model.config().unlabeled_head_dim() == 4);
    Trainer tr(cfg, r.model, r.split.labeled, r.split.unlabeled);
    const LossBreakdown l = tr.train_step(range(0, 4), range(0, 6));
    CHECK(std::isfinite(l.total));
    const auto report = open_world_eval(tr.model(), r.split.unlabeled.images, r.split.truth);
    CHECK(report.seen_count + report.novel_count == r.split.unlabeled.size());
  }
}
