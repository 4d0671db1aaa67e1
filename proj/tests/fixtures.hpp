#pragma once

// Tiny run configurations shared by the trainer, config and CLI tests.

#include "ncd/config.hpp"
#include "ncd/dataio.hpp"

namespace ncd::testing {

inline RunConfig tiny_config() {
  RunConfig cfg;
  cfg.synth.num_classes = 4;
  cfg.synth.images_per_class = 12;
  cfg.synth.image_size = 12;
  cfg.synth.motif_pool = 6;
  cfg.synth.motif_size = 3;
  cfg.synth.seed = 3;
  cfg.labeled_classes = {0, 1};
  cfg.extractor_channels = {4};
  cfg.extractor_strides = {2};
  cfg.proj_dim = 8;
  cfg.train.k_global = 3;
  cfg.train.k_local = 4;
  cfg.train.bank_capacity_v = 32;
  cfg.train.bank_capacity_bp = 24;
  cfg.train.bank_capacity_bg = 24;
  cfg.train.labeled_batch = 8;
  cfg.train.unlabeled_batch = 6;
  cfg.train.epochs = 2;
  cfg.train.lr_decay_epochs = {1};
  cfg.train.ramp_length = 2;
  cfg.train.pretrain_epochs = 1;
  cfg.train.pretrain_batch = 8;
  cfg.seed = 5;
  return cfg;
}

}  // namespace ncd::testing
