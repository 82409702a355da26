// SPDX-License-Identifier: Apache-2.0
//
// Training loop, dataset split and checkpoints.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nebla/losses.hpp"
#include "nebla/model.hpp"
#include "nebla/optim.hpp"
#include "nebla/volume.hpp"

namespace nebla {

struct Example {
  std::string name;
  Tensor<float> px;  // [rows, cols]
  Volume volume;     // preprocessed ground truth
};

// Preprocesses `raw` and renders its panoramic image with the plan's rays.
Example make_example(const std::string& name, const Volume& raw, const RunConfig& cfg, const SamplePlan& plan);

// 8:1:1 in input order: the last floor(n/10) items are the test split, the
// floor(n/10) before them validation, the rest training.
struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
};
DatasetSplit split_dataset(std::size_t n);

struct LossValues {
  double mse = 0, proj = 0, perc = 0, total = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossValues train;    // mean over the epoch's steps
  double val = 0;      // validation L_total
  double lr = 0;       // rate used during the epoch
  bool improved = false;
};

// One line per field so files diff cleanly.
std::string csv_header();
std::string csv_row(const EpochRecord& r);

class Trainer {
 public:
  Trainer(Reconstructor<float>& model, const RunConfig& cfg);

  // Forward, loss, backward and one Adam step. NumericalError names the
  // first non-finite loss component or gradient.
  LossValues train_step(const Example& ex);
  // Loss with dropout disabled; no parameter changes.
  LossValues evaluate(const Example& ex) const;

  // Trains on every example once, then steps the scheduler and early stopping
  // on the mean validation loss (training examples when `val` is empty).
  EpochRecord run_epoch(const std::vector<const Example*>& train, const std::vector<const Example*>& val);

  bool finished() const;  // epoch limit, step limit or early stop reached
  bool stopped_early() const { return stopped_early_; }
  std::size_t epoch() const { return epoch_; }
  std::uint64_t steps() const { return steps_; }
  double lr() const { return adam_.lr(); }

  void save_checkpoint(const std::string& path) const;
  // Restores parameters, optimizer moments and all counters. ConfigError
  // names the first tensor that does not match this model.
  void load_checkpoint(const std::string& path);

 private:
  Reconstructor<float>& model_;
  RunConfig cfg_;
  FeatureNetwork<float> perc_;
  Adam<float> adam_;
  PlateauScheduler scheduler_;
  EarlyStopping early_;
  std::size_t epoch_ = 0;
  std::uint64_t steps_ = 0;
  bool stopped_early_ = false;
};

struct FitOptions {
  std::string out_dir;  // metrics.csv, last.ckpt, best.ckpt; empty writes nothing
  bool resume = false;  // continue from out_dir/last.ckpt
  std::function<void(const EpochRecord&)> on_epoch;
};

std::vector<EpochRecord> fit(Trainer& trainer, const std::vector<const Example*>& train,
                             const std::vector<const Example*>& val, const FitOptions& opts);

// Checkpoint files: 16-byte magic "VNBLACKPT1", format version, the resolved
// config text, counters, then every parameter with its Adam moments.
RunConfig read_checkpoint_config(const std::string& path);
void load_checkpoint_params(const std::string& path, ParameterStore<float>& params);

}  // namespace nebla
