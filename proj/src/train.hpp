// SPDX-License-Identifier: Apache-2.0
//
// The alternating GAN optimization loop: discriminator update on detached
// masked pairs, then generator/attention update through composition, cycle
// reconstruction, and tumor-side attention supervision. Also checkpointing
// and synthetic-sample export.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "config.hpp"
#include "phantom.hpp"
#include "saggan/losses.hpp"
#include "saggan/networks.hpp"

namespace saggan {

using StepCallback =
    std::function<void(int64_t epoch, int64_t step, const LossBundle& losses)>;

class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);

  // One alternating update on [B,1,S,S] batches; masks binary. The
  // discriminators update first on detached fakes, then the generator side
  // updates through fresh forwards with discriminator weights frozen.
  LossBundle train_step(const Tensor<float>& batch_n, const Tensor<float>& batch_t,
                        const Tensor<float>& batch_m);

  // Runs (epochs - completed) epochs over the train-split records, writing
  // `history.csv` (fresh, with header) and a rolling checkpoint directory
  // `<out_dir>/checkpoint`. Deterministic given the config seed. A positive
  // `stop_after_epoch` ends the run early (simulating an interruption) while
  // keeping the configured epoch target, so a later resume continues it.
  void train(const std::vector<SampleRecord>& train_records, const std::string& out_dir,
             const StepCallback& on_step = nullptr, int64_t stop_after_epoch = -1);

  void save(const std::string& dir) const;
  void load(const std::string& dir, bool allow_hash_mismatch = false);

  Models<float>& models() { return models_; }
  const Models<float>& models() const { return models_; }
  const RunConfig& config() const { return cfg_; }
  int64_t completed_epochs() const { return epoch_; }

 private:
  void set_discriminators_trainable(bool trainable);

  RunConfig cfg_;
  Models<float> models_;
  std::vector<std::string> gen_param_names_, disc_param_names_;
  Adam<float> opt_d_, opt_g_;
  Rng loop_rng_;
  int64_t epoch_ = 0;  // completed epochs
};

struct SynthesizedSample {
  Tensor<float> image;  // [S,S] in [-1,1]
  Tensor<float> mask;   // [S,S] binary pseudo mask, at least one positive pixel
};

// For each normal image: compose(n, G_NT(n), A_N(n)) with the attention map
// binarized at `threshold` as pseudo mask. Output order matches input order.
std::vector<SynthesizedSample> synthesize_augmented(const std::vector<Tensor<float>>& normals,
                                                    const Models<float>& models,
                                                    double threshold);

}  // namespace saggan
