#pragma once

#include "ubct/compat_losses.hpp"
#include "ubct/embedding_model.hpp"
#include "ubct/errors.hpp"
#include "ubct/prototype_engine.hpp"
#include "ubct/synthetic_data.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ubct {

struct TrainConfig {
  int epochs = 30;
  int warmup_epochs = 8;
  int batch_size = 64;
  double lr = 0.05;
  std::vector<int> lr_decay_epochs = {18, 24};
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> prototype_regen_epochs = {8, 16, 24};
  CompatLossSpec loss_spec;
  std::uint64_t seed = 666;
  /// Wall time is the only nondeterministic log field; off makes logs
  /// byte-reproducible.
  bool record_wall_time = true;

  /// 35 epochs, warmup 10, lr 0.1 decayed x0.1 at {20, 26, 32}, batch 256,
  /// regeneration at {10, 20}.
  static TrainConfig full_scale();

  double lr_at(int epoch) const;
  bool is_regen_epoch(int epoch) const;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double eta = 0.0;  // compatibility weight in effect this epoch
  double cls_loss = 0.0;
  double compat_loss = 0.0;
  double total_loss = 0.0;
  bool prototype_regen = false;
  std::uint64_t prototype_hash = 0;  // compat prototypes in use, 0 if none
  double wall_time_ms = 0.0;

  /// Every field except wall time.
  bool same_trajectory(const EpochRecord& other) const;
};

/// Hash checks taken around every compatibility backward pass.
struct TrainAudit {
  std::size_t compat_backward_passes = 0;
  std::size_t prototype_hash_violations = 0;
  std::size_t old_model_hash_violations = 0;
  std::uint64_t old_model_hash_start = 0;
  std::uint64_t old_model_hash_end = 0;

  bool clean() const noexcept {
    return prototype_hash_violations == 0 && old_model_hash_violations == 0 &&
           old_model_hash_start == old_model_hash_end;
  }
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  TrainAudit audit;
  Warnings warnings;

  /// One JSON object per epoch, newline-terminated.
  std::string to_jsonl(bool include_wall_time = true) const;
  bool same_trajectory(const TrainLog& other) const;
};

/// Thrown when a loss or gradient goes non-finite. Carries the parameters
/// from the end of the last completed epoch.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(int epoch, const std::string& what, EmbeddingModel last_good_model,
                  PrototypeMatrix last_good_classifier);
  int epoch() const noexcept { return epoch_; }
  const EmbeddingModel& last_good_model() const { return state_->first; }
  const PrototypeMatrix& last_good_classifier() const { return state_->second; }

 private:
  int epoch_;
  std::shared_ptr<const std::pair<EmbeddingModel, PrototypeMatrix>> state_;
};

struct TrainedModel {
  EmbeddingModel model;
  PrototypeMatrix classifier;
  TrainLog log;
};

/// Classification-only training (angular-margin loss on a trainable
/// classifier).
TrainedModel train_classifier(const LabeledDataset& data, const ModelConfig& model_config,
                              const TrainConfig& train_config);

/// The old model: classification training on the old set. The returned
/// classifier is trainable=false and is what BCT reuses.
TrainedModel train_old_model(const LabeledDataset& old_set, const ModelConfig& model_config,
                             const TrainConfig& train_config);

struct NewModelResult {
  EmbeddingModel model;
  PrototypeMatrix classifier;
  TrainLog log;
  std::optional<PrototypeMatrix> compat_prototypes;  // last set used, if any
};

/// Compatible training of the new model on `split.new_set`. Epochs before
/// warmup use eta = 0; pseudo prototypes are regenerated with the current
/// new model at each regeneration epoch.
NewModelResult train_new_model(const DataSplit& split, const EmbeddingModel& old_model,
                               const PrototypeMatrix* old_classifier,
                               const ModelConfig& new_model_config,
                               const TrainConfig& train_config,
                               const RefinementConfig& refinement);

}  // namespace ubct
