#include "ubct/trainer.hpp"

#include "ubct/hashing.hpp"
#include "ubct/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace ubct {
namespace {

constexpr std::uint64_t kClassifierSeedStream = 0xC1A55;
constexpr std::uint64_t kShuffleStream = 0x5EED;

/// Compatibility term for one batch: adds eta * d(compat)/d(features) into
/// `grad` and returns the unweighted loss.
using CompatTerm = std::function<double(const FeatureMatrix& features,
                                        const std::vector<std::size_t>& rows, Matrix& grad)>;

/// Callbacks that turn plain classification training into compatible
/// training. Absent for classification-only runs.
struct CompatPlan {
  double weight = 0.0;
  int warmup_epochs = 0;
  std::function<void(const EmbeddingModel& current)> regenerate;
  std::function<bool()> ready;
  std::function<std::uint64_t()> prototype_hash;
  CompatTerm term;
};

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    if (end - start < 2 && !batches.empty()) {
      // A lone trailing sample joins the previous batch.
      batches.back().insert(batches.back().end(), order.begin() + start, order.begin() + end);
    } else {
      batches.emplace_back(order.begin() + start, order.begin() + end);
    }
  }
  return batches;
}

void run_training(const LabeledDataset& data, EmbeddingModel& model, PrototypeMatrix& classifier,
                  const TrainConfig& cfg, CompatPlan* plan, TrainLog& log) {
  if (data.size() < 2) throw ConfigError("dataset", "needs at least two samples to train");
  const std::vector<int> targets = classifier.rows_for(data.labels);
  const ArcFaceParams& arc = cfg.loss_spec.arcface;
  SgdOptimizer optimizer;

  EmbeddingModel last_good_model = model;
  PrototypeMatrix last_good_classifier = classifier;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cfg.lr_at(epoch);

    const bool compat_enabled = plan && plan->weight > 0.0;
    if (compat_enabled && (cfg.is_regen_epoch(epoch) ||
                           (epoch >= plan->warmup_epochs && !plan->ready()))) {
      plan->regenerate(model);
      rec.prototype_regen = true;
    }
    const bool compat_active = compat_enabled && epoch >= plan->warmup_epochs;
    rec.eta = compat_active ? plan->weight : 0.0;

    Rng rng(derive_seed(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
    const auto batches = make_batches(data.size(), cfg.batch_size, rng);
    const SgdParams sgd{rec.lr, cfg.momentum, cfg.weight_decay};

    double cls_sum = 0.0;
    double compat_sum = 0.0;
    double total_sum = 0.0;
    try {
      for (const auto& rows : batches) {
        const Matrix inputs = gather_rows(data.inputs, rows);
        std::vector<int> batch_targets;
        batch_targets.reserve(rows.size());
        for (auto r : rows) batch_targets.push_back(targets[r]);

        const ForwardPass pass = model.forward_train(inputs);
        ArcFaceResult cls = arcface_loss(pass.features, batch_targets, classifier, arc);
        Matrix grad = std::move(cls.grad_features);
        double compat = 0.0;
        if (compat_active) compat = plan->term(pass.features, rows, grad);
        const double total = cls.loss + rec.eta * compat;
        if (!std::isfinite(total))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
        cls_sum += cls.loss;
        compat_sum += compat;
        total_sum += total;

        const ModelGradients grads = model.backward(pass, grad);
        optimizer.step(model, grads, &classifier,
                       cls.grad_prototypes ? &*cls.grad_prototypes : nullptr, sgd);
      }
    } catch (const NumericalError& e) {
      throw DivergenceError(epoch, e.what(), std::move(last_good_model),
                            std::move(last_good_classifier));
    }

    const auto nb = static_cast<double>(batches.size());
    rec.cls_loss = cls_sum / nb;
    rec.compat_loss = compat_sum / nb;
    rec.total_loss = total_sum / nb;
    rec.prototype_hash = (plan && plan->ready()) ? plan->prototype_hash() : 0;
    if (cfg.record_wall_time) {
      rec.wall_time_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    }
    log.epochs.push_back(rec);
    last_good_model = model;
    last_good_classifier = classifier;
  }
}

std::uint64_t classifier_seed(const ModelConfig& cfg) {
  return derive_seed(cfg.init_seed, kClassifierSeedStream);
}

}  // namespace

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.epochs = 35;
  c.warmup_epochs = 10;
  c.batch_size = 256;
  c.lr = 0.1;
  c.lr_decay_epochs = {20, 26, 32};
  c.lr_decay_factor = 0.1;
  c.momentum = 0.9;
  c.weight_decay = 1e-4;
  c.prototype_regen_epochs = {10, 20};
  return c;
}

double TrainConfig::lr_at(int epoch) const {
  double lr_now = lr;
  for (int e : lr_decay_epochs)
    if (epoch >= e) lr_now *= lr_decay_factor;
  return lr_now;
}

bool TrainConfig::is_regen_epoch(int epoch) const {
  return std::find(prototype_regen_epochs.begin(), prototype_regen_epochs.end(), epoch) !=
         prototype_regen_epochs.end();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs", "must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw ConfigError("train.warmup_epochs", "must satisfy 0 <= warmup < epochs");
  if (batch_size < 2) throw ConfigError("train.batch_size", "must be >= 2");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be positive");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("train.lr_decay_factor", "must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("train.momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be nonnegative");
  for (int e : prototype_regen_epochs)
    if (e < warmup_epochs || e >= epochs)
      throw ConfigError("train.prototype_regen_epochs",
                        "epoch " + std::to_string(e) + " outside [warmup, epochs)");
  loss_spec.validate();
}

bool EpochRecord::same_trajectory(const EpochRecord& o) const {
  return epoch == o.epoch && lr == o.lr && eta == o.eta && cls_loss == o.cls_loss &&
         compat_loss == o.compat_loss && total_loss == o.total_loss &&
         prototype_regen == o.prototype_regen && prototype_hash == o.prototype_hash;
}

bool TrainLog::same_trajectory(const TrainLog& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i)
    if (!epochs[i].same_trajectory(other.epochs[i])) return false;
  return true;
}

std::string TrainLog::to_jsonl(bool include_wall_time) const {
  std::ostringstream out;
  for (const auto& r : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["eta"] = r.eta;
    j["cls_loss"] = r.cls_loss;
    j["compat_loss"] = r.compat_loss;
    j["total_loss"] = r.total_loss;
    j["prototype_regen"] = r.prototype_regen;
    j["prototype_hash"] = r.prototype_hash;
    if (include_wall_time) j["wall_time_ms"] = r.wall_time_ms;
    out << j.dump() << '\n';
  }
  return out.str();
}

DivergenceError::DivergenceError(int epoch, const std::string& what,
                                 EmbeddingModel last_good_model,
                                 PrototypeMatrix last_good_classifier)
    : NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " + what),
      epoch_(epoch),
      state_(std::make_shared<const std::pair<EmbeddingModel, PrototypeMatrix>>(
          std::move(last_good_model), std::move(last_good_classifier))) {}

TrainedModel train_classifier(const LabeledDataset& data, const ModelConfig& model_config,
                              const TrainConfig& train_config) {
  train_config.validate();
  data.validate();
  if (data.input_dim() != model_config.input_dim)
    throw ShapeError("dataset width does not match model input_dim");
  TrainedModel out{EmbeddingModel(model_config),
                   PrototypeMatrix::random(data.classes(), model_config.embed_dim,
                                           classifier_seed(model_config)),
                   {}};
  run_training(data, out.model, out.classifier, train_config, nullptr, out.log);
  return out;
}

TrainedModel train_old_model(const LabeledDataset& old_set, const ModelConfig& model_config,
                             const TrainConfig& train_config) {
  if (old_set.size() == 0) throw ConfigError("old_set", "is empty");
  TrainedModel out = train_classifier(old_set, model_config, train_config);
  out.classifier.trainable = false;
  return out;
}

NewModelResult train_new_model(const DataSplit& split, const EmbeddingModel& old_model,
                               const PrototypeMatrix* old_classifier,
                               const ModelConfig& new_model_config,
                               const TrainConfig& train_config,
                               const RefinementConfig& refinement) {
  train_config.validate();
  refinement.validate();
  const LabeledDataset& data = split.new_set;
  data.validate();
  if (data.input_dim() != new_model_config.input_dim)
    throw ShapeError("dataset width does not match model input_dim");
  if (old_model.input_dim() != data.input_dim())
    throw ShapeError("old model input_dim does not match the new training set");
  if (old_model.embed_dim() != new_model_config.embed_dim)
    throw IncompatibleArchitectureError("old and new models must share embed_dim");

  const CompatLossSpec& spec = train_config.loss_spec;
  NewModelResult out{EmbeddingModel(new_model_config),
                     PrototypeMatrix::random(data.classes(), new_model_config.embed_dim,
                                             classifier_seed(new_model_config)),
                     {},
                     std::nullopt};
  TrainAudit& audit = out.log.audit;
  audit.old_model_hash_start = old_model.parameter_hash();

  // Prototype state shared by the callbacks below.
  std::optional<PrototypeMatrix> prototypes;
  std::vector<int> proto_targets;
  RefinementConfig pseudo_cfg = refinement;
  if (spec.kind == CompatLossKind::UniBCTVanilla) pseudo_cfg.variant = PoolVariant::VanillaAvg;

  if (spec.kind == CompatLossKind::BCT && spec.weight > 0.0) {
    if (!old_classifier) throw InapplicableError("BCT requires the trained old classifier");
    if (!old_classifier->covers(data.classes()))
      throw InapplicableError(
          "BCT is inapplicable: the old classifier does not cover every new class (open-set "
          "split " + std::string(to_string(split.scenario)) + ")");
  }

  // Old features of the new set; the old model is frozen for the whole run.
  const FeatureMatrix old_features = uses_prototypes(spec.kind) ? FeatureMatrix()
                                                                : old_model.forward(data.inputs);

  CompatPlan plan;
  plan.weight = spec.weight;
  plan.warmup_epochs = train_config.warmup_epochs;
  plan.ready = [&] { return !uses_prototypes(spec.kind) || prototypes.has_value(); };
  plan.prototype_hash = [&]() -> std::uint64_t { return prototypes ? prototypes->hash() : 0; };
  plan.regenerate = [&](const EmbeddingModel& current) {
    switch (spec.kind) {
      case CompatLossKind::UniBCT:
      case CompatLossKind::UniBCTVanilla:
        prototypes = build_pseudo_classifier(old_model, current, data, pseudo_cfg,
                                             &out.log.warnings);
        break;
      case CompatLossKind::BCT:
        if (!prototypes) {
          prototypes = *old_classifier;
          prototypes->trainable = false;
        }
        break;
      case CompatLossKind::Regress:
      case CompatLossKind::Contrastive:
        return;
    }
    proto_targets = prototypes->rows_for(data.labels);
  };
  plan.term = [&](const FeatureMatrix& features, const std::vector<std::size_t>& rows,
                  Matrix& grad) -> double {
    const std::uint64_t old_hash = old_model.parameter_hash();
    const std::uint64_t proto_hash = prototypes ? prototypes->hash() : 0;
    CompatLossResult r;
    switch (spec.kind) {
      case CompatLossKind::UniBCT:
      case CompatLossKind::UniBCTVanilla:
      case CompatLossKind::BCT: {
        std::vector<int> t;
        t.reserve(rows.size());
        for (auto row : rows) t.push_back(proto_targets[row]);
        r = unibct_loss(features, t, *prototypes, spec.arcface);
        break;
      }
      case CompatLossKind::Regress:
        r = regress_loss(features, gather_rows(old_features, rows));
        break;
      case CompatLossKind::Contrastive: {
        Labels labels;
        labels.reserve(rows.size());
        for (auto row : rows) labels.push_back(data.labels[row]);
        r = contrastive_loss(features, gather_rows(old_features, rows), labels,
                             spec.contrastive_temperature);
        break;
      }
    }
    ++audit.compat_backward_passes;
    if (old_model.parameter_hash() != old_hash) ++audit.old_model_hash_violations;
    if ((prototypes ? prototypes->hash() : 0) != proto_hash) ++audit.prototype_hash_violations;
    grad += spec.weight * r.grad_features;
    return r.loss;
  };

  try {
    run_training(data, out.model, out.classifier, train_config, &plan, out.log);
  } catch (const CoverageError& e) {
    throw CoverageError(std::string("during new-model training: ") + e.what());
  }
  audit.old_model_hash_end = old_model.parameter_hash();
  out.compat_prototypes = std::move(prototypes);
  return out;
}

}  // namespace ubct
