#pragma once

#include "ubct/compat_losses.hpp"
#include "ubct/embedding_model.hpp"
#include "ubct/evaluation.hpp"
#include "ubct/prototype_engine.hpp"
#include "ubct/synthetic_data.hpp"
#include "ubct/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ubct {

/// Everything needed to reproduce one old -> new upgrade experiment.
/// `train.loss_spec` is the compatibility loss; the old model is trained
/// with the same schedule and classification loss only.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 666;  // master seed the sub-seeds were derived from
  DatasetSpec dataset;
  Scenario scenario = Scenario::ExtendedData;
  double old_fraction = 0.3;
  std::uint64_t split_seed = kDefaultSplitSeed;
  ModelConfig model_old;
  ModelConfig model_new;
  TrainConfig train;
  RefinementConfig refinement;
  EvalOptions eval;
  int queries_per_class = 10;
  int gallery_per_class = 10;
  std::string output_dir;
  bool dump_features = false;

  /// Whole-config validation, including cross-field conflicts such as BCT on
  /// an open-set split. Throws ConfigError.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Keys absent from `j` keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Re-derives every sub-seed (data, split-independent model inits, training
/// shuffles, cap subsampling) from one master seed.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

/// `[full-]<scenario>-<loss>`, e.g. "extended-data-unibct" or
/// "full-open-class-regress". Throws ConfigError for unknown names.
ExperimentConfig make_preset(std::string_view name);
std::vector<std::string> preset_names();

/// Loss kinds that the grid crosses with every scenario.
inline constexpr CompatLossKind kGridLosses[] = {CompatLossKind::UniBCT,
                                                 CompatLossKind::UniBCTVanilla,
                                                 CompatLossKind::Regress,
                                                 CompatLossKind::Contrastive};

struct ExperimentResult {
  ExperimentConfig config;
  CompatReport report;
  TrainLog old_log;
  TrainLog new_log;
  Warnings warnings;

  /// report.json contents: config identity plus metrics.
  nlohmann::ordered_json report_json() const;
};

/// generate -> split -> train old -> train new -> evaluate. Artifacts are
/// written when `config.output_dir` is set. Errors are rethrown as
/// StageError naming the failing stage.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Writes report.json, trainlog.jsonl, trainlog_old.jsonl, config.json,
/// both checkpoints and, if requested, feature dumps into `dir`.
void write_artifacts(const ExperimentResult& result, const std::filesystem::path& dir,
                     const EmbeddingModel* old_model = nullptr,
                     const EmbeddingModel* new_model = nullptr);

struct SummaryRow {
  std::string source;  // report path relative to the summarized dir
  std::string name;
  std::string scenario;
  std::string loss;
  std::string prototype;
  std::uint64_t seed = 0;
  double reference_far = 0.0;
  double cross_tar = 0.0;
  double self_old_tar = 0.0;
  double self_new_tar = 0.0;
  double cross_top1 = 0.0;
  double cross_top5 = 0.0;
  double self_old_top1 = 0.0;
  double self_old_top5 = 0.0;
  double self_new_top1 = 0.0;
  double self_new_top5 = 0.0;
  bool verification_compatible = false;
  bool identification_compatible = false;
};

struct Summary {
  std::vector<SummaryRow> rows;
  Warnings warnings;  // skipped files

  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

/// Collects every report.json below `dir` into a comparison table ordered by
/// (scenario, loss, prototype, seed, name). Writes summary.csv/summary.json
/// into `dir` when `write` is set. IoError if `dir` does not exist.
Summary summarize(const std::filesystem::path& dir, bool write = true);

/// The scenario x loss grid derived from `base`; one run per cell, each into
/// `<root>/<scenario>-<loss>`, then summarized.
Summary run_grid(const ExperimentConfig& base, const std::filesystem::path& root,
                 const std::vector<Scenario>& scenarios = {std::begin(kAllScenarios),
                                                           std::end(kAllScenarios)},
                 const std::vector<CompatLossKind>& losses = {std::begin(kGridLosses),
                                                              std::end(kGridLosses)});

/// Runs the prototype engine on dumped features and writes per-class edge
/// matrices (edges_<class>.csv) and the prototype matrix
/// (prototypes.csv, prototypes.bin) into `out_dir`.
PrototypeMatrix refine_demo(const std::filesystem::path& old_features,
                            const std::filesystem::path& new_features,
                            const std::filesystem::path& labels,
                            const RefinementConfig& config, const std::filesystem::path& out_dir,
                            Warnings* warnings = nullptr);

/// Resolves a relative output path against $UBCT_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::string& dir);

}  // namespace ubct
