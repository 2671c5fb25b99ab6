#pragma once

#include "ubct/embedding_model.hpp"
#include "ubct/synthetic_data.hpp"
#include "ubct/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ubct {

/// Collects non-fatal diagnostics (skipped classes, fallbacks).
using Warnings = std::vector<std::string>;

enum class PoolVariant { VanillaAvg, DropAvg, RefinedAvg };

std::string_view to_string(PoolVariant v);
PoolVariant parse_pool_variant(std::string_view name);

enum class PropagationMode { ClosedForm, Iterative };

struct RefinementConfig {
  double temperature = 0.05;
  double aggregation = 0.9;  // lambda, in [0, 1)
  PropagationMode mode = PropagationMode::ClosedForm;
  int iterations = 2000;     // used by PropagationMode::Iterative
  int per_class_cap = 64;
  PoolVariant variant = PoolVariant::RefinedAvg;
  double drop_fraction = 0.10;
  std::uint64_t seed = 666;  // cap subsampling

  void validate() const;
};

/// Old- and new-model features of one class. `rows` are dataset row indices
/// in the same order as the feature rows.
struct ClassFeatures {
  Matrix old_vertices;
  Matrix new_vertices;
  std::vector<std::size_t> rows;
};

using ClassFeatureMap = std::map<ClassId, ClassFeatures>;

/// Forward passes of both models over `dataset`, grouped by label. Classes
/// above `per_class_cap` samples keep a seeded subsample of `per_class_cap`
/// rows; empty classes are dropped with a warning.
ClassFeatureMap extract_class_features(const EmbeddingModel& old_model,
                                       const EmbeddingModel& new_model,
                                       const LabeledDataset& dataset, int per_class_cap,
                                       std::uint64_t seed, Warnings* warnings = nullptr);

/// Row-normalized similarity graph of one class: each old feature is a
/// vertex; edges are a temperature softmax over new-feature cosines with
/// the self-loop excluded.
struct ClassGraph {
  Matrix old_vertices;  // m x d, initial state of the propagation
  Matrix new_vertices;  // m x d, only used to build the edges
  Matrix edges;         // m x m, zero diagonal, rows sum to one
  double temperature = 0.05;
  double aggregation = 0.9;

  static ClassGraph build(Matrix old_vertices, Matrix new_vertices, double temperature,
                          double aggregation);

  int size() const noexcept { return static_cast<int>(old_vertices.rows()); }
  /// Throws NumericalError/ConfigError when an invariant does not hold.
  void validate() const;
};

/// E(i,j) = exp(<n_i,n_j>/tau) / sum_{k != i} exp(<n_i,n_k>/tau), E(i,i) = 0.
/// Throws SingletonClassError for fewer than two rows.
Matrix build_edges(const Matrix& new_vertices, double temperature);

/// t steps of V <- lambda * E * V + (1 - lambda) * V0.
Matrix propagate_iterative(const ClassGraph& graph, int steps);

/// Fixed point (1 - lambda) (I - lambda E)^{-1} V0 via an LU solve.
/// Throws NumericalError when the condition estimate exceeds kMaxCondition.
Matrix propagate_closed_form(const ClassGraph& graph);

inline constexpr double kMaxCondition = 1e12;
inline constexpr double kMinPooledNorm = 1e-8;

/// Mean of the rows, L2-normalized. DropAvg first discards the
/// ceil(drop_fraction * m) rows with the lowest cosine to the raw mean.
Vector pool_prototype(const Matrix& vertices, PoolVariant variant, double drop_fraction = 0.10,
                      Warnings* warnings = nullptr);

/// The full per-class pipeline for one class: propagation (RefinedAvg, m >= 2)
/// and pooling. Propagation failures degrade to VanillaAvg with a warning.
Vector refine_class_prototype(ClassId id, const ClassFeatures& features,
                              const RefinementConfig& config, Warnings* warnings = nullptr);

/// Frozen pseudo classifier, rows ordered by class id.
PrototypeMatrix build_pseudo_classifier(const ClassFeatureMap& features,
                                        const RefinementConfig& config,
                                        Warnings* warnings = nullptr);

PrototypeMatrix build_pseudo_classifier(const EmbeddingModel& old_model,
                                        const EmbeddingModel& new_model,
                                        const LabeledDataset& dataset,
                                        const RefinementConfig& config,
                                        Warnings* warnings = nullptr);

}  // namespace ubct
