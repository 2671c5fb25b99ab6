#pragma once

#include "ubct/embedding_model.hpp"
#include "ubct/synthetic_data.hpp"
#include "ubct/types.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ubct {

struct EvalSet {
  LabeledDataset query;
  LabeledDataset gallery;

  /// Every query class has a gallery sample; no sample id on both sides.
  void validate() const;
};

/// Held-out query and gallery samples for `classes`, drawn from independent
/// noise streams of the world that produced the training data.
EvalSet make_eval_set(const SyntheticWorld& world, const std::vector<ClassId>& classes,
                      int queries_per_class = 10, int gallery_per_class = 10);

/// Q x G cosine scores of unit-norm rows.
Matrix pairwise_scores(const FeatureMatrix& query, const FeatureMatrix& gallery);

struct TarAtFar {
  double tar = 0.0;
  double threshold = 0.0;
  /// Requested FAR is below 1 / #impostors.
  bool below_resolution = false;
};

/// Threshold t is the smallest observed score (genuine or impostor) with
/// #{impostor >= t} / #impostor <= far; TAR = #{genuine >= t} / #genuine.
/// If no observed score qualifies, t is the top impostor score.
TarAtFar tar_at_far(std::span<const double> genuine, std::span<const double> impostor, double far);

/// Fraction of queries whose top-k gallery items (by descending score, ties
/// to the lower gallery index) contain the query's label. k is clamped to G.
std::map<int, double> topk_identification(const Matrix& scores, const Labels& query_labels,
                                          const Labels& gallery_labels,
                                          const std::vector<int>& k_list = {1, 5});

/// Genuine (same label) and impostor scores over all query x gallery pairs.
std::pair<std::vector<double>, std::vector<double>> split_pair_scores(
    const Matrix& scores, const Labels& query_labels, const Labels& gallery_labels);

/// Genuine and impostor score counts over equal-width bins spanning [-1, 1].
/// Scores outside the range land in the end bins.
struct ScoreHistogram {
  std::vector<double> edges;  // bins + 1 ascending bin boundaries
  std::vector<std::size_t> genuine;
  std::vector<std::size_t> impostor;
};

ScoreHistogram score_histogram(std::span<const double> genuine, std::span<const double> impostor,
                               int bins = 40);

/// `mode,bin_lo,bin_hi,genuine,impostor` rows for each named histogram, with a header.
std::string histograms_to_csv(const std::vector<std::pair<std::string, ScoreHistogram>>& modes);

struct EvalOptions {
  std::vector<double> far_list = {1e-4, 1e-3, 1e-2};
  double reference_far = 1e-3;
  std::vector<int> k_list = {1, 5};

  void validate() const;
};

struct ModeMetrics {
  std::vector<std::pair<double, TarAtFar>> tar;  // ordered as far_list
  std::map<int, double> topk;

  double tar_at(double far) const;
  double top(int k) const;
};

struct CompatReport {
  ModeMetrics cross;
  ModeMetrics self_new;
  ModeMetrics self_old;
  double reference_far = 1e-3;
  bool verification_compatible = false;
  bool identification_compatible = false;

  /// Recomputes both verdicts from the stored metrics (strict inequalities).
  void decide();

  nlohmann::ordered_json to_json() const;
  static CompatReport from_json(const nlohmann::json& j);
};

/// Metrics for one (query features, gallery features) pairing.
ModeMetrics evaluate_mode(const FeatureMatrix& query, const Labels& query_labels,
                          const FeatureMatrix& gallery, const Labels& gallery_labels,
                          const EvalOptions& options);

/// Cross test (new queries vs old gallery) and both self tests.
CompatReport evaluate_pair(const EmbeddingModel& old_model, const EmbeddingModel& new_model,
                           const EvalSet& eval_set, const EvalOptions& options = {});

/// Same, from precomputed features.
CompatReport evaluate_features(const FeatureMatrix& old_query, const FeatureMatrix& old_gallery,
                               const FeatureMatrix& new_query, const FeatureMatrix& new_gallery,
                               const EvalSet& eval_set, const EvalOptions& options = {});

}  // namespace ubct
