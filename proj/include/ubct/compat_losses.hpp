#pragma once

#include "ubct/embedding_model.hpp"
#include "ubct/types.hpp"

#include <span>
#include <string_view>

namespace ubct {

enum class CompatLossKind { UniBCT, UniBCTVanilla, BCT, Regress, Contrastive };

std::string_view to_string(CompatLossKind k);
CompatLossKind parse_compat_loss(std::string_view name);

/// True for the losses that supervise with a prototype matrix.
bool uses_prototypes(CompatLossKind k);

struct CompatLossSpec {
  CompatLossKind kind = CompatLossKind::UniBCT;
  double weight = 1.0;               // eta
  double contrastive_temperature = 0.05;
  ArcFaceParams arcface;

  void validate() const;
};

/// Loss value and gradient with respect to the new-model features only.
struct CompatLossResult {
  double loss = 0.0;
  Matrix grad_features;
};

/// Angular-margin loss against frozen pseudo prototypes. `targets` are
/// prototype row indices; CoverageError if one is out of range.
CompatLossResult unibct_loss(const FeatureMatrix& new_features, std::span<const int> targets,
                             const PrototypeMatrix& pseudo_prototypes,
                             const ArcFaceParams& params = {});

/// Same objective against the trained old classifier. Labels are class ids;
/// InapplicableError if any class is missing from the old classifier.
CompatLossResult bct_loss(const FeatureMatrix& new_features, const Labels& labels,
                          const PrototypeMatrix& old_classifier, const ArcFaceParams& params = {});

/// mean_i ||n_i - o_i||^2.
CompatLossResult regress_loss(const FeatureMatrix& new_features,
                              const FeatureMatrix& old_features);

/// Per anchor i: softmax over {o_i} u {o_k : y_k != y_i} of <n_i, .>/tau,
/// negative log-likelihood of o_i, averaged over the batch.
CompatLossResult contrastive_loss(const FeatureMatrix& new_features,
                                  const FeatureMatrix& old_features, const Labels& labels,
                                  double temperature);

}  // namespace ubct
