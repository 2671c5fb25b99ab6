#include "ubct/compat_losses.hpp"

#include "ubct/errors.hpp"

#include <cmath>
#include <string>

namespace ubct {

std::string_view to_string(CompatLossKind k) {
  switch (k) {
    case CompatLossKind::UniBCT: return "unibct";
    case CompatLossKind::UniBCTVanilla: return "unibct-vanilla";
    case CompatLossKind::BCT: return "bct";
    case CompatLossKind::Regress: return "regress";
    case CompatLossKind::Contrastive: return "contrastive";
  }
  return "unknown";
}

CompatLossKind parse_compat_loss(std::string_view name) {
  for (CompatLossKind k : {CompatLossKind::UniBCT, CompatLossKind::UniBCTVanilla,
                           CompatLossKind::BCT, CompatLossKind::Regress,
                           CompatLossKind::Contrastive})
    if (to_string(k) == name) return k;
  throw ConfigError("loss.kind", "unknown compatibility loss '" + std::string(name) + "'");
}

bool uses_prototypes(CompatLossKind k) {
  return k == CompatLossKind::UniBCT || k == CompatLossKind::UniBCTVanilla ||
         k == CompatLossKind::BCT;
}

void CompatLossSpec::validate() const {
  if (!(weight >= 0.0) || !std::isfinite(weight))
    throw ConfigError("loss.weight", "must be finite and nonnegative");
  if (!(contrastive_temperature > 0.0))
    throw ConfigError("loss.contrastive_temperature", "must be positive");
  arcface.validate();
}

CompatLossResult unibct_loss(const FeatureMatrix& new_features, std::span<const int> targets,
                             const PrototypeMatrix& pseudo_prototypes,
                             const ArcFaceParams& params) {
  // Evaluate against a frozen view so no prototype gradient is formed even
  // if the caller passed a trainable matrix.
  PrototypeMatrix frozen_view;
  const PrototypeMatrix* protos = &pseudo_prototypes;
  if (pseudo_prototypes.trainable) {
    frozen_view = pseudo_prototypes;
    frozen_view.trainable = false;
    protos = &frozen_view;
  }
  auto r = arcface_loss(new_features, targets, *protos, params);
  return {r.loss, std::move(r.grad_features)};
}

CompatLossResult bct_loss(const FeatureMatrix& new_features, const Labels& labels,
                          const PrototypeMatrix& old_classifier, const ArcFaceParams& params) {
  std::vector<int> targets;
  try {
    targets = old_classifier.rows_for(labels);
  } catch (const CoverageError& e) {
    throw InapplicableError(
        std::string("BCT needs the old classifier to cover every new class (close-set split): ") +
        e.what());
  }
  return unibct_loss(new_features, targets, old_classifier, params);
}

CompatLossResult regress_loss(const FeatureMatrix& new_features,
                              const FeatureMatrix& old_features) {
  if (new_features.rows() != old_features.rows() || new_features.cols() != old_features.cols())
    throw ShapeError("regression loss needs paired features of equal shape");
  if (new_features.rows() == 0) throw ShapeError("empty batch");
  const auto batch = static_cast<double>(new_features.rows());
  const Matrix diff = new_features - old_features;
  return {diff.squaredNorm() / batch, (2.0 / batch) * diff};
}

CompatLossResult contrastive_loss(const FeatureMatrix& new_features,
                                  const FeatureMatrix& old_features, const Labels& labels,
                                  double temperature) {
  const Eigen::Index b = new_features.rows();
  if (old_features.rows() != b || old_features.cols() != new_features.cols())
    throw ShapeError("contrastive loss needs paired features of equal shape");
  if (static_cast<Eigen::Index>(labels.size()) != b) throw ShapeError("label count mismatch");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be positive");
  if (b < 2) throw BatchCompositionError("contrastive loss needs a batch of at least two");

  const Matrix logits = (new_features * old_features.transpose()) / temperature;
  CompatLossResult out;
  out.grad_features = Matrix::Zero(b, new_features.cols());
  double total = 0.0;
  std::vector<Eigen::Index> members;
  members.reserve(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    members.clear();
    members.push_back(i);
    for (Eigen::Index k = 0; k < b; ++k)
      if (labels[static_cast<std::size_t>(k)] != labels[static_cast<std::size_t>(i)])
        members.push_back(k);
    if (members.size() < 2)
      throw BatchCompositionError("anchor " + std::to_string(i) +
                                  " has no negatives (batch holds a single class)");
    double peak = logits(i, i);
    for (auto k : members) peak = std::max(peak, logits(i, k));
    double z = 0.0;
    for (auto k : members) z += std::exp(logits(i, k) - peak);
    total += -(logits(i, i) - peak - std::log(z));
    // d/dn_i = (sum_k p_k o_k - o_i) / tau
    for (auto k : members) {
      const double p = std::exp(logits(i, k) - peak) / z;
      out.grad_features.row(i) += p * old_features.row(k);
    }
    out.grad_features.row(i) -= old_features.row(i);
  }
  out.loss = total / static_cast<double>(b);
  out.grad_features /= (temperature * static_cast<double>(b));
  return out;
}

}  // namespace ubct
