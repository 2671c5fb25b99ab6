#include "ubct/prototype_engine.hpp"

#include "ubct/errors.hpp"
#include "ubct/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ubct {
namespace {

void warn(Warnings* warnings, std::string message) {
  if (warnings) warnings->push_back(std::move(message));
}

Vector normalized_mean(const Matrix& vertices) {
  const Vector mean = vertices.colwise().mean().transpose();
  const double n = mean.norm();
  if (!(n >= kMinPooledNorm))
    throw NumericalError("pooled prototype norm " + std::to_string(n) +
                         " is too small to normalize");
  return mean / n;
}

}  // namespace

std::string_view to_string(PoolVariant v) {
  switch (v) {
    case PoolVariant::VanillaAvg: return "vanilla-avg";
    case PoolVariant::DropAvg: return "drop-avg";
    case PoolVariant::RefinedAvg: return "refined-avg";
  }
  return "unknown";
}

PoolVariant parse_pool_variant(std::string_view name) {
  for (PoolVariant v : {PoolVariant::VanillaAvg, PoolVariant::DropAvg, PoolVariant::RefinedAvg})
    if (to_string(v) == name) return v;
  throw ConfigError("refinement.variant", "unknown prototype variant '" + std::string(name) + "'");
}

void RefinementConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("refinement.temperature", "must be positive");
  if (!(aggregation >= 0.0 && aggregation < 1.0))
    throw ConfigError("refinement.aggregation", "must lie in [0, 1)");
  if (mode == PropagationMode::Iterative && iterations < 0)
    throw ConfigError("refinement.iterations", "must be nonnegative");
  if (per_class_cap < 1) throw ConfigError("refinement.per_class_cap", "must be positive");
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0))
    throw ConfigError("refinement.drop_fraction", "must lie in [0, 1)");
}

ClassFeatureMap extract_class_features(const EmbeddingModel& old_model,
                                       const EmbeddingModel& new_model,
                                       const LabeledDataset& dataset, int per_class_cap,
                                       std::uint64_t seed, Warnings* warnings) {
  if (per_class_cap < 1) throw ConfigError("per_class_cap", "must be positive");
  const FeatureMatrix old_feats = old_model.forward(dataset.inputs);
  const FeatureMatrix new_feats = new_model.forward(dataset.inputs);
  ClassFeatureMap out;
  for (const auto& [c, class_rows] : dataset.class_index) {
    if (class_rows.empty()) {
      warn(warnings, "class " + std::to_string(c) + " has no samples; excluded");
      continue;
    }
    std::vector<std::size_t> rows = class_rows;
    if (rows.size() > static_cast<std::size_t>(per_class_cap)) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
      rng.shuffle(rows);
      rows.resize(static_cast<std::size_t>(per_class_cap));
      std::sort(rows.begin(), rows.end());
    }
    ClassFeatures cf;
    cf.old_vertices = gather_rows(old_feats, rows);
    cf.new_vertices = gather_rows(new_feats, rows);
    cf.rows = std::move(rows);
    out.emplace(c, std::move(cf));
  }
  return out;
}

Matrix build_edges(const Matrix& new_vertices, double temperature) {
  const Eigen::Index m = new_vertices.rows();
  if (m < 2) throw SingletonClassError("edge matrix needs at least two vertices");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be positive");
  const Matrix sims = new_vertices * new_vertices.transpose();
  Matrix edges = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) peak = std::max(peak, sims(i, j) / temperature);
    double z = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      edges(i, j) = std::exp(sims(i, j) / temperature - peak);
      z += edges(i, j);
    }
    edges.row(i) /= z;
  }
  return edges;
}

ClassGraph ClassGraph::build(Matrix old_vertices, Matrix new_vertices, double temperature,
                             double aggregation) {
  if (old_vertices.rows() != new_vertices.rows())
    throw ShapeError("old and new vertex counts differ");
  ClassGraph g;
  g.edges = old_vertices.rows() >= 2 ? build_edges(new_vertices, temperature)
                                     : Matrix::Zero(old_vertices.rows(), old_vertices.rows());
  g.old_vertices = std::move(old_vertices);
  g.new_vertices = std::move(new_vertices);
  g.temperature = temperature;
  g.aggregation = aggregation;
  return g;
}

void ClassGraph::validate() const {
  const Eigen::Index m = old_vertices.rows();
  if (m < 1) throw ShapeError("graph has no vertices");
  if (edges.rows() != m || edges.cols() != m) throw ShapeError("edge matrix must be m x m");
  if (!(aggregation >= 0.0 && aggregation < 1.0))
    throw ConfigError("aggregation", "must lie in [0, 1) for the fixed point to exist");
  for (Eigen::Index i = 0; i < m; ++i) {
    if (edges(i, i) != 0.0) throw NumericalError("edge matrix diagonal must be zero");
    if ((edges.row(i).array() < 0.0).any()) throw NumericalError("negative edge weight");
    if (m >= 2 && std::abs(edges.row(i).sum() - 1.0) > 1e-9)
      throw NumericalError("edge row " + std::to_string(i) + " does not sum to one");
  }
}

Matrix propagate_iterative(const ClassGraph& graph, int steps) {
  graph.validate();
  if (steps < 0) throw ConfigError("steps", "must be nonnegative");
  const double lambda = graph.aggregation;
  const Matrix anchor = (1.0 - lambda) * graph.old_vertices;
  const Matrix scaled_edges = lambda * graph.edges;
  Matrix v = graph.old_vertices;
  for (int t = 0; t < steps; ++t) v = scaled_edges * v + anchor;
  return v;
}

Matrix propagate_closed_form(const ClassGraph& graph) {
  graph.validate();
  const double lambda = graph.aggregation;
  const Eigen::Index m = graph.edges.rows();
  const Matrix system = Matrix::Identity(m, m) - lambda * graph.edges;
  const Eigen::PartialPivLU<Matrix> lu(system);
  const double rcond = lu.rcond();
  if (!(rcond > 1.0 / kMaxCondition))
    throw NumericalError("propagation system is ill-conditioned (condition estimate " +
                         std::to_string(rcond > 0.0 ? 1.0 / rcond : INFINITY) + ")");
  Matrix rhs = (1.0 - lambda) * graph.old_vertices;
  Matrix out = lu.solve(rhs);
  if (!out.allFinite()) throw NumericalError("propagation solve produced non-finite values");
  return out;
}

Vector pool_prototype(const Matrix& vertices, PoolVariant variant, double drop_fraction,
                      Warnings* warnings) {
  const Eigen::Index m = vertices.rows();
  if (m < 1) throw ShapeError("cannot pool an empty vertex set");
  if (variant != PoolVariant::DropAvg) return normalized_mean(vertices);

  const Vector mean = vertices.colwise().mean().transpose();
  const double mean_norm = mean.norm();
  if (!(mean_norm >= kMinPooledNorm))
    throw NumericalError("raw class mean is degenerate; cannot rank outliers");
  const auto drop =
      static_cast<Eigen::Index>(std::ceil(drop_fraction * static_cast<double>(m) - 1e-12));
  if (drop >= m) {
    warn(warnings, "drop-avg would discard all " + std::to_string(m) +
                       " rows; falling back to the full mean");
    return normalized_mean(vertices);
  }
  std::vector<double> cosine(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const double rn = vertices.row(i).norm();
    cosine[static_cast<std::size_t>(i)] =
        rn > 0.0 ? vertices.row(i).dot(mean) / (rn * mean_norm) : -1.0;
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Farthest first; ties keep the lower row index first.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cosine[a] < cosine[b]; });
  std::vector<std::size_t> kept(order.begin() + drop, order.end());
  std::sort(kept.begin(), kept.end());
  return normalized_mean(gather_rows(vertices, kept));
}

Vector refine_class_prototype(ClassId id, const ClassFeatures& features,
                              const RefinementConfig& config, Warnings* warnings) {
  const Matrix& old_v = features.old_vertices;
  if (config.variant != PoolVariant::RefinedAvg || old_v.rows() < 2)
    return pool_prototype(old_v, config.variant, config.drop_fraction, warnings);
  try {
    const ClassGraph graph = ClassGraph::build(old_v, features.new_vertices, config.temperature,
                                               config.aggregation);
    const Matrix refined = config.mode == PropagationMode::ClosedForm
                               ? propagate_closed_form(graph)
                               : propagate_iterative(graph, config.iterations);
    return pool_prototype(refined, PoolVariant::RefinedAvg);
  } catch (const NumericalError& e) {
    warn(warnings, "class " + std::to_string(id) + ": refinement failed (" + e.what() +
                       "); using vanilla average");
    return pool_prototype(old_v, PoolVariant::VanillaAvg);
  }
}

PrototypeMatrix build_pseudo_classifier(const ClassFeatureMap& features,
                                        const RefinementConfig& config, Warnings* warnings) {
  config.validate();
  if (features.size() < 2)
    throw UndefinedLossError("pseudo classifier needs at least two classes");
  PrototypeMatrix out;
  const Eigen::Index d = features.begin()->second.old_vertices.cols();
  out.rows.resize(static_cast<Eigen::Index>(features.size()), d);
  Eigen::Index r = 0;
  for (const auto& [c, cf] : features) {
    out.rows.row(r++) = refine_class_prototype(c, cf, config, warnings).transpose();
    out.class_ids.push_back(c);
  }
  out.trainable = false;
  return out;
}

PrototypeMatrix build_pseudo_classifier(const EmbeddingModel& old_model,
                                        const EmbeddingModel& new_model,
                                        const LabeledDataset& dataset,
                                        const RefinementConfig& config, Warnings* warnings) {
  config.validate();
  return build_pseudo_classifier(
      extract_class_features(old_model, new_model, dataset, config.per_class_cap, config.seed,
                             warnings),
      config, warnings);
}

}  // namespace ubct
