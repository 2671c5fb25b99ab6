#include "ubct/evaluation.hpp"

#include "ubct/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <string>

namespace ubct {
namespace {

constexpr std::uint64_t kQueryStream = 11;
constexpr std::uint64_t kGalleryStream = 12;

std::string far_key(double far) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", far);
  return buf;
}

nlohmann::ordered_json mode_json(const ModeMetrics& m) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json tar = nlohmann::ordered_json::object();
  for (const auto& [far, r] : m.tar) {
    tar[far_key(far)] = {{"far", far},
                         {"tar", r.tar},
                         {"threshold", r.threshold},
                         {"below_resolution", r.below_resolution}};
  }
  j["tar_at_far"] = tar;
  nlohmann::ordered_json topk = nlohmann::ordered_json::object();
  for (const auto& [k, acc] : m.topk) topk["top" + std::to_string(k)] = acc;
  j["identification"] = topk;
  return j;
}

ModeMetrics mode_from_json(const nlohmann::json& j) {
  ModeMetrics m;
  for (const auto& entry : j.at("tar_at_far")) {
    TarAtFar r;
    r.tar = entry.at("tar").get<double>();
    r.threshold = entry.at("threshold").get<double>();
    r.below_resolution = entry.at("below_resolution").get<bool>();
    m.tar.emplace_back(entry.at("far").get<double>(), r);
  }
  std::sort(m.tar.begin(), m.tar.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [key, value] : j.at("identification").items()) {
    if (key.rfind("top", 0) != 0) throw IoError("bad identification key '" + key + "'");
    m.topk[std::stoi(key.substr(3))] = value.get<double>();
  }
  return m;
}

}  // namespace

void EvalSet::validate() const {
  query.validate();
  gallery.validate();
  if (query.inputs.cols() != gallery.inputs.cols())
    throw ShapeError("query and gallery widths differ");
  for (ClassId c : query.classes())
    if (!gallery.class_index.count(c) || gallery.class_index.at(c).empty())
      throw ConfigError("eval_set", "gallery has no sample of query class " + std::to_string(c));
  const std::set<std::uint64_t> ids(query.sample_ids.begin(), query.sample_ids.end());
  for (auto id : gallery.sample_ids)
    if (ids.count(id)) throw ConfigError("eval_set", "query and gallery share a sample");
}

EvalSet make_eval_set(const SyntheticWorld& world, const std::vector<ClassId>& classes,
                      int queries_per_class, int gallery_per_class) {
  EvalSet set{world.draw(classes, queries_per_class, kQueryStream),
              world.draw(classes, gallery_per_class, kGalleryStream)};
  set.validate();
  return set;
}

Matrix pairwise_scores(const FeatureMatrix& query, const FeatureMatrix& gallery) {
  if (query.cols() != gallery.cols())
    throw ShapeError("query width " + std::to_string(query.cols()) +
                     " does not match gallery width " + std::to_string(gallery.cols()));
  return query * gallery.transpose();
}

TarAtFar tar_at_far(std::span<const double> genuine, std::span<const double> impostor,
                    double far) {
  if (genuine.empty() || impostor.empty())
    throw ConfigError("scores", "genuine and impostor lists must be nonempty");
  if (!(far > 0.0 && far <= 1.0)) throw ConfigError("far", "must lie in (0, 1]");

  std::vector<double> imp(impostor.begin(), impostor.end());
  std::vector<double> gen(genuine.begin(), genuine.end());
  std::sort(imp.begin(), imp.end());
  std::sort(gen.begin(), gen.end());
  std::vector<double> candidates;
  candidates.reserve(imp.size() + gen.size());
  std::merge(imp.begin(), imp.end(), gen.begin(), gen.end(), std::back_inserter(candidates));
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  const auto n_imp = static_cast<double>(imp.size());
  auto count_ge = [](const std::vector<double>& sorted, double t) {
    return static_cast<std::size_t>(sorted.end() -
                                    std::lower_bound(sorted.begin(), sorted.end(), t));
  };
  auto admissible = [&](double t) {
    return static_cast<double>(count_ge(imp, t)) / n_imp <= far;
  };

  TarAtFar out;
  out.below_resolution = far < 1.0 / n_imp;
  // #impostors >= t is non-increasing in t, so admissibility is monotone.
  const auto it = std::partition_point(candidates.begin(), candidates.end(),
                                       [&](double t) { return !admissible(t); });
  out.threshold = it != candidates.end() ? *it : imp.back();
  out.tar = static_cast<double>(count_ge(gen, out.threshold)) / static_cast<double>(gen.size());
  return out;
}

std::map<int, double> topk_identification(const Matrix& scores, const Labels& query_labels,
                                          const Labels& gallery_labels,
                                          const std::vector<int>& k_list) {
  if (static_cast<std::size_t>(scores.rows()) != query_labels.size() ||
      static_cast<std::size_t>(scores.cols()) != gallery_labels.size())
    throw ShapeError("score matrix shape does not match label counts");
  if (scores.rows() == 0 || scores.cols() == 0) throw ShapeError("empty score matrix");
  const Eigen::Index Q = scores.rows();
  const Eigen::Index G = scores.cols();

  // Rank of the best-placed matching gallery item under the
  // (score desc, index asc) ordering; G when none matches.
  std::vector<Eigen::Index> first_hit(static_cast<std::size_t>(Q), G);
  for (Eigen::Index q = 0; q < Q; ++q) {
    const ClassId label = query_labels[static_cast<std::size_t>(q)];
    Eigen::Index best = -1;
    for (Eigen::Index g = 0; g < G; ++g) {
      if (gallery_labels[static_cast<std::size_t>(g)] != label) continue;
      if (best < 0 || scores(q, g) > scores(q, best)) best = g;
    }
    if (best < 0) continue;
    const double s = scores(q, best);
    Eigen::Index ahead = 0;
    for (Eigen::Index g = 0; g < G; ++g)
      if (scores(q, g) > s || (scores(q, g) == s && g < best)) ++ahead;
    first_hit[static_cast<std::size_t>(q)] = ahead;
  }

  std::map<int, double> out;
  for (int k : k_list) {
    if (k < 1) throw ConfigError("k_list", "k must be positive");
    const Eigen::Index kk = std::min<Eigen::Index>(k, G);
    std::size_t hits = 0;
    for (auto r : first_hit)
      if (r < kk) ++hits;
    out[k] = static_cast<double>(hits) / static_cast<double>(Q);
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> split_pair_scores(
    const Matrix& scores, const Labels& query_labels, const Labels& gallery_labels) {
  if (static_cast<std::size_t>(scores.rows()) != query_labels.size() ||
      static_cast<std::size_t>(scores.cols()) != gallery_labels.size())
    throw ShapeError("score matrix shape does not match label counts");
  std::vector<double> genuine;
  std::vector<double> impostor;
  for (Eigen::Index q = 0; q < scores.rows(); ++q)
    for (Eigen::Index g = 0; g < scores.cols(); ++g)
      (query_labels[static_cast<std::size_t>(q)] == gallery_labels[static_cast<std::size_t>(g)]
           ? genuine
           : impostor)
          .push_back(scores(q, g));
  return {std::move(genuine), std::move(impostor)};
}

void EvalOptions::validate() const {
  if (far_list.empty()) throw ConfigError("eval.far_list", "must be nonempty");
  for (double f : far_list)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("eval.far_list", "entries must lie in (0, 1]");
  if (std::find(far_list.begin(), far_list.end(), reference_far) == far_list.end())
    throw ConfigError("eval.reference_far", "must be one of far_list");
  if (std::find(k_list.begin(), k_list.end(), 1) == k_list.end())
    throw ConfigError("eval.k_list", "must contain 1 (used by the identification verdict)");
  for (int k : k_list)
    if (k < 1) throw ConfigError("eval.k_list", "entries must be positive");
}

double ModeMetrics::tar_at(double far) const {
  for (const auto& [f, r] : tar)
    if (f == far) return r.tar;
  throw ConfigError("far", "no TAR recorded at FAR " + far_key(far));
}

double ModeMetrics::top(int k) const {
  const auto it = topk.find(k);
  if (it == topk.end()) throw ConfigError("k", "no top-" + std::to_string(k) + " recorded");
  return it->second;
}

void CompatReport::decide() {
  verification_compatible = cross.tar_at(reference_far) > self_old.tar_at(reference_far);
  identification_compatible = cross.top(1) > self_old.top(1);
}

nlohmann::ordered_json CompatReport::to_json() const {
  nlohmann::ordered_json j;
  j["reference_far"] = reference_far;
  j["cross"] = mode_json(cross);
  j["self_old"] = mode_json(self_old);
  j["self_new"] = mode_json(self_new);
  j["verdicts"] = {{"verification_compatible", verification_compatible},
                   {"identification_compatible", identification_compatible}};
  return j;
}

CompatReport CompatReport::from_json(const nlohmann::json& j) {
  CompatReport r;
  r.reference_far = j.at("reference_far").get<double>();
  r.cross = mode_from_json(j.at("cross"));
  r.self_old = mode_from_json(j.at("self_old"));
  r.self_new = mode_from_json(j.at("self_new"));
  const auto& v = j.at("verdicts");
  r.verification_compatible = v.at("verification_compatible").get<bool>();
  r.identification_compatible = v.at("identification_compatible").get<bool>();
  return r;
}

ModeMetrics evaluate_mode(const FeatureMatrix& query, const Labels& query_labels,
                          const FeatureMatrix& gallery, const Labels& gallery_labels,
                          const EvalOptions& options) {
  const Matrix scores = pairwise_scores(query, gallery);
  const auto [genuine, impostor] = split_pair_scores(scores, query_labels, gallery_labels);
  ModeMetrics m;
  for (double far : options.far_list) m.tar.emplace_back(far, tar_at_far(genuine, impostor, far));
  m.topk = topk_identification(scores, query_labels, gallery_labels, options.k_list);
  return m;
}

CompatReport evaluate_features(const FeatureMatrix& old_query, const FeatureMatrix& old_gallery,
                               const FeatureMatrix& new_query, const FeatureMatrix& new_gallery,
                               const EvalSet& eval_set, const EvalOptions& options) {
  options.validate();
  if (old_query.cols() != new_query.cols())
    throw IncompatibleArchitectureError("old and new features have different dimensions");
  const Labels& ql = eval_set.query.labels;
  const Labels& gl = eval_set.gallery.labels;
  CompatReport r;
  r.reference_far = options.reference_far;
  r.cross = evaluate_mode(new_query, ql, old_gallery, gl, options);
  r.self_old = evaluate_mode(old_query, ql, old_gallery, gl, options);
  r.self_new = evaluate_mode(new_query, ql, new_gallery, gl, options);
  r.decide();
  return r;
}

CompatReport evaluate_pair(const EmbeddingModel& old_model, const EmbeddingModel& new_model,
                           const EvalSet& eval_set, const EvalOptions& options) {
  if (old_model.embed_dim() != new_model.embed_dim())
    throw IncompatibleArchitectureError("cross test needs equal embed_dim (old " +
                                        std::to_string(old_model.embed_dim()) + ", new " +
                                        std::to_string(new_model.embed_dim()) + ")");
  return evaluate_features(old_model.forward(eval_set.query.inputs),
                           old_model.forward(eval_set.gallery.inputs),
                           new_model.forward(eval_set.query.inputs),
                           new_model.forward(eval_set.gallery.inputs), eval_set, options);
}

ScoreHistogram score_histogram(std::span<const double> genuine, std::span<const double> impostor,
                               int bins) {
  if (bins < 1) throw ConfigError("histogram.bins", "must be positive");
  ScoreHistogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = -1.0 + 2.0 * i / bins;
  h.genuine.assign(static_cast<std::size_t>(bins), 0);
  h.impostor.assign(static_cast<std::size_t>(bins), 0);
  const auto bin_of = [bins](double s) {
    const int b = static_cast<int>(std::floor((s + 1.0) * 0.5 * bins));
    return static_cast<std::size_t>(std::clamp(b, 0, bins - 1));
  };
  for (double s : genuine) ++h.genuine[bin_of(s)];
  for (double s : impostor) ++h.impostor[bin_of(s)];
  return h;
}

std::string histograms_to_csv(const std::vector<std::pair<std::string, ScoreHistogram>>& modes) {
  std::ostringstream out;
  out << "mode,bin_lo,bin_hi,genuine,impostor\n";
  char buf[64];
  for (const auto& [name, h] : modes) {
    for (std::size_t b = 0; b < h.genuine.size(); ++b) {
      std::snprintf(buf, sizeof(buf), "%.6g,%.6g", h.edges[b], h.edges[b + 1]);
      out << name << ',' << buf << ',' << h.genuine[b] << ',' << h.impostor[b] << '\n';
    }
  }
  return out.str();
}

}  // namespace ubct
