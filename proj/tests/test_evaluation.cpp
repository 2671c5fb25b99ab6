#include <doctest.h>

#include "oracles.hpp"
#include "test_helpers.hpp"
#include "ubct/errors.hpp"
#include "ubct/evaluation.hpp"

#include <cmath>

using namespace ubct;
using ubct::testing::random_matrix;
using ubct::testing::random_unit_rows;

namespace {

// Scores on a coarse grid so that ties between genuine and impostor scores are common.
std::vector<double> grid_scores(Rng& rng, std::size_t n, double shift) {
  std::vector<double> out(n);
  for (auto& s : out) s = std::round((rng.normal() * 0.3 + shift) * 20.0) / 20.0;
  return out;
}

Labels random_labels(Rng& rng, std::size_t n, int classes) {
  Labels l(n);
  for (auto& x : l) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return l;
}

ModelConfig eval_model(std::uint64_t seed) {
  ModelConfig c;
  c.input_dim = 10;
  c.hidden_dims = {12};
  c.embed_dim = 6;
  c.init_seed = seed;
  return c;
}

EvalSet small_eval_set() {
  DatasetSpec s;
  s.num_classes = 5;
  s.samples_per_class = 4;
  s.input_dim = 10;
  s.latent_dim = 4;
  SyntheticWorld w(s);
  return make_eval_set(w, {0, 1, 2, 3, 4}, 4, 3);
}

}  // namespace

TEST_CASE("pairwise_scores: identical, orthogonal, and per-entry dot products") {
  Matrix a(1, 2), b(1, 2);
  a << 1.0, 0.0;
  b << 0.0, 1.0;
  CHECK(pairwise_scores(a, a)(0, 0) == 1.0);
  CHECK(pairwise_scores(a, b)(0, 0) == 0.0);
  Rng rng(1);
  const Matrix q = random_unit_rows(rng, 3, 2);
  const Matrix g = random_unit_rows(rng, 2, 2);
  const Matrix s = pairwise_scores(q, g);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(s(i, j) == doctest::Approx(q(i, 0) * g(j, 0) + q(i, 1) * g(j, 1)).epsilon(1e-15));
  CHECK_THROWS_AS(pairwise_scores(q, Matrix::Ones(2, 3)), ShapeError);
}

TEST_CASE("tar_at_far: perfect separation and indistinguishable distributions") {
  const std::vector<double> gen(10, 0.9), imp(100, 0.1);
  const auto r = tar_at_far(gen, imp, 1e-2);
  CHECK(r.tar == 1.0);
  CHECK_FALSE(r.below_resolution);

  std::vector<double> same(1000);
  for (std::size_t i = 0; i < same.size(); ++i) same[i] = static_cast<double>(i) / 1000.0;
  for (double far : {0.01, 0.05, 0.2, 0.5}) {
    const auto s = tar_at_far(same, same, far);
    CHECK(std::abs(s.tar - far) <= 1.0 / 1000.0);
  }
}

TEST_CASE("tar_at_far: fixed 10-genuine / 100-impostor lists match the exhaustive scan") {
  Rng rng(2);
  const auto gen = grid_scores(rng, 10, 0.6);
  const auto imp = grid_scores(rng, 100, 0.0);
  for (double far : {1e-3, 1e-2, 0.05, 0.1, 0.3, 1.0}) {
    CAPTURE(far);
    const auto lib = tar_at_far(gen, imp, far);
    const auto ref = oracle::tar_at_far(gen, imp, far);
    CHECK(lib.threshold == ref.threshold);
    CHECK(lib.tar == ref.tar);
  }
}

TEST_CASE("tar_at_far: FAR below resolution clamps to the top impostor and is flagged") {
  const std::vector<double> gen = {0.2, 0.3};
  const std::vector<double> imp = {0.1, 0.5, 0.4};
  const auto r = tar_at_far(gen, imp, 0.1);
  CHECK(r.below_resolution);
  CHECK(r.threshold == 0.5);
  CHECK(r.tar == 0.0);
  CHECK_THROWS_AS(tar_at_far({}, imp, 0.1), ConfigError);
  CHECK_THROWS_AS(tar_at_far(gen, imp, 0.0), ConfigError);
}

TEST_CASE("tar_at_far: non-decreasing in FAR") {
  Rng rng(3);
  const auto gen = grid_scores(rng, 200, 0.5);
  const auto imp = grid_scores(rng, 2000, 0.0);
  double previous = -1.0;
  for (double far = 1e-4; far <= 1.0; far *= 1.5) {
    const double t = tar_at_far(gen, imp, far).tar;
    CHECK(t >= previous);
    previous = t;
  }
}

TEST_CASE("topk: self retrieval, all-tie adversarial case, and a 4x6 brute-force fixture") {
  Rng rng(4);
  const Matrix f = random_unit_rows(rng, 5, 8);
  const Labels l = {0, 1, 2, 3, 4};
  CHECK(topk_identification(pairwise_scores(f, f), l, l)[1] == 1.0);

  // Every score equal: the tie goes to gallery index 0, so only its class is ever hit at top-1.
  const Matrix flat = Matrix::Constant(6, 4, 0.25);
  const Labels gl = {2, 0, 1, 2};
  const Labels ql = {2, 2, 0, 1, 2, 1};
  const auto flat_acc = topk_identification(flat, ql, gl, {1, 2, 4, 10});
  CHECK(flat_acc.at(1) == doctest::Approx(3.0 / 6.0));
  CHECK(flat_acc.at(2) == doctest::Approx(4.0 / 6.0));
  CHECK(flat_acc.at(4) == 1.0);
  CHECK(flat_acc.at(10) == 1.0);

  Matrix s(4, 6);
  s << 0.9, 0.1, 0.5, 0.5, 0.2, 0.0,
       0.3, 0.3, 0.3, 0.8, 0.1, 0.3,
       0.0, 0.7, 0.7, 0.1, 0.6, 0.2,
       0.4, 0.4, 0.9, 0.9, 0.9, 0.1;
  const Labels q4 = {1, 0, 2, 1};
  const Labels g6 = {0, 1, 2, 0, 1, 2};
  const std::vector<int> ks = {1, 2, 3, 5};
  const auto lib = topk_identification(s, q4, g6, ks);
  const auto ref = oracle::topk(s, q4, g6, ks);
  for (int k : ks) CHECK(lib.at(k) == ref.at(k));
  CHECK_THROWS_AS(topk_identification(s, {1, 0}, g6), ShapeError);
}

TEST_CASE("metric oracles agree on random tie-heavy fixtures") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto Q = 3 + rng.below(12);
    const auto G = 3 + rng.below(15);
    Matrix s(static_cast<Eigen::Index>(Q), static_cast<Eigen::Index>(G));
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = std::round(rng.uniform() * 8.0) / 8.0;
    const Labels ql = random_labels(rng, Q, 4);
    const Labels gl = random_labels(rng, G, 4);
    const std::vector<int> ks = {1, 2, 5};
    const auto lib = topk_identification(s, ql, gl, ks);
    const auto ref = oracle::topk(s, ql, gl, ks);
    for (int k : ks) CHECK(lib.at(k) == ref.at(k));

    const auto [gen, imp] = split_pair_scores(s, ql, gl);
    std::vector<double> og, oi;
    oracle::split_scores(s, ql, gl, og, oi);
    CHECK(gen == og);
    CHECK(imp == oi);
    if (gen.empty() || imp.empty()) continue;
    for (double far : {0.01, 0.1, 0.25}) {
      const auto a = tar_at_far(gen, imp, far);
      const auto b = oracle::tar_at_far(gen, imp, far);
      CHECK(a.threshold == b.threshold);
      CHECK(a.tar == b.tar);
    }
  }
}

TEST_CASE("evaluate_pair: identical models give cross equal to self-old and no verdict") {
  const auto set = small_eval_set();
  EmbeddingModel m(eval_model(1));
  const auto r = evaluate_pair(m, m, set);
  CHECK(r.cross.tar_at(1e-3) == r.self_old.tar_at(1e-3));
  CHECK(r.cross.top(1) == r.self_old.top(1));
  CHECK(r.cross.top(5) == r.self_old.top(5));
  CHECK_FALSE(r.verification_compatible);
  CHECK_FALSE(r.identification_compatible);
}

TEST_CASE("evaluate_features: copied gallery features give cross equal to self-old") {
  const auto set = small_eval_set();
  EmbeddingModel a(eval_model(1));
  EmbeddingModel b(eval_model(2));
  const Matrix oq = a.forward(set.query.inputs);
  const Matrix og = a.forward(set.gallery.inputs);
  const Matrix nq = oq;  // the new model reproduces old features
  const Matrix ng = b.forward(set.gallery.inputs);
  const auto r = evaluate_features(oq, og, nq, ng, set);
  for (double far : EvalOptions{}.far_list) CHECK(r.cross.tar_at(far) == r.self_old.tar_at(far));
  CHECK(r.cross.topk == r.self_old.topk);
}

TEST_CASE("evaluate_pair: scaling the last layer leaves every metric unchanged") {
  const auto set = small_eval_set();
  EmbeddingModel a(eval_model(1));
  EmbeddingModel b(eval_model(2));
  EmbeddingModel scaled = b;
  scaled.layers().back().weight *= 4.0;
  scaled.layers().back().bias *= 4.0;
  const auto r1 = evaluate_pair(a, b, set);
  const auto r2 = evaluate_pair(a, scaled, set);
  CHECK(r1.to_json().dump() == r2.to_json().dump());
}

TEST_CASE("evaluate_pair: verdicts are the strict comparisons of the report's numbers") {
  const auto set = small_eval_set();
  for (std::uint64_t s = 2; s < 8; ++s) {
    EmbeddingModel a(eval_model(1));
    EmbeddingModel b(eval_model(s));
    const auto r = evaluate_pair(a, b, set);
    CHECK(r.verification_compatible == (r.cross.tar_at(r.reference_far) > r.self_old.tar_at(r.reference_far)));
    CHECK(r.identification_compatible == (r.cross.top(1) > r.self_old.top(1)));
    for (const auto* m : {&r.cross, &r.self_old, &r.self_new}) {
      for (const auto& [far, t] : m->tar) CHECK((t.tar >= 0.0 && t.tar <= 1.0));
      for (const auto& [k, acc] : m->topk) CHECK((acc >= 0.0 && acc <= 1.0));
    }
  }
  ModelConfig wide = eval_model(3);
  wide.embed_dim = 7;
  CHECK_THROWS_AS(evaluate_pair(EmbeddingModel(eval_model(1)), EmbeddingModel(wide), set),
                  IncompatibleArchitectureError);
}

TEST_CASE("CompatReport: JSON round-trip preserves metrics and verdicts") {
  const auto set = small_eval_set();
  const auto r = evaluate_pair(EmbeddingModel(eval_model(1)), EmbeddingModel(eval_model(2)), set);
  const auto j = r.to_json();
  const auto back = CompatReport::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.to_json().dump() == j.dump());
  CHECK(back.verification_compatible == r.verification_compatible);
  auto flipped = back;
  flipped.decide();
  CHECK(flipped.verification_compatible == back.verification_compatible);
}

TEST_CASE("make_eval_set: fresh disjoint query and gallery samples for every class") {
  const auto set = small_eval_set();
  CHECK(set.query.size() == 20);
  CHECK(set.gallery.size() == 15);
  CHECK_NOTHROW(set.validate());
  auto broken = set;
  broken.gallery = broken.query;
  CHECK_THROWS(broken.validate());
  auto uncovered = set;
  uncovered.gallery = set.gallery.subset({0, 1, 2});
  CHECK_THROWS(uncovered.validate());
}

TEST_CASE("EvalOptions::validate requires the reference FAR in the list and k = 1") {
  EvalOptions o;
  CHECK_NOTHROW(o.validate());
  o.reference_far = 5e-3;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = {};
  o.k_list = {5};
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = {};
  o.far_list = {0.0, 1e-3};
  CHECK_THROWS_AS(o.validate(), ConfigError);
}

TEST_CASE("score_histogram: counts land in the bin containing each score") {
  const std::vector<double> gen = {1.0, 0.95, 0.05, -1.0};
  const std::vector<double> imp = {-0.5, 0.0, 0.0, 1.5, -3.0};
  const auto h = score_histogram(gen, imp, 4);
  CHECK(h.edges == std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0});
  CHECK(h.genuine == std::vector<std::size_t>{1, 0, 1, 2});
  // -0.5 and 0.0 sit on lower bin edges; out-of-range scores clamp to the end bins.
  CHECK(h.impostor == std::vector<std::size_t>{1, 1, 2, 1});
  CHECK_THROWS_AS(score_histogram(gen, imp, 0), ConfigError);

  const std::string csv = histograms_to_csv({{"cross", h}});
  CHECK(csv.rfind("mode,bin_lo,bin_hi,genuine,impostor\n", 0) == 0);
  CHECK(csv.find("cross,0.5,1,2,1\n") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
