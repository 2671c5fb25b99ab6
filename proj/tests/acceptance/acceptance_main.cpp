// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "oracles.hpp"
#include "test_helpers.hpp"
#include "ubct/compat_losses.hpp"
#include "ubct/errors.hpp"
#include "ubct/evaluation.hpp"
#include "ubct/experiment.hpp"
#include "ubct/prototype_engine.hpp"
#include "ubct/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace ubct;
using ubct::testing::numeric_gradient;
using ubct::testing::random_unit_rows;
using ubct::testing::relative_error;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void verdict(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// 1. Closed-form fixed point against 2000 explicit propagation steps.
void closed_form_equivalence() {
  const auto start = Clock::now();
  Rng rng(derive_seed(666, 1));
  const double lambdas[] = {0.5, 0.9, 0.95};
  double worst = 0.0;
  for (int g = 0; g < 100; ++g) {
    const int m = uniform_int(rng, 2, 64);
    const int d = uniform_int(rng, 4, 64);
    const double lambda = lambdas[g % 3];
    const auto graph = ClassGraph::build(random_unit_rows(rng, m, d), random_unit_rows(rng, m, d),
                                         0.05, lambda);
    const Matrix a = propagate_closed_form(graph);
    const Matrix b = propagate_iterative(graph, 2000);
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  const double t = seconds_since(start);
  verdict(1, worst <= 1e-8 && t < 10.0,
          fmt("100 graphs, max |closed - iterative| = %.3e (tol 1e-8), %.2f s (limit 10 s)", worst, t));
}

// 2. Analytic loss gradients against central finite differences.
void gradient_suite() {
  const auto start = Clock::now();
  Rng rng(derive_seed(666, 2));
  const ArcFaceParams params;  // scale 64, margin 0.5
  double worst_arc = 0.0, worst_uni = 0.0, worst_reg = 0.0, worst_con = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int b = uniform_int(rng, 3, 8);
    const int d = uniform_int(rng, 3, 8);
    const int c = uniform_int(rng, 2, 5);
    const Matrix f = random_unit_rows(rng, b, d);
    std::vector<int> targets(static_cast<std::size_t>(b));
    Labels labels(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      targets[static_cast<std::size_t>(i)] = i % c;
      labels[static_cast<std::size_t>(i)] = i % c;
    }
    std::vector<ClassId> ids(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) ids[static_cast<std::size_t>(i)] = i;

    PrototypeMatrix protos = PrototypeMatrix::random(ids, d, rng.next_u64());
    const auto arc = arcface_loss(f, targets, protos, params);
    const Matrix gf = numeric_gradient([&](const Matrix& x) { return arcface_loss(x, targets, protos, params).loss; }, f);
    const Matrix gp = numeric_gradient(
        [&](const Matrix& w) {
          PrototypeMatrix p = protos;
          p.rows = w;
          return arcface_loss(f, targets, p, params).loss;
        },
        protos.rows);
    worst_arc = std::max({worst_arc, relative_error(arc.grad_features, gf),
                          relative_error(*arc.grad_prototypes, gp)});

    PrototypeMatrix frozen = PrototypeMatrix::random(ids, d, rng.next_u64());
    frozen.trainable = false;
    const auto uni = unibct_loss(f, targets, frozen, params);
    const Matrix gu = numeric_gradient([&](const Matrix& x) { return unibct_loss(x, targets, frozen, params).loss; }, f);
    worst_uni = std::max(worst_uni, relative_error(uni.grad_features, gu));

    const Matrix o = random_unit_rows(rng, b, d);
    const auto reg = regress_loss(f, o);
    const Matrix gr = numeric_gradient([&](const Matrix& x) { return regress_loss(x, o).loss; }, f);
    worst_reg = std::max(worst_reg, relative_error(reg.grad_features, gr));

    const double tau = 0.05;
    const auto con = contrastive_loss(f, o, labels, tau);
    const Matrix gc = numeric_gradient([&](const Matrix& x) { return contrastive_loss(x, o, labels, tau).loss; }, f);
    worst_con = std::max(worst_con, relative_error(con.grad_features, gc));
  }
  const double t = seconds_since(start);
  const double worst = std::max({worst_arc, worst_uni, worst_reg, worst_con});
  verdict(2, worst <= 1e-4 && t < 30.0,
          fmt("20 batches each, max rel err arcface %.2e unibct %.2e regress %.2e contrastive %.2e "
              "(tol 1e-4), %.2f s (limit 30 s)",
              worst_arc, worst_uni, worst_reg, worst_con, t));
}

// 3. Edge matrices are row-stochastic with a zero diagonal.
void edge_properties() {
  Rng rng(derive_seed(666, 3));
  double worst_row = 0.0, worst_diag = 0.0, min_entry = 1.0;
  int pairs = 0;
  bool pairs_exact = true;
  for (int g = 0; g < 1000; ++g) {
    const int m = g < 50 ? 2 : uniform_int(rng, 2, 64);
    const int d = uniform_int(rng, 2, 64);
    const double tau = 0.01 + rng.uniform();
    const Matrix e = build_edges(random_unit_rows(rng, m, d), tau);
    worst_row = std::max(worst_row, (e.rowwise().sum().array() - 1.0).abs().maxCoeff());
    worst_diag = std::max(worst_diag, e.diagonal().cwiseAbs().maxCoeff());
    min_entry = std::min(min_entry, e.minCoeff());
    if (m == 2) {
      ++pairs;
      pairs_exact = pairs_exact && e(0, 0) == 0.0 && e(0, 1) == 1.0 && e(1, 0) == 1.0 && e(1, 1) == 0.0;
    }
  }
  verdict(3, worst_row <= 1e-9 && worst_diag == 0.0 && min_entry >= 0.0 && pairs_exact,
          fmt("1000 graphs, max |row sum - 1| = %.2e, max |diag| = %.1e, min entry = %.2e, "
              "%d two-vertex graphs exactly [[0,1],[1,0]]: %s",
              worst_row, worst_diag, min_entry, pairs, pairs_exact ? "yes" : "no"));
}

DatasetSpec tiny_world() {
  DatasetSpec s;
  s.num_classes = 6;
  s.samples_per_class = 12;
  s.input_dim = 10;
  s.latent_dim = 4;
  s.intra_class_noise = 0.1;
  s.seed = 3;
  return s;
}

ModelConfig tiny_model(std::uint64_t seed) {
  ModelConfig c;
  c.input_dim = 10;
  c.hidden_dims = {16};
  c.embed_dim = 8;
  c.init_seed = seed;
  return c;
}

TrainConfig tiny_schedule(CompatLossKind kind) {
  TrainConfig t;
  t.epochs = 6;
  t.warmup_epochs = 2;
  t.batch_size = 16;
  t.lr_decay_epochs = {4};
  t.prototype_regen_epochs = {2, 4};
  t.loss_spec.kind = kind;
  t.record_wall_time = false;
  t.seed = 11;
  return t;
}

// 4. Degenerate settings collapse to the simpler method exactly.
void reduction_identities() {
  Rng rng(derive_seed(666, 4));
  bool lambda_exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    ClassFeatureMap map;
    const int d = uniform_int(rng, 4, 16);
    for (int c = 0; c < 5; ++c) {
      const int m = uniform_int(rng, 1, 20);
      map[c] = {random_unit_rows(rng, m, d), random_unit_rows(rng, m, d), {}};
    }
    RefinementConfig lam0;
    lam0.aggregation = 0.0;
    RefinementConfig vanilla;
    vanilla.variant = PoolVariant::VanillaAvg;
    lambda_exact = lambda_exact &&
                   build_pseudo_classifier(map, lam0).rows == build_pseudo_classifier(map, vanilla).rows;
  }

  const auto data = generate_dataset(tiny_world());
  const auto split = allocate_split(data, Scenario::OpenData, 0.5, 5);
  const auto old_run = train_old_model(split.old_set, tiny_model(1), tiny_schedule(CompatLossKind::UniBCT));
  bool eta_exact = true;
  for (CompatLossKind kind : {CompatLossKind::UniBCT, CompatLossKind::Regress, CompatLossKind::Contrastive}) {
    auto cfg = tiny_schedule(kind);
    cfg.loss_spec.weight = 0.0;
    const auto compat = train_new_model(split, old_run.model, &old_run.classifier, tiny_model(2), cfg,
                                        RefinementConfig{});
    const auto plain = train_classifier(split.new_set, tiny_model(2), cfg);
    eta_exact = eta_exact && compat.log.to_jsonl(false) == plain.log.to_jsonl(false);
  }

  double worst_ce = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int b = uniform_int(rng, 2, 8);
    const int d = uniform_int(rng, 3, 8);
    const int c = uniform_int(rng, 2, 6);
    const Matrix f = random_unit_rows(rng, b, d);
    std::vector<ClassId> ids(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) ids[static_cast<std::size_t>(i)] = i;
    const PrototypeMatrix p = PrototypeMatrix::random(ids, d, rng.next_u64());
    std::vector<int> y(static_cast<std::size_t>(b));
    for (auto& v : y) v = uniform_int(rng, 0, c - 1);
    const double lib = arcface_loss(f, y, p, {1.0, 0.0}).loss;
    double ref = 0.0;
    for (int i = 0; i < b; ++i) {
      double z = 0.0;
      for (int j = 0; j < c; ++j) z += std::exp(f.row(i).dot(p.rows.row(j)));
      ref += std::log(z) - f.row(i).dot(p.rows.row(y[static_cast<std::size_t>(i)]));
    }
    worst_ce = std::max(worst_ce, std::abs(lib - ref / b));
  }
  verdict(4, lambda_exact && eta_exact && worst_ce <= 1e-9,
          fmt("lambda 0 == vanilla exactly: %s; eta 0 logs bit-identical for 3 losses: %s; "
              "margin 0 / scale 1 vs cross-entropy max |diff| = %.2e (tol 1e-9)",
              lambda_exact ? "yes" : "no", eta_exact ? "yes" : "no", worst_ce));
}

// 5. Retrieval metrics against exhaustive reference implementations.
void metric_oracles() {
  Rng rng(derive_seed(666, 5));
  int tar_mismatch = 0, topk_mismatch = 0, checks = 0;
  for (int fixture = 0; fixture < 50; ++fixture) {
    const int Q = uniform_int(rng, 4, 40);
    const int G = uniform_int(rng, 4, 40);
    const int classes = uniform_int(rng, 2, 8);
    // Half the fixtures use quantized scores so ties are frequent.
    const double grid = fixture % 2 == 0 ? 16.0 : 0.0;
    Matrix s(Q, G);
    for (int i = 0; i < Q; ++i)
      for (int j = 0; j < G; ++j) {
        const double v = 2.0 * rng.uniform() - 1.0;
        s(i, j) = grid > 0.0 ? std::round(v * grid) / grid : v;
      }
    Labels ql(static_cast<std::size_t>(Q)), gl(static_cast<std::size_t>(G));
    for (auto& l : ql) l = uniform_int(rng, 0, classes - 1);
    for (int j = 0; j < G; ++j) gl[static_cast<std::size_t>(j)] = j % classes;

    const std::vector<int> ks = {1, 2, 5, 10};
    const auto lib = topk_identification(s, ql, gl, ks);
    const auto ref = oracle::topk(s, ql, gl, ks);
    for (int k : ks) topk_mismatch += lib.at(k) != ref.at(k);

    std::vector<double> gen, imp;
    oracle::split_scores(s, ql, gl, gen, imp);
    if (gen.empty() || imp.empty()) continue;
    for (double far : {1e-3, 1e-2, 0.05, 0.1, 0.5}) {
      const auto a = tar_at_far(gen, imp, far);
      const auto b = oracle::tar_at_far(gen, imp, far);
      tar_mismatch += a.threshold != b.threshold || a.tar != b.tar;
      ++checks;
    }
  }
  verdict(5, tar_mismatch == 0 && topk_mismatch == 0,
          fmt("50 fixtures, %d TAR thresholds compared, %d mismatches; top-k mismatches %d",
              checks, tar_mismatch, topk_mismatch));
}

ExperimentConfig desk_config(Scenario sc, CompatLossKind kind, std::uint64_t seed) {
  ExperimentConfig c = make_preset(std::string(to_string(sc)) + "-" + std::string(to_string(kind)));
  apply_seed(c, seed);
  c.output_dir.clear();
  return c;
}

struct Run {
  Scenario scenario;
  CompatLossKind kind;
  std::uint64_t seed;
  ExperimentResult result;
};

std::vector<Run> audited_runs;

// 6. The compatibility verdict on the desk-scale benchmark.
void empirical_criterion() {
  const auto start = Clock::now();
  int uni_pass = 0, reg_fail = 0;
  for (Scenario sc : kAllScenarios) {
    for (std::uint64_t seed : {1, 2, 3}) {
      for (CompatLossKind kind : {CompatLossKind::UniBCT, CompatLossKind::Regress}) {
        auto r = run_experiment(desk_config(sc, kind, seed));
        const auto& rep = r.report;
        const double far = rep.reference_far;
        std::printf("  %-15s seed %llu %-8s cross TAR %.4f self-old %.4f -> %s\n",
                    std::string(to_string(sc)).c_str(), static_cast<unsigned long long>(seed),
                    std::string(to_string(kind)).c_str(), rep.cross.tar_at(far),
                    rep.self_old.tar_at(far), rep.verification_compatible ? "compatible" : "not");
        if (kind == CompatLossKind::UniBCT) uni_pass += rep.verification_compatible;
        else reg_fail += !rep.verification_compatible;
        audited_runs.push_back({sc, kind, seed, std::move(r)});
      }
    }
  }
  const double t = seconds_since(start);
  verdict(6, uni_pass >= 13 && reg_fail >= 13 && t < 900.0,
          fmt("unibct refined-avg verdict holds in %d/15 (need >= 13), regression fails in %d/15 "
              "(need >= 13), %.1f s (limit 900 s)",
              uni_pass, reg_fail, t));
}

// 7. Refined prototypes against plain averages on the open-class split.
void refinement_ordering() {
  double refined = 0.0, vanilla = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto a = desk_config(Scenario::OpenClass, CompatLossKind::UniBCT, seed);
    auto b = a;
    b.refinement.variant = PoolVariant::VanillaAvg;
    const double ra = run_experiment(a).report.cross.top(1);
    const double rb = run_experiment(b).report.cross.top(1);
    refined += ra / 5.0;
    vanilla += rb / 5.0;
    per_seed += fmt(" %llu:%.3f/%.3f", static_cast<unsigned long long>(seed), ra, rb);
  }
  verdict(7, refined >= vanilla,
          fmt("open-class mean cross top-1 refined-avg %.4f vs vanilla-avg %.4f, margin %+.4f "
              "(per seed refined/vanilla%s)",
              refined, vanilla, refined - vanilla, per_seed.c_str()));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 8. Identical config and seed give identical bytes.
void determinism() {
  ubct::testing::TempDir dir("acceptance");
  bool identical = true;
  int compared = 0;
  for (Scenario sc : {Scenario::OpenClass, Scenario::ExtendedData}) {
    auto c = desk_config(sc, CompatLossKind::UniBCT, 7);
    c.output_dir = (dir.path() / "a").string();
    run_experiment(c);
    c.output_dir = (dir.path() / "b").string();
    run_experiment(c);
    const std::string a = slurp(dir.path() / "a" / "report.json");
    identical = identical && !a.empty() && a == slurp(dir.path() / "b" / "report.json");
    ++compared;
  }
  verdict(8, identical, fmt("%d experiments re-run, report.json byte-identical: %s", compared,
                            identical ? "yes" : "no"));
}

// 9. No compatibility backward pass touched the old model or frozen prototypes.
void audits() {
  for (Scenario sc : {Scenario::ExtendedData, Scenario::IdenticalData})
    for (CompatLossKind kind :
         {CompatLossKind::UniBCTVanilla, CompatLossKind::BCT, CompatLossKind::Contrastive})
      audited_runs.push_back({sc, kind, 1, run_experiment(desk_config(sc, kind, 1))});
  std::size_t passes = 0, violations = 0;
  int dirty = 0;
  for (const auto& r : audited_runs) {
    const auto& a = r.result.new_log.audit;
    passes += a.compat_backward_passes;
    violations += a.prototype_hash_violations + a.old_model_hash_violations;
    dirty += !a.clean() || a.compat_backward_passes == 0;
  }
  verdict(9, dirty == 0,
          fmt("%zu full runs over 5 losses, %zu compatibility backward passes audited, %zu hash "
              "violations, %d dirty runs",
              audited_runs.size(), passes, violations, dirty));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  const std::pair<int, void (*)()> criteria[] = {
      {1, closed_form_equivalence}, {2, gradient_suite}, {3, edge_properties},
      {4, reduction_identities},    {5, metric_oracles}, {6, empirical_criterion},
      {7, refinement_ordering},     {8, determinism},    {9, audits}};
  for (const auto& [id, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      verdict(id, false, std::string("raised: ") + e.what());
    }
  }
  std::printf("%d of 9 criteria failed, %.1f s total\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
