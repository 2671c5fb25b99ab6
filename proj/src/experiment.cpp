#include "ubct/experiment.hpp"

#include "ubct/errors.hpp"
#include "ubct/matrix_io.hpp"
#include "ubct/random.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <set>
#include <sstream>
#include <tuple>

namespace ubct {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view section,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section), "must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(std::string(section) + "." + key, "unknown key");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + "." + key, e.what());
  }
}

ojson model_json(const ModelConfig& m) {
  return ojson{{"input_dim", m.input_dim},
               {"hidden_dims", m.hidden_dims},
               {"embed_dim", m.embed_dim},
               {"activation", std::string(to_string(m.activation))},
               {"init_seed", m.init_seed}};
}

ModelConfig model_from(const json& j, ModelConfig m, std::string_view section) {
  check_keys(j, section, {"input_dim", "hidden_dims", "embed_dim", "activation", "init_seed"});
  read(j, "input_dim", m.input_dim, section);
  read(j, "hidden_dims", m.hidden_dims, section);
  read(j, "embed_dim", m.embed_dim, section);
  if (j.contains("activation")) m.activation = parse_activation(j.at("activation").get<std::string>());
  read(j, "init_seed", m.init_seed, section);
  return m;
}

template <typename F>
auto staged(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string prototype_label(const ExperimentConfig& c) {
  switch (c.train.loss_spec.kind) {
    case CompatLossKind::UniBCT: return std::string(to_string(c.refinement.variant));
    case CompatLossKind::UniBCTVanilla: return std::string(to_string(PoolVariant::VanillaAvg));
    case CompatLossKind::BCT: return "old-classifier";
    case CompatLossKind::Regress:
    case CompatLossKind::Contrastive: return "-";
  }
  return "-";
}

int scenario_rank(const std::string& name) {
  for (std::size_t i = 0; i < std::size(kAllScenarios); ++i)
    if (to_string(kAllScenarios[i]) == name) return static_cast<int>(i);
  return static_cast<int>(std::size(kAllScenarios));
}

int loss_rank(const std::string& name) {
  const CompatLossKind order[] = {CompatLossKind::Regress, CompatLossKind::Contrastive,
                                  CompatLossKind::BCT, CompatLossKind::UniBCTVanilla,
                                  CompatLossKind::UniBCT};
  for (std::size_t i = 0; i < std::size(order); ++i)
    if (to_string(order[i]) == name) return static_cast<int>(i);
  return static_cast<int>(std::size(order));
}

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  model_old.validate();
  model_new.validate();
  train.validate();
  refinement.validate();
  eval.validate();
  if (!(old_fraction > 0.0 && old_fraction < 1.0))
    throw ConfigError("split.old_fraction", "must lie in (0, 1)");
  if (model_old.input_dim != dataset.input_dim)
    throw ConfigError("model_old.input_dim", "must equal dataset.input_dim");
  if (model_new.input_dim != dataset.input_dim)
    throw ConfigError("model_new.input_dim", "must equal dataset.input_dim");
  if (model_old.embed_dim != model_new.embed_dim)
    throw ConfigError("model_new.embed_dim", "must equal model_old.embed_dim for cross tests");
  if (queries_per_class < 1) throw ConfigError("eval.queries_per_class", "must be positive");
  if (gallery_per_class < 1) throw ConfigError("eval.gallery_per_class", "must be positive");
  if (train.loss_spec.kind == CompatLossKind::BCT && !is_close_set(scenario))
    throw ConfigError("loss.kind", "BCT is inapplicable to the open-set scenario '" +
                                       std::string(to_string(scenario)) +
                                       "'; use unibct instead");
}

ojson ExperimentConfig::to_json() const {
  const auto& ls = train.loss_spec;
  ojson j;
  j["name"] = name;
  j["seed"] = seed;
  j["dataset"] = {{"num_classes", dataset.num_classes},
                  {"samples_per_class", dataset.samples_per_class},
                  {"input_dim", dataset.input_dim},
                  {"latent_dim", dataset.latent_dim},
                  {"intra_class_noise", dataset.intra_class_noise},
                  {"domain_shift", dataset.domain_shift},
                  {"seed", dataset.seed}};
  j["split"] = {{"scenario", std::string(to_string(scenario))},
                {"old_fraction", old_fraction},
                {"seed", split_seed}};
  j["model_old"] = model_json(model_old);
  j["model_new"] = model_json(model_new);
  j["train"] = {{"epochs", train.epochs},
                {"warmup_epochs", train.warmup_epochs},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"lr_decay_epochs", train.lr_decay_epochs},
                {"lr_decay_factor", train.lr_decay_factor},
                {"momentum", train.momentum},
                {"weight_decay", train.weight_decay},
                {"prototype_regen_epochs", train.prototype_regen_epochs},
                {"seed", train.seed},
                {"record_wall_time", train.record_wall_time}};
  j["loss"] = {{"kind", std::string(to_string(ls.kind))},
               {"weight", ls.weight},
               {"contrastive_temperature", ls.contrastive_temperature},
               {"arcface", {{"scale", ls.arcface.scale}, {"margin", ls.arcface.margin}}}};
  j["refinement"] = {
      {"temperature", refinement.temperature},
      {"aggregation", refinement.aggregation},
      {"mode", refinement.mode == PropagationMode::ClosedForm ? "closed-form" : "iterative"},
      {"iterations", refinement.iterations},
      {"per_class_cap", refinement.per_class_cap},
      {"variant", std::string(to_string(refinement.variant))},
      {"drop_fraction", refinement.drop_fraction},
      {"seed", refinement.seed}};
  j["eval"] = {{"far_list", eval.far_list},
               {"reference_far", eval.reference_far},
               {"k_list", eval.k_list},
               {"queries_per_class", queries_per_class},
               {"gallery_per_class", gallery_per_class}};
  j["output"] = {{"dir", output_dir}, {"dump_features", dump_features}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  check_keys(j, "config",
             {"name", "seed", "dataset", "split", "model_old", "model_new", "train", "loss",
              "refinement", "eval", "output"});
  read(j, "name", c.name, "config");
  read(j, "seed", c.seed, "config");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "dataset",
               {"num_classes", "samples_per_class", "input_dim", "latent_dim",
                "intra_class_noise", "domain_shift", "seed"});
    read(d, "num_classes", c.dataset.num_classes, "dataset");
    read(d, "samples_per_class", c.dataset.samples_per_class, "dataset");
    read(d, "input_dim", c.dataset.input_dim, "dataset");
    read(d, "latent_dim", c.dataset.latent_dim, "dataset");
    read(d, "intra_class_noise", c.dataset.intra_class_noise, "dataset");
    read(d, "domain_shift", c.dataset.domain_shift, "dataset");
    read(d, "seed", c.dataset.seed, "dataset");
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, "split", {"scenario", "old_fraction", "seed"});
    if (s.contains("scenario")) c.scenario = parse_scenario(s.at("scenario").get<std::string>());
    read(s, "old_fraction", c.old_fraction, "split");
    read(s, "seed", c.split_seed, "split");
  }
  if (j.contains("model_old")) c.model_old = model_from(j.at("model_old"), c.model_old, "model_old");
  if (j.contains("model_new")) c.model_new = model_from(j.at("model_new"), c.model_new, "model_new");
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"epochs", "warmup_epochs", "batch_size", "lr", "lr_decay_epochs",
                "lr_decay_factor", "momentum", "weight_decay", "prototype_regen_epochs", "seed",
                "record_wall_time"});
    read(t, "epochs", c.train.epochs, "train");
    read(t, "warmup_epochs", c.train.warmup_epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "lr", c.train.lr, "train");
    read(t, "lr_decay_epochs", c.train.lr_decay_epochs, "train");
    read(t, "lr_decay_factor", c.train.lr_decay_factor, "train");
    read(t, "momentum", c.train.momentum, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "prototype_regen_epochs", c.train.prototype_regen_epochs, "train");
    read(t, "seed", c.train.seed, "train");
    read(t, "record_wall_time", c.train.record_wall_time, "train");
  }
  if (j.contains("loss")) {
    auto& ls = c.train.loss_spec;
    const auto& l = j.at("loss");
    check_keys(l, "loss", {"kind", "weight", "contrastive_temperature", "arcface"});
    if (l.contains("kind")) ls.kind = parse_compat_loss(l.at("kind").get<std::string>());
    read(l, "weight", ls.weight, "loss");
    read(l, "contrastive_temperature", ls.contrastive_temperature, "loss");
    if (l.contains("arcface")) {
      const auto& a = l.at("arcface");
      check_keys(a, "loss.arcface", {"scale", "margin"});
      read(a, "scale", ls.arcface.scale, "loss.arcface");
      read(a, "margin", ls.arcface.margin, "loss.arcface");
    }
  }
  if (j.contains("refinement")) {
    auto& r = c.refinement;
    const auto& rj = j.at("refinement");
    check_keys(rj, "refinement",
               {"temperature", "aggregation", "mode", "iterations", "per_class_cap", "variant",
                "drop_fraction", "seed"});
    read(rj, "temperature", r.temperature, "refinement");
    read(rj, "aggregation", r.aggregation, "refinement");
    if (rj.contains("mode")) {
      const auto mode = rj.at("mode").get<std::string>();
      if (mode == "closed-form") r.mode = PropagationMode::ClosedForm;
      else if (mode == "iterative") r.mode = PropagationMode::Iterative;
      else throw ConfigError("refinement.mode", "expected closed-form or iterative");
    }
    read(rj, "iterations", r.iterations, "refinement");
    read(rj, "per_class_cap", r.per_class_cap, "refinement");
    if (rj.contains("variant")) r.variant = parse_pool_variant(rj.at("variant").get<std::string>());
    read(rj, "drop_fraction", r.drop_fraction, "refinement");
    read(rj, "seed", r.seed, "refinement");
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, "eval",
               {"far_list", "reference_far", "k_list", "queries_per_class", "gallery_per_class"});
    read(e, "far_list", c.eval.far_list, "eval");
    read(e, "reference_far", c.eval.reference_far, "eval");
    read(e, "k_list", c.eval.k_list, "eval");
    read(e, "queries_per_class", c.queries_per_class, "eval");
    read(e, "gallery_per_class", c.gallery_per_class, "eval");
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    check_keys(o, "output", {"dir", "dump_features"});
    read(o, "dir", c.output_dir, "output");
    read(o, "dump_features", c.dump_features, "output");
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config", "'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.dataset.seed = seed;
  c.model_old.init_seed = derive_seed(seed, 101);
  c.model_new.init_seed = derive_seed(seed, 102);
  c.train.seed = derive_seed(seed, 103);
  c.refinement.seed = derive_seed(seed, 104);
}

ExperimentConfig make_preset(std::string_view name) {
  std::string rest(name);
  bool full = false;
  if (rest.rfind("full-", 0) == 0) {
    full = true;
    rest = rest.substr(5);
  }
  std::optional<Scenario> scenario;
  for (Scenario s : kAllScenarios) {
    const std::string prefix = std::string(to_string(s)) + "-";
    if (rest.rfind(prefix, 0) == 0) {
      scenario = s;
      rest = rest.substr(prefix.size());
      break;
    }
  }
  if (!scenario) throw ConfigError("preset", "unknown preset '" + std::string(name) + "'");
  ExperimentConfig c;
  c.name = std::string(name);
  c.scenario = *scenario;
  c.train.loss_spec.kind = parse_compat_loss(rest);
  if (full) {
    const CompatLossSpec ls = c.train.loss_spec;
    c.train = TrainConfig::full_scale();
    c.train.loss_spec = ls;
  }
  c.model_old.input_dim = c.dataset.input_dim;
  c.model_old.hidden_dims = {128};
  c.model_new = c.model_old;
  c.model_new.init_seed = 2;
  // Identical training data: the upgrade is one extra hidden layer.
  if (c.scenario == Scenario::IdenticalData) c.model_new.hidden_dims.push_back(128);
  apply_seed(c, c.seed);
  c.output_dir = "runs/" + c.name;
  c.validate();
  return c;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const char* prefix : {"", "full-"})
    for (Scenario s : kAllScenarios)
      for (CompatLossKind k : {CompatLossKind::UniBCT, CompatLossKind::UniBCTVanilla,
                               CompatLossKind::BCT, CompatLossKind::Regress,
                               CompatLossKind::Contrastive}) {
        if (k == CompatLossKind::BCT && !is_close_set(s)) continue;
        out.push_back(std::string(prefix) + std::string(to_string(s)) + "-" +
                      std::string(to_string(k)));
      }
  return out;
}

ojson ExperimentResult::report_json() const {
  ojson j;
  j["name"] = config.name;
  j["scenario"] = std::string(to_string(config.scenario));
  j["loss"] = std::string(to_string(config.train.loss_spec.kind));
  j["prototype"] = prototype_label(config);
  j["seed"] = config.seed;
  const ojson metrics = report.to_json();
  for (const auto& [k, v] : metrics.items()) j[k] = v;
  return j;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  staged("config", [&] { config.validate(); });
  ExperimentResult result;
  result.config = config;

  const SyntheticWorld world = staged("generate", [&] { return SyntheticWorld(config.dataset); });
  const LabeledDataset data = staged("generate", [&] { return world.training_set(); });
  const DataSplit split = staged("split", [&] {
    return allocate_split(data, config.scenario, config.old_fraction, config.split_seed);
  });
  TrainedModel old_run = staged("train-old", [&] {
    return train_old_model(split.old_set, config.model_old, config.train);
  });
  NewModelResult new_run = staged("train-new", [&] {
    return train_new_model(split, old_run.model, &old_run.classifier, config.model_new,
                           config.train, config.refinement);
  });
  const EvalSet eval = staged("evaluate", [&] {
    std::set<ClassId> classes;
    for (ClassId c : split.old_set.classes()) classes.insert(c);
    for (ClassId c : split.new_set.classes()) classes.insert(c);
    return make_eval_set(world, {classes.begin(), classes.end()}, config.queries_per_class,
                         config.gallery_per_class);
  });
  const Matrix query_old = staged("evaluate", [&] { return old_run.model.forward(eval.query.inputs); });
  const Matrix query_new = staged("evaluate", [&] { return new_run.model.forward(eval.query.inputs); });
  const Matrix gallery_old = staged("evaluate", [&] { return old_run.model.forward(eval.gallery.inputs); });
  const Matrix gallery_new = staged("evaluate", [&] { return new_run.model.forward(eval.gallery.inputs); });
  result.report = staged("evaluate", [&] {
    return evaluate_features(query_old, gallery_old, query_new, gallery_new, eval, config.eval);
  });
  result.old_log = std::move(old_run.log);
  result.new_log = std::move(new_run.log);
  result.warnings = result.new_log.warnings;

  if (!config.output_dir.empty()) {
    const fs::path dir = resolve_output_dir(config.output_dir);
    staged("write", [&] {
      write_artifacts(result, dir, &old_run.model, &new_run.model);
      std::vector<std::pair<std::string, ScoreHistogram>> histograms;
      for (const auto& [mode, q, g] : {std::tuple{"cross", &query_new, &gallery_old},
                                       std::tuple{"self_old", &query_old, &gallery_old},
                                       std::tuple{"self_new", &query_new, &gallery_new}}) {
        const auto [genuine, impostor] =
            split_pair_scores(pairwise_scores(*q, *g), eval.query.labels, eval.gallery.labels);
        histograms.emplace_back(mode, score_histogram(genuine, impostor));
      }
      write_text(dir / "score_histograms.csv", histograms_to_csv(histograms));
    });
    if (config.dump_features) {
      staged("write", [&] {
        const fs::path fdir = dir / "features";
        fs::create_directories(fdir);
        io::write_matrix(fdir / "query_old.bin", query_old);
        io::write_matrix(fdir / "query_new.bin", query_new);
        io::write_matrix(fdir / "gallery_old.bin", gallery_old);
        io::write_matrix(fdir / "gallery_new.bin", gallery_new);
        io::write_labels(fdir / "query_labels.bin", eval.query.labels);
        io::write_labels(fdir / "gallery_labels.bin", eval.gallery.labels);
        io::write_matrix(fdir / "train_old.bin", old_run.model.forward(split.new_set.inputs));
        io::write_matrix(fdir / "train_new.bin", new_run.model.forward(split.new_set.inputs));
        io::write_labels(fdir / "train_labels.bin", split.new_set.labels);
      });
    }
  }
  return result;
}

void write_artifacts(const ExperimentResult& result, const fs::path& dir,
                     const EmbeddingModel* old_model, const EmbeddingModel* new_model) {
  fs::create_directories(dir);
  write_text(dir / "report.json", result.report_json().dump(2) + "\n");
  write_text(dir / "trainlog.jsonl", result.new_log.to_jsonl());
  write_text(dir / "trainlog_old.jsonl", result.old_log.to_jsonl());
  write_text(dir / "config.json", result.config.to_json().dump(2) + "\n");
  if (old_model) old_model->save(dir / "old_model.ckpt");
  if (new_model) new_model->save(dir / "new_model.ckpt");
  if (!result.warnings.empty()) {
    std::string text;
    for (const auto& w : result.warnings) text += w + "\n";
    write_text(dir / "warnings.txt", text);
  }
}

std::string Summary::to_csv() const {
  std::ostringstream out;
  out << "scenario,loss,prototype,seed,name,reference_far,cross_tar,self_old_tar,self_new_tar,"
         "cross_top1,cross_top5,self_old_top1,self_old_top5,self_new_top1,self_new_top5,"
         "verification_compatible,identification_compatible,source\n";
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.loss << ',' << r.prototype << ',' << r.seed << ',' << r.name
        << ',' << csv_number(r.reference_far) << ',' << csv_number(r.cross_tar) << ','
        << csv_number(r.self_old_tar) << ',' << csv_number(r.self_new_tar) << ','
        << csv_number(r.cross_top1) << ',' << csv_number(r.cross_top5) << ','
        << csv_number(r.self_old_top1) << ',' << csv_number(r.self_old_top5) << ','
        << csv_number(r.self_new_top1) << ',' << csv_number(r.self_new_top5) << ','
        << (r.verification_compatible ? "true" : "false") << ','
        << (r.identification_compatible ? "true" : "false") << ',' << r.source << '\n';
  }
  return out.str();
}

ojson Summary::to_json() const {
  ojson arr = ojson::array();
  for (const auto& r : rows) {
    arr.push_back({{"scenario", r.scenario},
                   {"loss", r.loss},
                   {"prototype", r.prototype},
                   {"seed", r.seed},
                   {"name", r.name},
                   {"reference_far", r.reference_far},
                   {"cross_tar", r.cross_tar},
                   {"self_old_tar", r.self_old_tar},
                   {"self_new_tar", r.self_new_tar},
                   {"cross_top1", r.cross_top1},
                   {"cross_top5", r.cross_top5},
                   {"self_old_top1", r.self_old_top1},
                   {"self_old_top5", r.self_old_top5},
                   {"self_new_top1", r.self_new_top1},
                   {"self_new_top5", r.self_new_top5},
                   {"verification_compatible", r.verification_compatible},
                   {"identification_compatible", r.identification_compatible},
                   {"source", r.source}});
  }
  return ojson{{"rows", arr}, {"skipped", warnings}};
}

Summary summarize(const fs::path& dir, bool write) {
  if (!fs::exists(dir) || !fs::is_directory(dir))
    throw IoError("reports directory '" + dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() == "report.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  Summary s;
  for (const auto& file : files) {
    const std::string rel = fs::relative(file, dir).generic_string();
    try {
      std::ifstream in(file);
      const json j = json::parse(in);
      const CompatReport rep = CompatReport::from_json(j);
      SummaryRow row;
      row.source = rel;
      row.name = j.at("name").get<std::string>();
      row.scenario = j.at("scenario").get<std::string>();
      row.loss = j.at("loss").get<std::string>();
      row.prototype = j.at("prototype").get<std::string>();
      row.seed = j.at("seed").get<std::uint64_t>();
      row.reference_far = rep.reference_far;
      row.cross_tar = rep.cross.tar_at(rep.reference_far);
      row.self_old_tar = rep.self_old.tar_at(rep.reference_far);
      row.self_new_tar = rep.self_new.tar_at(rep.reference_far);
      row.cross_top1 = rep.cross.top(1);
      row.self_old_top1 = rep.self_old.top(1);
      row.self_new_top1 = rep.self_new.top(1);
      row.cross_top5 = rep.cross.topk.count(5) ? rep.cross.top(5) : 0.0;
      row.self_old_top5 = rep.self_old.topk.count(5) ? rep.self_old.top(5) : 0.0;
      row.self_new_top5 = rep.self_new.topk.count(5) ? rep.self_new.top(5) : 0.0;
      row.verification_compatible = rep.verification_compatible;
      row.identification_compatible = rep.identification_compatible;
      s.rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      s.warnings.push_back("skipped malformed report '" + rel + "': " + e.what());
    }
  }
  std::stable_sort(s.rows.begin(), s.rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return std::make_tuple(scenario_rank(a.scenario), loss_rank(a.loss), a.prototype, a.seed,
                           a.name) < std::make_tuple(scenario_rank(b.scenario), loss_rank(b.loss),
                                                     b.prototype, b.seed, b.name);
  });
  if (write) {
    write_text(dir / "summary.csv", s.to_csv());
    write_text(dir / "summary.json", s.to_json().dump(2) + "\n");
  }
  return s;
}

Summary run_grid(const ExperimentConfig& base, const fs::path& root,
                 const std::vector<Scenario>& scenarios,
                 const std::vector<CompatLossKind>& losses) {
  for (Scenario sc : scenarios) {
    for (CompatLossKind k : losses) {
      ExperimentConfig c = base;
      c.scenario = sc;
      c.train.loss_spec.kind = k;
      c.model_new.hidden_dims = base.model_old.hidden_dims;
      // Identical training data: the upgrade is one extra hidden layer.
      if (sc == Scenario::IdenticalData)
        c.model_new.hidden_dims.push_back(base.model_old.hidden_dims.back());
      c.name = std::string(to_string(sc)) + "-" + std::string(to_string(k));
      c.output_dir = (root / c.name).string();
      run_experiment(c);
    }
  }
  return summarize(root);
}

PrototypeMatrix refine_demo(const fs::path& old_features, const fs::path& new_features,
                            const fs::path& labels, const RefinementConfig& config,
                            const fs::path& out_dir, Warnings* warnings) {
  config.validate();
  const Matrix old_f = io::read_matrix(old_features);
  const Matrix new_f = io::read_matrix(new_features);
  const Labels y = io::read_labels(labels);
  if (old_f.rows() != new_f.rows() || old_f.cols() != new_f.cols() ||
      static_cast<std::size_t>(old_f.rows()) != y.size())
    throw ShapeError("old features, new features and labels must have matching rows");

  std::map<ClassId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < y.size(); ++i) groups[y[i]].push_back(i);
  ClassFeatureMap features;
  for (auto& [c, rows] : groups) {
    if (rows.size() > static_cast<std::size_t>(config.per_class_cap)) {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(c)));
      rng.shuffle(rows);
      rows.resize(static_cast<std::size_t>(config.per_class_cap));
      std::sort(rows.begin(), rows.end());
    }
    features[c] = ClassFeatures{gather_rows(old_f, rows), gather_rows(new_f, rows), rows};
  }

  fs::create_directories(out_dir);
  for (const auto& [c, cf] : features) {
    if (cf.new_vertices.rows() < 2) continue;
    io::write_matrix_csv(out_dir / ("edges_" + std::to_string(c) + ".csv"),
                         build_edges(cf.new_vertices, config.temperature));
  }
  PrototypeMatrix protos = build_pseudo_classifier(features, config, warnings);
  io::write_matrix_csv(out_dir / "prototypes.csv", protos.rows);
  protos.save(out_dir / "prototypes.bin");
  return protos;
}

fs::path resolve_output_dir(const std::string& dir) {
  const fs::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("UBCT_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

}  // namespace ubct
