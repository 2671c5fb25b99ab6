// Command-line driver: run / grid / summarize / refine-demo.

#include "ubct/errors.hpp"
#include "ubct/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

ubct::ExperimentConfig load_config(const std::string& config_path, const std::string& preset,
                                   std::optional<std::uint64_t> seed,
                                   const std::string& output_dir, bool dump_features) {
  ubct::ExperimentConfig cfg = config_path.empty() ? ubct::make_preset(preset)
                                                   : ubct::ExperimentConfig::load(config_path);
  if (seed) ubct::apply_seed(cfg, *seed);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  if (dump_features) cfg.dump_features = true;
  if (cfg.output_dir.empty()) cfg.output_dir = "runs/" + cfg.name;
  cfg.validate();
  return cfg;
}

void print_report(const ubct::ExperimentResult& r) {
  const auto& rep = r.report;
  const double far = rep.reference_far;
  std::printf("%-16s %-15s cross TAR@%g=%.4f self-old=%.4f self-new=%.4f | top1 cross=%.4f "
              "self-old=%.4f self-new=%.4f | verification %s, identification %s\n",
              std::string(ubct::to_string(r.config.scenario)).c_str(),
              std::string(ubct::to_string(r.config.train.loss_spec.kind)).c_str(), far,
              rep.cross.tar_at(far), rep.self_old.tar_at(far), rep.self_new.tar_at(far),
              rep.cross.top(1), rep.self_old.top(1), rep.self_new.top(1),
              rep.verification_compatible ? "compatible" : "NOT compatible",
              rep.identification_compatible ? "compatible" : "NOT compatible");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backward-compatible embedding training laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset = "extended-data-unibct";
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  bool dump_features = false;
  bool list_presets = false;

  auto* run = app.add_subcommand("run", "Run one experiment and write its report");
  run->add_option("-c,--config", config_path, "JSON experiment config");
  run->add_option("-p,--preset", preset, "Named preset, e.g. open-class-unibct");
  run->add_option("-s,--seed", seed, "Master seed (re-derives every sub-seed)");
  run->add_option("-o,--output-dir", output_dir, "Output directory");
  run->add_flag("--dump-features", dump_features, "Also write feature matrices");
  run->add_flag("--list-presets", list_presets, "Print preset names and exit");

  std::string grid_dir = "runs/grid";
  auto* grid = app.add_subcommand("grid", "Run the scenario x loss grid and summarize it");
  grid->add_option("-c,--config", config_path, "Base JSON config");
  grid->add_option("-s,--seed", seed, "Master seed");
  grid->add_option("-o,--output-dir", grid_dir, "Grid root directory");

  std::string reports_dir;
  auto* summ = app.add_subcommand("summarize", "Tabulate every report.json below a directory");
  summ->add_option("dir", reports_dir, "Reports directory")->required();

  std::string old_feats, new_feats, labels_path, demo_out = "refine-demo";
  ubct::RefinementConfig refine;
  std::string variant = "refined-avg";
  auto* demo = app.add_subcommand("refine-demo", "Refine prototypes from dumped features");
  demo->add_option("--old", old_feats, "Old-model feature matrix (.bin)")->required();
  demo->add_option("--new", new_feats, "New-model feature matrix (.bin)")->required();
  demo->add_option("--labels", labels_path, "Label file (.bin)")->required();
  demo->add_option("-o,--output-dir", demo_out, "Output directory");
  demo->add_option("--temperature", refine.temperature, "Edge softmax temperature");
  demo->add_option("--lambda", refine.aggregation, "Aggregation weight in [0, 1)");
  demo->add_option("--cap", refine.per_class_cap, "Per-class sample cap");
  demo->add_option("--variant", variant, "vanilla-avg | drop-avg | refined-avg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      if (list_presets) {
        for (const auto& name : ubct::preset_names()) std::cout << name << '\n';
        return 0;
      }
      const auto cfg = load_config(config_path, preset, seed, output_dir, dump_features);
      const auto result = ubct::run_experiment(cfg);
      print_report(result);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << "wrote " << ubct::resolve_output_dir(cfg.output_dir).string() << "\n";
    } else if (*grid) {
      ubct::ExperimentConfig base = config_path.empty()
                                        ? ubct::make_preset("extended-data-unibct")
                                        : ubct::ExperimentConfig::load(config_path);
      if (seed) ubct::apply_seed(base, *seed);
      const auto root = ubct::resolve_output_dir(grid_dir);
      const auto summary = ubct::run_grid(base, root);
      std::cout << summary.to_csv();
      for (const auto& w : summary.warnings) std::cerr << "warning: " << w << '\n';
    } else if (*summ) {
      const auto summary = ubct::summarize(reports_dir);
      std::cout << summary.to_csv();
      for (const auto& w : summary.warnings) std::cerr << "warning: " << w << '\n';
    } else if (*demo) {
      refine.variant = ubct::parse_pool_variant(variant);
      ubct::Warnings warnings;
      const auto protos = ubct::refine_demo(old_feats, new_feats, labels_path, refine,
                                            ubct::resolve_output_dir(demo_out), &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      std::cout << "refined " << protos.num_classes() << " prototypes into " << demo_out << '\n';
    }
  } catch (const ubct::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
