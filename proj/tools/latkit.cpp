// latkit command line: run | report | sweep-layers | validate.
//
// Exit codes: 0 success, 1 invalid manifest or arguments, 2 runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "latkit/experiment.hpp"
#include "latkit/log.hpp"
#include "latkit/report.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

void print_manifest(const latkit::ExperimentManifest& m) {
  std::cout << "task " << latkit::to_string(m.task) << ", model " << latkit::to_string(m.model.kind) << ", "
            << m.data.train_size << " training examples, " << m.poison_count() << " poisoned copies per backdoor\n"
            << "sweep: " << m.sweep.modes.size() << " modes x " << m.sweep.epsilons.size() << " epsilons x "
            << m.sweep.seeds.size() << " seeds, " << m.finetune.epochs * m.finetune.checkpoints_per_epoch
            << " checkpoints per run\n"
            << "output: " << m.output_dir().string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent adversarial training experiments"};
  app.require_subcommand(1);

  std::string manifest_path, store_path, kind_name, output;
  bool force = false;

  auto* run = app.add_subcommand("run", "poison, pretrain, sweep and measure; resumes completed stages");
  run->add_option("manifest", manifest_path, "experiment manifest (YAML)")->required();
  run->add_flag("--force", force, "repeat runs already present in the store");
  run->add_option("--output", output, "store directory, overriding the manifest");

  auto* report = app.add_subcommand("report", "write CSV and SVG for a report kind");
  report->add_option("store", store_path, "results store directory")->required();
  report->add_option("kind", kind_name, "pareto-novel | pareto-backdoor | delta-over-time | layer-sweep")->required();

  auto* layers = app.add_subcommand("sweep-layers", "LAT at every configured split with norm-scaled epsilon");
  layers->add_option("manifest", manifest_path, "experiment manifest (YAML)")->required();
  layers->add_flag("--force", force, "repeat the sweep even if the store has one");
  layers->add_option("--output", output, "store directory, overriding the manifest");

  auto* validate = app.add_subcommand("validate", "parse and check a manifest without running it");
  validate->add_option("manifest", manifest_path, "experiment manifest (YAML)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }

  latkit::ExperimentManifest manifest;
  latkit::RunOptions options;
  try {
    if (!manifest_path.empty()) manifest = latkit::load_manifest(manifest_path);
    options.force = force;
    options.workers = latkit::workers_from_env();
    if (!output.empty()) options.output = output;
  } catch (const latkit::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }

  try {
    if (*validate) {
      print_manifest(manifest);
      std::cout << "manifest is valid\n";
    } else if (*run) {
      const auto s = latkit::run_experiment(manifest, options);
      std::cout << (s.noop ? "no-op: " : "") << s.executed << " runs executed, " << s.planned
                << " sweep runs planned; store " << s.store.string() << "\n";
      for (const auto& id : s.entrenched) std::cout << "entrenchment flagged in " << id << "\n";
    } else if (*layers) {
      const auto s = latkit::run_layer_sweep(manifest, options);
      std::printf("%-6s %-12s %-12s %-12s %s\n", "split", "epsilon", "clean_mean", "robust_mean", "seeds");
      for (const auto& r : s.rows) {
        std::printf("%-6zu %-12.6g %-12.6g %-12.6g %zu\n", r.split, r.epsilon, r.clean_mean, r.robust_mean,
                    r.runs.size());
      }
      std::cout << "store " << s.store.string() << "\n";
    } else if (*report) {
      latkit::ReportKind kind;
      try {
        kind = latkit::parse_report_kind(kind_name);
      } catch (const latkit::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
      }
      const auto files = latkit::write_report(store_path, kind);
      std::cout << "wrote " << files.csv.string() << " (" << files.points << " points) and " << files.svg.string()
                << "\n";
      for (const auto& n : files.notes) std::cout << n << "\n";
    }
  } catch (const latkit::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
