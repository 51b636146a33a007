// Command-line front end: attack, ablate, diagnose, metrics, verify.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ppa/harness/config.hpp"
#include "ppa/harness/experiment.hpp"
#include "ppa/harness/io.hpp"

namespace {

using namespace ppa::harness;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const GlobalOptions& g) {
  if (g.config.empty()) throw CLI::ValidationError("--config", "this subcommand needs --config");
  RunConfig c = load_config(g.config);
  if (g.seed) {
    c.seed = *g.seed;
    c.attack.master_seed = *g.seed;
  }
  if (!g.out.empty()) c.output.directory = g.out;
  return c;
}

void print_row(const ppa::metrics::MetricsRow& r) {
  std::printf("acc@1 %.4f  acc@5 %.4f  delta_eval %.4g  delta_face %.4g  fid %.4g  "
              "precision %.3f  recall %.3f  density %.3f  coverage %.3f  samples %zu\n",
              r.acc_at_1, r.acc_at_5, r.delta_eval, r.delta_face, r.fid, r.precision, r.recall,
              r.density, r.coverage, r.samples);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative model inversion attacks on the toy benchmark or model files"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "run configuration (JSON)");
  app.add_option("--seed", g.seed, "override the configured seed");
  app.add_option("--out", g.out, "output directory (file for metrics)");

  auto* attack = app.add_subcommand("attack", "run the attack and write a run directory");
  auto* ablate = app.add_subcommand("ablate", "run ablation presets and a comparative CSV");
  std::vector<std::string> presets;
  ablate->add_option("--presets", presets, "presets to run (default: all)")->delimiter(',');
  auto* diagnose = app.add_subcommand("diagnose", "gradient diagnostic for both losses");
  auto* metrics = app.add_subcommand("metrics", "recompute metrics from a run's features");
  std::string run_dir;
  metrics->add_option("run", run_dir, "run directory")->required();
  auto* verify = app.add_subcommand("verify", "check every file hash of a run manifest");
  std::string verify_dir;
  verify->add_option("run", verify_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (attack->parsed()) {
      const RunConfig c = resolve_config(g);
      const ExperimentResult r = run_experiment(c);
      for (const auto& row : r.metrics.per_class) {
        std::printf("class %-4s ", row.label.c_str());
        print_row(row);
      }
      std::printf("all        ");
      print_row(r.metrics.aggregate);
      for (const auto& note : r.metrics.notes) std::printf("note: %s\n", note.c_str());
      std::printf("wrote %s\n", r.directory.string().c_str());
    } else if (ablate->parsed()) {
      const RunConfig c = resolve_config(g);
      if (presets.empty()) presets = ablation_preset_names();
      const auto rows = run_ablation(c, presets, c.output.directory);
      write_ablation_csv(std::cout, rows);
    } else if (diagnose->parsed()) {
      const RunConfig c = resolve_config(g);
      const GradientDiagnostic d = gradient_diagnostic(c);
      std::ostringstream csv;
      write_diagnostic_csv(csv, d);
      const auto path = c.output.directory / "gradient_diagnostic.csv";
      write_text_file(path, csv.str());
      for (const auto& [measure, name] :
           {std::pair{GradientMeasure::image, "image"}, std::pair{GradientMeasure::latent, "latent"},
            std::pair{GradientMeasure::logits, "logits"}}) {
        const double p = d.poincare.mean_normalized_above(0.9, measure);
        const double ce = d.cross_entropy.mean_normalized_above(0.9, measure);
        std::printf("%-6s gradient, score > 0.9: poincare %.4g  cross_entropy %.4g  ratio %.3g\n",
                    name, p, ce, p / ce);
      }
      std::printf("wrote %s\n", path.string().c_str());
    } else if (metrics->parsed()) {
      const RunConfig c = load_config(std::filesystem::path(run_dir) / "config.json");
      const auto report =
          compute_metrics(load_feature_set(std::filesystem::path(run_dir) / "features"), c.metrics);
      std::ostringstream csv;
      ppa::metrics::write_metrics_csv(csv, report);
      if (g.out.empty()) {
        std::cout << csv.str();
      } else {
        write_text_file(g.out, csv.str());
      }
    } else if (verify->parsed()) {
      const VerifyReport r = verify_manifest(verify_dir);
      for (const auto& p : r.problems) std::printf("FAIL %s\n", p.c_str());
      std::printf("%zu files checked, %zu problems\n", r.checked, r.problems.size());
      return r.ok() ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
