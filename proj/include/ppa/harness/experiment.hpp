#pragma once

// Experiment orchestration: model loading, metric computation, persisted
// runs with a hashed manifest, ablation presets and the gradient diagnostic.
//
// Run directory layout:
//   config.json           resolved configuration
//   metrics.csv           kMetricsCsvHeader, one row per class, then "all"
//   report.json           metrics, notes and the selected candidates
//   loss_trace.csv        class,candidate,step,loss,target_score,grad_norm
//   selected.csv          every candidate with its scores and flags
//   features/             persisted features for metric-only re-runs
//   images/class_NNN/     selected images, 8-bit PNG, robust-score order
//   grids/class_NNN.png   all selected images of a class, same order
//   models/               toy source only: the generated model files
//   manifest.json         config hash, seed, stage status, file hashes

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ppa/attack.hpp"
#include "ppa/harness/config.hpp"
#include "ppa/metrics.hpp"
#include "ppa/models.hpp"

namespace ppa::harness {

struct ModelBundle {
  std::shared_ptr<const ImageGenerator> generator;
  std::shared_ptr<const Classifier> target;
  std::shared_ptr<const Classifier> eval;
  std::shared_ptr<const Classifier> face;
  std::shared_ptr<const DifferentiableModel> critic;  // may be null
  /// Per class, at the evaluation model's input resolution.
  std::vector<std::vector<ImageTensor>> training_images;
  /// Set for the toy source.
  std::shared_ptr<const ToyBenchmark> toy;
};

ModelBundle load_models(const RunConfig& config);

/// Everything the metrics need, extracted once from a finished attack.
struct FeatureSet {
  std::vector<std::size_t> classes;
  metrics::FeatureMatrix eval_logits;      // generated, labeled by target class
  metrics::FeatureMatrix eval_generated;   // generated, labeled
  metrics::FeatureMatrix eval_training;    // real, labeled
  metrics::FeatureMatrix face_generated;
  metrics::FeatureMatrix face_training;
  std::vector<std::string> notes;
};

FeatureSet extract_features(const attack::AttackResult& result, const ModelBundle& models,
                            const attack::AttackConfig& config);
void save_feature_set(const std::filesystem::path& dir, const FeatureSet& features);
FeatureSet load_feature_set(const std::filesystem::path& dir);

/// Per-class and pooled metrics. Metrics undefined for the available sample
/// counts are NaN and explained in the notes.
metrics::MetricsReport compute_metrics(const FeatureSet& features, const MetricsOptions& options);

struct ExperimentResult {
  attack::AttackResult attack;
  metrics::MetricsReport metrics;
  std::filesystem::path directory;
};

/// Runs the attack and the metrics and persists everything under
/// config.output.directory. On a stage failure the manifest records the
/// stage and the files written so far, and the error is rethrown.
ExperimentResult run_experiment(const RunConfig& config);
ExperimentResult run_experiment(const RunConfig& config, const ModelBundle& models);

// --- ablation -------------------------------------------------------------------

const std::vector<std::string>& ablation_preset_names();

/// Applies one preset to the base config. Pipeline presets change the
/// optimization transforms only. Throws ContractViolation listing the valid
/// names for an unknown preset.
RunConfig apply_preset(const RunConfig& base, std::string_view preset);

struct AblationRow {
  std::string preset;
  std::string config_hash;
  metrics::MetricsRow aggregate;
};

/// One run per preset under `out_dir/<preset>`, same seed, plus
/// `out_dir/ablation.csv`. Every preset name is checked before any run.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::string>& presets,
                                      const std::filesystem::path& out_dir);

inline constexpr const char* kAblationCsvHeader =
    "preset,acc_at_1,acc_at_5,delta_eval,delta_face,fid,precision,recall,density,coverage,samples";
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

// --- gradient diagnostic ------------------------------------------------------------

/// Gradient norms tracked by the diagnostic: l1 of d loss / d generated
/// image (the primary curve), l2 of d loss / d w, l1 of d loss / d logits.
enum class GradientMeasure { image = 0, latent = 1, logits = 2 };

struct DiagnosticRow {
  std::string loss;  // "poincare" or "cross_entropy"
  std::size_t step = 0;
  double mean_score = 0.0;
  /// Mean over candidates of g(step) / g(0), indexed by GradientMeasure.
  std::array<double, 3> normalized{};
  std::size_t candidates = 0;
};

struct LossCurve {
  std::string loss;
  std::vector<DiagnosticRow> rows;
  /// [measure][candidate][step] normalized norms and [candidate][step] scores.
  std::array<std::vector<std::vector<double>>, 3> normalized;
  std::vector<std::vector<double>> scores;

  /// Mean normalized norm over (candidate, step) pairs whose score exceeds
  /// `threshold`; NaN if there are none.
  double mean_normalized_above(double threshold,
                               GradientMeasure measure = GradientMeasure::image) const;
  /// First step whose mean score exceeds `threshold`.
  std::optional<std::size_t> first_step_above(double threshold) const;
};

struct GradientDiagnostic {
  LossCurve poincare;
  LossCurve cross_entropy;
};

/// Optimizes the same initial candidates with both losses (same learning
/// rate) through the deterministic part of the optimization transforms only,
/// and records the curves.
GradientDiagnostic gradient_diagnostic(const RunConfig& config, const ModelBundle& models);
GradientDiagnostic gradient_diagnostic(const RunConfig& config);

inline constexpr const char* kDiagnosticCsvHeader =
    "loss,step,mean_score,normalized_grad_norm,normalized_latent_grad_norm,normalized_logit_grad_norm,candidates";
void write_diagnostic_csv(std::ostream& out, const GradientDiagnostic& diagnostic);

// --- manifest ---------------------------------------------------------------------

struct VerifyReport {
  std::size_t checked = 0;
  std::vector<std::string> problems;  // "<path>: <reason>"
  bool ok() const { return problems.empty(); }
};

/// Recomputes the hash of every file listed in `dir/manifest.json`.
VerifyReport verify_manifest(const std::filesystem::path& dir);

}  // namespace ppa::harness
