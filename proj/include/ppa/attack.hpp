#pragma once

// Generative model inversion: latent sampling, initial candidate selection,
// transformation-robust latent optimization, Monte-Carlo robust scoring and
// final subset selection.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppa/losses.hpp"
#include "ppa/models.hpp"
#include "ppa/rng.hpp"
#include "ppa/tensor.hpp"
#include "ppa/transforms.hpp"

namespace ppa::attack {

/// Stream tags; per-unit streams are derive_stream_id(class, candidate, tag).
inline constexpr const char* kSampleStage = "sample";
inline constexpr const char* kRandomInitStage = "random_init";
inline constexpr const char* kOptimizeStage = "optimize";
inline constexpr const char* kSelectStage = "select";

struct AttackConfig {
  std::size_t sample_count = 2000;
  std::size_t candidates_per_class = 200;
  std::size_t final_count = 50;
  std::size_t steps = 50;
  double learning_rate = 0.005;
  double beta1 = 0.1;
  double beta2 = 0.1;
  double adam_epsilon = 1e-8;
  double truncation_psi = 0.5;
  int truncation_cutoff = 8;
  losses::LossKind loss = losses::LossKind::poincare;
  double discriminator_weight = 0.0;
  transforms::TransformPipeline optimization_transforms;
  transforms::TransformPipeline selection_transforms;
  std::size_t mc_samples = 100;
  std::size_t batch_size = 20;
  std::uint64_t master_seed = 0;
  std::vector<std::size_t> target_classes;
  /// Ablation switches. Disabled initial selection draws candidates uniformly
  /// from the sampled pool; disabled final selection keeps every candidate
  /// that did not fail.
  bool initial_selection = true;
  bool final_selection = true;

  /// Throws ContractViolation listing every violated invariant.
  void validate() const;
  /// Deterministic center-crop/resize part of the optimization transforms,
  /// used for initial selection and plain scores.
  transforms::TransformPipeline deterministic_transforms() const;
};

struct PoolEntry {
  std::size_t latent_index = 0;  // row in the sampled batch
  LatentVector w;
  double initial_score = 0.0;
};

struct CandidatePool {
  std::vector<std::size_t> classes;
  std::vector<std::vector<PoolEntry>> per_class;  // parallel to `classes`
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t dim = 0) : first_moment(dim, 0.0), second_moment(dim, 0.0) {}
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double target_score = 0.0;
  double grad_norm = 0.0;  // l2 norm of d loss / d w
  double image_grad_l1 = 0.0;  // l1 norm of d loss / d generated image
  double logit_grad_l1 = 0.0;  // l1 norm of d classification loss / d logits
};

struct CandidateResult {
  std::size_t candidate_index = 0;  // position within the class pool
  std::size_t latent_index = 0;     // row in the sampled batch
  LatentVector initial_w;
  LatentVector w;
  ImageTensor image;
  double initial_score = 0.0;
  double plain_score = 0.0;
  double robust_score = 0.0;
  bool failed = false;
  bool selected = false;
  std::vector<StepRecord> trace;
};

struct ClassResult {
  std::size_t target_class = 0;
  std::vector<CandidateResult> candidates;

  std::vector<const CandidateResult*> selected() const;
};

struct AttackResult {
  std::vector<ClassResult> classes;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Error from one pipeline stage, carrying the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// `count` i.i.d. standard-normal input-space latents.
LatentBatch sample_latents(std::size_t count, std::size_t dim, RngStream& rng);

/// Mean target-class score of each image and its horizontal flip after the
/// deterministic `pipeline`. Returns one score vector (all classes) per image.
std::vector<std::vector<double>> flip_averaged_scores(const std::vector<ImageTensor>& images,
                                                      const transforms::TransformPipeline& pipeline,
                                                      const Classifier& target);

/// Per target class, the k_init latents with the largest flip-averaged
/// score; ties go to the lower batch index.
CandidatePool initial_selection(const LatentBatch& w_batch, std::span<const std::size_t> targets,
                                std::size_t k_init, const transforms::TransformPipeline& pipeline,
                                const Classifier& target, const ImageGenerator& generator);

/// k_init latents per class drawn uniformly without replacement; the draw for
/// class c uses stream (seed, derive_stream_id(c, 0, "random_init")).
CandidatePool random_selection(const LatentBatch& w_batch, std::span<const std::size_t> targets,
                               std::size_t k_init, const transforms::TransformPipeline& pipeline,
                               const Classifier& target, const ImageGenerator& generator,
                               std::uint64_t seed);

/// One bias-corrected Adam update of `w` in place.
void adam_step(std::span<double> w, std::span<const double> grad, AdamState& state, double lr,
               double beta1, double beta2, double eps);

struct OptimizationModels {
  const ImageGenerator& generator;
  const Classifier& target;
  const DifferentiableModel* critic = nullptr;  // image -> one logit
};

/// Runs config.steps Adam steps for one candidate and fills `w`, `trace` and
/// `failed`. Transform randomness comes from `rng`, fresh on every step.
void optimize_candidate(CandidateResult& candidate, std::size_t target_class,
                        const OptimizationModels& models, const AttackConfig& config,
                        RngStream rng);

/// Optimizes every pool entry of one class.
std::vector<CandidateResult> optimize_candidates(const std::vector<PoolEntry>& pool,
                                                 std::size_t target_class,
                                                 const OptimizationModels& models,
                                                 const AttackConfig& config);

/// Mean class-c score over N independently transformed copies of x.
double robust_score(const ImageTensor& x, std::size_t target_class, const Classifier& target,
                    const transforms::TransformPipeline& selection, std::size_t n, RngStream& rng);

/// Flags exactly n_final non-failed candidates with the largest robust
/// scores (ties by candidate index) and reorders nothing.
void final_selection(std::vector<CandidateResult>& candidates, std::size_t n_final);

/// Config and pipeline checks, latent sampling and mapping, then initial (or
/// random) selection: everything before optimization.
CandidatePool prepare_candidates(const AttackConfig& config, const ImageGenerator& generator,
                                 const Classifier& target,
                                 const DifferentiableModel* critic = nullptr);

AttackResult run_attack(const AttackConfig& config, const ImageGenerator& generator,
                        const Classifier& target, const DifferentiableModel* critic = nullptr);

/// Pixel-space inversion: optimizes x = tanh(eta) directly against the
/// classifier, starting from `start`. Produces images without any prior.
ImageTensor invert_pixels(const ImageTensor& start, std::size_t target_class,
                          const Classifier& target, losses::LossKind loss, std::size_t steps,
                          double learning_rate);

/// CSV with header class,candidate,step,loss,target_score,grad_norm.
void write_loss_trace_csv(const AttackResult& result, std::ostream& out);

}  // namespace ppa::attack
