#include "ppa/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "ppa/kernels.hpp"

namespace ppa::attack {

namespace {

// Descending score, ascending index.
std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

template <class F>
auto run_stage(const char* stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void check_pipeline_shape(const transforms::TransformPipeline& pipeline, const Shape& image,
                          const Classifier& target, const char* name) {
  const Shape out = pipeline.output_shape(image);
  require(out == target.input_shape(), std::string(name) + " transforms produce " +
                                           to_string(out) + " images, target expects " +
                                           to_string(target.input_shape()));
}

}  // namespace

void AttackConfig::validate() const {
  std::vector<std::string> issues;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) issues.push_back(msg);
  };
  check(sample_count > 0, "sample_count must be positive");
  check(candidates_per_class > 0, "candidates_per_class must be positive");
  check(candidates_per_class <= sample_count, "candidates_per_class exceeds sample_count");
  check(final_count > 0, "final_count must be positive");
  check(final_count <= candidates_per_class, "final_count exceeds candidates_per_class");
  check(mc_samples >= 1, "mc_samples must be at least 1");
  check(batch_size >= 1, "batch_size must be at least 1");
  check(learning_rate > 0.0, "learning_rate must be positive");
  check(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  check(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  check(adam_epsilon > 0.0, "adam_epsilon must be positive");
  check(truncation_psi >= 0.0 && truncation_psi <= 1.0, "truncation_psi must lie in [0, 1]");
  check(truncation_cutoff >= 0, "truncation_cutoff must be non-negative");
  check(discriminator_weight >= 0.0, "discriminator_weight must be non-negative");
  check(!target_classes.empty(), "target_classes must not be empty");
  if (!issues.empty()) {
    std::string msg = "invalid attack config:";
    for (const auto& i : issues) msg += "\n  - " + i;
    throw ContractViolation(msg);
  }
}

transforms::TransformPipeline AttackConfig::deterministic_transforms() const {
  return optimization_transforms.without_random();
}

std::vector<const CandidateResult*> ClassResult::selected() const {
  std::vector<const CandidateResult*> out;
  for (const auto& c : candidates) {
    if (c.selected) out.push_back(&c);
  }
  // Robust-score order; the index tie-break matches final_selection.
  std::stable_sort(out.begin(), out.end(), [](const CandidateResult* a, const CandidateResult* b) {
    return a->robust_score > b->robust_score;
  });
  return out;
}

LatentBatch sample_latents(std::size_t count, std::size_t dim, RngStream& rng) {
  require(count > 0 && dim > 0, "sample_latents: count and dim must be positive");
  LatentBatch batch(count);
  for (auto& z : batch) {
    z.space = LatentSpace::input;
    z.values.resize(dim);
    for (double& v : z.values) v = rng.normal();
  }
  return batch;
}

std::vector<std::vector<double>> flip_averaged_scores(const std::vector<ImageTensor>& images,
                                                      const transforms::TransformPipeline& pipeline,
                                                      const Classifier& target) {
  require(pipeline.is_deterministic(), "initial selection requires a deterministic pipeline");
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  for (const auto& image : images) {
    const ImageTensor x = pipeline.apply(image).output();
    std::vector<double> scores = target.classify(x).scores;
    const std::vector<double> flipped = target.classify(transforms::hflip(x)).scores;
    for (std::size_t c = 0; c < scores.size(); ++c) scores[c] = 0.5 * (scores[c] + flipped[c]);
    out.push_back(std::move(scores));
  }
  return out;
}

namespace {

std::vector<std::vector<double>> batch_scores(const LatentBatch& w_batch,
                                              const transforms::TransformPipeline& pipeline,
                                              const Classifier& target,
                                              const ImageGenerator& generator) {
  std::vector<ImageTensor> images;
  images.reserve(w_batch.size());
  for (const auto& w : w_batch) images.push_back(generator.synthesize(w));
  return flip_averaged_scores(images, pipeline, target);
}

void check_targets(std::span<const std::size_t> targets, const Classifier& target) {
  require(!targets.empty(), "no target classes");
  for (std::size_t c : targets) {
    require(c < target.num_classes(), "target class " + std::to_string(c) +
                                          " out of range for a " +
                                          std::to_string(target.num_classes()) + "-class model");
  }
}

}  // namespace

CandidatePool initial_selection(const LatentBatch& w_batch, std::span<const std::size_t> targets,
                                std::size_t k_init, const transforms::TransformPipeline& pipeline,
                                const Classifier& target, const ImageGenerator& generator) {
  require(k_init <= w_batch.size(), "initial_selection: k_init " + std::to_string(k_init) +
                                        " exceeds batch size " + std::to_string(w_batch.size()));
  check_targets(targets, target);
  const auto scores = batch_scores(w_batch, pipeline, target, generator);
  CandidatePool pool;
  pool.classes.assign(targets.begin(), targets.end());
  for (std::size_t c : targets) {
    std::vector<double> class_scores(w_batch.size());
    for (std::size_t i = 0; i < w_batch.size(); ++i) class_scores[i] = scores[i][c];
    const auto order = rank_descending(class_scores);
    std::vector<PoolEntry> entries;
    entries.reserve(k_init);
    for (std::size_t r = 0; r < k_init; ++r) {
      entries.push_back({order[r], w_batch[order[r]], class_scores[order[r]]});
    }
    pool.per_class.push_back(std::move(entries));
  }
  return pool;
}

CandidatePool random_selection(const LatentBatch& w_batch, std::span<const std::size_t> targets,
                               std::size_t k_init, const transforms::TransformPipeline& pipeline,
                               const Classifier& target, const ImageGenerator& generator,
                               std::uint64_t seed) {
  require(k_init <= w_batch.size(), "random_selection: k_init " + std::to_string(k_init) +
                                        " exceeds batch size " + std::to_string(w_batch.size()));
  check_targets(targets, target);
  const auto scores = batch_scores(w_batch, pipeline, target, generator);
  CandidatePool pool;
  pool.classes.assign(targets.begin(), targets.end());
  for (std::size_t c : targets) {
    RngStream rng(seed, derive_stream_id(c, 0, kRandomInitStage));
    std::vector<std::size_t> index(w_batch.size());
    std::iota(index.begin(), index.end(), 0);
    for (std::size_t r = 0; r < k_init; ++r) {
      const auto pick = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(r), static_cast<std::int64_t>(index.size() - 1)));
      std::swap(index[r], index[pick]);
    }
    std::vector<PoolEntry> entries;
    for (std::size_t r = 0; r < k_init; ++r) {
      entries.push_back({index[r], w_batch[index[r]], scores[index[r]][c]});
    }
    pool.per_class.push_back(std::move(entries));
  }
  return pool;
}

void adam_step(std::span<double> w, std::span<const double> grad, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  require(w.size() == grad.size() && w.size() == state.first_moment.size() &&
              w.size() == state.second_moment.size(),
          "adam_step: shape mismatch");
  ++state.step;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = beta1 * m + (1.0 - beta1) * grad[i];
    v = beta2 * v + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

void optimize_candidate(CandidateResult& candidate, std::size_t target_class,
                        const OptimizationModels& models, const AttackConfig& config,
                        RngStream rng) {
  LatentVector w = candidate.initial_w;
  AdamState state(w.size());
  candidate.trace.clear();
  candidate.failed = false;
  const bool use_critic = models.critic != nullptr && config.discriminator_weight > 0.0;

  for (std::size_t step = 0; step < config.steps; ++step) {
    const ImageTensor image = models.generator.synthesize(w);
    const auto applied = config.optimization_transforms.apply(image, rng);
    const std::vector<double> logits = models.target.logits(applied.output());

    StepRecord record;
    record.step = step;
    std::vector<double> grad_w;
    try {
      for (double o : logits) {
        if (!std::isfinite(o)) throw DegenerateInput("non-finite logits");
      }
      const auto loss = losses::classification_loss(config.loss, logits, target_class);
      record.loss = loss.loss;
      record.target_score = losses::softmax(logits)[target_class];
      for (double g : loss.grad) record.logit_grad_l1 += std::abs(g);
      ImageTensor grad_image =
          applied.vjp(models.target.logit_gradient(applied.output(), loss.grad));
      if (use_critic) {
        const double d_logit = models.critic->forward(image.data())[0];
        record.loss += losses::discriminator_penalty(d_logit, config.discriminator_weight);
        const double d_grad = losses::discriminator_penalty_grad(d_logit, config.discriminator_weight);
        const std::vector<double> critic_grad =
            models.critic->input_gradient(image.data(), std::span<const double>(&d_grad, 1));
        kernels::axpy(1.0, critic_grad, grad_image.data());
      }
      for (double g : grad_image.values()) record.image_grad_l1 += std::abs(g);
      grad_w = models.generator.synthesis_gradient(w, grad_image);
    } catch (const ContractViolation&) {
      throw;
    } catch (const std::exception&) {
      // Degenerate logits and similar numerical breakdowns fail the candidate.
      candidate.failed = true;
    }
    if (!candidate.failed) {
      record.grad_norm = std::sqrt(kernels::dot(grad_w, grad_w));
      candidate.failed = !std::isfinite(record.loss) || !std::isfinite(record.grad_norm);
    }
    if (candidate.failed) {
      record.grad_norm = std::isfinite(record.grad_norm) ? record.grad_norm : 0.0;
      candidate.trace.push_back(record);
      break;
    }
    candidate.trace.push_back(record);
    adam_step(w.values, grad_w, state, config.learning_rate, config.beta1, config.beta2,
              config.adam_epsilon);
  }
  candidate.w = std::move(w);
}

std::vector<CandidateResult> optimize_candidates(const std::vector<PoolEntry>& pool,
                                                 std::size_t target_class,
                                                 const OptimizationModels& models,
                                                 const AttackConfig& config) {
  require(!pool.empty(), "optimize_candidates: empty pool for class " + std::to_string(target_class));
  std::vector<CandidateResult> out(pool.size());
  // Candidates are independent, so batching only bounds the working set.
  for (std::size_t begin = 0; begin < pool.size(); begin += config.batch_size) {
    const std::size_t end = std::min(pool.size(), begin + config.batch_size);
    for (std::size_t i = begin; i < end; ++i) {
      CandidateResult& c = out[i];
      c.candidate_index = i;
      c.latent_index = pool[i].latent_index;
      c.initial_w = pool[i].w;
      c.initial_score = pool[i].initial_score;
      optimize_candidate(c, target_class, models, config,
                         RngStream(config.master_seed,
                                   derive_stream_id(target_class, i, kOptimizeStage)));
    }
  }
  return out;
}

double robust_score(const ImageTensor& x, std::size_t target_class, const Classifier& target,
                    const transforms::TransformPipeline& selection, std::size_t n, RngStream& rng) {
  require(n >= 1, "robust_score: need at least one sample");
  require(target_class < target.num_classes(), "robust_score: class index out of range");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto applied = selection.apply(x, rng);
    total += target.classify(applied.output()).scores[target_class];
  }
  return total / static_cast<double>(n);
}

void final_selection(std::vector<CandidateResult>& candidates, std::size_t n_final) {
  std::vector<std::size_t> eligible;
  std::vector<double> scores;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].selected = false;
    if (!candidates[i].failed) {
      eligible.push_back(i);
      scores.push_back(candidates[i].robust_score);
    }
  }
  require(n_final <= eligible.size(),
          "final_selection: need " + std::to_string(n_final) + " candidates but only " +
              std::to_string(eligible.size()) + " did not fail (shortfall " +
              std::to_string(n_final - eligible.size()) + ")");
  const auto order = rank_descending(scores);
  for (std::size_t r = 0; r < n_final; ++r) candidates[eligible[order[r]]].selected = true;
}

CandidatePool prepare_candidates(const AttackConfig& config, const ImageGenerator& generator,
                                 const Classifier& target, const DifferentiableModel* critic) {
  run_stage("config", [&] {
    config.validate();
    check_pipeline_shape(config.deterministic_transforms(), generator.image_shape(), target,
                         "initial selection");
    check_pipeline_shape(config.optimization_transforms, generator.image_shape(), target,
                         "optimization");
    check_pipeline_shape(config.selection_transforms, generator.image_shape(), target, "selection");
    if (critic != nullptr) {
      require(critic->input_size() == generator.image_shape().size() && critic->output_size() == 1,
              "critic must map generator images to a single logit");
    }
    return 0;
  });

  const LatentBatch w_batch = run_stage("sample", [&] {
    RngStream rng(config.master_seed, derive_stream_id(0, 0, kSampleStage));
    LatentBatch batch = sample_latents(config.sample_count, generator.z_dim(), rng);
    for (auto& z : batch) z = generator.map_latent(z, config.truncation_psi, config.truncation_cutoff);
    return batch;
  });

  return run_stage("initial_selection", [&] {
    return config.initial_selection
               ? initial_selection(w_batch, config.target_classes, config.candidates_per_class,
                                   config.deterministic_transforms(), target, generator)
               : random_selection(w_batch, config.target_classes, config.candidates_per_class,
                                  config.deterministic_transforms(), target, generator,
                                  config.master_seed);
  });
}

AttackResult run_attack(const AttackConfig& config, const ImageGenerator& generator,
                        const Classifier& target, const DifferentiableModel* critic) {
  const CandidatePool pool = prepare_candidates(config, generator, target, critic);
  AttackResult result;
  result.seed = config.master_seed;
  const OptimizationModels models{generator, target, critic};
  const auto plain_pipeline = config.deterministic_transforms();
  for (std::size_t k = 0; k < pool.classes.size(); ++k) {
    const std::size_t c = pool.classes[k];
    ClassResult class_result;
    class_result.target_class = c;
    class_result.candidates = run_stage(
        "optimization", [&] { return optimize_candidates(pool.per_class[k], c, models, config); });

    run_stage("robust_scoring", [&] {
      for (auto& cand : class_result.candidates) {
        cand.image = generator.synthesize(cand.w);
        if (cand.failed) continue;
        cand.plain_score =
            target.classify(plain_pipeline.apply(cand.image).output()).scores[c];
        RngStream rng(config.master_seed, derive_stream_id(c, cand.candidate_index, kSelectStage));
        cand.robust_score =
            robust_score(cand.image, c, target, config.selection_transforms, config.mc_samples, rng);
      }
      return 0;
    });

    run_stage("final_selection", [&] {
      if (config.final_selection) {
        final_selection(class_result.candidates, config.final_count);
      } else {
        for (auto& cand : class_result.candidates) cand.selected = !cand.failed;
      }
      return 0;
    });
    result.classes.push_back(std::move(class_result));
  }
  return result;
}

ImageTensor invert_pixels(const ImageTensor& start, std::size_t target_class,
                          const Classifier& target, losses::LossKind loss, std::size_t steps,
                          double learning_rate) {
  std::vector<double> eta(start.size());
  for (std::size_t i = 0; i < eta.size(); ++i) {
    eta[i] = std::atanh(std::clamp(start.values()[i], -0.999, 0.999));
  }
  AdamState state(eta.size());
  ImageTensor x(start.shape());
  auto render = [&] {
    for (std::size_t i = 0; i < eta.size(); ++i) x.values()[i] = std::tanh(eta[i]);
  };
  for (std::size_t step = 0; step < steps; ++step) {
    render();
    const auto result = losses::classification_loss(loss, target.logits(x), target_class);
    ImageTensor grad = target.logit_gradient(x, result.grad);
    for (std::size_t i = 0; i < eta.size(); ++i) grad.values()[i] *= 1.0 - x.values()[i] * x.values()[i];
    adam_step(eta, grad.data(), state, learning_rate, 0.9, 0.999, 1e-8);
  }
  render();
  return x;
}

void write_loss_trace_csv(const AttackResult& result, std::ostream& out) {
  out << "class,candidate,step,loss,target_score,grad_norm\n";
  char buf[160];
  for (const auto& cls : result.classes) {
    for (const auto& cand : cls.candidates) {
      for (const auto& r : cand.trace) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.12g,%.12g,%.12g\n", cls.target_class,
                      cand.candidate_index, r.step, r.loss, r.target_score, r.grad_norm);
        out << buf;
      }
    }
  }
}

}  // namespace ppa::attack
