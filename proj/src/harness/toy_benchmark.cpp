#include "ppa/harness/toy_benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ppa/kernels.hpp"

namespace ppa::harness {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

RngStream world_stream(const ToyBenchmarkParams& p, std::uint64_t a, std::uint64_t b,
                       std::string_view tag) {
  return RngStream(p.world_seed, derive_stream_id(a, b, tag));
}

// Projection rows: a Gaussian spatial window times a random color mix, plus
// a checkerboard-modulated smooth field. Smooth images barely respond to the
// second part; pixel-level perturbations do.
PrototypeClassifier random_feature_map(Shape shape, std::size_t features, double smooth_gain,
                                       double detail_gain, RngStream rng) {
  const std::size_t d = shape.size();
  std::vector<double> projection(features * d, 0.0);
  std::vector<double> bias(features);
  std::vector<double> mask(shape.height * shape.width);
  std::vector<double> mix(shape.channels);

  auto draw_window = [&](double width_lo, double width_hi) {
    const double cy = rng.uniform(0.25, 0.75);
    const double cx = rng.uniform(0.25, 0.75);
    const double width = rng.uniform(width_lo, width_hi);
    double total = 0.0;
    for (std::size_t i = 0; i < shape.height; ++i) {
      for (std::size_t j = 0; j < shape.width; ++j) {
        const double y = (static_cast<double>(i) + 0.5) / shape.height - cy;
        const double x = (static_cast<double>(j) + 0.5) / shape.width - cx;
        const double m = std::exp(-(x * x + y * y) / (2.0 * width * width));
        mask[i * shape.width + j] = m;
        total += m;
      }
    }
    return total;
  };
  auto draw_mix = [&] {
    double norm = 0.0;
    for (double& v : mix) {
      v = rng.normal();
      norm += v * v;
    }
    for (double& v : mix) v /= std::sqrt(norm);
  };

  for (std::size_t f = 0; f < features; ++f) {
    double* row = projection.data() + f * d;
    const double total = draw_window(0.1, 0.3);
    draw_mix();
    for (std::size_t p = 0; p < mask.size(); ++p) {
      for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        row[p * shape.channels + ch] = smooth_gain * mask[p] / total * mix[ch];
      }
    }
    if (detail_gain > 0.0) {
      draw_window(0.2, 0.5);
      draw_mix();
      std::vector<double> detail(d);
      for (std::size_t i = 0; i < shape.height; ++i) {
        for (std::size_t j = 0; j < shape.width; ++j) {
          const double sign = (i + j) % 2 == 0 ? 1.0 : -1.0;
          for (std::size_t ch = 0; ch < shape.channels; ++ch) {
            detail[(i * shape.width + j) * shape.channels + ch] =
                sign * mask[i * shape.width + j] * mix[ch];
          }
        }
      }
      const double norm = std::sqrt(kernels::dot(detail, detail));
      kernels::axpy(detail_gain / norm, detail, std::span<double>(row, d));
    }
    bias[f] = 0.2 * rng.normal();
  }
  // Placeholder single prototype; replaced by class means.
  return PrototypeClassifier(shape, features, std::move(projection), std::move(bias),
                             std::vector<double>(features, 0.0), 1.0);
}

// Refit prototypes to class means and set the logit scale from the mean
// squared distance between prototypes.
PrototypeClassifier fit_classifier(const PrototypeClassifier& map,
                                   const std::vector<std::vector<ImageTensor>>& images,
                                   double sharpness) {
  const PrototypeClassifier means = map.with_class_means(images);
  const std::size_t classes = means.num_classes();
  double spread = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < classes; ++a) {
    for (std::size_t b = a + 1; b < classes; ++b) {
      spread += kernels::squared_distance(means.prototype(a), means.prototype(b));
      ++pairs;
    }
  }
  spread = pairs > 0 ? spread / static_cast<double>(pairs) : 1.0;
  std::vector<double> prototypes;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto mu = means.prototype(c);
    prototypes.insert(prototypes.end(), mu.begin(), mu.end());
  }
  const auto proj = means.projection();
  const auto bias = means.feature_bias();
  return PrototypeClassifier(means.input_shape(), means.feature_dim(),
                             std::vector<double>(proj.begin(), proj.end()),
                             std::vector<double>(bias.begin(), bias.end()), std::move(prototypes),
                             sharpness / spread);
}

BlobGenerator make_generator(const ToyBenchmarkParams& p) {
  BlobGeneratorParams g;
  g.z_dim = p.z_dim;
  g.num_blobs = 2;
  g.image_shape = {p.generator_size, p.generator_size, 3};
  g.mapping_gain = p.mapping_gain;
  g.center_gain = p.center_gain;
  g.scale_gain = p.scale_gain;
  g.amplitude_gain = p.amplitude_gain;
  RngStream rng = world_stream(p, 0, 0, "toy_generator");
  const std::size_t w_dim = g.w_dim();
  g.mapping_matrix.resize(w_dim * g.z_dim);
  for (double& v : g.mapping_matrix) v = rng.normal() / std::sqrt(static_cast<double>(g.z_dim));
  g.mapping_bias.resize(w_dim);
  for (double& v : g.mapping_bias) v = 0.2 * rng.normal();
  g.mean_latent = BlobGenerator::estimate_mean_latent(g, 4096, p.world_seed);
  return BlobGenerator(std::move(g));
}

}  // namespace

nlohmann::json ToyBenchmarkParams::to_json() const {
  return {{"num_classes", num_classes},
          {"train_per_class", train_per_class},
          {"world_seed", world_seed},
          {"generator_size", generator_size},
          {"crop_size", crop_size},
          {"classifier_size", classifier_size},
          {"z_dim", z_dim},
          {"mapping_gain", mapping_gain},
          {"center_gain", center_gain},
          {"scale_gain", scale_gain},
          {"amplitude_gain", amplitude_gain},
          {"target_features", target_features},
          {"eval_features", eval_features},
          {"face_features", face_features},
          {"smooth_gain", smooth_gain},
          {"detail_gain", detail_gain},
          {"sharpness", sharpness},
          {"color_amplitude", color_amplitude},
          {"small_scale", small_scale},
          {"large_scale", large_scale},
          {"center_jitter", center_jitter},
          {"distractor_amplitude", distractor_amplitude}};
}

ToyBenchmarkParams ToyBenchmarkParams::from_json(const nlohmann::json& j) {
  ToyBenchmarkParams p;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("num_classes", p.num_classes);
  get("train_per_class", p.train_per_class);
  get("world_seed", p.world_seed);
  get("generator_size", p.generator_size);
  get("crop_size", p.crop_size);
  get("classifier_size", p.classifier_size);
  get("z_dim", p.z_dim);
  get("mapping_gain", p.mapping_gain);
  get("center_gain", p.center_gain);
  get("scale_gain", p.scale_gain);
  get("amplitude_gain", p.amplitude_gain);
  get("target_features", p.target_features);
  get("eval_features", p.eval_features);
  get("face_features", p.face_features);
  get("smooth_gain", p.smooth_gain);
  get("detail_gain", p.detail_gain);
  get("sharpness", p.sharpness);
  get("color_amplitude", p.color_amplitude);
  get("small_scale", p.small_scale);
  get("large_scale", p.large_scale);
  get("center_jitter", p.center_jitter);
  get("distractor_amplitude", p.distractor_amplitude);
  return p;
}

LatentVector sample_class_latent(const ToyBenchmarkParams& params, const BlobGenerator& generator,
                                 std::size_t c, RngStream& rng) {
  require(c < params.num_classes, "sample_class_latent: class index out of range");
  const BlobGeneratorParams& g = generator.params();
  const std::size_t channels = g.image_shape.channels;
  require(g.num_blobs == 2 && channels == 3, "toy scenes need a two-blob RGB generator");
  LatentVector w{std::vector<double>(g.w_dim(), 0.0), LatentSpace::intermediate};
  const std::size_t stride = 3 + channels;

  auto set_center = [&](double* p, double cx, double cy) {
    p[0] = logit(std::clamp(cx, 0.02, 0.98)) / g.center_gain;
    p[1] = logit(std::clamp(cy, 0.02, 0.98)) / g.center_gain;
  };
  auto set_scale = [&](double* p, double s) {
    const double u = std::clamp((s - g.scale_min) / (g.scale_max - g.scale_min), 0.02, 0.98);
    p[2] = logit(u) / g.scale_gain;
  };

  // Class blob near the center: one of ceil(C/2) hues, small or large.
  const std::size_t hues = (params.num_classes + 1) / 2;
  double* main = w.values.data();
  set_center(main, 0.5 + params.center_jitter * rng.normal(),
             0.5 + params.center_jitter * rng.normal());
  const double base_scale = c < hues ? params.small_scale : params.large_scale;
  set_scale(main, base_scale * std::exp(0.08 * rng.normal()));
  const double hue =
      2.0 * std::numbers::pi * static_cast<double>(c % hues) / static_cast<double>(hues);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double color =
        params.color_amplitude * std::cos(hue + 2.0 * std::numbers::pi * ch / 3.0);
    main[3 + ch] = (color + 0.15 * rng.normal()) / g.amplitude_gain;
  }

  // Distractor blob anywhere in the central window.
  double* other = w.values.data() + stride;
  set_center(other, rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8));
  set_scale(other, rng.uniform(0.06, 0.1));
  for (std::size_t ch = 0; ch < channels; ++ch) {
    other[3 + ch] = params.distractor_amplitude * rng.normal() / g.amplitude_gain;
  }

  double* bg = w.values.data() + 2 * stride;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    bg[ch] = (0.05 * rng.normal() - g.background_offset[ch]) / g.background_gain;
  }
  return w;
}

ImageTensor render_training_view(const ToyBenchmarkParams& params, const BlobGenerator& generator,
                                 const LatentVector& w) {
  const double margin = 0.5 * static_cast<double>(params.generator_size - params.crop_size) /
                        static_cast<double>(params.generator_size);
  const ViewWindow window{margin, margin, 1.0 - 2.0 * margin, 1.0 - 2.0 * margin};
  return render_scene(generator.scene(w), {params.classifier_size, params.classifier_size, 3},
                      window);
}

ToyBenchmark build_toy_benchmark(const ToyBenchmarkParams& params) {
  require(params.num_classes >= 2, "toy benchmark needs at least two classes");
  require(params.train_per_class >= 2, "toy benchmark needs at least two images per class");
  require(params.crop_size <= params.generator_size && params.crop_size > 0,
          "toy benchmark crop must fit the generator image");
  require(params.classifier_size > 0, "toy benchmark classifier size must be positive");

  BlobGenerator generator = make_generator(params);

  std::vector<std::vector<ImageTensor>> training(params.num_classes);
  for (std::size_t c = 0; c < params.num_classes; ++c) {
    for (std::size_t i = 0; i < params.train_per_class; ++i) {
      RngStream rng = world_stream(params, c, i, "toy_train");
      training[c].push_back(
          render_training_view(params, generator, sample_class_latent(params, generator, c, rng)));
    }
  }

  const Shape input{params.classifier_size, params.classifier_size, 3};
  auto classifier = [&](std::size_t features, std::string_view tag) {
    const PrototypeClassifier map = random_feature_map(
        input, features, params.smooth_gain, params.detail_gain, world_stream(params, 0, 0, tag));
    return fit_classifier(map, training, params.sharpness);
  };
  PrototypeClassifier target = classifier(params.target_features, "toy_target");
  PrototypeClassifier eval = classifier(params.eval_features, "toy_eval");
  PrototypeClassifier face = classifier(params.face_features, "toy_face");

  // Realism critic: one prototype at the mean features of prior samples.
  const Shape gen_shape = generator.image_shape();
  const PrototypeClassifier critic_map = random_feature_map(
      gen_shape, 16, params.smooth_gain, 0.0, world_stream(params, 0, 0, "toy_critic"));
  std::vector<std::vector<ImageTensor>> prior_images(1);
  RngStream prior_rng = world_stream(params, 0, 0, "toy_critic_samples");
  for (std::size_t n = 0; n < 256; ++n) {
    LatentVector z{std::vector<double>(generator.z_dim()), LatentSpace::input};
    for (double& v : z.values) v = prior_rng.normal();
    prior_images[0].push_back(generator.synthesize(generator.map_latent(z, 1.0, 0)));
  }
  const PrototypeClassifier critic_means = critic_map.with_class_means(prior_images);
  double spread = 0.0;
  for (const auto& x : prior_images[0]) {
    spread += kernels::squared_distance(critic_means.features(x), critic_means.prototype(0));
  }
  spread /= static_cast<double>(prior_images[0].size());
  const auto proj = critic_means.projection();
  const auto fbias = critic_means.feature_bias();
  const auto mu = critic_means.prototype(0);
  PrototypeCritic critic(
      PrototypeClassifier(gen_shape, critic_means.feature_dim(),
                          std::vector<double>(proj.begin(), proj.end()),
                          std::vector<double>(fbias.begin(), fbias.end()),
                          std::vector<double>(mu.begin(), mu.end()), 1.0 / spread),
      1.0);

  return ToyBenchmark{params,           std::move(generator), std::move(target), std::move(eval),
                      std::move(face),  std::move(critic),    std::move(training)};
}

transforms::TransformPipeline toy_optimization_transforms(const ToyBenchmarkParams& params) {
  using namespace transforms;
  const Size crop{params.crop_size, params.crop_size};
  const Size out{params.classifier_size, params.classifier_size};
  return TransformPipeline({CenterCropSpec{crop}, ResizeSpec{out},
                            RandomResizedCropSpec{{0.9, 1.0}, {1.0, 1.0}, out}, HFlipSpec{0.5}});
}

transforms::TransformPipeline toy_selection_transforms(const ToyBenchmarkParams& params) {
  using namespace transforms;
  const Size crop{params.crop_size, params.crop_size};
  const Size out{params.classifier_size, params.classifier_size};
  return TransformPipeline({CenterCropSpec{crop}, ResizeSpec{out},
                            RandomResizedCropSpec{{0.5, 0.9}, {0.8, 1.2}, out}, HFlipSpec{0.5}});
}

}  // namespace ppa::harness
