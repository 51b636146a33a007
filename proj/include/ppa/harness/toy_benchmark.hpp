#pragma once

// Desk-scale inversion benchmark: a blob-scene image prior, class-conditional
// scene distributions, and prototype classifiers fitted to training images
// that only show the central window of each scene (the prior renders the
// surrounding margin as well).

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ppa/models.hpp"
#include "ppa/rng.hpp"
#include "ppa/transforms.hpp"

namespace ppa::harness {

struct ToyBenchmarkParams {
  std::size_t num_classes = 10;
  std::size_t train_per_class = 30;
  std::uint64_t world_seed = 20220128;

  std::size_t generator_size = 24;   // prior renders generator_size^2 images
  std::size_t crop_size = 18;        // central window shown to the classifiers
  std::size_t classifier_size = 12;  // classifier input resolution
  std::size_t z_dim = 12;
  double mapping_gain = 1.5;
  double center_gain = 1.5;
  double scale_gain = 2.0;
  double amplitude_gain = 2.0;

  std::size_t target_features = 24;
  std::size_t eval_features = 32;
  std::size_t face_features = 16;
  double smooth_gain = 2.5;  // spatial/color pooling part of the projection
  double detail_gain = 1.0;  // checkerboard-modulated pixel-level part
  double sharpness = 25.0;   // logit scale relative to mean prototype spread

  // Class c: hue c mod ceil(C/2), small blob for the first ceil(C/2) classes.
  double color_amplitude = 2.2;
  double small_scale = 0.1;
  double large_scale = 0.18;
  double center_jitter = 0.05;
  double distractor_amplitude = 0.3;

  nlohmann::json to_json() const;
  static ToyBenchmarkParams from_json(const nlohmann::json& j);
  friend bool operator==(const ToyBenchmarkParams&, const ToyBenchmarkParams&) = default;
};

struct ToyBenchmark {
  ToyBenchmarkParams params;
  BlobGenerator generator;
  PrototypeClassifier target;
  PrototypeClassifier eval;
  PrototypeClassifier face;  // second, independent feature extractor
  PrototypeCritic critic;    // on generator-resolution images
  std::vector<std::vector<ImageTensor>> training_images;  // per class, classifier resolution
};

ToyBenchmark build_toy_benchmark(const ToyBenchmarkParams& params);

/// Intermediate latent of a scene drawn from class `c`'s distribution.
LatentVector sample_class_latent(const ToyBenchmarkParams& params, const BlobGenerator& generator,
                                 std::size_t c, RngStream& rng);

/// Class-c scene rendered the way training images are: central window only,
/// at classifier resolution.
ImageTensor render_training_view(const ToyBenchmarkParams& params, const BlobGenerator& generator,
                                 const LatentVector& w);

/// Optimization pipeline: center crop, resize to the classifier input,
/// random resized crop with area [0.9, 1] and ratio 1, horizontal flip.
transforms::TransformPipeline toy_optimization_transforms(const ToyBenchmarkParams& params);
/// Selection pipeline: center crop, resize, random resized crop with area
/// [0.5, 0.9] and ratio [0.8, 1.2], horizontal flip.
transforms::TransformPipeline toy_selection_transforms(const ToyBenchmarkParams& params);

}  // namespace ppa::harness
