#pragma once

// Differentiable-model contract plus analytic reference models: a prototype
// (nearest-class-mean) classifier, a procedural blob generator split into
// mapping and synthesis stages, and a one-prototype realism critic.
//
// All models are immutable after construction; forward and input_gradient
// are const and reentrant.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppa/tensor.hpp"

namespace ppa {

/// forward: R^n -> R^m; input_gradient returns J(input)^T * cotangent.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;

  virtual std::size_t input_size() const = 0;
  virtual std::size_t output_size() const = 0;
  virtual std::vector<double> forward(std::span<const double> input) const = 0;
  virtual std::vector<double> input_gradient(std::span<const double> input,
                                             std::span<const double> cotangent) const = 0;

 protected:
  void check_input(std::span<const double> input) const;
  void check_cotangent(std::span<const double> cotangent) const;
};

/// y = A x + b. Reference model for the transpose rule.
class LinearModel final : public DifferentiableModel {
 public:
  LinearModel(std::size_t rows, std::size_t cols, std::vector<double> matrix,
              std::vector<double> bias);

  std::size_t input_size() const override { return cols_; }
  std::size_t output_size() const override { return rows_; }
  std::vector<double> forward(std::span<const double> input) const override;
  std::vector<double> input_gradient(std::span<const double> input,
                                     std::span<const double> cotangent) const override;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> matrix_;
  std::vector<double> bias_;
};

struct Classification {
  std::vector<double> logits;
  std::vector<double> scores;
  std::size_t predicted = 0;
};

/// Image classifier: forward maps a flattened image to logits.
class Classifier : public DifferentiableModel {
 public:
  virtual Shape input_shape() const = 0;
  std::size_t num_classes() const { return output_size(); }
  std::size_t input_size() const override { return input_shape().size(); }

  /// Penultimate-layer activations used by the feature-distance metrics.
  virtual std::vector<double> features(const ImageTensor& x) const = 0;

  Classification classify(const ImageTensor& x) const;
  std::vector<double> logits(const ImageTensor& x) const;
  /// Gradient of <cotangent, logits(x)> with respect to the image.
  ImageTensor logit_gradient(const ImageTensor& x, std::span<const double> cotangent) const;
};

/// Logits o_c = -sharpness * ||phi(x) - mu_c||^2 with the smooth feature map
/// phi(x) = tanh(P x + q).
class PrototypeClassifier final : public Classifier {
 public:
  PrototypeClassifier(Shape input_shape, std::size_t feature_dim, std::vector<double> projection,
                      std::vector<double> feature_bias, std::vector<double> prototypes,
                      double sharpness);

  Shape input_shape() const override { return input_shape_; }
  std::size_t output_size() const override { return prototypes_.size() / feature_dim_; }
  std::size_t feature_dim() const { return feature_dim_; }
  double sharpness() const { return sharpness_; }
  std::span<const double> prototype(std::size_t c) const;
  std::span<const double> projection() const { return projection_; }
  std::span<const double> feature_bias() const { return feature_bias_; }

  std::vector<double> feature_map(std::span<const double> image) const;
  std::vector<double> features(const ImageTensor& x) const override;
  std::vector<double> forward(std::span<const double> input) const override;
  std::vector<double> input_gradient(std::span<const double> input,
                                     std::span<const double> cotangent) const override;

  /// Logits computed from a feature vector directly.
  std::vector<double> logits_from_features(std::span<const double> features) const;
  /// Gradient of <cotangent, logits> with respect to the feature vector.
  std::vector<double> feature_gradient(std::span<const double> features,
                                       std::span<const double> cotangent) const;

  /// Same feature map, prototypes replaced by the class-mean features of
  /// `images_by_class`.
  PrototypeClassifier with_class_means(
      const std::vector<std::vector<ImageTensor>>& images_by_class) const;

  nlohmann::json to_json() const;
  static PrototypeClassifier from_json(const nlohmann::json& j);

 private:
  Shape input_shape_;
  std::size_t feature_dim_;
  std::vector<double> projection_;    // feature_dim x input size
  std::vector<double> feature_bias_;  // feature_dim
  std::vector<double> prototypes_;    // classes x feature_dim
  double sharpness_;
};

/// Window of the normalized [0,1]^2 scene plane that an image covers.
struct ViewWindow {
  double top = 0.0;
  double left = 0.0;
  double height = 1.0;
  double width = 1.0;
};

struct Blob {
  double center_x = 0.5;  // horizontal, normalized scene coordinates
  double center_y = 0.5;  // vertical
  double scale = 0.1;     // Gaussian standard deviation in scene units
  std::vector<double> amplitude;  // per channel, pre-squashing
};

struct BlobScene {
  std::vector<Blob> blobs;
  std::vector<double> background;  // per channel, pre-squashing
};

/// pixel(i, j, ch) = tanh(background_ch + sum_k amplitude_k,ch *
///                        exp(-((x - cx_k)^2 + (y - cy_k)^2) / (2 s_k^2)))
/// with the pixel center (x, y) at window.left + (j + 0.5) / W * window.width,
/// window.top + (i + 0.5) / H * window.height.
ImageTensor render_scene(const BlobScene& scene, Shape shape, const ViewWindow& window = {});

struct BlobGeneratorParams {
  std::size_t z_dim = 12;
  std::size_t num_blobs = 2;
  Shape image_shape{24, 24, 3};
  std::vector<double> mapping_matrix;  // w_dim x z_dim
  std::vector<double> mapping_bias;    // w_dim
  double mapping_gain = 1.5;           // m(z) = gain * tanh(A z + b)
  std::vector<double> mean_latent;     // w_dim
  double center_gain = 4.0;            // center = sigmoid(gain * w)
  double scale_min = 0.05;
  double scale_max = 0.3;
  double scale_gain = 2.0;             // scale = min + (max - min) sigmoid(gain * w)
  double amplitude_gain = 2.0;         // amplitude = gain * w
  double background_gain = 1.0;
  std::vector<double> background_offset;  // per channel

  std::size_t w_dim() const { return num_blobs * (3 + image_shape.channels) + image_shape.channels; }
};

/// Image prior split into a mapping network Z -> W and a synthesis network
/// W -> X. As a DifferentiableModel it is the synthesis network.
class ImageGenerator : public DifferentiableModel {
 public:
  virtual std::size_t z_dim() const = 0;
  virtual std::size_t w_dim() const = 0;
  virtual Shape image_shape() const = 0;
  virtual LatentVector map_latent(const LatentVector& z, double truncation_psi,
                                  int cutoff) const = 0;
  virtual ImageTensor synthesize(const LatentVector& w) const = 0;
  /// Gradient of <cotangent, synthesize(w)> with respect to w.
  virtual std::vector<double> synthesis_gradient(const LatentVector& w,
                                                 const ImageTensor& cotangent) const = 0;

  std::size_t input_size() const override { return w_dim(); }
  std::size_t output_size() const override { return image_shape().size(); }
};

/// Procedural image prior. The intermediate latent w is laid out per blob as
/// [center_x, center_y, scale, amplitude_0..C-1] followed by C background
/// entries. As a DifferentiableModel it is the synthesis network W -> X.
class BlobGenerator final : public ImageGenerator {
 public:
  explicit BlobGenerator(BlobGeneratorParams params);

  const BlobGeneratorParams& params() const { return params_; }
  std::size_t z_dim() const override { return params_.z_dim; }
  std::size_t w_dim() const override { return params_.w_dim(); }
  Shape image_shape() const override { return params_.image_shape; }
  std::span<const double> mean_latent() const { return params_.mean_latent; }

  /// Untruncated mapping network output m(z).
  LatentVector mapping(const LatentVector& z) const;

  /// w = w_mean + psi * (m(z) - w_mean). The latent is a single style vector,
  /// so the truncation applies to it unconditionally; `cutoff` only has to
  /// be non-negative.
  LatentVector map_latent(const LatentVector& z, double truncation_psi,
                          int cutoff) const override;

  BlobScene scene(const LatentVector& w) const;
  ImageTensor synthesize(const LatentVector& w) const override;
  std::vector<double> synthesis_gradient(const LatentVector& w,
                                         const ImageTensor& cotangent) const override;

  std::vector<double> forward(std::span<const double> input) const override;
  std::vector<double> input_gradient(std::span<const double> input,
                                     std::span<const double> cotangent) const override;

  /// Monte-Carlo estimate of E[m(z)], z ~ N(0, I).
  static std::vector<double> estimate_mean_latent(const BlobGeneratorParams& params,
                                                  std::size_t samples, std::uint64_t seed);

  nlohmann::json to_json() const;
  static BlobGenerator from_json(const nlohmann::json& j);

 private:
  void check_w(const LatentVector& w) const;

  BlobGeneratorParams params_;
};

/// Discriminator stand-in: d(x) = bias - sharpness * ||phi(x) - mu||^2, i.e.
/// a single-prototype classifier around the prior's typical features.
class PrototypeCritic final : public DifferentiableModel {
 public:
  PrototypeCritic(PrototypeClassifier features, double bias);

  std::size_t input_size() const override { return inner_.input_size(); }
  std::size_t output_size() const override { return 1; }
  Shape input_shape() const { return inner_.input_shape(); }
  double bias() const { return bias_; }
  const PrototypeClassifier& inner() const { return inner_; }

  double logit(const ImageTensor& x) const;
  std::vector<double> forward(std::span<const double> input) const override;
  std::vector<double> input_gradient(std::span<const double> input,
                                     std::span<const double> cotangent) const override;

  nlohmann::json to_json() const;
  static PrototypeCritic from_json(const nlohmann::json& j);

 private:
  PrototypeClassifier inner_;
  double bias_;
};

/// Structured-text model files: JSON objects with a "kind" field, explicit
/// shapes and row-major number arrays.
void save_model(const std::filesystem::path& path, const nlohmann::json& model);
nlohmann::json load_model_json(const std::filesystem::path& path);

}  // namespace ppa
