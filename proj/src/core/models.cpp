#include "ppa/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ppa/kernels.hpp"
#include "ppa/losses.hpp"
#include "ppa/rng.hpp"

namespace ppa {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

nlohmann::json matrix_json(std::size_t rows, std::size_t cols, const std::vector<double>& data) {
  return {{"shape", {rows, cols}}, {"data", data}};
}

std::vector<double> matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                                     const char* field) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  require(shape.size() == 2 && shape[0] == rows && shape[1] == cols,
          std::string("model file: field '") + field + "' has unexpected shape");
  auto data = j.at("data").get<std::vector<double>>();
  require(data.size() == rows * cols,
          std::string("model file: field '") + field + "' data length does not match shape");
  return data;
}

Shape shape_from_json(const nlohmann::json& j) {
  const auto dims = j.get<std::vector<std::size_t>>();
  require(dims.size() == 3, "model file: image shape needs three entries");
  return {dims[0], dims[1], dims[2]};
}

nlohmann::json shape_json(const Shape& s) { return {s.height, s.width, s.channels}; }

void check_kind(const nlohmann::json& j, const char* kind) {
  require(j.at("kind").get<std::string>() == kind,
          std::string("model file: expected kind '") + kind + "'");
}

}  // namespace

// --- DifferentiableModel -------------------------------------------------------

void DifferentiableModel::check_input(std::span<const double> input) const {
  require(input.size() == input_size(), "model input has " + std::to_string(input.size()) +
                                            " entries, expected " +
                                            std::to_string(input_size()));
}

void DifferentiableModel::check_cotangent(std::span<const double> cotangent) const {
  require(cotangent.size() == output_size(), "cotangent has " + std::to_string(cotangent.size()) +
                                                 " entries, model output has " +
                                                 std::to_string(output_size()));
}

// --- LinearModel ---------------------------------------------------------------

LinearModel::LinearModel(std::size_t rows, std::size_t cols, std::vector<double> matrix,
                         std::vector<double> bias)
    : rows_(rows), cols_(cols), matrix_(std::move(matrix)), bias_(std::move(bias)) {
  require(matrix_.size() == rows_ * cols_, "LinearModel: matrix size mismatch");
  require(bias_.size() == rows_, "LinearModel: bias size mismatch");
}

std::vector<double> LinearModel::forward(std::span<const double> input) const {
  check_input(input);
  std::vector<double> out(rows_);
  kernels::gemv(matrix_, rows_, input, out);
  for (std::size_t r = 0; r < rows_; ++r) out[r] += bias_[r];
  return out;
}

std::vector<double> LinearModel::input_gradient(std::span<const double> input,
                                                std::span<const double> cotangent) const {
  check_input(input);
  check_cotangent(cotangent);
  std::vector<double> grad(cols_);
  kernels::gemv_transposed(matrix_, rows_, cotangent, grad);
  return grad;
}

// --- Classifier ----------------------------------------------------------------

Classification Classifier::classify(const ImageTensor& x) const {
  Classification out;
  out.logits = logits(x);
  out.scores = losses::softmax(out.logits);
  out.predicted = static_cast<std::size_t>(
      std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin());
  return out;
}

std::vector<double> Classifier::logits(const ImageTensor& x) const {
  require(x.shape() == input_shape(), "classifier expects " + to_string(input_shape()) +
                                          " images, got " + to_string(x.shape()));
  return forward(x.data());
}

ImageTensor Classifier::logit_gradient(const ImageTensor& x,
                                       std::span<const double> cotangent) const {
  require(x.shape() == input_shape(), "classifier expects " + to_string(input_shape()) +
                                          " images, got " + to_string(x.shape()));
  return ImageTensor(x.shape(), input_gradient(x.data(), cotangent));
}

// --- PrototypeClassifier -------------------------------------------------------

PrototypeClassifier::PrototypeClassifier(Shape input_shape, std::size_t feature_dim,
                                         std::vector<double> projection,
                                         std::vector<double> feature_bias,
                                         std::vector<double> prototypes, double sharpness)
    : input_shape_(input_shape),
      feature_dim_(feature_dim),
      projection_(std::move(projection)),
      feature_bias_(std::move(feature_bias)),
      prototypes_(std::move(prototypes)),
      sharpness_(sharpness) {
  require(input_shape_.size() > 0, "PrototypeClassifier: empty input shape");
  require(feature_dim_ > 0, "PrototypeClassifier: feature_dim must be positive");
  require(projection_.size() == feature_dim_ * input_shape_.size(),
          "PrototypeClassifier: projection must be feature_dim x input size");
  require(feature_bias_.size() == feature_dim_, "PrototypeClassifier: bias size mismatch");
  require(!prototypes_.empty() && prototypes_.size() % feature_dim_ == 0,
          "PrototypeClassifier: prototypes must be classes x feature_dim");
  require(sharpness_ > 0.0, "PrototypeClassifier: sharpness must be positive");
}

std::span<const double> PrototypeClassifier::prototype(std::size_t c) const {
  require(c < output_size(), "prototype index out of range");
  return std::span<const double>(prototypes_).subspan(c * feature_dim_, feature_dim_);
}

std::vector<double> PrototypeClassifier::feature_map(std::span<const double> image) const {
  check_input(image);
  std::vector<double> f(feature_dim_);
  kernels::gemv(projection_, feature_dim_, image, f);
  for (std::size_t i = 0; i < feature_dim_; ++i) f[i] = std::tanh(f[i] + feature_bias_[i]);
  return f;
}

std::vector<double> PrototypeClassifier::features(const ImageTensor& x) const {
  require(x.shape() == input_shape_, "classifier expects " + to_string(input_shape_) +
                                         " images, got " + to_string(x.shape()));
  return feature_map(x.data());
}

std::vector<double> PrototypeClassifier::logits_from_features(
    std::span<const double> features) const {
  require(features.size() == feature_dim_, "feature vector dimension mismatch");
  const std::size_t classes = output_size();
  std::vector<double> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    out[c] = -sharpness_ * kernels::squared_distance(features, prototype(c));
  }
  return out;
}

std::vector<double> PrototypeClassifier::feature_gradient(std::span<const double> features,
                                                          std::span<const double> cotangent) const {
  require(features.size() == feature_dim_, "feature vector dimension mismatch");
  check_cotangent(cotangent);
  // d o_c / d f = -2 sharpness (f - mu_c)
  double total = 0.0;
  for (double g : cotangent) total += g;
  std::vector<double> grad(feature_dim_);
  for (std::size_t i = 0; i < feature_dim_; ++i) grad[i] = total * features[i];
  for (std::size_t c = 0; c < cotangent.size(); ++c) {
    if (cotangent[c] != 0.0) kernels::axpy(-cotangent[c], prototype(c), grad);
  }
  for (double& g : grad) g *= -2.0 * sharpness_;
  return grad;
}

std::vector<double> PrototypeClassifier::forward(std::span<const double> input) const {
  return logits_from_features(feature_map(input));
}

std::vector<double> PrototypeClassifier::input_gradient(std::span<const double> input,
                                                        std::span<const double> cotangent) const {
  const std::vector<double> f = feature_map(input);
  std::vector<double> pre_grad = feature_gradient(f, cotangent);
  for (std::size_t i = 0; i < feature_dim_; ++i) pre_grad[i] *= 1.0 - f[i] * f[i];
  std::vector<double> grad(input.size());
  kernels::gemv_transposed(projection_, feature_dim_, pre_grad, grad);
  return grad;
}

PrototypeClassifier PrototypeClassifier::with_class_means(
    const std::vector<std::vector<ImageTensor>>& images_by_class) const {
  require(!images_by_class.empty(), "with_class_means: no classes");
  std::vector<double> means(images_by_class.size() * feature_dim_, 0.0);
  for (std::size_t c = 0; c < images_by_class.size(); ++c) {
    const auto& images = images_by_class[c];
    require(!images.empty(), "with_class_means: class " + std::to_string(c) + " has no images");
    std::span<double> mean(means.data() + c * feature_dim_, feature_dim_);
    for (const auto& x : images) kernels::axpy(1.0 / images.size(), features(x), mean);
  }
  return PrototypeClassifier(input_shape_, feature_dim_, projection_, feature_bias_,
                             std::move(means), sharpness_);
}

nlohmann::json PrototypeClassifier::to_json() const {
  return {{"kind", "prototype_classifier"},
          {"input_shape", shape_json(input_shape_)},
          {"feature_dim", feature_dim_},
          {"projection", matrix_json(feature_dim_, input_shape_.size(), projection_)},
          {"feature_bias", feature_bias_},
          {"prototypes", matrix_json(output_size(), feature_dim_, prototypes_)},
          {"sharpness", sharpness_}};
}

PrototypeClassifier PrototypeClassifier::from_json(const nlohmann::json& j) {
  check_kind(j, "prototype_classifier");
  const Shape shape = shape_from_json(j.at("input_shape"));
  const auto feature_dim = j.at("feature_dim").get<std::size_t>();
  const auto classes = j.at("prototypes").at("shape").at(0).get<std::size_t>();
  return PrototypeClassifier(
      shape, feature_dim, matrix_from_json(j.at("projection"), feature_dim, shape.size(), "projection"),
      j.at("feature_bias").get<std::vector<double>>(),
      matrix_from_json(j.at("prototypes"), classes, feature_dim, "prototypes"),
      j.at("sharpness").get<double>());
}

// --- rendering -----------------------------------------------------------------

ImageTensor render_scene(const BlobScene& scene, Shape shape, const ViewWindow& window) {
  const std::size_t channels = shape.channels;
  require(scene.background.size() == channels, "render_scene: background channel mismatch");
  for (const Blob& b : scene.blobs) {
    require(b.amplitude.size() == channels, "render_scene: blob amplitude channel mismatch");
    require(b.scale > 0.0, "render_scene: blob scale must be positive");
  }
  ImageTensor out(shape);
  std::vector<double> pre(channels);
  for (std::size_t i = 0; i < shape.height; ++i) {
    const double y = window.top + (static_cast<double>(i) + 0.5) / shape.height * window.height;
    for (std::size_t j = 0; j < shape.width; ++j) {
      const double x = window.left + (static_cast<double>(j) + 0.5) / shape.width * window.width;
      std::copy(scene.background.begin(), scene.background.end(), pre.begin());
      for (const Blob& b : scene.blobs) {
        const double dx = x - b.center_x;
        const double dy = y - b.center_y;
        const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * b.scale * b.scale));
        for (std::size_t ch = 0; ch < channels; ++ch) pre[ch] += b.amplitude[ch] * e;
      }
      for (std::size_t ch = 0; ch < channels; ++ch) out.at(i, j, ch) = std::tanh(pre[ch]);
    }
  }
  return out;
}

// --- BlobGenerator -------------------------------------------------------------

BlobGenerator::BlobGenerator(BlobGeneratorParams params) : params_(std::move(params)) {
  const std::size_t w_dim = params_.w_dim();
  const std::size_t channels = params_.image_shape.channels;
  require(params_.z_dim > 0, "BlobGenerator: z_dim must be positive");
  require(params_.num_blobs > 0, "BlobGenerator: need at least one blob");
  require(params_.image_shape.size() > 0, "BlobGenerator: empty image shape");
  require(params_.mapping_matrix.size() == w_dim * params_.z_dim,
          "BlobGenerator: mapping matrix must be w_dim x z_dim");
  require(params_.mapping_bias.size() == w_dim, "BlobGenerator: mapping bias size mismatch");
  if (params_.mean_latent.empty()) params_.mean_latent.assign(w_dim, 0.0);
  require(params_.mean_latent.size() == w_dim, "BlobGenerator: mean latent size mismatch");
  if (params_.background_offset.empty()) params_.background_offset.assign(channels, 0.0);
  require(params_.background_offset.size() == channels,
          "BlobGenerator: background offset channel mismatch");
  require(params_.scale_min > 0.0 && params_.scale_min < params_.scale_max,
          "BlobGenerator: need 0 < scale_min < scale_max");
}

LatentVector BlobGenerator::mapping(const LatentVector& z) const {
  require(z.space == LatentSpace::input, "mapping expects an input-space latent");
  require(z.size() == params_.z_dim, "mapping: latent has dimension " + std::to_string(z.size()) +
                                         ", generator expects " + std::to_string(params_.z_dim));
  LatentVector w{std::vector<double>(w_dim()), LatentSpace::intermediate};
  kernels::gemv(params_.mapping_matrix, w_dim(), z.values, w.values);
  for (std::size_t i = 0; i < w_dim(); ++i) {
    w.values[i] = params_.mapping_gain * std::tanh(w.values[i] + params_.mapping_bias[i]);
  }
  return w;
}

LatentVector BlobGenerator::map_latent(const LatentVector& z, double truncation_psi,
                                       int cutoff) const {
  require(truncation_psi >= 0.0 && truncation_psi <= 1.0, "truncation psi must lie in [0, 1]");
  require(cutoff >= 0, "truncation cutoff must be non-negative");
  LatentVector w = mapping(z);
  for (std::size_t i = 0; i < w_dim(); ++i) {
    w.values[i] = std::lerp(params_.mean_latent[i], w.values[i], truncation_psi);
  }
  return w;
}

void BlobGenerator::check_w(const LatentVector& w) const {
  require(w.space == LatentSpace::intermediate, "synthesis expects an intermediate latent");
  require(w.size() == w_dim(), "synthesis: latent has dimension " + std::to_string(w.size()) +
                                   ", generator expects " + std::to_string(w_dim()));
}

BlobScene BlobGenerator::scene(const LatentVector& w) const {
  check_w(w);
  const std::size_t channels = params_.image_shape.channels;
  const std::size_t stride = 3 + channels;
  BlobScene s;
  s.blobs.resize(params_.num_blobs);
  for (std::size_t k = 0; k < params_.num_blobs; ++k) {
    const double* p = w.values.data() + k * stride;
    Blob& b = s.blobs[k];
    b.center_x = sigmoid(params_.center_gain * p[0]);
    b.center_y = sigmoid(params_.center_gain * p[1]);
    b.scale = params_.scale_min +
              (params_.scale_max - params_.scale_min) * sigmoid(params_.scale_gain * p[2]);
    b.amplitude.resize(channels);
    for (std::size_t ch = 0; ch < channels; ++ch) b.amplitude[ch] = params_.amplitude_gain * p[3 + ch];
  }
  const double* bg = w.values.data() + params_.num_blobs * stride;
  s.background.resize(channels);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    s.background[ch] = params_.background_offset[ch] + params_.background_gain * bg[ch];
  }
  return s;
}

ImageTensor BlobGenerator::synthesize(const LatentVector& w) const {
  return render_scene(scene(w), params_.image_shape);
}

std::vector<double> BlobGenerator::synthesis_gradient(const LatentVector& w,
                                                      const ImageTensor& cotangent) const {
  const Shape shape = params_.image_shape;
  require(cotangent.shape() == shape, "synthesis_gradient: cotangent shape " +
                                          to_string(cotangent.shape()) + " != " + to_string(shape));
  const BlobScene s = scene(w);
  const ImageTensor image = render_scene(s, shape);
  const std::size_t channels = shape.channels;
  const std::size_t blobs = s.blobs.size();

  // Gradients with respect to the scene parameters.
  std::vector<double> d_cx(blobs, 0.0), d_cy(blobs, 0.0), d_scale(blobs, 0.0);
  std::vector<double> d_amp(blobs * channels, 0.0), d_bg(channels, 0.0);
  std::vector<double> d_pre(channels);
  for (std::size_t i = 0; i < shape.height; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / shape.height;
    for (std::size_t j = 0; j < shape.width; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / shape.width;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const double v = image.at(i, j, ch);
        d_pre[ch] = cotangent.at(i, j, ch) * (1.0 - v * v);
        d_bg[ch] += d_pre[ch];
      }
      for (std::size_t k = 0; k < blobs; ++k) {
        const Blob& b = s.blobs[k];
        const double dx = x - b.center_x;
        const double dy = y - b.center_y;
        const double inv_var = 1.0 / (b.scale * b.scale);
        const double e = std::exp(-0.5 * (dx * dx + dy * dy) * inv_var);
        double weighted = 0.0;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          d_amp[k * channels + ch] += d_pre[ch] * e;
          weighted += d_pre[ch] * b.amplitude[ch];
        }
        weighted *= e;
        d_cx[k] += weighted * dx * inv_var;
        d_cy[k] += weighted * dy * inv_var;
        d_scale[k] += weighted * (dx * dx + dy * dy) * inv_var / b.scale;
      }
    }
  }

  // Chain to the latent.
  std::vector<double> grad(w_dim(), 0.0);
  const std::size_t stride = 3 + channels;
  for (std::size_t k = 0; k < blobs; ++k) {
    const double* p = w.values.data() + k * stride;
    double* g = grad.data() + k * stride;
    const Blob& b = s.blobs[k];
    g[0] = d_cx[k] * params_.center_gain * b.center_x * (1.0 - b.center_x);
    g[1] = d_cy[k] * params_.center_gain * b.center_y * (1.0 - b.center_y);
    const double sig = sigmoid(params_.scale_gain * p[2]);
    g[2] = d_scale[k] * (params_.scale_max - params_.scale_min) * params_.scale_gain * sig *
           (1.0 - sig);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      g[3 + ch] = d_amp[k * channels + ch] * params_.amplitude_gain;
    }
  }
  for (std::size_t ch = 0; ch < channels; ++ch) {
    grad[blobs * stride + ch] = d_bg[ch] * params_.background_gain;
  }
  return grad;
}

std::vector<double> BlobGenerator::forward(std::span<const double> input) const {
  check_input(input);
  return synthesize({std::vector<double>(input.begin(), input.end()), LatentSpace::intermediate})
      .values();
}

std::vector<double> BlobGenerator::input_gradient(std::span<const double> input,
                                                  std::span<const double> cotangent) const {
  check_input(input);
  check_cotangent(cotangent);
  return synthesis_gradient(
      {std::vector<double>(input.begin(), input.end()), LatentSpace::intermediate},
      ImageTensor(params_.image_shape, std::vector<double>(cotangent.begin(), cotangent.end())));
}

std::vector<double> BlobGenerator::estimate_mean_latent(const BlobGeneratorParams& params,
                                                        std::size_t samples, std::uint64_t seed) {
  BlobGeneratorParams untruncated = params;
  untruncated.mean_latent.clear();
  const BlobGenerator gen(untruncated);
  RngStream rng(seed, hash_tag("mean_latent"));
  std::vector<double> mean(gen.w_dim(), 0.0);
  for (std::size_t n = 0; n < samples; ++n) {
    LatentVector z{std::vector<double>(gen.z_dim()), LatentSpace::input};
    for (double& v : z.values) v = rng.normal();
    kernels::axpy(1.0 / static_cast<double>(samples), gen.mapping(z).values, mean);
  }
  return mean;
}

nlohmann::json BlobGenerator::to_json() const {
  const auto& p = params_;
  return {{"kind", "blob_generator"},
          {"z_dim", p.z_dim},
          {"num_blobs", p.num_blobs},
          {"image_shape", shape_json(p.image_shape)},
          {"mapping_matrix", matrix_json(p.w_dim(), p.z_dim, p.mapping_matrix)},
          {"mapping_bias", p.mapping_bias},
          {"mapping_gain", p.mapping_gain},
          {"mean_latent", p.mean_latent},
          {"center_gain", p.center_gain},
          {"scale_min", p.scale_min},
          {"scale_max", p.scale_max},
          {"scale_gain", p.scale_gain},
          {"amplitude_gain", p.amplitude_gain},
          {"background_gain", p.background_gain},
          {"background_offset", p.background_offset}};
}

BlobGenerator BlobGenerator::from_json(const nlohmann::json& j) {
  check_kind(j, "blob_generator");
  BlobGeneratorParams p;
  p.z_dim = j.at("z_dim").get<std::size_t>();
  p.num_blobs = j.at("num_blobs").get<std::size_t>();
  p.image_shape = shape_from_json(j.at("image_shape"));
  p.mapping_matrix = matrix_from_json(j.at("mapping_matrix"), p.w_dim(), p.z_dim, "mapping_matrix");
  p.mapping_bias = j.at("mapping_bias").get<std::vector<double>>();
  p.mapping_gain = j.at("mapping_gain").get<double>();
  p.mean_latent = j.at("mean_latent").get<std::vector<double>>();
  p.center_gain = j.at("center_gain").get<double>();
  p.scale_min = j.at("scale_min").get<double>();
  p.scale_max = j.at("scale_max").get<double>();
  p.scale_gain = j.at("scale_gain").get<double>();
  p.amplitude_gain = j.at("amplitude_gain").get<double>();
  p.background_gain = j.at("background_gain").get<double>();
  p.background_offset = j.at("background_offset").get<std::vector<double>>();
  return BlobGenerator(std::move(p));
}

// --- PrototypeCritic -----------------------------------------------------------

PrototypeCritic::PrototypeCritic(PrototypeClassifier features, double bias)
    : inner_(std::move(features)), bias_(bias) {
  require(inner_.num_classes() == 1, "PrototypeCritic: needs exactly one prototype");
}

double PrototypeCritic::logit(const ImageTensor& x) const { return bias_ + inner_.logits(x)[0]; }

std::vector<double> PrototypeCritic::forward(std::span<const double> input) const {
  return {bias_ + inner_.forward(input)[0]};
}

std::vector<double> PrototypeCritic::input_gradient(std::span<const double> input,
                                                    std::span<const double> cotangent) const {
  return inner_.input_gradient(input, cotangent);
}

nlohmann::json PrototypeCritic::to_json() const {
  return {{"kind", "prototype_critic"}, {"bias", bias_}, {"features", inner_.to_json()}};
}

PrototypeCritic PrototypeCritic::from_json(const nlohmann::json& j) {
  check_kind(j, "prototype_critic");
  return PrototypeCritic(PrototypeClassifier::from_json(j.at("features")),
                         j.at("bias").get<double>());
}

// --- files ---------------------------------------------------------------------

void save_model(const std::filesystem::path& path, const nlohmann::json& model) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open model file for writing: " + path.string());
  out << model.dump(1) << '\n';
}

nlohmann::json load_model_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open model file: " + path.string());
  return nlohmann::json::parse(in);
}

}  // namespace ppa
