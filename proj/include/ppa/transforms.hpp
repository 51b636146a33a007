#pragma once

// Differentiable image transformations and their sequential composition.
//
// A pipeline application first *realizes* every transform (random draws are
// resolved into concrete crop boxes / flip decisions) and records the result
// in an AppliedPipeline. The recorded trace is what the vector-Jacobian
// product runs backwards over, so randomness is frozen between forward and
// backward of one application.

#include <cstddef>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ppa/rng.hpp"
#include "ppa/tensor.hpp"

namespace ppa::transforms {

struct Size {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Size&, const Size&) = default;
};

struct CropBox {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

// --- single transforms -------------------------------------------------------

/// Offsets are floor((H - h) / 2) and floor((W - w) / 2).
ImageTensor center_crop(const ImageTensor& x, Size size);
CropBox center_crop_box(const Shape& shape, Size size);

ImageTensor crop(const ImageTensor& x, const CropBox& box);
/// Scatters the cotangent of a crop back into an input-shaped zero image.
ImageTensor crop_vjp(const Shape& input, const CropBox& box, const ImageTensor& cotangent);

/// Bilinear resize with half-pixel centers: src = (dst + 0.5) * in / out - 0.5,
/// clamped to the valid index range.
ImageTensor resize_bilinear(const ImageTensor& x, Size size);
ImageTensor resize_bilinear_vjp(const Shape& input, const ImageTensor& cotangent);

ImageTensor hflip(const ImageTensor& x);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Draws a crop box: area uniform in area_range * H * W, aspect ratio
/// (width / height) log-uniform in ratio_range, up to 10 attempts, then the
/// largest centered box whose ratio lies within ratio_range.
CropBox sample_crop_box(const Shape& shape, Range area_range, Range ratio_range, RngStream& rng);

ImageTensor random_resized_crop(const ImageTensor& x, Range area_range, Range ratio_range,
                                Size out_size, RngStream& rng);

// --- specs and pipelines -----------------------------------------------------

struct CenterCropSpec {
  Size size;
  friend bool operator==(const CenterCropSpec&, const CenterCropSpec&) = default;
};
struct ResizeSpec {
  Size size;
  friend bool operator==(const ResizeSpec&, const ResizeSpec&) = default;
};
struct HFlipSpec {
  double probability = 0.5;
  friend bool operator==(const HFlipSpec&, const HFlipSpec&) = default;
};
struct RandomResizedCropSpec {
  Range area{0.5, 0.9};
  Range ratio{0.8, 1.2};
  Size out_size;
  friend bool operator==(const RandomResizedCropSpec&, const RandomResizedCropSpec&) = default;
};

using TransformSpec = std::variant<CenterCropSpec, ResizeSpec, HFlipSpec, RandomResizedCropSpec>;

/// Validates a spec's parameters; throws ContractViolation.
void validate(const TransformSpec& spec);
std::string kind_name(const TransformSpec& spec);
/// True if applying the spec consumes no randomness.
bool is_deterministic(const TransformSpec& spec);

/// A transform with every random choice resolved.
struct CropOp {
  CropBox box;
};
struct ResizeOp {
  Size size;
};
struct FlipOp {};
using RealizedOp = std::variant<CropOp, ResizeOp, FlipOp>;

class AppliedPipeline {
 public:
  const ImageTensor& output() const { return output_; }
  const std::vector<RealizedOp>& ops() const { return ops_; }

  /// Gradient of <cotangent, output> with respect to the pipeline input.
  ImageTensor vjp(const ImageTensor& cotangent) const;

 private:
  friend class TransformPipeline;
  ImageTensor output_;
  std::vector<RealizedOp> ops_;
  std::vector<Shape> input_shapes_;  // input shape of each realized op
};

class TransformPipeline {
 public:
  TransformPipeline() = default;
  explicit TransformPipeline(std::vector<TransformSpec> specs);

  const std::vector<TransformSpec>& specs() const { return specs_; }
  bool empty() const { return specs_.empty(); }
  bool is_deterministic() const;

  /// Copy with every random_resized_crop removed and every flip dropped.
  TransformPipeline without_random() const;

  /// Output shape for a given input shape; throws ContractViolation if some
  /// stage cannot accept its input.
  Shape output_shape(const Shape& input) const;

  /// Applies t_1 ... t_m left to right. `rng` is advanced only by random
  /// stages.
  AppliedPipeline apply(const ImageTensor& x, RngStream& rng) const;
  /// Deterministic pipelines only.
  AppliedPipeline apply(const ImageTensor& x) const;

  friend bool operator==(const TransformPipeline&, const TransformPipeline&) = default;

 private:
  std::vector<TransformSpec> specs_;
};

}  // namespace ppa::transforms
