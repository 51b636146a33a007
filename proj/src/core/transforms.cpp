#include "ppa/transforms.hpp"

#include <algorithm>
#include <cmath>

#include "ppa/kernels.hpp"

namespace ppa::transforms {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

struct AxisWeights {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};

AxisWeights axis_weights(std::size_t in, std::size_t out) {
  AxisWeights w;
  w.lo.resize(out);
  w.hi.resize(out);
  w.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const double max_index = static_cast<double>(in - 1);
  for (std::size_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, max_index);
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    w.lo[d] = i0;
    w.hi[d] = std::min(i0 + 1, in - 1);
    w.frac[d] = s - static_cast<double>(i0);
  }
  return w;
}

void check_size(Size size, const char* what) {
  require(size.height > 0 && size.width > 0, std::string(what) + ": size must be positive");
}

}  // namespace

CropBox center_crop_box(const Shape& shape, Size size) {
  check_size(size, "center_crop");
  require(size.height <= shape.height && size.width <= shape.width,
          "center_crop: crop " + std::to_string(size.height) + "x" + std::to_string(size.width) +
              " larger than image " + to_string(shape));
  return {(shape.height - size.height) / 2, (shape.width - size.width) / 2, size.height,
          size.width};
}

ImageTensor center_crop(const ImageTensor& x, Size size) {
  return crop(x, center_crop_box(x.shape(), size));
}

ImageTensor crop(const ImageTensor& x, const CropBox& box) {
  require(box.height > 0 && box.width > 0 && box.top + box.height <= x.height() &&
              box.left + box.width <= x.width(),
          "crop: box outside image " + to_string(x.shape()));
  const std::size_t c = x.channels();
  ImageTensor out({box.height, box.width, c});
  for (std::size_t r = 0; r < box.height; ++r) {
    const auto src = x.data().subspan(((box.top + r) * x.width() + box.left) * c, box.width * c);
    std::copy(src.begin(), src.end(), out.data().begin() + r * box.width * c);
  }
  return out;
}

ImageTensor crop_vjp(const Shape& input, const CropBox& box, const ImageTensor& cotangent) {
  require(cotangent.shape() == Shape{box.height, box.width, input.channels},
          "crop_vjp: cotangent shape mismatch");
  ImageTensor grad(input);
  const std::size_t c = input.channels;
  for (std::size_t r = 0; r < box.height; ++r) {
    const auto src = cotangent.data().subspan(r * box.width * c, box.width * c);
    std::copy(src.begin(), src.end(),
              grad.data().begin() + ((box.top + r) * input.width + box.left) * c);
  }
  return grad;
}

ImageTensor resize_bilinear(const ImageTensor& x, Size size) {
  check_size(size, "resize_bilinear");
  if (size.height == x.height() && size.width == x.width()) return x;
  const std::size_t c = x.channels();
  const AxisWeights rows = axis_weights(x.height(), size.height);
  const AxisWeights cols = axis_weights(x.width(), size.width);

  // Vertical pass: blend whole source rows.
  const std::size_t row_len = x.width() * c;
  std::vector<double> tmp(size.height * row_len, 0.0);
  for (std::size_t r = 0; r < size.height; ++r) {
    std::span<double> dst(tmp.data() + r * row_len, row_len);
    kernels::axpy(1.0 - rows.frac[r], x.data().subspan(rows.lo[r] * row_len, row_len), dst);
    if (rows.frac[r] != 0.0) {
      kernels::axpy(rows.frac[r], x.data().subspan(rows.hi[r] * row_len, row_len), dst);
    }
  }

  // Horizontal pass.
  ImageTensor out({size.height, size.width, c});
  for (std::size_t r = 0; r < size.height; ++r) {
    const double* src = tmp.data() + r * row_len;
    for (std::size_t j = 0; j < size.width; ++j) {
      const double f = cols.frac[j];
      for (std::size_t ch = 0; ch < c; ++ch) {
        out.at(r, j, ch) = (1.0 - f) * src[cols.lo[j] * c + ch] + f * src[cols.hi[j] * c + ch];
      }
    }
  }
  return out;
}

ImageTensor resize_bilinear_vjp(const Shape& input, const ImageTensor& cotangent) {
  const Size size{cotangent.height(), cotangent.width()};
  require(cotangent.channels() == input.channels, "resize_bilinear_vjp: channel mismatch");
  if (size.height == input.height && size.width == input.width) return cotangent;
  const std::size_t c = input.channels;
  const AxisWeights rows = axis_weights(input.height, size.height);
  const AxisWeights cols = axis_weights(input.width, size.width);

  // Transpose of the horizontal pass.
  const std::size_t row_len = input.width * c;
  std::vector<double> tmp(size.height * row_len, 0.0);
  for (std::size_t r = 0; r < size.height; ++r) {
    double* dst = tmp.data() + r * row_len;
    for (std::size_t j = 0; j < size.width; ++j) {
      const double f = cols.frac[j];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = cotangent.at(r, j, ch);
        dst[cols.lo[j] * c + ch] += (1.0 - f) * g;
        dst[cols.hi[j] * c + ch] += f * g;
      }
    }
  }

  // Transpose of the vertical pass.
  ImageTensor grad(input);
  for (std::size_t r = 0; r < size.height; ++r) {
    std::span<const double> src(tmp.data() + r * row_len, row_len);
    kernels::axpy(1.0 - rows.frac[r], src, grad.data().subspan(rows.lo[r] * row_len, row_len));
    if (rows.frac[r] != 0.0) {
      kernels::axpy(rows.frac[r], src, grad.data().subspan(rows.hi[r] * row_len, row_len));
    }
  }
  return grad;
}

ImageTensor hflip(const ImageTensor& x) {
  ImageTensor out(x.shape());
  const std::size_t w = x.width();
  for (std::size_t r = 0; r < x.height(); ++r) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t ch = 0; ch < x.channels(); ++ch) out.at(r, j, ch) = x.at(r, w - 1 - j, ch);
    }
  }
  return out;
}

CropBox sample_crop_box(const Shape& shape, Range area_range, Range ratio_range, RngStream& rng) {
  require(area_range.lo > 0.0 && area_range.lo <= area_range.hi && area_range.hi <= 1.0,
          "random_resized_crop: area range must satisfy 0 < lo <= hi <= 1");
  require(ratio_range.lo > 0.0 && ratio_range.lo <= ratio_range.hi,
          "random_resized_crop: ratio range must satisfy 0 < lo <= hi");
  const double height = static_cast<double>(shape.height);
  const double width = static_cast<double>(shape.width);
  const double area = height * width;
  const double log_lo = std::log(ratio_range.lo);
  const double log_hi = std::log(ratio_range.hi);

  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target_area = area * rng.uniform(area_range.lo, area_range.hi);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const double w = std::round(std::sqrt(target_area * aspect));
    const double h = std::round(std::sqrt(target_area / aspect));
    if (w > 0.0 && w <= width && h > 0.0 && h <= height) {
      const auto hh = static_cast<std::size_t>(h);
      const auto ww = static_cast<std::size_t>(w);
      const auto top = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(shape.height - hh)));
      const auto left = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(shape.width - ww)));
      return {top, left, hh, ww};
    }
  }

  // Fallback: largest centered box with an admissible aspect ratio.
  const double in_ratio = width / height;
  double w = width;
  double h = height;
  if (in_ratio < ratio_range.lo) {
    h = std::round(w / ratio_range.lo);
  } else if (in_ratio > ratio_range.hi) {
    w = std::round(h * ratio_range.hi);
  }
  require(h >= 1.0 && w >= 1.0 && h <= height && w <= width,
          "random_resized_crop: no feasible crop for image " + to_string(shape));
  const auto hh = static_cast<std::size_t>(h);
  const auto ww = static_cast<std::size_t>(w);
  return {(shape.height - hh) / 2, (shape.width - ww) / 2, hh, ww};
}

ImageTensor random_resized_crop(const ImageTensor& x, Range area_range, Range ratio_range,
                                Size out_size, RngStream& rng) {
  check_size(out_size, "random_resized_crop");
  return resize_bilinear(crop(x, sample_crop_box(x.shape(), area_range, ratio_range, rng)),
                         out_size);
}

// --- pipeline ------------------------------------------------------------------

void validate(const TransformSpec& spec) {
  std::visit(Overloaded{
                 [](const CenterCropSpec& s) { check_size(s.size, "center_crop"); },
                 [](const ResizeSpec& s) { check_size(s.size, "resize"); },
                 [](const HFlipSpec& s) {
                   require(s.probability >= 0.0 && s.probability <= 1.0,
                           "hflip: probability must lie in [0, 1]");
                 },
                 [](const RandomResizedCropSpec& s) {
                   check_size(s.out_size, "random_resized_crop");
                   require(s.area.lo > 0.0 && s.area.lo <= s.area.hi && s.area.hi <= 1.0,
                           "random_resized_crop: area range must satisfy 0 < lo <= hi <= 1");
                   require(s.ratio.lo > 0.0 && s.ratio.lo <= s.ratio.hi,
                           "random_resized_crop: ratio range must satisfy 0 < lo <= hi");
                 },
             },
             spec);
}

std::string kind_name(const TransformSpec& spec) {
  return std::visit(Overloaded{
                        [](const CenterCropSpec&) { return std::string("center_crop"); },
                        [](const ResizeSpec&) { return std::string("resize"); },
                        [](const HFlipSpec&) { return std::string("hflip"); },
                        [](const RandomResizedCropSpec&) {
                          return std::string("random_resized_crop");
                        },
                    },
                    spec);
}

bool is_deterministic(const TransformSpec& spec) {
  if (std::holds_alternative<RandomResizedCropSpec>(spec)) return false;
  if (const auto* flip = std::get_if<HFlipSpec>(&spec)) {
    return flip->probability == 0.0 || flip->probability == 1.0;
  }
  return true;
}

TransformPipeline::TransformPipeline(std::vector<TransformSpec> specs) : specs_(std::move(specs)) {
  for (const auto& spec : specs_) validate(spec);
}

bool TransformPipeline::is_deterministic() const {
  return std::all_of(specs_.begin(), specs_.end(),
                     [](const TransformSpec& s) { return transforms::is_deterministic(s); });
}

TransformPipeline TransformPipeline::without_random() const {
  std::vector<TransformSpec> kept;
  for (const auto& spec : specs_) {
    if (std::holds_alternative<RandomResizedCropSpec>(spec)) continue;
    if (std::holds_alternative<HFlipSpec>(spec)) continue;
    kept.push_back(spec);
  }
  return TransformPipeline(std::move(kept));
}

Shape TransformPipeline::output_shape(const Shape& input) const {
  Shape shape = input;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    std::visit(Overloaded{
                   [&](const CenterCropSpec& s) {
                     require(s.size.height <= shape.height && s.size.width <= shape.width,
                             "pipeline stage " + std::to_string(i) + " (center_crop): input " +
                                 to_string(shape) + " smaller than crop");
                     shape = {s.size.height, s.size.width, shape.channels};
                   },
                   [&](const ResizeSpec& s) { shape = {s.size.height, s.size.width, shape.channels}; },
                   [&](const HFlipSpec&) {},
                   [&](const RandomResizedCropSpec& s) {
                     shape = {s.out_size.height, s.out_size.width, shape.channels};
                   },
               },
               specs_[i]);
  }
  return shape;
}

AppliedPipeline TransformPipeline::apply(const ImageTensor& x, RngStream& rng) const {
  output_shape(x.shape());
  AppliedPipeline applied;
  ImageTensor current = x;
  auto push = [&](RealizedOp op, ImageTensor next) {
    applied.input_shapes_.push_back(current.shape());
    applied.ops_.push_back(op);
    current = std::move(next);
  };
  for (const auto& spec : specs_) {
    std::visit(Overloaded{
                   [&](const CenterCropSpec& s) {
                     const CropBox box = center_crop_box(current.shape(), s.size);
                     push(CropOp{box}, crop(current, box));
                   },
                   [&](const ResizeSpec& s) {
                     push(ResizeOp{s.size}, resize_bilinear(current, s.size));
                   },
                   [&](const HFlipSpec& s) {
                     const bool flip = s.probability >= 1.0 ||
                                       (s.probability > 0.0 && rng.uniform() < s.probability);
                     if (flip) push(FlipOp{}, hflip(current));
                   },
                   [&](const RandomResizedCropSpec& s) {
                     const CropBox box = sample_crop_box(current.shape(), s.area, s.ratio, rng);
                     push(CropOp{box}, crop(current, box));
                     push(ResizeOp{s.out_size}, resize_bilinear(current, s.out_size));
                   },
               },
               spec);
  }
  applied.output_ = std::move(current);
  return applied;
}

AppliedPipeline TransformPipeline::apply(const ImageTensor& x) const {
  require(is_deterministic(), "pipeline contains random transforms; an rng stream is required");
  RngStream unused(0, 0);
  return apply(x, unused);
}

ImageTensor AppliedPipeline::vjp(const ImageTensor& cotangent) const {
  require(cotangent.shape() == output_.shape(), "pipeline vjp: cotangent shape " +
                                                    to_string(cotangent.shape()) + " != output " +
                                                    to_string(output_.shape()));
  ImageTensor grad = cotangent;
  for (std::size_t i = ops_.size(); i-- > 0;) {
    const Shape& input = input_shapes_[i];
    grad = std::visit(Overloaded{
                          [&](const CropOp& op) { return crop_vjp(input, op.box, grad); },
                          [&](const ResizeOp&) { return resize_bilinear_vjp(input, grad); },
                          [&](const FlipOp&) { return hflip(grad); },
                      },
                      ops_[i]);
  }
  return grad;
}

}  // namespace ppa::transforms
