#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ppa/transforms.hpp"
#include "support/common.hpp"

using namespace ppa;
using namespace ppa::transforms;
using testing::numeric_gradient;
using testing::relative_error;

namespace {

double inner(const ImageTensor& a, const ImageTensor& b) {
  return std::inner_product(a.values().begin(), a.values().end(), b.values().begin(), 0.0);
}

/// Relative error of the pipeline vjp against central differences with the
/// random draws frozen by copying the stream.
double pipeline_gradient_error(const TransformPipeline& p, const ImageTensor& x, RngStream rng,
                               RngStream& cot_rng) {
  RngStream first = rng;
  const AppliedPipeline applied = p.apply(x, first);
  const ImageTensor cot = testing::random_image(applied.output().shape(), cot_rng, -1.0, 1.0);
  const auto f = [&](const std::vector<double>& v) {
    RngStream frozen = rng;
    return inner(p.apply(ImageTensor(x.shape(), v), frozen).output(), cot);
  };
  const ImageTensor analytic = applied.vjp(cot);
  return relative_error(analytic.values(), numeric_gradient(f, x.values(), 1e-4));
}

}  // namespace

TEST_CASE("center crop offsets follow floor((H - h) / 2)") {
  const Shape six{6, 6, 1};
  CHECK(center_crop_box(six, {6, 6}) == CropBox{0, 0, 6, 6});
  CHECK(center_crop_box(six, {4, 4}) == CropBox{1, 1, 4, 4});
  CHECK(center_crop_box({5, 5, 1}, {4, 4}) == CropBox{0, 0, 4, 4});
  CHECK(center_crop_box({7, 9, 3}, {2, 4}) == CropBox{2, 2, 2, 4});
  RngStream rng(3, 1);
  const ImageTensor x = testing::random_image({6, 6, 2}, rng);
  CHECK(center_crop(x, {6, 6}) == x);
  const ImageTensor c = center_crop(x, {4, 4});
  CHECK(c.at(0, 0, 1) == x.at(1, 1, 1));
  CHECK(c.at(3, 3, 0) == x.at(4, 4, 0));
  CHECK_THROWS_AS(center_crop(x, {7, 4}), ContractViolation);
  CHECK_THROWS_AS(center_crop(x, {0, 4}), ContractViolation);
}

TEST_CASE("bilinear resize: identity, constants and the 2x2 -> 1x1 mean") {
  RngStream rng(3, 2);
  const ImageTensor x = testing::random_image({5, 7, 3}, rng);
  const ImageTensor same = resize_bilinear(x, {5, 7});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(same.values()[i] - x.values()[i]) < 1e-9);
  for (Size s : {Size{1, 1}, Size{3, 11}, Size{13, 4}, Size{10, 14}}) {
    const ImageTensor r = resize_bilinear(ImageTensor({5, 7, 3}, 0.3), s);
    for (double v : r.values()) CHECK(std::abs(v - 0.3) < 1e-9);
  }
  const ImageTensor q({2, 2, 1}, {0.1, -0.7, 0.4, 0.9});
  // Half-pixel centers: the single output pixel samples source (0.5, 0.5).
  CHECK(resize_bilinear(q, {1, 1}).values()[0] == doctest::Approx((0.1 - 0.7 + 0.4 + 0.9) / 4.0).epsilon(1e-15));
}

TEST_CASE("bilinear resize matches a direct evaluation of the coordinate convention") {
  RngStream rng(3, 3);
  const ImageTensor x = testing::random_image({6, 5, 2}, rng);
  const Size out{9, 3};
  const ImageTensor r = resize_bilinear(x, out);
  auto src = [](std::size_t d, std::size_t in, std::size_t o) {
    return std::clamp((d + 0.5) * static_cast<double>(in) / static_cast<double>(o) - 0.5, 0.0,
                      static_cast<double>(in - 1));
  };
  for (std::size_t i = 0; i < out.height; ++i) {
    for (std::size_t j = 0; j < out.width; ++j) {
      const double sy = src(i, 6, 9), sx = src(j, 5, 3);
      const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
      const std::size_t y1 = std::min<std::size_t>(y0 + 1, 5), x1 = std::min<std::size_t>(x0 + 1, 4);
      const double fy = sy - y0, fx = sx - x0;
      for (std::size_t ch = 0; ch < 2; ++ch) {
        const double v = (1 - fy) * ((1 - fx) * x.at(y0, x0, ch) + fx * x.at(y0, x1, ch)) +
                         fy * ((1 - fx) * x.at(y1, x0, ch) + fx * x.at(y1, x1, ch));
        CHECK(r.at(i, j, ch) == doctest::Approx(v).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("hflip is an involution and its own transpose") {
  const ImageTensor ab({1, 2, 1}, {0.25, -0.5});
  CHECK(hflip(ab) == ImageTensor({1, 2, 1}, {-0.5, 0.25}));
  RngStream rng(3, 4);
  const ImageTensor x = testing::random_image({4, 5, 3}, rng);
  CHECK(hflip(hflip(x)) == x);
  const ImageTensor cot = testing::random_image({4, 5, 3}, rng);
  CHECK(inner(hflip(x), cot) == doctest::Approx(inner(x, hflip(cot))).epsilon(1e-14));
  TransformPipeline always({HFlipSpec{1.0}});
  CHECK(always.apply(x).vjp(cot) == hflip(cot));
}

TEST_CASE("random resized crop: degenerate ranges and determinism") {
  RngStream rng(3, 5);
  const ImageTensor x = testing::random_image({8, 8, 3}, rng);
  RngStream a(9, 1);
  CHECK(sample_crop_box(x.shape(), {1.0, 1.0}, {1.0, 1.0}, a) == CropBox{0, 0, 8, 8});
  RngStream b(9, 1);
  CHECK(random_resized_crop(x, {1.0, 1.0}, {1.0, 1.0}, {5, 5}, b) == resize_bilinear(x, {5, 5}));
  RngStream c1(9, 2), c2(9, 2);
  CHECK(random_resized_crop(x, {0.3, 0.9}, {0.7, 1.3}, {6, 6}, c1) ==
        random_resized_crop(x, {0.3, 0.9}, {0.7, 1.3}, {6, 6}, c2));
  CHECK_THROWS_AS(sample_crop_box(x.shape(), {0.0, 0.5}, {1, 1}, a), ContractViolation);
  CHECK_THROWS_AS(sample_crop_box(x.shape(), {0.6, 0.5}, {1, 1}, a), ContractViolation);
  CHECK_THROWS_AS(sample_crop_box(x.shape(), {0.5, 0.6}, {1.2, 1.1}, a), ContractViolation);
}

TEST_CASE("random resized crop area fraction averages 0.7 over [0.5, 0.9]") {
  const Shape shape{120, 120, 1};
  RngStream rng(3, 6);
  double total = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const CropBox box = sample_crop_box(shape, {0.5, 0.9}, {0.8, 1.2}, rng);
    total += static_cast<double>(box.height * box.width) / (120.0 * 120.0);
  }
  const double mean = total / n;
  CHECK(mean >= 0.68);
  CHECK(mean <= 0.72);
}

TEST_CASE("distinct stream ids give distinct crop draws") {
  const Shape shape{16, 16, 1};
  int differing = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    RngStream a(42, derive_stream_id(0, 2 * t, "select"));
    RngStream b(42, derive_stream_id(0, 2 * t + 1, "select"));
    differing += !(sample_crop_box(shape, {0.5, 0.9}, {0.8, 1.2}, a) ==
                   sample_crop_box(shape, {0.5, 0.9}, {0.8, 1.2}, b));
  }
  CHECK(differing >= 99);
}

TEST_CASE("pipelines: identity, shapes, determinism and associativity") {
  RngStream rng(3, 7);
  const ImageTensor x6 = testing::random_image({6, 6, 3}, rng);
  CHECK(TransformPipeline{}.apply(x6).output() == x6);
  const TransformPipeline p({CenterCropSpec{{4, 4}}, ResizeSpec{{8, 8}}});
  CHECK(p.output_shape(x6.shape()) == Shape{8, 8, 3});
  CHECK(p.apply(x6).output().shape() == Shape{8, 8, 3});
  CHECK_THROWS_AS(TransformPipeline({CenterCropSpec{{7, 7}}}).output_shape(x6.shape()), ContractViolation);

  const TransformPipeline random({CenterCropSpec{{5, 5}}, RandomResizedCropSpec{{0.5, 0.9}, {0.8, 1.2}, {6, 6}},
                                  HFlipSpec{0.5}});
  CHECK_FALSE(random.is_deterministic());
  CHECK_THROWS_AS(random.apply(x6), ContractViolation);
  RngStream s1(1, 7), s2(1, 7);
  CHECK(random.apply(x6, s1).output() == random.apply(x6, s2).output());

  const TransformPipeline head({CenterCropSpec{{5, 5}}, RandomResizedCropSpec{{0.5, 0.9}, {0.8, 1.2}, {6, 6}}});
  const TransformPipeline tail({HFlipSpec{0.5}});
  RngStream s3(1, 7);
  const ImageTensor mid = head.apply(x6, s3).output();
  RngStream s4(1, 7);
  CHECK(tail.apply(mid, s3).output() == random.apply(x6, s4).output());

  CHECK(random.without_random() == TransformPipeline({CenterCropSpec{{5, 5}}}));
  CHECK(TransformPipeline({HFlipSpec{1.0}, HFlipSpec{0.0}}).is_deterministic());
}

TEST_CASE("transforms keep images in [-1, 1]") {
  RngStream rng(3, 8);
  const TransformPipeline p({CenterCropSpec{{10, 10}}, ResizeSpec{{7, 13}},
                             RandomResizedCropSpec{{0.3, 1.0}, {0.5, 2.0}, {9, 9}}, HFlipSpec{0.5}});
  for (int n = 0; n < 50; ++n) {
    const ImageTensor x = testing::random_image({12, 12, 3}, rng, -1.0, 1.0);
    CHECK(p.apply(x, rng).output().in_range());
  }
}

TEST_CASE("every transform's vjp matches central differences") {
  RngStream rng(3, 9);
  RngStream cot_rng(3, 10);
  const std::vector<TransformPipeline> cases{
      TransformPipeline({CenterCropSpec{{5, 4}}}),
      TransformPipeline({ResizeSpec{{11, 5}}}),
      TransformPipeline({ResizeSpec{{3, 4}}}),
      TransformPipeline({HFlipSpec{1.0}}),
      TransformPipeline({RandomResizedCropSpec{{0.4, 0.9}, {0.7, 1.4}, {9, 9}}}),
      TransformPipeline({CenterCropSpec{{6, 6}}, ResizeSpec{{8, 8}}, RandomResizedCropSpec{{0.5, 0.9}, {0.8, 1.2}, {8, 8}},
                         HFlipSpec{0.5}}),
  };
  for (const auto& p : cases) {
    for (int trial = 0; trial < 5; ++trial) {
      const ImageTensor x = testing::random_image({8, 7, 2}, rng);
      RngStream draw(17, static_cast<std::uint64_t>(trial));
      CHECK(pipeline_gradient_error(p, x, draw, cot_rng) < 1e-3);
    }
  }
}

TEST_CASE("deterministic pipeline gradient on an 8x8 image") {
  RngStream rng(3, 11);
  RngStream cot_rng(3, 12);
  const TransformPipeline p({CenterCropSpec{{6, 6}}, ResizeSpec{{5, 5}}, ResizeSpec{{9, 9}}});
  for (int trial = 0; trial < 10; ++trial) {
    const ImageTensor x = testing::random_image({8, 8, 3}, rng);
    CHECK(pipeline_gradient_error(p, x, RngStream(0, 0), cot_rng) < 1e-3);
  }
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(TransformPipeline({HFlipSpec{1.5}}), ContractViolation);
  CHECK_THROWS_AS(TransformPipeline({ResizeSpec{{0, 3}}}), ContractViolation);
  CHECK_THROWS_AS(TransformPipeline({RandomResizedCropSpec{{0.9, 0.5}, {1, 1}, {4, 4}}}), ContractViolation);
  CHECK_THROWS_AS(TransformPipeline({RandomResizedCropSpec{{0.5, 1.1}, {1, 1}, {4, 4}}}), ContractViolation);
  CHECK(kind_name(RandomResizedCropSpec{}) == "random_resized_crop");
  CHECK(kind_name(CenterCropSpec{}) == "center_crop");
}
