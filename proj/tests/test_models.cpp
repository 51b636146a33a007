#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "ppa/losses.hpp"
#include "ppa/models.hpp"
#include "support/common.hpp"

using namespace ppa;
using testing::numeric_gradient;
using testing::relative_error;

namespace {

BlobGenerator small_generator(Shape shape = {16, 16, 3}, std::uint64_t seed = 3) {
  RngStream rng(seed, 1);
  return BlobGenerator(testing::random_generator_params(6, shape, rng));
}

LatentVector random_w(const BlobGenerator& g, RngStream& rng) {
  return {testing::normal_vector(g.w_dim(), rng), LatentSpace::intermediate};
}

}  // namespace

TEST_CASE("truncation: psi = 1 is the mapping, psi = 0 is the mean, psi = 0.5 halves the offset") {
  const BlobGenerator g = small_generator();
  RngStream rng(5, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const LatentVector z{testing::normal_vector(g.z_dim(), rng), LatentSpace::input};
    const LatentVector m = g.mapping(z);
    CHECK(g.map_latent(z, 1.0, 8) == m);
    const LatentVector w0 = g.map_latent(z, 0.0, 8);
    const LatentVector wh = g.map_latent(z, 0.5, 8);
    for (std::size_t i = 0; i < g.w_dim(); ++i) {
      CHECK(w0.values[i] == g.mean_latent()[i]);
      CHECK(wh.values[i] ==
            doctest::Approx(g.mean_latent()[i] + 0.5 * (m.values[i] - g.mean_latent()[i])).epsilon(1e-12));
    }
  }
}

TEST_CASE("truncation is linear in psi") {
  const BlobGenerator g = small_generator();
  RngStream rng(5, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const LatentVector z{testing::normal_vector(g.z_dim(), rng), LatentSpace::input};
    const double psi = rng.uniform();
    const auto a = g.map_latent(z, psi, 0);
    const auto b = g.map_latent(z, 1.0 - psi, 0);
    const auto h = g.map_latent(z, 0.5, 0);
    for (std::size_t i = 0; i < g.w_dim(); ++i) {
      CHECK(std::abs(0.5 * (a.values[i] + b.values[i]) - h.values[i]) < 1e-9);
    }
  }
}

TEST_CASE("map_latent rejects invalid psi, cutoff and latent spaces") {
  const BlobGenerator g = small_generator();
  const LatentVector z{std::vector<double>(g.z_dim(), 0.0), LatentSpace::input};
  CHECK_THROWS_AS(g.map_latent(z, 1.5, 0), ContractViolation);
  CHECK_THROWS_AS(g.map_latent(z, 0.5, -1), ContractViolation);
  CHECK_THROWS_AS(g.synthesize({std::vector<double>(g.w_dim(), 0.0), LatentSpace::input}),
                  ContractViolation);
  CHECK_THROWS_AS(g.synthesize({std::vector<double>(g.w_dim() + 1, 0.0), LatentSpace::intermediate}),
                  ContractViolation);
}

TEST_CASE("generator output stays in [-1, 1] for 1000 random latents") {
  const BlobGenerator g = small_generator();
  RngStream rng(5, 4);
  double lo = 1.0, hi = -1.0;
  for (int n = 0; n < 1000; ++n) {
    LatentVector w = random_w(g, rng);
    for (double& v : w.values) v *= 3.0;
    const ImageTensor x = g.synthesize(w);
    lo = std::min(lo, *std::min_element(x.values().begin(), x.values().end()));
    hi = std::max(hi, *std::max_element(x.values().begin(), x.values().end()));
    CHECK(x.in_range());
  }
  CHECK(lo >= -1.0);
  CHECK(hi <= 1.0);
}

TEST_CASE("canonical latent renders its blob maximum at the center pixel") {
  RngStream rng(5, 5);
  BlobGeneratorParams p = testing::random_generator_params(4, {25, 25, 3}, rng);
  const BlobGenerator g(p);
  LatentVector w{std::vector<double>(g.w_dim(), 0.0), LatentSpace::intermediate};
  // Blob 0 centered (center parameters 0 map to 0.5), positive amplitude,
  // blob 1 switched off, zero background.
  w.values[2] = -0.4;
  w.values[3] = 0.6;
  w.values[4] = 0.4;
  w.values[5] = 0.5;
  const ImageTensor x = g.synthesize(w);

  const BlobScene s = g.scene(w);
  REQUIRE(s.blobs[0].center_x == 0.5);
  REQUIRE(s.blobs[0].center_y == 0.5);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::size_t best_i = 0, best_j = 0;
    for (std::size_t i = 0; i < 25; ++i) {
      for (std::size_t j = 0; j < 25; ++j) {
        // Direct evaluation of the render formula.
        const double px = (j + 0.5) / 25.0, py = (i + 0.5) / 25.0;
        const double sc = s.blobs[0].scale;
        const double e = std::exp(-((px - 0.5) * (px - 0.5) + (py - 0.5) * (py - 0.5)) / (2 * sc * sc));
        const double oracle = std::tanh(s.background[ch] + s.blobs[0].amplitude[ch] * e);
        CHECK(x.at(i, j, ch) == doctest::Approx(oracle).epsilon(1e-12));
        if (x.at(i, j, ch) > x.at(best_i, best_j, ch)) {
          best_i = i;
          best_j = j;
        }
      }
    }
    CHECK(best_i == 12);
    CHECK(best_j == 12);
  }
}

TEST_CASE("synthesis is deterministic") {
  const BlobGenerator g = small_generator();
  RngStream rng(5, 6);
  const LatentVector w = random_w(g, rng);
  CHECK(g.synthesize(w) == g.synthesize(w));
}

TEST_CASE("prototype classifier: own prototype wins with logit 0") {
  RngStream rng(6, 1);
  const Shape shape{6, 6, 3};
  const PrototypeClassifier base = testing::random_classifier(shape, 8, 4, 3.0, rng);
  const ImageTensor x = testing::random_image(shape, rng);
  const std::vector<double> phi = base.features(x);
  // Rebuild with class 2's prototype at phi(x).
  std::vector<double> prototypes;
  for (std::size_t c = 0; c < 4; ++c) {
    const auto mu = c == 2 ? std::span<const double>(phi) : base.prototype(c);
    prototypes.insert(prototypes.end(), mu.begin(), mu.end());
  }
  const auto proj = base.projection();
  const auto bias = base.feature_bias();
  const PrototypeClassifier m(shape, 8, {proj.begin(), proj.end()}, {bias.begin(), bias.end()},
                              prototypes, 3.0);
  const Classification out = m.classify(x);
  CHECK(out.predicted == 2);
  CHECK(out.logits[2] == 0.0);
  for (std::size_t c = 0; c < 4; ++c) {
    if (c != 2) CHECK(out.logits[c] < 0.0);
  }
}

TEST_CASE("prototype classifier: equidistant prototypes give uniform scores") {
  const Shape shape{2, 2, 1};
  // Zero projection: phi = tanh(q) for every image; prototypes at equal distance.
  std::vector<double> q{0.1, -0.2};
  std::vector<double> phi{std::tanh(0.1), std::tanh(-0.2)};
  std::vector<double> prototypes;
  for (auto [dx, dy] : {std::pair{0.3, 0.0}, {-0.3, 0.0}, {0.0, 0.3}}) {
    prototypes.push_back(phi[0] + dx);
    prototypes.push_back(phi[1] + dy);
  }
  const PrototypeClassifier m(shape, 2, std::vector<double>(8, 0.0), q, prototypes, 2.0);
  const auto scores = m.classify(ImageTensor(shape, 0.4)).scores;
  for (double s : scores) CHECK(s == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("classifier scores sum to one") {
  RngStream rng(6, 2);
  const Shape shape{5, 5, 3};
  const PrototypeClassifier m = testing::random_classifier(shape, 10, 7, 20.0, rng);
  for (int n = 0; n < 100; ++n) {
    const auto s = m.classify(testing::random_image(shape, rng, -1.0, 1.0)).scores;
    CHECK(std::abs(std::accumulate(s.begin(), s.end(), 0.0) - 1.0) < 1e-6);
  }
}

TEST_CASE("input gradient is linear in the cotangent and zero for a zero cotangent") {
  RngStream rng(6, 3);
  const Shape shape{4, 4, 3};
  const PrototypeClassifier m = testing::random_classifier(shape, 6, 5, 4.0, rng);
  const ImageTensor x = testing::random_image(shape, rng);
  const auto a = testing::uniform_vector(5, -1, 1, rng);
  const auto b = testing::uniform_vector(5, -1, 1, rng);
  std::vector<double> mix(5);
  for (std::size_t i = 0; i < 5; ++i) mix[i] = 2.0 * a[i] - 3.0 * b[i];
  const auto ga = m.input_gradient(x.data(), a);
  const auto gb = m.input_gradient(x.data(), b);
  const auto gm = m.input_gradient(x.data(), mix);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(gm[i] == doctest::Approx(2.0 * ga[i] - 3.0 * gb[i]));
  const auto g0 = m.input_gradient(x.data(), std::vector<double>(5, 0.0));
  for (double v : g0) CHECK(v == 0.0);
}

TEST_CASE("linear reference model: gradient is A^T cotangent") {
  const LinearModel m(2, 3, {1, 2, 3, 4, 5, 6}, {0.5, -0.5});
  const auto y = m.forward(std::vector<double>{1, 0, -1});
  CHECK(y[0] == doctest::Approx(-1.5));
  CHECK(y[1] == doctest::Approx(-2.5));
  const auto g = m.input_gradient(std::vector<double>{9, 9, 9}, std::vector<double>{1, -2});
  CHECK(g == std::vector<double>{1 - 8, 2 - 10, 3 - 12});
  CHECK_THROWS_AS(m.forward(std::vector<double>{1, 2}), ContractViolation);
  CHECK_THROWS_AS(m.input_gradient(std::vector<double>{1, 2, 3}, std::vector<double>{1}),
                  ContractViolation);
}

TEST_CASE("prototype classifier gradient matches central differences on 50 pairs") {
  RngStream rng(6, 4);
  const Shape shape{5, 5, 3};
  const PrototypeClassifier m = testing::random_classifier(shape, 12, 6, 5.0, rng);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const ImageTensor x = testing::random_image(shape, rng);
    const auto cot = testing::uniform_vector(6, -1, 1, rng);
    const auto analytic = m.input_gradient(x.data(), cot);
    const auto f = [&](const std::vector<double>& v) {
      const auto o = m.forward(v);
      return std::inner_product(o.begin(), o.end(), cot.begin(), 0.0);
    };
    const auto numeric = numeric_gradient(f, x.values(), 1e-4);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("score gradient through synthesis matches finite differences of the composition") {
  const Shape shape{10, 10, 3};
  const BlobGenerator g = small_generator(shape, 9);
  RngStream rng(6, 5);
  const PrototypeClassifier m = testing::random_classifier(shape, 8, 4, 6.0, rng);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    LatentVector w = random_w(g, rng);
    const std::size_t c = static_cast<std::size_t>(trial % 4);
    const auto score = [&](const std::vector<double>& v) {
      return m.classify(g.synthesize({v, LatentSpace::intermediate})).scores[c];
    };
    const ImageTensor x = g.synthesize(w);
    const auto y = m.classify(x).scores;
    std::vector<double> dlogits(4);
    for (std::size_t k = 0; k < 4; ++k) dlogits[k] = y[c] * ((k == c ? 1.0 : 0.0) - y[k]);
    const ImageTensor dx = m.logit_gradient(x, dlogits);
    const auto analytic = g.synthesis_gradient(w, dx);
    const auto numeric = numeric_gradient(score, w.values, 1e-5);
    worst = std::max(worst, relative_error(analytic, numeric, 1e-9));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("gradient ascent on a logit in feature space recovers every prototype") {
  RngStream rng(6, 6);
  const Shape shape{4, 4, 3};
  const PrototypeClassifier m = testing::random_classifier(shape, 10, 5, 2.0, rng);
  for (std::size_t c = 0; c < 5; ++c) {
    std::vector<double> f = testing::uniform_vector(10, -1, 1, rng);
    std::vector<double> onehot(5, 0.0);
    onehot[c] = 1.0;
    for (int step = 0; step < 200; ++step) {
      const auto g = m.feature_gradient(f, onehot);
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += 0.1 * g[i];
    }
    const auto mu = m.prototype(c);
    double dist = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) dist = std::max(dist, std::abs(f[i] - mu[i]));
    CHECK(dist < 1e-3);
  }
}

TEST_CASE("with_class_means places each prototype at its class mean") {
  RngStream rng(6, 7);
  const Shape shape{3, 3, 1};
  const PrototypeClassifier m = testing::random_classifier(shape, 4, 2, 1.0, rng);
  std::vector<std::vector<ImageTensor>> images(2);
  for (auto& cls : images) {
    for (int n = 0; n < 3; ++n) cls.push_back(testing::random_image(shape, rng));
  }
  const PrototypeClassifier fitted = m.with_class_means(images);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> mean(4, 0.0);
    for (const auto& x : images[c]) {
      const auto f = m.features(x);
      for (std::size_t i = 0; i < 4; ++i) mean[i] += f[i] / 3.0;
    }
    for (std::size_t i = 0; i < 4; ++i) CHECK(fitted.prototype(c)[i] == doctest::Approx(mean[i]).epsilon(1e-12));
  }
}

TEST_CASE("model files round-trip bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "ppa_test_models";
  std::filesystem::create_directories(dir);
  RngStream rng(6, 8);
  const Shape shape{4, 4, 3};
  const PrototypeClassifier m = testing::random_classifier(shape, 5, 3, 7.5, rng);
  save_model(dir / "m.json", m.to_json());
  const PrototypeClassifier back = PrototypeClassifier::from_json(load_model_json(dir / "m.json"));
  const ImageTensor x = testing::random_image(shape, rng);
  CHECK(back.forward(x.data()) == m.forward(x.data()));

  const BlobGenerator g = small_generator();
  save_model(dir / "g.json", g.to_json());
  const BlobGenerator gb = BlobGenerator::from_json(load_model_json(dir / "g.json"));
  const LatentVector w = random_w(g, rng);
  CHECK(gb.synthesize(w) == g.synthesize(w));

  const PrototypeCritic critic(testing::random_classifier(shape, 5, 1, 2.0, rng), 0.25);
  save_model(dir / "c.json", critic.to_json());
  const PrototypeCritic cb = PrototypeCritic::from_json(load_model_json(dir / "c.json"));
  CHECK(cb.logit(x) == critic.logit(x));
  std::filesystem::remove_all(dir);
}

TEST_CASE("critic logit is bias minus scaled squared feature distance") {
  RngStream rng(6, 9);
  const Shape shape{4, 4, 3};
  const PrototypeClassifier inner = testing::random_classifier(shape, 5, 1, 1.5, rng);
  const PrototypeCritic critic(inner, 0.7);
  const ImageTensor x = testing::random_image(shape, rng);
  CHECK(critic.logit(x) == doctest::Approx(0.7 + inner.logits(x)[0]).epsilon(1e-12));
  const auto numeric = numeric_gradient(
      [&](const std::vector<double>& v) { return critic.forward(v)[0]; }, x.values(), 1e-5);
  const auto analytic = critic.input_gradient(x.data(), std::vector<double>{1.0});
  CHECK(relative_error(analytic, numeric) < 1e-5);
}
