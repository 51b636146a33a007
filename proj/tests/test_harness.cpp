#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ppa/harness/config.hpp"
#include "ppa/harness/experiment.hpp"
#include "ppa/harness/io.hpp"
#include "support/common.hpp"

using namespace ppa;
using namespace ppa::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ppa_test_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string issue_paths(const ConfigError& e) {
  std::string out;
  for (const auto& i : e.issues()) out += i.path + ";";
  return out;
}

json degenerate_json(const fs::path& out) {
  return {{"seed", 3},
          {"attack",
           {{"sample_count", 1}, {"candidates_per_class", 1}, {"final_count", 1}, {"steps", 0},
            {"mc_samples", 2}, {"target_classes", {5}}}},
          {"output", {{"directory", out.string()}}}};
}

json small_run_json(const fs::path& out) {
  return {{"seed", 11},
          {"attack",
           {{"sample_count", 120}, {"candidates_per_class", 10}, {"final_count", 4}, {"steps", 8},
            {"mc_samples", 10}, {"target_classes", {0, 7}}}},
          {"output", {{"directory", out.string()}}}};
}

}  // namespace

TEST_CASE("config defaults and required keys") {
  const RunConfig c = parse_config({{"seed", 1}});
  CHECK(c.attack.learning_rate == 0.005);
  CHECK(c.attack.mc_samples == 100);
  CHECK(c.attack.final_count == 50);
  CHECK(c.attack.candidates_per_class == 200);
  CHECK(c.attack.sample_count == 2000);
  CHECK(c.attack.beta1 == 0.1);
  CHECK(c.attack.beta2 == 0.1);
  CHECK(c.attack.loss == losses::LossKind::poincare);
  CHECK(c.schema_version == kSchemaVersion);
  CHECK(c.metrics.knn_k == 3);
  CHECK_FALSE(c.metrics.fid_correct_only);
  CHECK_FALSE(c.attack.optimization_transforms.empty());
  CHECK_FALSE(c.attack.selection_transforms.empty());

  try {
    parse_config(json::object());
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(issue_paths(e) == "seed;");
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
  }
}

TEST_CASE("config errors list every problem with its key path") {
  const json bad = {{"seed", "seven"},
                    {"colour", 1},
                    {"attack", {{"learning_rate", -1.0}, {"steps", "many"}, {"bogus", true}}},
                    {"metrics", {{"knn_k", 0}}},
                    {"schema_version", 9}};
  try {
    parse_config(bad);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    const std::string paths = issue_paths(e);
    for (const char* p : {"seed;", "colour;", "attack.learning_rate;", "attack.steps;", "attack.bogus;",
                          "metrics.knn_k;", "schema_version;"}) {
      CHECK_MESSAGE(paths.find(p) != std::string::npos, p);
    }
  }
  CHECK_THROWS_AS(parse_config({{"seed", 1}, {"models", {{"source", "files"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"seed", 1}, {"attack", {{"final_count", 300}}}}), ConfigError);
}

TEST_CASE("config round trip and hash") {
  const json doc = json::parse(R"({
    "seed": 9,
    "attack": {
      "steps": 12, "loss": "cross_entropy", "target_classes": [1, 4],
      "selection_transforms": [
        {"kind": "random_resized_crop", "area": [0.5, 0.9], "ratio": [0.8, 1.2], "size": [12, 12]},
        {"kind": "hflip", "probability": 0.5}
      ]
    },
    "output": {"directory": "somewhere", "grids": false}
  })");
  const RunConfig c = parse_config(doc);
  const RunConfig again = parse_config(to_json(c));
  CHECK(again == c);
  CHECK(to_json(again) == to_json(c));
  CHECK(config_hash(again) == config_hash(c));

  const fs::path dir = scratch_dir("config");
  fs::create_directories(dir);
  save_config(dir / "c.json", c);
  CHECK(load_config(dir / "c.json") == c);
  // Formatting and key order do not matter.
  write_text_file(dir / "compact.json", to_json(c).dump());
  CHECK(config_hash(load_config(dir / "compact.json")) == config_hash(c));

  RunConfig other = c;
  other.output.directory = "elsewhere";
  other.output.images = false;
  CHECK(config_hash(other) == config_hash(c));
  for (int field = 0; field < 6; ++field) {
    RunConfig d = c;
    switch (field) {
      case 0: d.seed = 10; break;
      case 1: d.attack.learning_rate = 0.0051; break;
      case 2: d.attack.target_classes = {1, 5}; break;
      case 3: d.attack.selection_transforms = transforms::TransformPipeline({transforms::HFlipSpec{0.5}}); break;
      case 4: d.metrics.knn_k = 4; break;
      default: d.toy.world_seed += 1; break;
    }
    CHECK_MESSAGE(config_hash(d) != config_hash(c), field);
  }
  CHECK_THROWS(load_config(dir / "missing.json"));
  write_text_file(dir / "broken.json", "{\"seed\": ");
  CHECK_THROWS(load_config(dir / "broken.json"));
}

TEST_CASE("byte mapping and PNG round trip") {
  CHECK(to_byte(-1.0) == 0);
  CHECK(to_byte(1.0) == 255);
  CHECK(to_byte(0.0) == 128);
  CHECK(to_byte(-3.0) == 0);
  CHECK(to_byte(7.0) == 255);
  for (int b = 0; b < 256; ++b) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(b))) == b);

  RngStream rng(6, 1);
  const fs::path dir = scratch_dir("png");
  for (std::size_t channels : {1u, 3u}) {
    const ImageTensor x = testing::random_image({7, 5, channels}, rng, -1.0, 1.0);
    const fs::path p = dir / ("x" + std::to_string(channels) + ".png");
    write_png(p, x);
    const ImageTensor y = read_png(p);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.values()[i] - x.values()[i]) <= 1.0 / 127.5);
  }
  CHECK_THROWS_AS(write_png(dir / "bad.png", ImageTensor({2, 2, 2})), ContractViolation);
  write_text_file(dir / "fake.png", "not a png");
  CHECK_THROWS(read_png(dir / "fake.png"));
}

TEST_CASE("image grid layout") {
  std::vector<ImageTensor> images;
  for (int i = 0; i < 5; ++i) images.emplace_back(Shape{2, 3, 1}, 0.1 * i);
  const ImageTensor g = make_grid(images, 3, 1, -1.0);
  CHECK(g.shape() == Shape{2 * 2 + 3, 3 * 3 + 4, 1});
  CHECK(g.at(0, 0, 0) == -1.0);
  CHECK(g.at(1, 1, 0) == 0.0);
  CHECK(g.at(2, 11, 0) == doctest::Approx(0.2));
  CHECK(g.at(4, 1, 0) == doctest::Approx(0.3));
  CHECK(g.at(5, 7, 0) == doctest::Approx(0.4));
  CHECK(g.at(4, 9, 0) == -1.0);
  CHECK(g.at(3, 2, 0) == -1.0);
  CHECK_THROWS_AS(make_grid({}, 3, 1, 0.0), ContractViolation);
}

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("degenerate single-sample run writes parseable outputs") {
  const fs::path dir = scratch_dir("degenerate");
  const RunConfig c = parse_config(degenerate_json(dir));
  const ExperimentResult r = run_experiment(c);
  CHECK(r.attack.classes.size() == 1);
  CHECK(r.attack.classes[0].selected().size() == 1);
  CHECK(r.attack.config_hash == config_hash(c));

  for (const char* f : {"config.json", "metrics.csv", "report.json", "loss_trace.csv", "selected.csv",
                        "manifest.json", "features/eval_logits.features", "grids/class_005.png"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(load_config(dir / "config.json") == c);
  const json report = json::parse(read_text_file(dir / "report.json"));
  CHECK(report.at("config_hash") == config_hash(c));
  const json manifest = json::parse(read_text_file(dir / "manifest.json"));
  CHECK(manifest.at("status") == "complete");
  CHECK(manifest.at("config_hash") == config_hash(c));
  CHECK(manifest.at("seed") == 3);
  CHECK(read_png(dir / "grids/class_005.png").shape().channels == 3);
  std::ifstream csv(dir / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == metrics::kMetricsCsvHeader);
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2);
  // FID needs two samples per set, so it is undefined here and explained.
  CHECK(std::isnan(r.metrics.aggregate.fid));
  CHECK_FALSE(r.metrics.notes.empty());

  const auto fs_loaded = load_feature_set(dir / "features");
  const auto recomputed = compute_metrics(fs_loaded, c.metrics);
  std::ostringstream a, b;
  metrics::write_metrics_csv(a, recomputed);
  metrics::write_metrics_csv(b, r.metrics);
  CHECK(a.str() == b.str());
}

TEST_CASE("manifest verification detects tampering and missing files") {
  const fs::path dir = scratch_dir("verify");
  run_experiment(parse_config(degenerate_json(dir)));
  const VerifyReport ok = verify_manifest(dir);
  CHECK(ok.ok());
  CHECK(ok.checked >= 10);

  write_text_file(dir / "metrics.csv", read_text_file(dir / "metrics.csv") + " ");
  fs::remove(dir / "selected.csv");
  const VerifyReport bad = verify_manifest(dir);
  CHECK(bad.problems.size() == 2);
  CHECK(std::count(bad.problems.begin(), bad.problems.end(), "metrics.csv: hash mismatch") == 1);
  CHECK(std::count(bad.problems.begin(), bad.problems.end(), "selected.csv: missing") == 1);
}

TEST_CASE("a failing stage is recorded in the manifest") {
  const fs::path dir = scratch_dir("failing");
  json doc = degenerate_json(dir);
  doc["attack"]["target_classes"] = {99};
  CHECK_THROWS(run_experiment(parse_config(doc)));
  const json manifest = json::parse(read_text_file(dir / "manifest.json"));
  CHECK(manifest.at("status") == "failed");
  CHECK(manifest.at("partial") == true);
  CHECK(manifest.at("failed_stage") == "attack/initial_selection");
  CHECK(fs::exists(dir / "config.json"));
  CHECK_FALSE(fs::exists(dir / "metrics.csv"));
  const VerifyReport r = verify_manifest(dir);
  CHECK_FALSE(r.ok());
  CHECK(r.problems.size() == 1);
}

TEST_CASE("identical config and seed give byte-identical outputs") {
  const fs::path a = scratch_dir("repeat_a"), b = scratch_dir("repeat_b");
  const ExperimentResult ra = run_experiment(parse_config(small_run_json(a)));
  const ExperimentResult rb = run_experiment(parse_config(small_run_json(b)));
  for (const char* f : {"metrics.csv", "selected.csv", "loss_trace.csv", "report.json"}) {
    CHECK_MESSAGE(read_text_file(a / f) == read_text_file(b / f), f);
  }
  for (std::size_t k = 0; k < ra.attack.classes.size(); ++k) {
    const auto sa = ra.attack.classes[k].selected();
    const auto sb = rb.attack.classes[k].selected();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i]->latent_index == sb[i]->latent_index);
  }
}

TEST_CASE("ablation presets") {
  const RunConfig base = parse_config({{"seed", 1}});
  for (const auto& name : ablation_preset_names()) CHECK_NOTHROW(apply_preset(base, name));
  CHECK(ablation_preset_names().size() == 9);
  try {
    apply_preset(base, "no_such_preset");
    FAIL("expected an error");
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    for (const auto& name : ablation_preset_names()) CHECK(msg.find(name) != std::string::npos);
  }
  CHECK(to_json(apply_preset(base, "standard")) == to_json(base));
  const RunConfig ce = apply_preset(base, "ce_loss");
  CHECK(ce.attack.loss == losses::LossKind::cross_entropy);
  CHECK(ce.attack.learning_rate == 0.01);
  CHECK_FALSE(apply_preset(base, "no_final_selection").attack.final_selection);
  CHECK_FALSE(apply_preset(base, "no_initial_selection").attack.initial_selection);
  CHECK(apply_preset(base, "discriminator_loss").attack.discriminator_weight == 0.1);
  for (const char* p : {"no_center_cropping", "resize_small", "resize_large", "no_random_cropping"}) {
    const RunConfig c = apply_preset(base, p);
    CHECK_MESSAGE(c.attack.optimization_transforms != base.attack.optimization_transforms, p);
    CHECK(c.attack.selection_transforms == base.attack.selection_transforms);
    RngStream rng(6, 2);
    CHECK(c.attack.optimization_transforms.apply(ImageTensor({24, 24, 3}), rng).output().shape() == Shape{12, 12, 3});
  }

  const fs::path dir = scratch_dir("ablation");
  CHECK_THROWS_AS(run_ablation(parse_config(degenerate_json(dir)), {"standard", "nope"}, dir), ContractViolation);
  CHECK_FALSE(fs::exists(dir / "standard"));
  const auto rows = run_ablation(parse_config(degenerate_json(dir)), {"standard"}, dir);
  CHECK(rows.size() == 1);
  std::istringstream csv(read_text_file(dir / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == kAblationCsvHeader);
  std::size_t n = 0;
  while (std::getline(csv, line)) n += line.rfind("standard,", 0) == 0;
  CHECK(n == 1);
}

TEST_CASE("gradient diagnostic self-normalization and the cross-entropy plateau") {
  json doc = {{"seed", 1},
              {"attack",
               {{"initial_selection", false}, {"target_classes", {4}}, {"sample_count", 100},
                {"candidates_per_class", 5}, {"final_count", 5}, {"steps", 300}}}};
  for (int seed : {1, 2, 3}) {
    doc["seed"] = seed;
    const GradientDiagnostic d = gradient_diagnostic(parse_config(doc));
    for (const auto* curve : {&d.poincare, &d.cross_entropy}) {
      REQUIRE(curve->rows.size() == 300);
      for (double v : curve->rows[0].normalized) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    }
    const auto step = d.cross_entropy.first_step_above(0.99);
    REQUIRE(step.has_value());
    CHECK(d.cross_entropy.rows[*step].normalized[0] < 0.1);
    CHECK(d.poincare.rows[0].mean_score == doctest::Approx(d.cross_entropy.rows[0].mean_score).epsilon(1e-15));
    std::ostringstream csv;
    write_diagnostic_csv(csv, d);
    const std::string text = csv.str();
    CHECK(text.rfind(kDiagnosticCsvHeader, 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 601);
  }
}
