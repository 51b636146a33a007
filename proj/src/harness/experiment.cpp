#include "ppa/harness/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "ppa/harness/io.hpp"

namespace ppa::harness {

namespace fs = std::filesystem;
using metrics::FeatureMatrix;
using metrics::FeatureSource;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string class_dir(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "class_%03zu", c);
  return buf;
}

std::string model_kind(const json& j, const fs::path& path) {
  require(j.is_object() && j.contains("kind") && j.at("kind").is_string(),
          "model file without a kind: " + path.string());
  return j.at("kind").get<std::string>();
}

std::shared_ptr<const Classifier> load_classifier(const fs::path& path) {
  const json j = load_model_json(path);
  const std::string kind = model_kind(j, path);
  require(kind == "prototype_classifier",
          "unsupported classifier kind '" + kind + "' in " + path.string());
  return std::make_shared<PrototypeClassifier>(PrototypeClassifier::from_json(j));
}

// Appends a resize when the pipeline output does not match the model input.
transforms::TransformPipeline fit_to(const transforms::TransformPipeline& pipeline, Shape from,
                                     Shape to) {
  const Shape out = pipeline.output_shape(from);
  if (out == to) return pipeline;
  require(out.channels == to.channels, "channel mismatch between pipeline output " +
                                           to_string(out) + " and model input " + to_string(to));
  auto specs = pipeline.specs();
  specs.push_back(transforms::ResizeSpec{{to.height, to.width}});
  return transforms::TransformPipeline(std::move(specs));
}

ImageTensor fit_image(const ImageTensor& x, Shape to) {
  if (x.shape() == to) return x;
  return transforms::resize_bilinear(x, {to.height, to.width});
}

// Records every file with its content hash. All writes of one run go
// through one writer.
class RunWriter {
 public:
  explicit RunWriter(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  void text(const std::string& rel, std::string_view content) {
    write_text_file(root_ / rel, content);
    record(rel, sha256_hex(content), content.size());
  }

  void png(const std::string& rel, const ImageTensor& image) {
    write_png(root_ / rel, image);
    const std::string bytes = read_text_file(root_ / rel);
    record(rel, sha256_hex(bytes), bytes.size());
  }

  json files() const { return files_; }

 private:
  void record(const std::string& rel, const std::string& hash, std::size_t bytes) {
    files_.push_back({{"path", rel}, {"sha256", hash}, {"bytes", bytes}});
  }

  fs::path root_;
  json files_ = json::array();
};

struct StageLog {
  json stages = json::array();
  std::string failed_stage;
  std::string error;

  template <class F>
  void run(const std::string& name, F&& f) {
    try {
      f();
      stages.push_back({{"name", name}, {"status", "ok"}});
    } catch (const attack::StageError& e) {
      fail(name + "/" + e.stage(), e.what());
      throw;
    } catch (const std::exception& e) {
      fail(name, e.what());
      throw;
    }
  }

  void fail(const std::string& name, const std::string& message) {
    stages.push_back({{"name", name}, {"status", "failed"}, {"error", message}});
    failed_stage = name;
    error = message;
  }
};

void write_manifest(const RunWriter& writer, const RunConfig& config, const StageLog& log,
                    const json& extra) {
  json manifest = {{"schema_version", kSchemaVersion},
                   {"config_hash", config_hash(config)},
                   {"seed", config.seed},
                   {"status", log.failed_stage.empty() ? "complete" : "failed"},
                   {"partial", !log.failed_stage.empty()},
                   {"stages", log.stages},
                   {"files", writer.files()}};
  if (!log.failed_stage.empty()) {
    manifest["failed_stage"] = log.failed_stage;
    manifest["error"] = log.error;
  }
  for (const auto& [k, v] : extra.items()) manifest[k] = v;
  write_text_file(writer.root() / "manifest.json", manifest.dump(2) + "\n");
}

std::string selected_csv(const attack::AttackResult& result) {
  std::string out =
      "class,candidate,latent_index,initial_score,plain_score,robust_score,failed,selected\n";
  char buf[256];
  for (const auto& cls : result.classes) {
    for (const auto& c : cls.candidates) {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.12g,%.12g,%.12g,%d,%d\n", cls.target_class,
                    c.candidate_index, c.latent_index, c.initial_score, c.plain_score,
                    c.robust_score, c.failed ? 1 : 0, c.selected ? 1 : 0);
      out += buf;
    }
  }
  return out;
}

json selection_json(const attack::AttackResult& result) {
  json classes = json::array();
  for (const auto& cls : result.classes) {
    json selected = json::array();
    for (const auto* c : cls.selected()) {
      selected.push_back({{"candidate", c->candidate_index},
                          {"latent_index", c->latent_index},
                          {"plain_score", c->plain_score},
                          {"robust_score", c->robust_score}});
    }
    const auto failed = std::count_if(cls.candidates.begin(), cls.candidates.end(),
                                      [](const auto& c) { return c.failed; });
    classes.push_back({{"class", cls.target_class},
                       {"candidates", cls.candidates.size()},
                       {"failed", failed},
                       {"selected", selected}});
  }
  return classes;
}

std::string features_text(const FeatureMatrix& m) {
  std::ostringstream out;
  metrics::write_features(out, m);
  return out.str();
}

FeatureMatrix training_matrix(const std::vector<std::vector<ImageTensor>>& images) {
  require(!images.empty() && !images.front().empty(), "no training images");
  FeatureMatrix m(images.front().front().size(), FeatureSource::real);
  for (std::size_t c = 0; c < images.size(); ++c) {
    for (const auto& x : images[c]) m.append(x.data(), c);
  }
  return m;
}

void write_models(RunWriter& writer, const ModelBundle& models) {
  if (!models.toy) return;
  const ToyBenchmark& toy = *models.toy;
  writer.text("models/generator.json", toy.generator.to_json().dump(1) + "\n");
  writer.text("models/target.json", toy.target.to_json().dump(1) + "\n");
  writer.text("models/eval.json", toy.eval.to_json().dump(1) + "\n");
  writer.text("models/face.json", toy.face.to_json().dump(1) + "\n");
  writer.text("models/critic.json", toy.critic.to_json().dump(1) + "\n");
  writer.text("models/training_images.features",
              features_text(training_matrix(toy.training_images)));
}

metrics::MetricsRow metric_row(std::string label, const metrics::TopKAccuracy& acc) {
  metrics::MetricsRow row;
  row.label = std::move(label);
  row.acc_at_1 = acc.acc_at_1;
  row.acc_at_5 = acc.acc_at_5;
  row.samples = acc.samples;
  return row;
}

FeatureMatrix correct_only(const FeatureMatrix& features, const FeatureMatrix& logits) {
  FeatureMatrix out(features.dim(), features.source());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto o = logits.row(i);
    const auto argmax = static_cast<std::size_t>(std::max_element(o.begin(), o.end()) - o.begin());
    if (argmax == logits.labels()[i]) out.append(features.row(i), features.labels()[i]);
  }
  return out;
}

// FID, precision/recall and density/coverage of one real/generated pair.
void distribution_metrics(metrics::MetricsRow& row, const FeatureMatrix& real,
                          const FeatureMatrix& fake, const FeatureMatrix& fid_fake,
                          std::size_t k, std::vector<std::string>& notes) {
  if (real.rows() >= 2 && fid_fake.rows() >= 2) {
    row.fid = metrics::fid(real, fid_fake);
  } else {
    row.fid = kNaN;
    notes.push_back("class " + row.label + ": fid undefined with fewer than 2 samples per set");
  }
  if (real.rows() > k && fake.rows() > k) {
    const auto pr = metrics::precision_recall(real, fake, k);
    const auto dc = metrics::density_coverage(real, fake, k);
    row.precision = pr.precision;
    row.recall = pr.recall;
    row.density = dc.density;
    row.coverage = dc.coverage;
  } else {
    row.precision = row.recall = row.density = row.coverage = kNaN;
    notes.push_back("class " + row.label + ": precision/recall and density/coverage need more than " +
                    std::to_string(k) + " samples per set");
  }
}

double mean_min_distance(const FeatureMatrix& generated, const FeatureMatrix& training) {
  if (generated.rows() == 0 || training.rows() == 0) return kNaN;
  const auto d = metrics::min_squared_distances(generated, training);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

}  // namespace

// --- models ------------------------------------------------------------------------

ModelBundle load_models(const RunConfig& config) {
  ModelBundle bundle;
  if (config.source == ModelSource::toy) {
    auto toy = std::make_shared<const ToyBenchmark>(build_toy_benchmark(config.toy));
    bundle.generator = std::shared_ptr<const ImageGenerator>(toy, &toy->generator);
    bundle.target = std::shared_ptr<const Classifier>(toy, &toy->target);
    bundle.eval = std::shared_ptr<const Classifier>(toy, &toy->eval);
    bundle.face = std::shared_ptr<const Classifier>(toy, &toy->face);
    bundle.critic = std::shared_ptr<const DifferentiableModel>(toy, &toy->critic);
    bundle.training_images = toy->training_images;
    bundle.toy = toy;
    return bundle;
  }
  const ModelFiles& f = config.files;
  {
    const json j = load_model_json(f.generator);
    const std::string kind = model_kind(j, f.generator);
    require(kind == "blob_generator", "unsupported generator kind '" + kind + "'");
    bundle.generator = std::make_shared<BlobGenerator>(BlobGenerator::from_json(j));
  }
  bundle.target = load_classifier(f.target);
  bundle.eval = load_classifier(f.eval);
  bundle.face = load_classifier(f.face);
  if (!f.critic.empty()) {
    const json j = load_model_json(f.critic);
    const std::string kind = model_kind(j, f.critic);
    require(kind == "prototype_critic", "unsupported critic kind '" + kind + "'");
    bundle.critic = std::make_shared<PrototypeCritic>(PrototypeCritic::from_json(j));
  }
  const FeatureMatrix train = metrics::load_features(f.training_images);
  const Shape shape = bundle.eval->input_shape();
  require(train.has_labels(), "training image file must be labeled");
  require(train.dim() == shape.size(), "training images have " + std::to_string(train.dim()) +
                                           " values, the evaluation model expects " +
                                           std::to_string(shape.size()));
  bundle.training_images.resize(bundle.eval->num_classes());
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const std::size_t c = train.labels()[i];
    require(c < bundle.training_images.size(), "training label out of range");
    const auto row = train.row(i);
    bundle.training_images[c].emplace_back(shape, std::vector<double>(row.begin(), row.end()));
  }
  return bundle;
}

// --- features and metrics ------------------------------------------------------------

FeatureSet extract_features(const attack::AttackResult& result, const ModelBundle& models,
                            const attack::AttackConfig& config) {
  const Shape gen_shape = models.generator->image_shape();
  const auto det = config.deterministic_transforms();
  const auto eval_pipe = fit_to(det, gen_shape, models.eval->input_shape());
  const auto face_pipe = fit_to(det, gen_shape, models.face->input_shape());

  FeatureSet fs;
  fs.eval_logits = FeatureMatrix(models.eval->num_classes(), FeatureSource::generated);
  // Feature widths are only known from a first forward pass.
  const auto& probe = models.training_images.at(0).at(0);
  const std::size_t eval_dim = models.eval->features(probe).size();
  const std::size_t face_dim =
      models.face->features(fit_image(probe, models.face->input_shape())).size();
  fs.eval_generated = FeatureMatrix(eval_dim, FeatureSource::generated);
  fs.face_generated = FeatureMatrix(face_dim, FeatureSource::generated);
  fs.eval_training = FeatureMatrix(eval_dim, FeatureSource::real);
  fs.face_training = FeatureMatrix(face_dim, FeatureSource::real);
  auto append = [](FeatureMatrix& m, const std::vector<double>& v, std::size_t label) {
    m.append(v, label);
  };

  if (models.eval.get() == models.target.get()) {
    fs.notes.push_back("evaluation model is the target model; accuracy is not independent");
  }
  if (models.eval->num_classes() < 5) {
    fs.notes.push_back("fewer than 5 classes; acc@5 computed over top-" +
                       std::to_string(models.eval->num_classes()));
  }
  for (const auto& cls : result.classes) {
    const std::size_t c = cls.target_class;
    fs.classes.push_back(c);
    for (const auto* cand : cls.selected()) {
      const ImageTensor xe = eval_pipe.apply(cand->image).output();
      fs.eval_logits.append(models.eval->logits(xe), c);
      append(fs.eval_generated, models.eval->features(xe), c);
      append(fs.face_generated, models.face->features(face_pipe.apply(cand->image).output()), c);
    }
    require(c < models.training_images.size(), "no training images for class " + std::to_string(c));
    for (const auto& x : models.training_images[c]) {
      append(fs.eval_training, models.eval->features(x), c);
      append(fs.face_training, models.face->features(fit_image(x, models.face->input_shape())), c);
    }
  }
  return fs;
}

void save_feature_set(const fs::path& dir, const FeatureSet& features) {
  metrics::save_features(dir / "eval_logits.features", features.eval_logits);
  metrics::save_features(dir / "eval_generated.features", features.eval_generated);
  metrics::save_features(dir / "eval_training.features", features.eval_training);
  metrics::save_features(dir / "face_generated.features", features.face_generated);
  metrics::save_features(dir / "face_training.features", features.face_training);
  const json info = {{"classes", features.classes}, {"notes", features.notes}};
  write_text_file(dir / "info.json", info.dump(2) + "\n");
}

FeatureSet load_feature_set(const fs::path& dir) {
  FeatureSet fs;
  fs.eval_logits = metrics::load_features(dir / "eval_logits.features");
  fs.eval_generated = metrics::load_features(dir / "eval_generated.features");
  fs.eval_training = metrics::load_features(dir / "eval_training.features");
  fs.face_generated = metrics::load_features(dir / "face_generated.features");
  fs.face_training = metrics::load_features(dir / "face_training.features");
  const json info = json::parse(read_text_file(dir / "info.json"));
  fs.classes = info.at("classes").get<std::vector<std::size_t>>();
  fs.notes = info.at("notes").get<std::vector<std::string>>();
  return fs;
}

metrics::MetricsReport compute_metrics(const FeatureSet& fs, const MetricsOptions& options) {
  metrics::MetricsReport report;
  report.knn_k = options.knn_k;
  report.fid_correct_only = options.fid_correct_only;
  report.notes = fs.notes;
  report.acc_top_k = std::min<std::size_t>(5, fs.eval_logits.dim());

  auto labeled = [](const FeatureMatrix& m, std::size_t c) {
    return m.rows() == 0 ? FeatureMatrix(m.dim(), m.source()) : m.select_label(c);
  };
  std::vector<FeatureMatrix> gen_eval, train_eval, gen_face, train_face;
  std::size_t total = 0;
  double hits1 = 0.0, hits5 = 0.0;
  for (const std::size_t c : fs.classes) {
    const FeatureMatrix logits = labeled(fs.eval_logits, c);
    const metrics::TopKAccuracy acc = metrics::top_k_accuracy(logits, c);
    total += acc.samples;
    hits1 += acc.acc_at_1 * acc.samples;
    hits5 += acc.acc_at_5 * acc.samples;

    metrics::MetricsRow row = metric_row(std::to_string(c), acc);
    gen_eval.push_back(labeled(fs.eval_generated, c));
    train_eval.push_back(labeled(fs.eval_training, c));
    gen_face.push_back(labeled(fs.face_generated, c));
    train_face.push_back(labeled(fs.face_training, c));
    row.delta_eval = mean_min_distance(gen_eval.back(), train_eval.back());
    row.delta_face = mean_min_distance(gen_face.back(), train_face.back());
    const FeatureMatrix fid_fake =
        options.fid_correct_only && gen_eval.back().rows() > 0 ? correct_only(gen_eval.back(), logits)
                                                               : gen_eval.back();
    distribution_metrics(row, train_eval.back(), gen_eval.back(), fid_fake, options.knn_k,
                         report.notes);
    report.per_class.push_back(row);
  }

  metrics::TopKAccuracy all;
  all.k_used = report.acc_top_k;
  all.samples = total;
  if (total > 0) {
    all.acc_at_1 = hits1 / static_cast<double>(total);
    all.acc_at_5 = hits5 / static_cast<double>(total);
  }
  metrics::MetricsRow agg = metric_row("all", all);
  auto mean_of = [&](double metrics::MetricsRow::*field) {
    double sum = 0.0;
    for (const auto& r : report.per_class) sum += r.*field;
    return report.per_class.empty() ? kNaN : sum / static_cast<double>(report.per_class.size());
  };
  agg.delta_eval = mean_of(&metrics::MetricsRow::delta_eval);
  agg.delta_face = mean_of(&metrics::MetricsRow::delta_face);
  // Rows of every class, pooled.
  const FeatureMatrix& pooled_train = fs.eval_training;
  const FeatureMatrix& pooled_gen = fs.eval_generated;
  const FeatureMatrix pooled_fid = options.fid_correct_only && pooled_gen.rows() > 0
                                       ? correct_only(pooled_gen, fs.eval_logits)
                                       : pooled_gen;
  distribution_metrics(agg, pooled_train, pooled_gen, pooled_fid, options.knn_k, report.notes);
  report.aggregate = agg;
  report.validate();
  return report;
}

// --- experiment ------------------------------------------------------------------------

ExperimentResult run_experiment(const RunConfig& config) {
  return run_experiment(config, load_models(config));
}

ExperimentResult run_experiment(const RunConfig& input, const ModelBundle& models) {
  RunConfig config = input;
  config.attack.master_seed = config.seed;
  const fs::path dir = config.output.directory;
  fs::create_directories(dir);
  fs::remove(dir / "manifest.json");
  RunWriter writer(dir);
  StageLog log;
  ExperimentResult out;
  out.directory = dir;
  json extra = json::object();
  try {
    log.run("config", [&] {
      writer.text("config.json", to_json(config).dump(2) + "\n");
      write_models(writer, models);
    });
    log.run("attack", [&] {
      if (config.attack.discriminator_weight > 0.0) {
        require(models.critic != nullptr, "discriminator_weight > 0 requires a critic model");
      }
      if (config.attack.target_classes.empty()) {
        config.attack.target_classes.resize(models.target->num_classes());
        std::iota(config.attack.target_classes.begin(), config.attack.target_classes.end(), 0);
      }
      out.attack = attack::run_attack(config.attack, *models.generator, *models.target,
                                      config.attack.discriminator_weight > 0.0 ? models.critic.get()
                                                                               : nullptr);
      out.attack.config_hash = config_hash(input);
      std::ostringstream trace;
      attack::write_loss_trace_csv(out.attack, trace);
      writer.text("loss_trace.csv", trace.str());
      writer.text("selected.csv", selected_csv(out.attack));
    });
    FeatureSet features;
    log.run("features", [&] {
      features = extract_features(out.attack, models, config.attack);
      writer.text("features/eval_logits.features", features_text(features.eval_logits));
      writer.text("features/eval_generated.features", features_text(features.eval_generated));
      writer.text("features/eval_training.features", features_text(features.eval_training));
      writer.text("features/face_generated.features", features_text(features.face_generated));
      writer.text("features/face_training.features", features_text(features.face_training));
      writer.text("features/info.json",
                  json({{"classes", features.classes}, {"notes", features.notes}}).dump(2) + "\n");
    });
    log.run("metrics", [&] {
      out.metrics = compute_metrics(features, config.metrics);
      std::ostringstream csv;
      metrics::write_metrics_csv(csv, out.metrics);
      writer.text("metrics.csv", csv.str());
      const json report = {{"config_hash", out.attack.config_hash},
                           {"seed", config.seed},
                           {"metrics", metrics::to_json(out.metrics)},
                           {"classes", selection_json(out.attack)}};
      writer.text("report.json", report.dump(2) + "\n");
    });
    log.run("images", [&] {
      json captions = json::object();
      for (const auto& cls : out.attack.classes) {
        const auto selected = cls.selected();
        const std::string cdir = class_dir(cls.target_class);
        std::vector<ImageTensor> images;
        json scores = json::array();
        for (std::size_t r = 0; r < selected.size(); ++r) {
          images.push_back(selected[r]->image);
          scores.push_back(selected[r]->robust_score);
          if (config.output.images) {
            char name[64];
            std::snprintf(name, sizeof(name), "/rank_%03zu_cand_%03zu.png", r,
                          selected[r]->candidate_index);
            writer.png("images/" + cdir + name, selected[r]->image);
          }
        }
        captions[std::to_string(cls.target_class)] = scores;
        if (config.output.grids && !images.empty()) {
          const auto columns =
              static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(images.size()))));
          writer.png("grids/" + cdir + ".png", make_grid(images, columns));
        }
      }
      extra["grid_captions"] = captions;
    });
  } catch (...) {
    write_manifest(writer, input, log, extra);
    throw;
  }
  write_manifest(writer, input, log, extra);
  return out;
}

// --- ablation ----------------------------------------------------------------------------

const std::vector<std::string>& ablation_preset_names() {
  static const std::vector<std::string> names = {
      "standard",           "ce_loss",          "no_center_cropping",
      "resize_small",       "resize_large",     "no_random_cropping",
      "no_initial_selection", "no_final_selection", "discriminator_loss"};
  return names;
}

namespace {

template <class Spec>
std::vector<transforms::TransformSpec> without_kind(const transforms::TransformPipeline& p) {
  std::vector<transforms::TransformSpec> out;
  for (const auto& s : p.specs()) {
    if (!std::holds_alternative<Spec>(s)) out.push_back(s);
  }
  return out;
}

// Replaces the first resize to the classifier input by `replacement`.
transforms::TransformPipeline replace_resize(
    const transforms::TransformPipeline& p,
    const std::function<std::vector<transforms::TransformSpec>(transforms::Size)>& replacement) {
  std::vector<transforms::TransformSpec> out;
  bool done = false;
  for (const auto& s : p.specs()) {
    if (const auto* r = std::get_if<transforms::ResizeSpec>(&s); r != nullptr && !done) {
      for (auto& t : replacement(r->size)) out.push_back(t);
      done = true;
    } else {
      out.push_back(s);
    }
  }
  require(done, "resize presets need a resize transform in the optimization pipeline");
  return transforms::TransformPipeline(std::move(out));
}

std::size_t scaled(std::size_t n, std::size_t num, std::size_t den) {
  return std::max<std::size_t>(1, (n * num + den / 2) / den);
}

}  // namespace

RunConfig apply_preset(const RunConfig& base, std::string_view preset) {
  const auto& names = ablation_preset_names();
  if (std::find(names.begin(), names.end(), preset) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw ContractViolation("unknown ablation preset '" + std::string(preset) +
                            "'; valid presets: " + valid);
  }
  RunConfig c = base;
  auto& a = c.attack;
  if (preset == "ce_loss") {
    a.loss = losses::LossKind::cross_entropy;
    a.learning_rate = 0.01;
  } else if (preset == "no_center_cropping") {
    a.optimization_transforms =
        transforms::TransformPipeline(without_kind<transforms::CenterCropSpec>(a.optimization_transforms));
  } else if (preset == "resize_small") {
    a.optimization_transforms = replace_resize(a.optimization_transforms, [](transforms::Size s) {
      const transforms::Size small{scaled(s.height, 2, 3), scaled(s.width, 2, 3)};
      return std::vector<transforms::TransformSpec>{transforms::ResizeSpec{small},
                                                    transforms::ResizeSpec{s}};
    });
  } else if (preset == "resize_large") {
    a.optimization_transforms = replace_resize(a.optimization_transforms, [](transforms::Size s) {
      const transforms::Size large{scaled(s.height, 4, 3), scaled(s.width, 4, 3)};
      return std::vector<transforms::TransformSpec>{transforms::ResizeSpec{large},
                                                    transforms::CenterCropSpec{s}};
    });
  } else if (preset == "no_random_cropping") {
    a.optimization_transforms = transforms::TransformPipeline(
        without_kind<transforms::RandomResizedCropSpec>(a.optimization_transforms));
  } else if (preset == "no_initial_selection") {
    a.initial_selection = false;
  } else if (preset == "no_final_selection") {
    a.final_selection = false;
  } else if (preset == "discriminator_loss") {
    a.discriminator_weight = 0.1;
  }
  return c;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << kAblationCsvHeader << '\n';
  char buf[512];
  for (const auto& row : rows) {
    const auto& r = row.aggregate;
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.9g,%.9g,%.9g,%.6f,%.6f,%.6f,%.6f,%zu\n",
                  row.preset.c_str(), r.acc_at_1, r.acc_at_5, r.delta_eval, r.delta_face, r.fid,
                  r.precision, r.recall, r.density, r.coverage, r.samples);
    out << buf;
  }
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::string>& presets,
                                      const fs::path& out_dir) {
  require(!presets.empty(), "run_ablation: no presets given");
  std::vector<RunConfig> configs;
  for (const auto& p : presets) {
    configs.push_back(apply_preset(base, p));
    configs.back().output.directory = out_dir / p;
  }
  const ModelBundle models = load_models(base);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < presets.size(); ++i) {
    const ExperimentResult r = run_experiment(configs[i], models);
    rows.push_back({presets[i], config_hash(configs[i]), r.metrics.aggregate});
  }
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  write_text_file(out_dir / "ablation.csv", csv.str());
  return rows;
}

// --- gradient diagnostic -------------------------------------------------------------------

double LossCurve::mean_normalized_above(double threshold, GradientMeasure measure) const {
  const auto& norms = normalized[static_cast<std::size_t>(measure)];
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t t = 0; t < scores[i].size(); ++t) {
      if (scores[i][t] > threshold) {
        sum += norms[i][t];
        ++n;
      }
    }
  }
  return n == 0 ? kNaN : sum / static_cast<double>(n);
}

std::optional<std::size_t> LossCurve::first_step_above(double threshold) const {
  for (const auto& r : rows) {
    if (r.mean_score > threshold) return r.step;
  }
  return std::nullopt;
}

namespace {

std::array<double, 3> gradient_measures(const attack::StepRecord& r) {
  return {r.image_grad_l1, r.grad_norm, r.logit_grad_l1};
}

LossCurve loss_curve(const std::string& name, const std::vector<attack::CandidateResult>& cands,
                     std::size_t steps) {
  LossCurve curve;
  curve.loss = name;
  for (const auto& c : cands) {
    if (c.failed || c.trace.size() != steps) continue;
    const auto first = gradient_measures(c.trace.front());
    // Zero first-step gradients cannot be normalized.
    if (std::any_of(first.begin(), first.end(), [](double g) { return !(g > 0.0); })) continue;
    std::vector<double> score;
    std::array<std::vector<double>, 3> norms;
    for (const auto& r : c.trace) {
      const auto g = gradient_measures(r);
      for (std::size_t m = 0; m < 3; ++m) norms[m].push_back(g[m] / first[m]);
      score.push_back(r.target_score);
    }
    for (std::size_t m = 0; m < 3; ++m) curve.normalized[m].push_back(std::move(norms[m]));
    curve.scores.push_back(std::move(score));
  }
  require(!curve.scores.empty(), "gradient_diagnostic: no usable candidates for " + name);
  const double n = static_cast<double>(curve.scores.size());
  for (std::size_t t = 0; t < steps; ++t) {
    DiagnosticRow row;
    row.loss = name;
    row.step = t;
    row.candidates = curve.scores.size();
    for (std::size_t i = 0; i < curve.scores.size(); ++i) {
      row.mean_score += curve.scores[i][t] / n;
      for (std::size_t m = 0; m < 3; ++m) row.normalized[m] += curve.normalized[m][i][t] / n;
    }
    curve.rows.push_back(row);
  }
  return curve;
}

}  // namespace

GradientDiagnostic gradient_diagnostic(const RunConfig& config) {
  return gradient_diagnostic(config, load_models(config));
}

GradientDiagnostic gradient_diagnostic(const RunConfig& input, const ModelBundle& models) {
  attack::AttackConfig ac = input.attack;
  ac.master_seed = input.seed;
  require(ac.steps > 0, "gradient_diagnostic: need at least one step");
  if (ac.target_classes.empty()) {
    ac.target_classes.resize(models.target->num_classes());
    std::iota(ac.target_classes.begin(), ac.target_classes.end(), 0);
  }
  const DifferentiableModel* critic = ac.discriminator_weight > 0.0 ? models.critic.get() : nullptr;
  const attack::CandidatePool pool =
      attack::prepare_candidates(ac, *models.generator, *models.target, critic);
  const attack::OptimizationModels om{*models.generator, *models.target, critic};

  auto run = [&](losses::LossKind kind) {
    attack::AttackConfig cfg = ac;
    cfg.loss = kind;
    cfg.optimization_transforms = ac.deterministic_transforms();
    std::vector<attack::CandidateResult> all;
    for (std::size_t k = 0; k < pool.classes.size(); ++k) {
      auto r = attack::optimize_candidates(pool.per_class[k], pool.classes[k], om, cfg);
      all.insert(all.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
    }
    return all;
  };
  GradientDiagnostic d;
  d.poincare = loss_curve("poincare", run(losses::LossKind::poincare), ac.steps);
  d.cross_entropy = loss_curve("cross_entropy", run(losses::LossKind::cross_entropy), ac.steps);
  return d;
}

void write_diagnostic_csv(std::ostream& out, const GradientDiagnostic& diagnostic) {
  out << kDiagnosticCsvHeader << '\n';
  char buf[256];
  for (const auto* curve : {&diagnostic.poincare, &diagnostic.cross_entropy}) {
    for (const auto& r : curve->rows) {
      std::snprintf(buf, sizeof(buf), "%s,%zu,%.12g,%.12g,%.12g,%.12g,%zu\n", r.loss.c_str(),
                    r.step, r.mean_score, r.normalized[0], r.normalized[1], r.normalized[2],
                    r.candidates);
      out << buf;
    }
  }
}

// --- manifest --------------------------------------------------------------------------------

VerifyReport verify_manifest(const fs::path& dir) {
  VerifyReport report;
  const json manifest = json::parse(read_text_file(dir / "manifest.json"));
  require(manifest.contains("files") && manifest.at("files").is_array(),
          "manifest without a file list");
  if (manifest.value("status", "") != "complete") {
    report.problems.push_back("manifest: run status is '" + manifest.value("status", "?") + "'");
  }
  for (const auto& f : manifest.at("files")) {
    const std::string rel = f.at("path").get<std::string>();
    ++report.checked;
    const fs::path p = dir / rel;
    if (!fs::exists(p)) {
      report.problems.push_back(rel + ": missing");
      continue;
    }
    const std::string hash = sha256_file(p);
    if (hash != f.at("sha256").get<std::string>()) report.problems.push_back(rel + ": hash mismatch");
  }
  return report;
}

}  // namespace ppa::harness
