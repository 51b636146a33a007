#include "ppa/harness/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ppa/harness/io.hpp"

namespace ppa::harness {

namespace {

using nlohmann::json;

std::string join_issues(const std::vector<ConfigIssue>& issues) {
  std::string out = "invalid configuration:";
  for (const auto& i : issues) out += "\n  " + (i.path.empty() ? "<root>" : i.path) + ": " + i.message;
  return out;
}

// Typed reads that reject silent conversions (negative -> unsigned, etc.).
template <class U>
  requires std::is_unsigned_v<U>
bool read_value(const json& v, U& out) {
  if (v.is_number_unsigned()) {
    out = v.get<U>();
    return true;
  }
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    out = static_cast<U>(v.get<std::int64_t>());
    return true;
  }
  return false;
}
bool read_value(const json& v, int& out) {
  if (!v.is_number_integer()) return false;
  out = v.get<int>();
  return true;
}
bool read_value(const json& v, double& out) {
  if (!v.is_number()) return false;
  out = v.get<double>();
  return true;
}
bool read_value(const json& v, bool& out) {
  if (!v.is_boolean()) return false;
  out = v.get<bool>();
  return true;
}
bool read_value(const json& v, std::string& out) {
  if (!v.is_string()) return false;
  out = v.get<std::string>();
  return true;
}

template <class T>
constexpr const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_same_v<T, double>) return "a number";
  else if constexpr (std::is_same_v<T, int>) return "an integer";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else return "a non-negative integer";
}

// One JSON object of the config. Reads record type errors and the finish()
// call reports keys that were never read.
class Section {
 public:
  Section(const json* obj, std::string path, std::vector<ConfigIssue>& issues)
      : obj_(obj), path_(std::move(path)), issues_(issues) {
    if (obj_ != nullptr && !obj_->is_object()) {
      issue("", "expected an object");
      obj_ = nullptr;
    }
  }

  bool present() const { return obj_ != nullptr; }
  bool has(const char* key) const { return obj_ != nullptr && obj_->contains(key); }

  const json* raw(const char* key) {
    known_.insert(key);
    if (!has(key)) return nullptr;
    return &obj_->at(key);
  }

  template <class T>
  bool get(const char* key, T& out) {
    const json* v = raw(key);
    if (v == nullptr) return false;
    if (!read_value(*v, out)) {
      issue(key, std::string("expected ") + type_name<T>());
      return false;
    }
    return true;
  }

  template <class T>
  bool require_key(const char* key, T& out) {
    if (!has(key)) {
      known_.insert(key);
      issue(key, "required key is missing");
      return false;
    }
    return get(key, out);
  }

  Section sub(const char* key) { return Section(raw(key), child(key), issues_); }

  void issue(const std::string& key, const std::string& message) {
    issues_.push_back({child(key), message});
  }

  std::string child(const std::string& key) const {
    if (key.empty()) return path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() {
    if (obj_ == nullptr) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!known_.contains(key)) issue(key, "unknown key");
    }
  }

 private:
  const json* obj_;
  std::string path_;
  std::vector<ConfigIssue>& issues_;
  std::set<std::string> known_;
};

json size_json(transforms::Size s) { return json::array({s.height, s.width}); }

transforms::Size size_from(const json& j, const char* what) {
  require(j.is_array() && j.size() == 2 && j[0].is_number_unsigned() && j[1].is_number_unsigned(),
          std::string(what) + " must be [height, width] with non-negative integers");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

transforms::Range range_from(const json& j, const char* what) {
  require(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(),
          std::string(what) + " must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                [&](const char* a) { return key == a; });
    require(ok, "unknown key '" + key + "'");
  }
}

transforms::TransformSpec spec_from_json(const json& j) {
  using namespace transforms;
  require(j.is_object() && j.contains("kind") && j.at("kind").is_string(),
          "transform must be an object with a string 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  TransformSpec spec;
  if (kind == "center_crop") {
    check_keys(j, {"kind", "size"});
    require(j.contains("size"), "center_crop needs 'size'");
    spec = CenterCropSpec{size_from(j.at("size"), "size")};
  } else if (kind == "resize") {
    check_keys(j, {"kind", "size"});
    require(j.contains("size"), "resize needs 'size'");
    spec = ResizeSpec{size_from(j.at("size"), "size")};
  } else if (kind == "hflip") {
    check_keys(j, {"kind", "probability"});
    HFlipSpec s;
    if (j.contains("probability")) {
      require(j.at("probability").is_number(), "probability must be a number");
      s.probability = j.at("probability").get<double>();
    }
    spec = s;
  } else if (kind == "random_resized_crop") {
    check_keys(j, {"kind", "area", "ratio", "size"});
    require(j.contains("size"), "random_resized_crop needs 'size'");
    RandomResizedCropSpec s;
    if (j.contains("area")) s.area = range_from(j.at("area"), "area");
    if (j.contains("ratio")) s.ratio = range_from(j.at("ratio"), "ratio");
    s.out_size = size_from(j.at("size"), "size");
    spec = s;
  } else {
    throw ContractViolation("unknown transform kind '" + kind +
                            "' (expected center_crop, resize, hflip, random_resized_crop)");
  }
  validate(spec);
  return spec;
}

json spec_to_json(const transforms::TransformSpec& spec) {
  using namespace transforms;
  return std::visit(
      [](const auto& s) -> json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, CenterCropSpec>) {
          return {{"kind", "center_crop"}, {"size", size_json(s.size)}};
        } else if constexpr (std::is_same_v<S, ResizeSpec>) {
          return {{"kind", "resize"}, {"size", size_json(s.size)}};
        } else if constexpr (std::is_same_v<S, HFlipSpec>) {
          return {{"kind", "hflip"}, {"probability", s.probability}};
        } else {
          return {{"kind", "random_resized_crop"},
                  {"area", {s.area.lo, s.area.hi}},
                  {"ratio", {s.ratio.lo, s.ratio.hi}},
                  {"size", size_json(s.out_size)}};
        }
      },
      spec);
}

// Reads a transform list, one issue per bad entry.
std::optional<transforms::TransformPipeline> read_pipeline(Section& section, const char* key) {
  const json* v = section.raw(key);
  if (v == nullptr) return std::nullopt;
  if (!v->is_array()) {
    section.issue(key, "expected an array of transforms");
    return std::nullopt;
  }
  std::vector<transforms::TransformSpec> specs;
  bool ok = true;
  for (std::size_t i = 0; i < v->size(); ++i) {
    try {
      specs.push_back(spec_from_json((*v)[i]));
    } catch (const std::exception& e) {
      section.issue(std::string(key) + "[" + std::to_string(i) + "]", e.what());
      ok = false;
    }
  }
  if (!ok) return std::nullopt;
  return transforms::TransformPipeline(std::move(specs));
}

const transforms::RandomResizedCropSpec* find_random_crop(const transforms::TransformPipeline& p) {
  for (const auto& s : p.specs()) {
    if (const auto* r = std::get_if<transforms::RandomResizedCropSpec>(&s)) return r;
  }
  return nullptr;
}

void parse_toy(Section& s, ToyBenchmarkParams& toy) {
  // Keys and their types come from the default parameter document.
  const json defaults = ToyBenchmarkParams{}.to_json();
  json given = json::object();
  for (const auto& [key, def] : defaults.items()) {
    const json* v = s.raw(key.c_str());
    if (v == nullptr) continue;
    const bool ok = def.is_number_unsigned() ? (v->is_number_unsigned() ||
                                                (v->is_number_integer() && v->get<std::int64_t>() >= 0))
                                             : v->is_number();
    if (!ok) {
      s.issue(key, def.is_number_unsigned() ? "expected a non-negative integer" : "expected a number");
      continue;
    }
    given[key] = *v;
  }
  toy = ToyBenchmarkParams::from_json(given);
  if (toy.num_classes < 2) s.issue("num_classes", "need at least 2 classes");
  if (toy.train_per_class < 2) s.issue("train_per_class", "need at least 2 images per class");
  if (toy.crop_size == 0 || toy.crop_size > toy.generator_size) {
    s.issue("crop_size", "must lie in [1, generator_size]");
  }
  if (toy.classifier_size == 0) s.issue("classifier_size", "must be positive");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : std::runtime_error(join_issues(issues)), issues_(std::move(issues)) {}

nlohmann::json transforms_to_json(const transforms::TransformPipeline& pipeline) {
  json out = json::array();
  for (const auto& s : pipeline.specs()) out.push_back(spec_to_json(s));
  return out;
}

transforms::TransformPipeline transforms_from_json(const nlohmann::json& j) {
  require(j.is_array(), "transform list must be an array");
  std::vector<transforms::TransformSpec> specs;
  for (const auto& s : j) specs.push_back(spec_from_json(s));
  return transforms::TransformPipeline(std::move(specs));
}

RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  std::vector<ConfigIssue> issues;
  RunConfig config;
  Section root(&j, "", issues);
  if (!root.present()) throw ConfigError(std::move(issues));

  if (root.get("schema_version", config.schema_version) && config.schema_version != kSchemaVersion) {
    root.issue("schema_version", "unsupported schema version " +
                                     std::to_string(config.schema_version) + " (expected " +
                                     std::to_string(kSchemaVersion) + ")");
  }
  root.require_key("seed", config.seed);

  // models
  Section models = root.sub("models");
  std::string source = "toy";
  models.get("source", source);
  if (source == "toy") {
    config.source = ModelSource::toy;
    Section toy = models.sub("toy");
    parse_toy(toy, config.toy);
    toy.finish();
  } else if (source == "files") {
    config.source = ModelSource::files;
    auto path = [&](const char* key, std::filesystem::path& out, bool required) {
      std::string p;
      const bool found = required ? models.require_key(key, p) : models.get(key, p);
      if (found) out = resolve(base_dir, p);
    };
    path("generator", config.files.generator, true);
    path("target", config.files.target, true);
    path("eval", config.files.eval, true);
    path("face", config.files.face, true);
    path("critic", config.files.critic, false);
    path("training_images", config.files.training_images, true);
  } else {
    models.issue("source", "expected \"toy\" or \"files\"");
  }
  models.finish();

  // attack
  Section a = root.sub("attack");
  attack::AttackConfig& ac = config.attack;
  a.get("sample_count", ac.sample_count);
  a.get("candidates_per_class", ac.candidates_per_class);
  a.get("final_count", ac.final_count);
  a.get("steps", ac.steps);
  a.get("learning_rate", ac.learning_rate);
  if (const json* betas = a.raw("adam_betas")) {
    if (betas->is_array() && betas->size() == 2 && (*betas)[0].is_number() && (*betas)[1].is_number()) {
      ac.beta1 = (*betas)[0].get<double>();
      ac.beta2 = (*betas)[1].get<double>();
    } else {
      a.issue("adam_betas", "expected [beta1, beta2]");
    }
  }
  a.get("adam_epsilon", ac.adam_epsilon);
  a.get("truncation_psi", ac.truncation_psi);
  a.get("truncation_cutoff", ac.truncation_cutoff);
  std::string loss = "poincare";
  if (a.get("loss", loss)) {
    if (loss == "poincare") ac.loss = losses::LossKind::poincare;
    else if (loss == "cross_entropy") ac.loss = losses::LossKind::cross_entropy;
    else a.issue("loss", "expected \"poincare\" or \"cross_entropy\"");
  }
  a.get("discriminator_weight", ac.discriminator_weight);
  a.get("mc_samples", ac.mc_samples);
  a.get("batch_size", ac.batch_size);
  if (const json* classes = a.raw("target_classes")) {
    bool ok = classes->is_array();
    if (ok) {
      for (const auto& c : *classes) {
        std::size_t v = 0;
        if (!read_value(c, v)) {
          ok = false;
          break;
        }
        ac.target_classes.push_back(v);
      }
    }
    if (!ok) a.issue("target_classes", "expected an array of non-negative class indices");
  }
  a.get("initial_selection", ac.initial_selection);
  a.get("final_selection", ac.final_selection);
  const auto opt = read_pipeline(a, "optimization_transforms");
  const auto sel = read_pipeline(a, "selection_transforms");
  if (config.source == ModelSource::toy) {
    ac.optimization_transforms = opt.value_or(toy_optimization_transforms(config.toy));
    ac.selection_transforms = sel.value_or(toy_selection_transforms(config.toy));
  } else {
    if (opt) ac.optimization_transforms = *opt;
    else if (!a.has("optimization_transforms")) a.issue("optimization_transforms", "required for the files model source");
    if (sel) ac.selection_transforms = *sel;
    else if (!a.has("selection_transforms")) a.issue("selection_transforms", "required for the files model source");
  }
  a.finish();
  ac.master_seed = config.seed;

  // Range checks with key paths.
  auto check = [&](bool ok, const char* key, const std::string& msg) {
    if (!ok) issues.push_back({std::string("attack.") + key, msg});
  };
  check(ac.sample_count > 0, "sample_count", "must be positive");
  check(ac.candidates_per_class > 0, "candidates_per_class", "must be positive");
  check(ac.candidates_per_class <= ac.sample_count, "candidates_per_class",
        "must not exceed sample_count");
  check(ac.final_count > 0, "final_count", "must be positive");
  check(ac.final_count <= ac.candidates_per_class, "final_count",
        "must not exceed candidates_per_class");
  check(ac.learning_rate > 0.0, "learning_rate", "must be positive");
  check(ac.beta1 >= 0.0 && ac.beta1 < 1.0 && ac.beta2 >= 0.0 && ac.beta2 < 1.0, "adam_betas",
        "each beta must lie in [0, 1)");
  check(ac.adam_epsilon > 0.0, "adam_epsilon", "must be positive");
  check(ac.truncation_psi >= 0.0 && ac.truncation_psi <= 1.0, "truncation_psi",
        "must lie in [0, 1]");
  check(ac.truncation_cutoff >= 0, "truncation_cutoff", "must be non-negative");
  check(ac.discriminator_weight >= 0.0, "discriminator_weight", "must be non-negative");
  check(ac.mc_samples >= 1, "mc_samples", "must be at least 1");
  check(ac.batch_size >= 1, "batch_size", "must be at least 1");
  const auto* opt_crop = find_random_crop(ac.optimization_transforms);
  const auto* sel_crop = find_random_crop(ac.selection_transforms);
  if (opt_crop != nullptr) {
    check(sel_crop != nullptr && sel_crop->area.lo < opt_crop->area.lo, "selection_transforms",
          "selection needs a random resized crop with a wider area range than optimization");
  }

  // metrics
  Section m = root.sub("metrics");
  m.get("knn_k", config.metrics.knn_k);
  m.get("fid_correct_only", config.metrics.fid_correct_only);
  if (config.metrics.knn_k < 1) m.issue("knn_k", "must be at least 1");
  m.finish();

  // output
  Section o = root.sub("output");
  std::string directory;
  if (o.get("directory", directory)) config.output.directory = directory;
  o.get("images", config.output.images);
  o.get("grids", config.output.grids);
  o.finish();

  root.finish();
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError({{"", std::string("parse error: ") + e.what()}});
  }
  return parse_config(j, path.parent_path());
}

nlohmann::json to_json(const RunConfig& config) {
  const auto& a = config.attack;
  json models;
  if (config.source == ModelSource::toy) {
    models = {{"source", "toy"}, {"toy", config.toy.to_json()}};
  } else {
    const auto& f = config.files;
    models = {{"source", "files"},          {"generator", f.generator.string()},
              {"target", f.target.string()}, {"eval", f.eval.string()},
              {"face", f.face.string()},     {"training_images", f.training_images.string()}};
    if (!f.critic.empty()) models["critic"] = f.critic.string();
  }
  return {
      {"schema_version", config.schema_version},
      {"seed", config.seed},
      {"models", models},
      {"attack",
       {{"sample_count", a.sample_count},
        {"candidates_per_class", a.candidates_per_class},
        {"final_count", a.final_count},
        {"steps", a.steps},
        {"learning_rate", a.learning_rate},
        {"adam_betas", {a.beta1, a.beta2}},
        {"adam_epsilon", a.adam_epsilon},
        {"truncation_psi", a.truncation_psi},
        {"truncation_cutoff", a.truncation_cutoff},
        {"loss", a.loss == losses::LossKind::poincare ? "poincare" : "cross_entropy"},
        {"discriminator_weight", a.discriminator_weight},
        {"mc_samples", a.mc_samples},
        {"batch_size", a.batch_size},
        {"target_classes", a.target_classes},
        {"initial_selection", a.initial_selection},
        {"final_selection", a.final_selection},
        {"optimization_transforms", transforms_to_json(a.optimization_transforms)},
        {"selection_transforms", transforms_to_json(a.selection_transforms)}}},
      {"metrics",
       {{"knn_k", config.metrics.knn_k}, {"fid_correct_only", config.metrics.fid_correct_only}}},
      {"output",
       {{"directory", config.output.directory.string()},
        {"images", config.output.images},
        {"grids", config.output.grids}}}};
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  write_text_file(path, to_json(config).dump(2) + "\n");
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output");
  return sha256_hex(j.dump());
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

}  // namespace ppa::harness
