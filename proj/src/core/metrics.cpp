#include "ppa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ppa/kernels.hpp"

namespace ppa::metrics {

// --- FeatureMatrix -------------------------------------------------------------

FeatureMatrix::FeatureMatrix(std::size_t dim, FeatureSource source) : dim_(dim), source_(source) {
  require(dim > 0, "FeatureMatrix: dim must be positive");
}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<double> data,
                             FeatureSource source, std::vector<std::size_t> labels)
    : dim_(dim), data_(std::move(data)), source_(source), labels_(std::move(labels)) {
  require(dim > 0, "FeatureMatrix: dim must be positive");
  require(data_.size() == rows * dim, "FeatureMatrix: data size does not match rows x dim");
  require(labels_.empty() || labels_.size() == rows, "FeatureMatrix: one label per row required");
  for (double v : data_) require(!std::isnan(v), "FeatureMatrix: NaN entry");
}

std::span<const double> FeatureMatrix::row(std::size_t i) const {
  require(i < rows(), "FeatureMatrix: row index out of range");
  return std::span<const double>(data_).subspan(i * dim_, dim_);
}

void FeatureMatrix::append(std::span<const double> row, std::optional<std::size_t> label) {
  require(row.size() == dim_, "FeatureMatrix: row has dimension " + std::to_string(row.size()) +
                                  ", expected " + std::to_string(dim_));
  for (double v : row) require(!std::isnan(v), "FeatureMatrix: NaN entry");
  require(rows() == 0 || label.has_value() == has_labels(),
          "FeatureMatrix: mixing labeled and unlabeled rows");
  if (label.has_value()) labels_.push_back(*label);
  data_.insert(data_.end(), row.begin(), row.end());
}

FeatureMatrix FeatureMatrix::select_label(std::size_t label) const {
  require(has_labels(), "FeatureMatrix: no labels to select by");
  FeatureMatrix out(dim_, source_);
  for (std::size_t i = 0; i < rows(); ++i) {
    if (labels_[i] == label) out.append(row(i), label);
  }
  return out;
}

Eigen::MatrixXd FeatureMatrix::to_eigen() const {
  Eigen::MatrixXd m(rows(), dim_);
  for (std::size_t i = 0; i < rows(); ++i) {
    for (std::size_t j = 0; j < dim_; ++j) m(i, j) = data_[i * dim_ + j];
  }
  return m;
}

void write_features(std::ostream& out, const FeatureMatrix& m) {
  out << "ppa-features 1\n"
      << m.rows() << ' ' << m.dim() << ' '
      << (m.source() == FeatureSource::real ? "real" : "generated") << ' '
      << (m.has_labels() ? 1 : 0) << '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (m.has_labels()) out << m.labels()[i];
    const auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", r[j]);
      if (m.has_labels() || j > 0) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

FeatureMatrix read_features(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  require(magic == "ppa-features" && version == 1, "feature file: bad header");
  std::size_t count = 0, dim = 0;
  std::string tag;
  int labeled = 0;
  in >> count >> dim >> tag >> labeled;
  require(static_cast<bool>(in) && (tag == "real" || tag == "generated"),
          "feature file: bad size line");
  std::vector<double> data(count * dim);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < count; ++i) {
    if (labeled != 0) {
      std::size_t label = 0;
      in >> label;
      labels.push_back(label);
    }
    for (std::size_t j = 0; j < dim; ++j) in >> data[i * dim + j];
  }
  require(static_cast<bool>(in), "feature file: truncated data");
  return FeatureMatrix(count, dim, std::move(data),
                       tag == "real" ? FeatureSource::real : FeatureSource::generated,
                       std::move(labels));
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write feature file " + path.string());
  write_features(out, m);
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read feature file " + path.string());
  return read_features(in);
}

// --- accuracy --------------------------------------------------------------------

TopKAccuracy top_k_accuracy(const FeatureMatrix& logits, std::size_t target_class) {
  require(target_class < logits.dim(), "top_k_accuracy: class index out of range");
  TopKAccuracy acc;
  acc.k_used = std::min<std::size_t>(5, logits.dim());
  acc.samples = logits.rows();
  if (acc.samples == 0) return acc;
  std::size_t hits1 = 0, hits5 = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto o = logits.row(i);
    std::size_t larger = 0;
    for (double v : o) {
      if (v > o[target_class]) ++larger;
    }
    // Top-1 is the argmax with the lowest-index tie-break.
    const auto argmax = static_cast<std::size_t>(std::max_element(o.begin(), o.end()) - o.begin());
    if (argmax == target_class) ++hits1;
    if (larger < acc.k_used) ++hits5;
  }
  acc.acc_at_1 = static_cast<double>(hits1) / acc.samples;
  acc.acc_at_5 = static_cast<double>(hits5) / acc.samples;
  return acc;
}

AccuracyReport attack_accuracy(const attack::AttackResult& result, const Classifier& eval_model,
                               const transforms::TransformPipeline& eval_transforms,
                               const Classifier* target) {
  AccuracyReport report;
  if (target == &eval_model) {
    report.notes.push_back("evaluation model is the target model; accuracy is not independent");
  }
  if (eval_model.num_classes() < 5) {
    report.notes.push_back("fewer than 5 classes; acc@5 computed over top-" +
                           std::to_string(eval_model.num_classes()));
  }
  std::size_t total = 0;
  double hits1 = 0.0, hits5 = 0.0;
  for (const auto& cls : result.classes) {
    FeatureMatrix logits(eval_model.num_classes(), FeatureSource::generated);
    for (const auto* cand : cls.selected()) {
      logits.append(eval_model.logits(eval_transforms.apply(cand->image).output()));
    }
    const TopKAccuracy acc = top_k_accuracy(logits, cls.target_class);
    report.classes.push_back(cls.target_class);
    report.per_class.push_back(acc);
    total += acc.samples;
    hits1 += acc.acc_at_1 * acc.samples;
    hits5 += acc.acc_at_5 * acc.samples;
  }
  report.aggregate.k_used = std::min<std::size_t>(5, eval_model.num_classes());
  report.aggregate.samples = total;
  if (total > 0) {
    report.aggregate.acc_at_1 = hits1 / total;
    report.aggregate.acc_at_5 = hits5 / total;
  }
  return report;
}

// --- distances ---------------------------------------------------------------------

std::vector<double> min_squared_distances(const FeatureMatrix& generated,
                                          const FeatureMatrix& training) {
  require(training.rows() > 0, "feature_distance: empty training feature set");
  require(generated.dim() == training.dim(), "feature_distance: dimension mismatch");
  std::vector<double> out(generated.rows());
  for (std::size_t i = 0; i < generated.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < training.rows(); ++j) {
      best = std::min(best, kernels::squared_distance(generated.row(i), training.row(j)));
    }
    out[i] = best;
  }
  return out;
}

DistanceReport feature_distance(const std::vector<FeatureMatrix>& generated,
                                const std::vector<FeatureMatrix>& training) {
  require(generated.size() == training.size(), "feature_distance: class count mismatch");
  require(!generated.empty(), "feature_distance: no classes");
  DistanceReport report;
  for (std::size_t c = 0; c < generated.size(); ++c) {
    require(training[c].rows() > 0,
            "feature_distance: class " + std::to_string(c) + " has no training features");
    const auto minima = min_squared_distances(generated[c], training[c]);
    double mean = 0.0;
    for (double d : minima) mean += d;
    mean = minima.empty() ? 0.0 : mean / minima.size();
    report.per_class.push_back(mean);
    report.aggregate += mean;
  }
  report.aggregate /= static_cast<double>(generated.size());
  return report;
}

BaselineReport inner_class_baseline(const std::vector<FeatureMatrix>& training) {
  require(!training.empty(), "inner_class_baseline: no classes");
  BaselineReport report;
  for (std::size_t c = 0; c < training.size(); ++c) {
    const FeatureMatrix& m = training[c];
    require(m.rows() >= 2,
            "inner_class_baseline: class " + std::to_string(c) + " needs at least two samples");
    double class_mean = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < m.rows(); ++j) {
        if (j != i) sum += kernels::squared_distance(m.row(i), m.row(j));
      }
      class_mean += sum / static_cast<double>(m.rows() - 1);
    }
    report.per_class.push_back(class_mean / static_cast<double>(m.rows()));
  }
  for (double v : report.per_class) report.mean += v;
  report.mean /= static_cast<double>(report.per_class.size());
  for (double v : report.per_class) report.std_dev += (v - report.mean) * (v - report.mean);
  report.std_dev = std::sqrt(report.std_dev / static_cast<double>(report.per_class.size()));
  return report;
}

// --- FID ---------------------------------------------------------------------------

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& s) {
  require(s.rows() == s.cols(), "matrix_sqrt_psd: matrix must be square");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  const double asymmetry = s.rows() == 0 ? 0.0 : (s - s.transpose()).cwiseAbs().maxCoeff();
  require(asymmetry <= 1e-8 * scale, "matrix_sqrt_psd: matrix is not symmetric");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
  require(solver.info() == Eigen::Success, "matrix_sqrt_psd: eigendecomposition failed");
  const Eigen::VectorXd roots = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().transpose();
}

Moments moments(const FeatureMatrix& m) {
  require(m.rows() >= 2, "moments: need at least two rows");
  const Eigen::MatrixXd x = m.to_eigen();
  Moments out;
  out.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - out.mean.transpose();
  out.covariance = (centered.transpose() * centered) / static_cast<double>(m.rows() - 1);
  return out;
}

double fid_from_moments(const Moments& a, const Moments& b) {
  require(a.mean.size() == b.mean.size() && a.covariance.rows() == b.covariance.rows(),
          "fid: dimension mismatch");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Eigen::MatrixXd root_a = matrix_sqrt_psd(a.covariance);
  Eigen::MatrixXd inner = root_a * b.covariance * root_a;
  inner = 0.5 * (inner + inner.transpose());
  const double trace_root = matrix_sqrt_psd(inner).trace();
  const double value =
      mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_root;
  return std::max(value, 0.0);
}

double fid(const FeatureMatrix& real, const FeatureMatrix& fake) {
  require(real.rows() >= 2 && fake.rows() >= 2, "fid: each feature set needs at least two rows");
  require(real.dim() == fake.dim(), "fid: dimension mismatch");
  return fid_from_moments(moments(real), moments(fake));
}

// --- kNN manifolds --------------------------------------------------------------------

std::vector<double> knn_radii(const FeatureMatrix& m, std::size_t k) {
  require(k >= 1, "knn: k must be at least 1");
  require(m.rows() > k, "knn: set of " + std::to_string(m.rows()) + " points needs more than k=" +
                            std::to_string(k) + " points");
  std::vector<double> radii(m.rows());
  std::vector<double> d(m.rows() - 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < m.rows(); ++j) {
      if (j != i) d[n++] = kernels::squared_distance(m.row(i), m.row(j));
    }
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    radii[i] = std::sqrt(d[k - 1]);
  }
  return radii;
}

namespace {

// Number of `points` rows inside at least one ball (center row, radius).
std::size_t count_in_manifold(const FeatureMatrix& points, const FeatureMatrix& centers,
                              const std::vector<double>& radii) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    for (std::size_t j = 0; j < centers.rows(); ++j) {
      if (std::sqrt(kernels::squared_distance(points.row(i), centers.row(j))) <= radii[j]) {
        ++hits;
        break;
      }
    }
  }
  return hits;
}

}  // namespace

PrecisionRecall precision_recall(const FeatureMatrix& real, const FeatureMatrix& fake,
                                 std::size_t k) {
  require(real.dim() == fake.dim(), "precision_recall: dimension mismatch");
  const auto real_radii = knn_radii(real, k);
  const auto fake_radii = knn_radii(fake, k);
  PrecisionRecall out;
  out.precision = static_cast<double>(count_in_manifold(fake, real, real_radii)) / fake.rows();
  out.recall = static_cast<double>(count_in_manifold(real, fake, fake_radii)) / real.rows();
  return out;
}

DensityCoverage density_coverage(const FeatureMatrix& real, const FeatureMatrix& fake,
                                 std::size_t k) {
  require(real.dim() == fake.dim(), "density_coverage: dimension mismatch");
  require(fake.rows() > 0, "density_coverage: empty generated set");
  const auto radii = knn_radii(real, k);
  std::size_t in_balls = 0;
  std::vector<bool> covered(real.rows(), false);
  for (std::size_t i = 0; i < fake.rows(); ++i) {
    for (std::size_t j = 0; j < real.rows(); ++j) {
      if (std::sqrt(kernels::squared_distance(fake.row(i), real.row(j))) <= radii[j]) {
        ++in_balls;
        covered[j] = true;
      }
    }
  }
  DensityCoverage out;
  out.density = static_cast<double>(in_balls) / (static_cast<double>(k) * fake.rows());
  out.coverage =
      static_cast<double>(std::count(covered.begin(), covered.end(), true)) / real.rows();
  return out;
}

// --- report ----------------------------------------------------------------------------

void MetricsReport::validate() const {
  // NaN marks a metric that is undefined for too few samples.
  auto check_row = [](const MetricsRow& r) {
    auto rate = [&](double v, const char* name, bool nan_ok) {
      require((nan_ok && std::isnan(v)) || (v >= 0.0 && v <= 1.0),
              "metrics row " + r.label + ": " + name + " outside [0, 1]");
    };
    rate(r.acc_at_1, "acc_at_1", false);
    rate(r.acc_at_5, "acc_at_5", false);
    rate(r.precision, "precision", true);
    rate(r.recall, "recall", true);
    rate(r.coverage, "coverage", true);
    require(r.acc_at_1 <= r.acc_at_5, "metrics row " + r.label + ": acc_at_1 > acc_at_5");
    require(std::isnan(r.fid) || r.fid >= 0.0, "metrics row " + r.label + ": negative fid");
    require(std::isnan(r.density) || r.density >= 0.0,
            "metrics row " + r.label + ": negative density");
  };
  for (const auto& r : per_class) check_row(r);
  check_row(aggregate);
}

namespace {

std::string format_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.9g,%.9g,%.9g,%.6f,%.6f,%.6f,%.6f,%zu",
                r.label.c_str(), r.acc_at_1, r.acc_at_5, r.delta_eval, r.delta_face, r.fid,
                r.precision, r.recall, r.density, r.coverage, r.samples);
  return buf;
}

nlohmann::json row_json(const MetricsRow& r) {
  return {{"class", r.label},         {"acc_at_1", r.acc_at_1},   {"acc_at_5", r.acc_at_5},
          {"delta_eval", r.delta_eval}, {"delta_face", r.delta_face}, {"fid", r.fid},
          {"precision", r.precision}, {"recall", r.recall},       {"density", r.density},
          {"coverage", r.coverage},   {"samples", r.samples}};
}

}  // namespace

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : report.per_class) out << format_row(r) << '\n';
  out << format_row(report.aggregate) << '\n';
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.per_class) rows.push_back(row_json(r));
  return {{"per_class", rows},
          {"aggregate", row_json(report.aggregate)},
          {"knn_k", report.knn_k},
          {"acc_top_k", report.acc_top_k},
          {"fid_correct_only", report.fid_correct_only},
          {"notes", report.notes}};
}

}  // namespace ppa::metrics
