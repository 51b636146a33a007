#pragma once

// Evaluation suite for inversion results: top-k attack accuracy under an
// evaluation classifier, minimum feature distances, Frechet distance between
// Gaussian moment fits, and kNN-manifold precision/recall and
// density/coverage.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ppa/attack.hpp"
#include "ppa/models.hpp"
#include "ppa/transforms.hpp"

namespace ppa::metrics {

enum class FeatureSource { real, generated };

/// count x dim row-major feature rows with optional per-row class labels.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t dim, FeatureSource source);
  FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<double> data,
                FeatureSource source = FeatureSource::real, std::vector<std::size_t> labels = {});

  std::size_t rows() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  FeatureSource source() const { return source_; }
  bool has_labels() const { return !labels_.empty(); }
  const std::vector<std::size_t>& labels() const { return labels_; }
  std::span<const double> row(std::size_t i) const;
  std::span<const double> data() const { return data_; }

  void append(std::span<const double> row, std::optional<std::size_t> label = std::nullopt);
  /// Rows carrying `label`.
  FeatureMatrix select_label(std::size_t label) const;

  Eigen::MatrixXd to_eigen() const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
  FeatureSource source_ = FeatureSource::real;
  std::vector<std::size_t> labels_;
};

/// Text layout:
///   ppa-features 1
///   <count> <dim> <real|generated> <labeled 0|1>
///   one row per line: [label] v_0 ... v_{dim-1}   (%.17g)
void write_features(std::ostream& out, const FeatureMatrix& m);
FeatureMatrix read_features(std::istream& in);
void save_features(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix load_features(const std::filesystem::path& path);

// --- accuracy ------------------------------------------------------------------

struct TopKAccuracy {
  double acc_at_1 = 0.0;
  double acc_at_5 = 0.0;
  std::size_t k_used = 5;  // min(5, classes)
  std::size_t samples = 0;
};

/// Fraction of rows whose logits rank `target_class` first / within the top
/// min(5, C). A class is within the top k if fewer than k classes have a
/// strictly larger logit.
TopKAccuracy top_k_accuracy(const FeatureMatrix& logits, std::size_t target_class);

struct AccuracyReport {
  std::vector<std::size_t> classes;
  std::vector<TopKAccuracy> per_class;
  TopKAccuracy aggregate;
  std::vector<std::string> notes;
};

/// Accuracy of the selected images of every class under the evaluation
/// model, after `eval_transforms`. Passing the target model as `target`
/// enables the identity check (a note, not an error).
AccuracyReport attack_accuracy(const attack::AttackResult& result, const Classifier& eval_model,
                               const transforms::TransformPipeline& eval_transforms,
                               const Classifier* target = nullptr);

// --- feature distances -----------------------------------------------------------

/// For each generated row, the minimum squared distance to any training row.
std::vector<double> min_squared_distances(const FeatureMatrix& generated,
                                          const FeatureMatrix& training);

struct DistanceReport {
  std::vector<double> per_class;  // mean of the per-image minima
  double aggregate = 0.0;         // mean over classes
};

/// generated[i] and training[i] hold the rows of the i-th class.
DistanceReport feature_distance(const std::vector<FeatureMatrix>& generated,
                                const std::vector<FeatureMatrix>& training);

struct BaselineReport {
  std::vector<double> per_class;
  double mean = 0.0;
  double std_dev = 0.0;  // population standard deviation across classes
};

/// Per sample, mean squared distance to every other sample of its class;
/// per class the mean of those.
BaselineReport inner_class_baseline(const std::vector<FeatureMatrix>& training);

// --- FID -------------------------------------------------------------------------

/// Symmetric PSD square root through an eigendecomposition; negative
/// eigenvalues are clamped to 0. Throws ContractViolation when
/// max |S - S^T| exceeds 1e-8 * max(1, max |S|).
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& s);

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // divisor n - 1
};

Moments moments(const FeatureMatrix& m);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), clamped at 0.
double fid_from_moments(const Moments& a, const Moments& b);
double fid(const FeatureMatrix& real, const FeatureMatrix& fake);

// --- kNN manifold metrics -----------------------------------------------------------

/// Euclidean distance from every row to its k-th nearest other row.
std::vector<double> knn_radii(const FeatureMatrix& m, std::size_t k);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

PrecisionRecall precision_recall(const FeatureMatrix& real, const FeatureMatrix& fake,
                                 std::size_t k = 3);

struct DensityCoverage {
  double density = 0.0;
  double coverage = 0.0;
};

DensityCoverage density_coverage(const FeatureMatrix& real, const FeatureMatrix& fake,
                                 std::size_t k = 3);

// --- report ------------------------------------------------------------------------

struct MetricsRow {
  std::string label;  // class index or "all"
  double acc_at_1 = 0.0;
  double acc_at_5 = 0.0;
  double delta_eval = 0.0;
  double delta_face = 0.0;
  double fid = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  std::size_t samples = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> per_class;
  MetricsRow aggregate;
  std::size_t knn_k = 3;
  std::size_t acc_top_k = 5;
  bool fid_correct_only = false;
  std::vector<std::string> notes;

  /// Checks acc@1 <= acc@5, rates in [0, 1], fid >= 0, density >= 0.
  void validate() const;
};

inline constexpr const char* kMetricsCsvHeader =
    "class,acc_at_1,acc_at_5,delta_eval,delta_face,fid,precision,recall,density,coverage,samples";

/// One row per class followed by the aggregate row labelled "all".
void write_metrics_csv(std::ostream& out, const MetricsReport& report);
nlohmann::json to_json(const MetricsReport& report);

}  // namespace ppa::metrics
