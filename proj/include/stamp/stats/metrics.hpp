#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace stamp::stats {

/// Scores of the positive class with binary labels (1 = positive).
struct ScoredCohort {
    std::vector<double> scores;
    std::vector<int> labels;
};

/// Area under the ROC curve by the trapezoid rule over the distinct score
/// thresholds; ties get half credit. Throws SingleClass.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: sum over descending distinct thresholds of
/// (recall step) * precision. Throws NoPositives.
double auprc(std::span<const double> scores, std::span<const int> labels);

struct CurvePoint {
    double threshold;   // +inf for the origin point
    double x;           // fpr or recall
    double y;           // tpr or precision
};

/// (fpr, tpr) from (0, 0) through every distinct threshold to (1, 1).
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// (recall, precision) per distinct threshold, preceded by (0, 1).
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

using Metric = std::function<double(std::span<const double>, std::span<const int>)>;

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    int n_used = 0;      // resamples that contributed
    int n_skipped = 0;   // resamples left single-class after 10 draws
};

/// Percentile bootstrap over patients. Single-class resamples are redrawn up
/// to 10 times, then skipped with a warning. Bounds are the 2.5th and 97.5th
/// percentiles (linear interpolation) of the resampled values.
Interval bootstrap_ci(const ScoredCohort& sc, const Metric& metric, int n_resamples, std::uint64_t seed);

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

struct MetricSummary {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

struct FoldMetrics {
    std::filesystem::path file;
    int n_patients = 0;
    double prevalence = 0.0;
    double auroc = 0.0;
    double auprc = 0.0;
};

struct StatsReport {
    MetricSummary auroc;
    MetricSummary auprc;
    int n_folds = 0;
    int n_patients = 0;       // pooled
    double prevalence = 0.0;  // pooled
    std::vector<FoldMetrics> folds;
};

/// Reads patient-preds.csv into scores of `true_class`. Rows without ground
/// truth are skipped. Throws SchemaError naming the file and column.
ScoredCohort read_predictions(const std::filesystem::path& path, const std::string& target_label,
                              const std::string& true_class);

/// Several files: mean over folds with mean +- 1.96 * sample sd (clamped to
/// [0, 1]). One file: point estimate with a bootstrap interval. Writes
/// <target_label>-stats.csv, <target_label>-fold-metrics.csv,
/// roc-curve.csv, pr-curve.csv, roc.svg and prc.svg to output_dir.
StatsReport aggregate_folds(const std::vector<std::filesystem::path>& pred_csvs, const std::string& target_label,
                            const std::string& true_class, const std::filesystem::path& output_dir,
                            int n_bootstrap = 1000, std::uint64_t seed = 0);

} // namespace stamp::stats
