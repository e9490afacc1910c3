#include "stamp/stats/metrics.hpp"

#include "stamp/cohort/csv.hpp"
#include "stamp/error.hpp"
#include "stamp/rng.hpp"
#include "stamp/slide/image_io.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

namespace stamp::stats {
namespace fs = std::filesystem;
namespace {

struct Step {
    double threshold;
    long tp;
    long fp;
};

// Cumulative (tp, fp) after each distinct score, in descending score order.
std::vector<Step> steps(std::span<const double> scores, std::span<const int> labels)
{
    if (scores.size() != labels.size())
        throw Error(ErrorCode::InvalidValue, "scores and labels differ in length");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<Step> out;
    long tp = 0, fp = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        (labels[idx[k]] == 1 ? tp : fp) += 1;
        if (k + 1 == idx.size() || scores[idx[k + 1]] != scores[idx[k]]) out.push_back({scores[idx[k]], tp, fp});
    }
    return out;
}

std::pair<long, long> class_counts(std::span<const int> labels)
{
    long pos = 0;
    for (int l : labels) pos += l == 1 ? 1 : 0;
    return {pos, static_cast<long>(labels.size()) - pos};
}

void require_both(std::span<const int> labels)
{
    const auto [pos, neg] = class_counts(labels);
    if (pos == 0 || neg == 0)
        throw Error(ErrorCode::SingleClass,
                    "Only one class present in y_true. ROC AUC score is not defined in that case.");
}

void write_text(const fs::path& path, const std::string& text)
{
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace

double auroc(std::span<const double> scores, std::span<const int> labels)
{
    require_both(labels);
    const auto [pos, neg] = class_counts(labels);
    // Twice the trapezoid area, in integer counts.
    long double area2 = 0;
    long tp0 = 0, fp0 = 0;
    for (const auto& s : steps(scores, labels)) {
        area2 += static_cast<long double>(s.fp - fp0) * static_cast<long double>(s.tp + tp0);
        tp0 = s.tp;
        fp0 = s.fp;
    }
    return static_cast<double>(area2 / (2.0L * pos * neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels)
{
    const auto [pos, neg] = class_counts(labels);
    (void)neg;
    if (pos == 0) throw Error(ErrorCode::NoPositives, "No positive samples in y_true, average precision is undefined");
    double ap = 0.0;
    long tp0 = 0;
    for (const auto& s : steps(scores, labels)) {
        const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
        ap += static_cast<double>(s.tp - tp0) / static_cast<double>(pos) * precision;
        tp0 = s.tp;
    }
    return ap;
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels)
{
    require_both(labels);
    const auto [pos, neg] = class_counts(labels);
    std::vector<CurvePoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    for (const auto& s : steps(scores, labels))
        out.push_back({s.threshold, static_cast<double>(s.fp) / neg, static_cast<double>(s.tp) / pos});
    return out;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels)
{
    const auto [pos, neg] = class_counts(labels);
    (void)neg;
    if (pos == 0) throw Error(ErrorCode::NoPositives, "No positive samples in y_true, average precision is undefined");
    std::vector<CurvePoint> out{{std::numeric_limits<double>::infinity(), 0.0, 1.0}};
    for (const auto& s : steps(scores, labels))
        out.push_back({s.threshold, static_cast<double>(s.tp) / pos, static_cast<double>(s.tp) / (s.tp + s.fp)});
    return out;
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty()) throw Error(ErrorCode::InvalidValue, "percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

Interval bootstrap_ci(const ScoredCohort& sc, const Metric& metric, int n_resamples, std::uint64_t seed)
{
    const std::size_t n = sc.scores.size();
    metric(sc.scores, sc.labels);   // propagates errors on the full sample
    Rng rng(mix_seed(seed, 0xB0075));
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n_resamples));
    std::vector<double> s(n);
    std::vector<int> l(n);
    Interval ci;
    for (int r = 0; r < n_resamples; ++r) {
        bool ok = false;
        for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
            int pos = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto j = static_cast<std::size_t>(rng.below(n));
                s[i] = sc.scores[j];
                l[i] = sc.labels[j];
                pos += l[i] == 1 ? 1 : 0;
            }
            ok = pos > 0 && pos < static_cast<int>(n);
        }
        if (!ok) {
            ++ci.n_skipped;
            continue;
        }
        values.push_back(metric(s, l));
    }
    if (ci.n_skipped > 0)
        spdlog::warn("{} of {} bootstrap resamples had a single class after 10 draws and were skipped", ci.n_skipped,
                     n_resamples);
    ci.n_used = static_cast<int>(values.size());
    if (values.empty()) {
        const double m = metric(sc.scores, sc.labels);
        ci.lower = ci.upper = m;
        return ci;
    }
    ci.lower = std::clamp(percentile(values, 2.5), 0.0, 1.0);
    ci.upper = std::clamp(percentile(values, 97.5), ci.lower, 1.0);
    return ci;
}

ScoredCohort read_predictions(const fs::path& path, const std::string& target_label, const std::string& true_class)
{
    cohort::CsvTable t;
    try {
        t = cohort::read_csv(path);
    } catch (const Error& e) {
        throw Error(ErrorCode::SchemaError, std::string("cannot read predictions: ") + e.what(), path.string());
    }
    const std::string score_col = target_label + "_" + true_class;
    for (const auto& col : {std::string("PATIENT"), target_label, score_col}) {
        if (!t.column(col))
            throw Error(ErrorCode::SchemaError, "predictions file lacks column '" + col + "'", path.string());
    }
    const auto truth = *t.column(target_label);
    const auto score = *t.column(score_col);
    ScoredCohort sc;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (row[truth].empty()) continue;
        double v = 0.0;
        const auto& cell = row[score];
        const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
            throw Error(ErrorCode::SchemaError,
                        fmt::format("column '{}' row {} is not a number: '{}'", score_col, r + 2, cell), path.string());
        }
        sc.scores.push_back(v);
        sc.labels.push_back(row[truth] == true_class ? 1 : 0);
    }
    return sc;
}

namespace {

const char* const kPalette[] = {"#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
                                "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#d62728"};

struct Series {
    std::string name;
    std::vector<CurvePoint> points;
    double area;
};

std::string render_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                       const std::vector<Series>& series, double baseline_y0, double baseline_y1,
                       const std::string& area_name)
{
    constexpr double W = 480, H = 480, L = 60, T = 40, S = 380;
    auto px = [&](double x) { return L + x * S; };
    auto py = [&](double y) { return T + (1.0 - y) * S; };
    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n"
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n"
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W, H, W, H, L + S / 2, title, L, T, S, S);
    for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"11\" "
                           "text-anchor=\"middle\">{:.2f}</text>\n",
                           px(v), T + S + 16, v);
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"11\" "
                           "text-anchor=\"end\">{:.2f}</text>\n",
                           L - 6, py(v) + 4, v);
    }
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" "
                       "text-anchor=\"middle\">{}</text>\n",
                       L + S / 2, H - 8, xlabel);
    svg += fmt::format("<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
                       "transform=\"rotate(-90 16 {})\">{}</text>\n",
                       T + S / 2, T + S / 2, ylabel);
    // Chance level.
    svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"red\" "
                       "stroke-width=\"1.5\" stroke-dasharray=\"2,4\"/>\n",
                       px(0), py(baseline_y0), px(1), py(baseline_y1));
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const bool pooled = s.name == "pooled";
        std::string pts;
        for (const auto& p : s.points) pts += fmt::format("{:.2f},{:.2f} ", px(p.x), py(p.y));
        if (!pts.empty()) pts.pop_back();
        const char* color = pooled ? "black" : kPalette[i % 9];
        svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>\n", pts, color,
                           pooled ? 2.5 : 1.5);
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"11\" "
                           "fill=\"{}\">{} {} = {:.3f}</text>\n",
                           L + S - 150, T + S - 12 - 14.0 * static_cast<double>(series.size() - 1 - i), color, s.name,
                           area_name, s.area);
    }
    svg += "</svg>\n";
    return svg;
}

std::string curve_csv(const std::string& xname, const std::string& yname, const std::vector<Series>& series)
{
    std::string out = cohort::csv_line({"curve", "threshold", xname, yname});
    for (const auto& s : series)
        for (const auto& p : s.points)
            out += cohort::csv_line({s.name, std::isinf(p.threshold) ? "inf" : fmt::format("{}", p.threshold),
                                     fmt::format("{}", p.x), fmt::format("{}", p.y)});
    return out;
}

} // namespace

StatsReport aggregate_folds(const std::vector<fs::path>& pred_csvs, const std::string& target_label,
                            const std::string& true_class, const fs::path& output_dir, int n_bootstrap,
                            std::uint64_t seed)
{
    if (pred_csvs.empty()) throw Error(ErrorCode::SchemaError, "no prediction files given", "statistics.pred_csvs");
    StatsReport rep;
    rep.n_folds = static_cast<int>(pred_csvs.size());
    ScoredCohort pooled;
    std::vector<ScoredCohort> cohorts;
    for (const auto& file : pred_csvs) {
        auto sc = read_predictions(file, target_label, true_class);
        FoldMetrics fm;
        fm.file = file;
        fm.n_patients = static_cast<int>(sc.scores.size());
        const auto [pos, neg] = class_counts(sc.labels);
        (void)neg;
        fm.prevalence = fm.n_patients > 0 ? static_cast<double>(pos) / fm.n_patients : 0.0;
        try {
            fm.auroc = auroc(sc.scores, sc.labels);
            fm.auprc = auprc(sc.scores, sc.labels);
        } catch (const Error& e) {
            throw Error(e.code(), e.what(), file.string());
        }
        rep.folds.push_back(fm);
        pooled.scores.insert(pooled.scores.end(), sc.scores.begin(), sc.scores.end());
        pooled.labels.insert(pooled.labels.end(), sc.labels.begin(), sc.labels.end());
        cohorts.push_back(std::move(sc));
    }
    rep.n_patients = static_cast<int>(pooled.scores.size());
    rep.prevalence = static_cast<double>(class_counts(pooled.labels).first) / rep.n_patients;

    if (rep.n_folds == 1) {
        const auto& sc = cohorts.front();
        rep.auroc.point = rep.folds[0].auroc;
        rep.auprc.point = rep.folds[0].auprc;
        const auto a = bootstrap_ci(sc, [](auto s, auto l) { return auroc(s, l); }, n_bootstrap, seed);
        const auto p = bootstrap_ci(sc, [](auto s, auto l) { return auprc(s, l); }, n_bootstrap, mix_seed(seed, 1));
        rep.auroc.lower = a.lower;
        rep.auroc.upper = a.upper;
        rep.auprc.lower = p.lower;
        rep.auprc.upper = p.upper;
    } else {
        auto summarize = [&](auto get) {
            MetricSummary m;
            double sum = 0.0;
            for (const auto& f : rep.folds) sum += get(f);
            m.point = sum / rep.n_folds;
            double ss = 0.0;
            for (const auto& f : rep.folds) ss += (get(f) - m.point) * (get(f) - m.point);
            const double sd = std::sqrt(ss / (rep.n_folds - 1));
            m.lower = std::clamp(m.point - 1.96 * sd, 0.0, 1.0);
            m.upper = std::clamp(m.point + 1.96 * sd, 0.0, 1.0);
            return m;
        };
        rep.auroc = summarize([](const FoldMetrics& f) { return f.auroc; });
        rep.auprc = summarize([](const FoldMetrics& f) { return f.auprc; });
    }

    fs::create_directories(output_dir);
    std::string stats = cohort::csv_line({"metric", "point", "lower", "upper", "n_folds"});
    for (const auto& [name, m] : {std::pair{"auroc", rep.auroc}, std::pair{"auprc", rep.auprc}})
        stats += cohort::csv_line({name, fmt::format("{}", m.point), fmt::format("{}", m.lower),
                                   fmt::format("{}", m.upper), std::to_string(rep.n_folds)});
    write_text(output_dir / (target_label + "-stats.csv"), stats);

    std::string folds = cohort::csv_line({"fold", "file", "n_patients", "prevalence", "auroc", "auprc"});
    for (std::size_t i = 0; i < rep.folds.size(); ++i) {
        const auto& f = rep.folds[i];
        folds += cohort::csv_line({std::to_string(i), f.file.string(), std::to_string(f.n_patients),
                                   fmt::format("{}", f.prevalence), fmt::format("{}", f.auroc),
                                   fmt::format("{}", f.auprc)});
        spdlog::info("{}: AUROC {:.4f}, AUPRC {:.4f}", f.file.string(), f.auroc, f.auprc);
    }
    write_text(output_dir / (target_label + "-fold-metrics.csv"), folds);

    std::vector<Series> roc, pr;
    for (std::size_t i = 0; i < cohorts.size(); ++i) {
        const std::string name = rep.n_folds == 1 ? "all" : fmt::format("fold-{}", i);
        roc.push_back({name, roc_curve(cohorts[i].scores, cohorts[i].labels), rep.folds[i].auroc});
        pr.push_back({name, pr_curve(cohorts[i].scores, cohorts[i].labels), rep.folds[i].auprc});
    }
    if (rep.n_folds > 1) {
        roc.push_back({"pooled", roc_curve(pooled.scores, pooled.labels), auroc(pooled.scores, pooled.labels)});
        pr.push_back({"pooled", pr_curve(pooled.scores, pooled.labels), auprc(pooled.scores, pooled.labels)});
    }
    write_text(output_dir / "roc-curve.csv", curve_csv("fpr", "tpr", roc));
    write_text(output_dir / "pr-curve.csv", curve_csv("recall", "precision", pr));
    const std::string subtitle = fmt::format("{} = {}", target_label, true_class);
    write_text(output_dir / "roc.svg",
               render_svg("ROC " + subtitle + " (trapezoid, ties half credit)", "False positive rate",
                          "True positive rate", roc, 0.0, 1.0, "AUROC"));
    write_text(output_dir / "prc.svg",
               render_svg("Precision-recall " + subtitle + " (step-sum AP)", "Recall", "Precision", pr,
                          rep.prevalence, rep.prevalence, "AP"));
    spdlog::info("AUROC {:.4f} [{:.4f}-{:.4f}], AUPRC {:.4f} [{:.4f}-{:.4f}] over {} file(s)", rep.auroc.point,
                 rep.auroc.lower, rep.auroc.upper, rep.auprc.point, rep.auprc.lower, rep.auprc.upper, rep.n_folds);
    return rep;
}

} // namespace stamp::stats
