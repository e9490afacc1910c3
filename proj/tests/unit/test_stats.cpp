#include "helpers.hpp"

#include "stamp/error.hpp"
#include "stamp/stats/metrics.hpp"

#include <doctest.h>

#include <cmath>

using namespace stamp;
using namespace stamp::stats;
namespace fs = std::filesystem;

namespace {

// Mann-Whitney: fraction of (positive, negative) pairs ranked correctly.
double concordance(const std::vector<double>& s, const std::vector<int>& y)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            den += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / den;
}

// Mean over positives of the precision among everything scored at least as high.
double brute_ap(const std::vector<double>& s, const std::vector<int>& y)
{
    double sum = 0.0;
    int pos = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        ++pos;
        int above = 0, tp = 0;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (s[j] >= s[i]) {
                ++above;
                tp += y[j];
            }
        }
        sum += static_cast<double>(tp) / above;
    }
    return sum / pos;
}

ScoredCohort random_cohort(Rng& rng, int n)
{
    ScoredCohort sc;
    for (int i = 0; i < n; ++i) {
        sc.labels.push_back(static_cast<int>(rng.below(2)));
        // Coarse grid so ties are common.
        sc.scores.push_back(static_cast<double>(rng.below(8)) / 8.0 + 0.05 * sc.labels.back());
    }
    sc.labels[0] = 1;
    sc.labels[1] = 0;
    return sc;
}

void write_preds(const fs::path& p, const ScoredCohort& sc)
{
    std::string text = "PATIENT,isMSIH,pred,isMSIH_MSS,isMSIH_MSI-H,loss\n";
    for (std::size_t i = 0; i < sc.scores.size(); ++i) {
        text += "P" + std::to_string(i) + "," + (sc.labels[i] ? "MSI-H" : "MSS") + "," +
                (sc.scores[i] >= 0.5 ? "MSI-H" : "MSS") + "," + std::to_string(1.0 - sc.scores[i]) + "," +
                std::to_string(sc.scores[i]) + ",0.1\n";
    }
    text += "Q1,,MSS,0.9,0.1,\n";
    testutil::write_text(p, text);
}

} // namespace

TEST_CASE("hand case against brute-force oracles")
{
    const std::vector<double> s{0.9, 0.8, 0.4, 0.3};
    const std::vector<int> y{1, 0, 1, 0};
    CHECK(auroc(s, y) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(concordance(s, y) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(auprc(s, y) == doctest::Approx(0.8333333333).epsilon(1e-9));
    CHECK(brute_ap(s, y) == doctest::Approx(0.8333333333).epsilon(1e-9));
}

TEST_CASE("trapezoid AUROC equals the concordance estimator on random instances with ties")
{
    Rng rng(2024);
    for (int t = 0; t < 1000; ++t) {
        const auto sc = random_cohort(rng, 2 + static_cast<int>(rng.below(49)));
        CHECK(std::abs(auroc(sc.scores, sc.labels) - concordance(sc.scores, sc.labels)) <= 1e-9);
        CHECK(std::abs(auprc(sc.scores, sc.labels) - brute_ap(sc.scores, sc.labels)) <= 1e-9);
    }
}

TEST_CASE("curves")
{
    const std::vector<double> s{0.9, 0.8, 0.8, 0.3};
    const std::vector<int> y{1, 0, 1, 0};
    const auto roc = roc_curve(s, y);
    REQUIRE(roc.size() == 4);
    CHECK(std::isinf(roc.front().threshold));
    CHECK(roc.front().x == 0.0);
    CHECK(roc.back().x == 1.0);
    CHECK(roc.back().y == 1.0);
    CHECK(roc[2].x == 0.5);
    CHECK(roc[2].y == 1.0);
    const auto pr = pr_curve(s, y);
    CHECK(pr.front().x == 0.0);
    CHECK(pr.front().y == 1.0);
    CHECK(pr.back().x == 1.0);
    CHECK(pr.back().y == 0.5);
}

TEST_CASE("single-class inputs")
{
    const std::vector<double> s{0.1, 0.2};
    try {
        auroc(s, std::vector<int>{1, 1});
        FAIL("no error thrown");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingleClass);
    }
    try {
        auprc(s, std::vector<int>{0, 0});
        FAIL("no error thrown");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoPositives);
    }
}

TEST_CASE("percentile")
{
    CHECK(percentile({1, 2, 3, 4}, 50) == doctest::Approx(2.5));
    CHECK(percentile({5}, 97.5) == 5);
    CHECK(percentile({3, 1, 2}, 0) == 1);
}

TEST_CASE("bootstrap is deterministic and bounded")
{
    Rng rng(7);
    for (int t = 0; t < 50; ++t) {
        const auto sc = random_cohort(rng, 4 + static_cast<int>(rng.below(40)));
        const auto a = bootstrap_ci(sc, auroc, 200, 99);
        const auto b = bootstrap_ci(sc, auroc, 200, 99);
        CHECK(a.lower == b.lower);
        CHECK(a.upper == b.upper);
        CHECK(a.lower >= 0.0);
        CHECK(a.upper <= 1.0);
        CHECK(a.lower <= a.upper);
        CHECK(a.n_used + a.n_skipped == 200);
        const auto p = bootstrap_ci(sc, auprc, 200, 99);
        CHECK(p.lower >= 0.0);
        CHECK(p.upper <= 1.0);
        CHECK(p.lower <= p.upper);
    }
}

TEST_CASE("aggregation writes byte-identical outputs")
{
    testutil::TempDir dir("stats");
    Rng rng(3);
    std::vector<fs::path> files;
    for (int f = 0; f < 3; ++f) {
        files.push_back(dir / ("fold-" + std::to_string(f)) / "patient-preds.csv");
        write_preds(files.back(), random_cohort(rng, 30));
    }
    const auto ra = aggregate_folds(files, "isMSIH", "MSI-H", dir / "a", 1000, 5);
    const auto rb = aggregate_folds(files, "isMSIH", "MSI-H", dir / "b", 1000, 5);
    CHECK(ra.n_folds == 3);
    CHECK(ra.n_patients == 90);
    CHECK(ra.auroc.lower <= ra.auroc.point);
    CHECK(ra.auroc.point <= ra.auroc.upper);
    CHECK(ra.auroc.upper <= 1.0);
    CHECK(ra.auroc.lower >= 0.0);
    double mean = 0.0;
    for (const auto& f : ra.folds) mean += f.auroc / 3.0;
    CHECK(ra.auroc.point == doctest::Approx(mean));
    for (const char* name : {"isMSIH-stats.csv", "isMSIH-fold-metrics.csv", "roc-curve.csv", "pr-curve.csv", "roc.svg",
                             "prc.svg"}) {
        CAPTURE(name);
        REQUIRE(fs::exists(dir / "a" / name));
        CHECK(testutil::read_text(dir / "a" / name) == testutil::read_text(dir / "b" / name));
    }

    // One file: bootstrap interval around the point estimate.
    const auto single = aggregate_folds({files[0]}, "isMSIH", "MSI-H", dir / "c", 1000, 5);
    aggregate_folds({files[0]}, "isMSIH", "MSI-H", dir / "d", 1000, 5);
    CHECK(single.n_folds == 1);
    CHECK(single.n_patients == 30);
    CHECK(single.auroc.lower <= single.auroc.upper);
    CHECK(testutil::read_text(dir / "c/isMSIH-stats.csv") == testutil::read_text(dir / "d/isMSIH-stats.csv"));
}

TEST_CASE("prediction files with a wrong schema")
{
    testutil::TempDir dir("schema");
    testutil::write_text(dir / "p.csv", "PATIENT,isMSIH,pred\nA,MSS,MSS\n");
    try {
        read_predictions(dir / "p.csv", "isMSIH", "MSI-H");
        FAIL("no error thrown");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SchemaError);
        CHECK(std::string(e.what()).find("isMSIH_MSI-H") != std::string::npos);
    }
    write_preds(dir / "ok.csv", {{0.2, 0.7}, {0, 1}});
    const auto sc = read_predictions(dir / "ok.csv", "isMSIH", "MSI-H");
    CHECK(sc.scores.size() == 2);
    CHECK(sc.labels == std::vector<int>{0, 1});
}
