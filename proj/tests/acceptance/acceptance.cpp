// Acceptance run: one PASS/FAIL line per criterion. The end-to-end criteria
// drive the stamp and stamp-synth executables; the oracle criteria call the
// library directly.

#include "stamp/cohort/cohort.hpp"
#include "stamp/cohort/csv.hpp"
#include "stamp/cohort/splits.hpp"
#include "stamp/config/config.hpp"
#include "stamp/error.hpp"
#include "stamp/explain/heatmap.hpp"
#include "stamp/features/store.hpp"
#include "stamp/model/bundle.hpp"
#include "stamp/model/training.hpp"
#include "stamp/model/transformer.hpp"
#include "stamp/rng.hpp"
#include "stamp/slide/macenko.hpp"
#include "stamp/slide/slide.hpp"
#include "stamp/slide/tiff.hpp"
#include "stamp/stats/metrics.hpp"
#include "stamp/synth/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace stamp;

namespace {

// Pinned tolerances.
constexpr double kFoldAurocMin = 0.95;
constexpr double kMeanAurocMin = 0.97;
constexpr double kRuntimeMaxS = 15 * 60;
constexpr double kPeakRssMaxGb = 8.0;
constexpr double kNullLo = 0.35, kNullHi = 0.65;
constexpr double kStainAngleMaxDeg = 2.0;
constexpr double kRoundTripMaxErr = 3.0;   // of 255
constexpr double kAurocOracleTol = 1e-9;
constexpr double kPermutationTol = 1e-5;
constexpr double kSoftmaxTol = 1e-6;
constexpr double kGradcheckTol = 1e-6;
constexpr std::size_t kGradcheckMaxParams = 2000;
constexpr double kOverlapMin = 0.70;

struct Result {
    bool pass;
    std::string detail;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text)
{
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

std::string quote(const std::string& s)
{
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

// Runs a command with stdout and stderr captured in `log`; returns the exit status.
int run(const std::vector<std::string>& argv, const fs::path& log)
{
    std::string cmd;
    for (const auto& a : argv) cmd += quote(a) + " ";
    cmd += "> " + quote(log.string()) + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128;
}

double peak_child_rss_gb()
{
    rusage ru{};
    getrusage(RUSAGE_CHILDREN, &ru);
    return static_cast<double>(ru.ru_maxrss) / (1024.0 * 1024.0);
}

int cores()
{
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::string yaml_list(const std::vector<std::string>& v)
{
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
    return s + "]";
}

// Configuration for a synthetic cohort laid out under `dir`.
std::string synth_config(int n_splits, int n_cores, const std::string& heatmap_model)
{
    std::vector<std::string> preds;
    for (int k = 0; k < n_splits; ++k) preds.push_back(fmt::format("crossval/fold-{}/patient-preds.csv", k));
    return fmt::format(R"(preprocessing:
  output_dir: features
  wsi_dir: cohort/slides
  cache_dir: cache
  microns: 256
  norm: true
  normalization_template: cohort/normalization_template.jpg
  del_slide: false
  only_feature_extraction: false
  cores: {}
  device: cpu
modeling:
  clini_table: cohort/clini_table.csv
  slide_table: cohort/slide_table.csv
  feature_dir: features/STAMP_macenko_toy-v1-d48
  output_dir: crossval
  target_label: isSignal
  categories: [NEG, POS]
  cat_labels: []
  cont_labels: []
  n_splits: {}
statistics:
  pred_csvs: {}
  target_label: isSignal
  true_class: POS
  output_dir: stats
heatmaps:
  slide_name: "*"
  feature_dir: features/STAMP_macenko_toy-v1-d48
  wsi_dir: cohort/slides
  cache_dir: cache
  model_path: {}
  output_dir: heatmaps
  n_toptiles: 4
)",
                       n_cores, n_splits, yaml_list(preds), heatmap_model);
}

struct PipelineRun {
    bool ok = false;
    std::string failure;
    double seconds = 0.0;
};

PipelineRun run_synthetic_pipeline(const fs::path& dir, int n_patients, double strength, int n_splits,
                                   bool heatmaps)
{
    PipelineRun r;
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto cfg = dir / "config.yaml";
    spit(cfg, synth_config(n_splits, cores(), "crossval/fold-0/export.stamp"));
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::pair<std::string, std::vector<std::string>>> steps{
        {"generate",
         {STAMP_SYNTH_CLI, "generate", "-o", (dir / "cohort").string(), "-n", std::to_string(n_patients),
          "--prevalence", "0.5", "--signal-strength", fmt::format("{}", strength), "--seed", "7", "--cores",
          std::to_string(cores())}},
        {"preprocess", {STAMP_CLI, "preprocess", "-c", cfg.string()}},
        {"crossval", {STAMP_CLI, "crossval", "-c", cfg.string()}},
        {"statistics", {STAMP_CLI, "statistics", "-c", cfg.string()}},
    };
    if (heatmaps) steps.push_back({"heatmaps", {STAMP_CLI, "heatmaps", "-c", cfg.string()}});
    for (const auto& [name, argv] : steps) {
        const int rc = run(argv, dir / (name + ".log"));
        if (rc != 0) {
            r.failure = fmt::format("{} exited {} (see {})", name, rc, (dir / (name + ".log")).string());
            return r;
        }
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.ok = true;
    return r;
}

std::vector<double> fold_aurocs(const fs::path& stats_dir)
{
    const auto t = cohort::read_csv(stats_dir / "isSignal-fold-metrics.csv");
    const auto c = t.column("auroc");
    std::vector<double> out;
    for (const auto& row : t.rows) out.push_back(std::stod(row[*c]));
    return out;
}

double mean_auroc(const fs::path& stats_dir)
{
    const auto t = cohort::read_csv(stats_dir / "isSignal-stats.csv");
    for (const auto& row : t.rows)
        if (row[0] == "auroc") return std::stod(row[*t.column("point")]);
    throw std::runtime_error("no auroc row");
}

std::string join(const std::vector<double>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{:.3f}", i ? " " : "", v[i]);
    return s;
}

// ---------------------------------------------------------------------------

Result c1_end_to_end(const fs::path& work)
{
    const auto sig = run_synthetic_pipeline(work / "signal", 60, 0.5, 5, false);
    const double rss = peak_child_rss_gb();
    if (!sig.ok) return {false, "signal run: " + sig.failure};
    const auto folds = fold_aurocs(work / "signal/stats");
    const double mean = mean_auroc(work / "signal/stats");
    const auto nul = run_synthetic_pipeline(work / "null", 60, 0.0, 5, false);
    if (!nul.ok) return {false, "null run: " + nul.failure};
    const double null_mean = mean_auroc(work / "null/stats");
    const bool folds_ok = folds.size() == 5 && std::all_of(folds.begin(), folds.end(), [](double a) {
                              return a >= kFoldAurocMin;
                          });
    const bool pass = folds_ok && mean >= kMeanAurocMin && sig.seconds <= kRuntimeMaxS && rss <= kPeakRssMaxGb &&
                      null_mean >= kNullLo && null_mean <= kNullHi;
    return {pass, fmt::format("fold AUROC [{}] (>= {}), mean {:.4f} (>= {}), runtime {:.0f} s on {} cores (<= {:.0f}), "
                              "peak RSS {:.2f} GB (<= {}), null mean AUROC {:.4f} (in [{}, {}]) folds [{}]",
                              join(folds), kFoldAurocMin, mean, kMeanAurocMin, sig.seconds, cores(), kRuntimeMaxS, rss,
                              kPeakRssMaxGb, null_mean, kNullLo, kNullHi, join(fold_aurocs(work / "null/stats")))};
}

Result c2_interface(const fs::path& work)
{
    std::vector<std::string> notes;
    bool pass = true;

    // The example configuration is consumed verbatim.
    try {
        const auto cfg = config::load_config(fs::path(STAMP_SOURCE_DIR) / "config.yaml");
        const auto p = *config::validate_for_command(cfg, "preprocess").preprocessing;
        const auto m = *config::validate_for_command(cfg, "crossval").modeling;
        const auto s = *config::validate_for_command(cfg, "statistics").statistics;
        const auto h = *config::validate_for_command(cfg, "heatmaps").heatmaps;
        const bool same = p.microns == 256 && p.norm && p.cores == 8 && p.device == "cuda:0" &&
                          p.wsi_dir == "/home/storage/wsi_directory" && m.target_label == "isMSIH" &&
                          m.categories == std::vector<std::string>{"MSI-H", "MSS"} &&
                          m.cat_labels == std::vector<std::string>{"STAGE", "SEX"} &&
                          m.cont_labels == std::vector<std::string>{"AGE"} && m.n_splits == 5 &&
                          m.clini_table == fs::path("/home/storage/clinical_table.xlsx") && s.pred_csvs.size() == 5 &&
                          s.true_class == "MSI-H" && h.slide_name == "20C0003*" && h.n_toptiles == 8;
        pass &= same;
        notes.push_back(same ? "example config consumed" : "example config values differ");
    } catch (const Error& e) {
        pass = false;
        notes.push_back("example config rejected: " + e.summary());
    }

    // n x 768 feature files through crossval, train, deploy and statistics.
    const fs::path dir = work / "c2";
    fs::remove_all(dir);
    std::string slides = "PATIENT,FILENAME\n", clini = "PATIENT,isMSIH\n";
    Rng rng(768);
    for (int i = 0; i < 12; ++i) {
        const std::string id = fmt::format("TCGA-{:02d}", i);
        const bool pos = i % 2 == 0;
        slides += id + "," + id + "-DX1.svs\n";
        clini += id + "," + (pos ? "MSI-H" : "MSS") + "\n";
        features::FeatureMatrix fm;
        fm.n = 40 + 3 * i;
        fm.d = features::kCtransPathDim;
        fm.extractor_id = features::kCtransPathId;
        fm.target_mpp = 256.0 / 224.0;
        fm.norm = "macenko";
        for (int t = 0; t < fm.n; ++t) {
            for (int k = 0; k < fm.d; ++k) fm.feats.push_back(static_cast<float>(rng.normal() + (pos && k < 32 ? 0.8 : 0.0)));
            fm.coords.push_back(224 * (t % 10));
            fm.coords.push_back(224 * (t / 10));
        }
        const auto fdir = dir / "features" / features::feature_dir_name(true, features::kCtransPathId);
        fs::create_directories(fdir);
        features::write_feature_file(fdir / (id + "-DX1.h5"), fm);
    }
    spit(dir / "slide.csv", slides);
    spit(dir / "clini.csv", clini);
    spit(dir / "config.yaml", R"(modeling:
  clini_table: clini.csv
  slide_table: slide.csv
  feature_dir: features/STAMP_macenko_xiyuewang-ctranspath-7c998680
  output_dir: out
  target_label: isMSIH
  categories: [MSI-H, MSS]
  n_splits: 3
  model_path: out/export.stamp
  deploy_feature_dir: features/STAMP_macenko_xiyuewang-ctranspath-7c998680
  advanced:
    max_epochs: 8
statistics:
  pred_csvs: [out/fold-0/patient-preds.csv, out/fold-1/patient-preds.csv, out/fold-2/patient-preds.csv]
  target_label: isMSIH
  true_class: MSI-H
  output_dir: out/stats
)");
    for (const char* cmd : {"crossval", "train", "deploy", "statistics"}) {
        const int rc = run({STAMP_CLI, cmd, "-c", (dir / "config.yaml").string()}, dir / (std::string(cmd) + ".log"));
        if (rc != 0) {
            pass = false;
            notes.push_back(fmt::format("768-dim {} exited {}", cmd, rc));
        }
    }
    if (pass) {
        const auto preds = cohort::read_csv(dir / "out/patient-preds.csv");
        const bool all = preds.rows.size() == 12;
        pass &= all;
        notes.push_back(fmt::format("768-dim bags: crossval/train/deploy/statistics ok, {} deployed predictions",
                                    preds.rows.size()));
    }
    notes.push_back("full-scale figures not reproducible here (see README)");
    std::string d;
    for (const auto& n : notes) d += (d.empty() ? "" : "; ") + n;
    return {pass, d};
}

using Vec3 = std::array<double, 3>;

Vec3 unit(Vec3 v)
{
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

RgbImage stain_image(const Vec3& h, const Vec3& e, std::uint64_t seed)
{
    Rng rng(seed);
    RgbImage img(512, 512);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const double u = rng.uniform();
        double ch = 0.0, ce = 0.0;
        if (u < 0.2) {
        } else if (u < 0.3) {
            ch = rng.uniform(0.8, 1.4);
        } else if (u < 0.4) {
            ce = rng.uniform(0.8, 1.4);
        } else {
            ch = rng.uniform(0.2, 1.0);
            ce = rng.uniform(0.2, 1.0);
        }
        for (int c = 0; c < 3; ++c)
            img.pixels[3 * i + c] = static_cast<std::uint8_t>(
                std::clamp(std::lround(240.0 * std::pow(10.0, -(h[c] * ch + e[c] * ce))), 0L, 255L));
    }
    return img;
}

Result c3_macenko()
{
    const std::array<std::pair<Vec3, Vec3>, 3> truth{{
        {unit({0.5626, 0.7201, 0.4062}), unit({0.2159, 0.8012, 0.5581})},
        {unit({0.65, 0.70, 0.29}), unit({0.27, 0.87, 0.41})},
        {unit({0.49, 0.77, 0.41}), unit({0.30, 0.80, 0.52})},
    }};
    double worst_angle = 0.0, worst_err = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        const auto img = stain_image(truth[t].first, truth[t].second, 1000 + t);
        const auto p = slide::estimate_stain_params(img.pixels);
        worst_angle = std::max({worst_angle, slide::angle_degrees(p.column(0), truth[t].first),
                                slide::angle_degrees(p.column(1), truth[t].second)});
        const auto out = slide::normalize_tile(img, p, p);
        double err = 0.0;
        for (std::size_t i = 0; i < img.pixels.size(); ++i) err += std::abs(int(img.pixels[i]) - int(out.pixels[i]));
        worst_err = std::max(worst_err, err / static_cast<double>(img.pixels.size()));
    }
    return {worst_angle <= kStainAngleMaxDeg && worst_err <= kRoundTripMaxErr,
            fmt::format("worst column angle {:.3f} deg (<= {}), worst identity round-trip error {:.3f}/255 (<= {})",
                        worst_angle, kStainAngleMaxDeg, worst_err, kRoundTripMaxErr)};
}

double concordance(const std::vector<double>& s, const std::vector<int>& y)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                den += 1.0;
                num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return num / den;
}

double brute_ap(const std::vector<double>& s, const std::vector<int>& y)
{
    double sum = 0.0;
    int pos = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        ++pos;
        int above = 0, tp = 0;
        for (std::size_t j = 0; j < s.size(); ++j)
            if (s[j] >= s[i]) {
                ++above;
                tp += y[j];
            }
        sum += static_cast<double>(tp) / above;
    }
    return sum / pos;
}

stats::ScoredCohort random_scored(Rng& rng, int n)
{
    stats::ScoredCohort sc;
    for (int i = 0; i < n; ++i) {
        sc.labels.push_back(i < 2 ? i : static_cast<int>(rng.below(2)));
        sc.scores.push_back(static_cast<double>(rng.below(10)) / 10.0);
    }
    return sc;
}

Result c4_metric_oracles()
{
    Rng rng(4);
    double worst = 0.0;
    int with_ties = 0;
    for (int t = 0; t < 1000; ++t) {
        const auto sc = random_scored(rng, 2 + static_cast<int>(rng.below(49)));
        worst = std::max(worst, std::abs(stats::auroc(sc.scores, sc.labels) - concordance(sc.scores, sc.labels)));
        if (std::set<double>(sc.scores.begin(), sc.scores.end()).size() < sc.scores.size()) ++with_ties;
    }
    const std::vector<double> s{0.9, 0.8, 0.4, 0.3};
    const std::vector<int> y{1, 0, 1, 0};
    const double a = stats::auroc(s, y), ap = stats::auprc(s, y);
    const bool hand = std::abs(a - 0.75) < 1e-12 && std::abs(concordance(s, y) - 0.75) < 1e-12 &&
                      std::abs(ap - 5.0 / 6.0) < 1e-12 && std::abs(brute_ap(s, y) - 5.0 / 6.0) < 1e-12;
    return {worst <= kAurocOracleTol && hand,
            fmt::format("max |trapezoid - concordance| {:.2e} over 1000 instances ({} with ties) (<= {:.0e}); hand case "
                        "AUROC {:.4f}, AP {:.4f}",
                        worst, with_ties, kAurocOracleTol, a, ap)};
}

Result c5_bootstrap(const fs::path& work)
{
    const fs::path dir = work / "c5";
    fs::remove_all(dir);
    Rng rng(5);
    auto sc = random_scored(rng, 40);
    std::string csv = "PATIENT,isSignal,pred,isSignal_NEG,isSignal_POS,loss\n";
    for (std::size_t i = 0; i < sc.scores.size(); ++i)
        csv += fmt::format("P{},{},{},{},{},0.5\n", i, sc.labels[i] ? "POS" : "NEG", sc.scores[i] >= 0.5 ? "POS" : "NEG",
                           1.0 - sc.scores[i], sc.scores[i]);
    spit(dir / "preds.csv", csv);
    for (const char* out : {"a", "b"}) {
        spit(dir / out / "config.yaml", fmt::format("statistics:\n  pred_csvs: [../preds.csv]\n  target_label: isSignal\n"
                                                    "  true_class: POS\n  output_dir: .\n  n_bootstrap: 1000\n  seed: 20\n"));
        if (run({STAMP_CLI, "statistics", "-c", (dir / out / "config.yaml").string()}, dir / out / "log.txt") != 0)
            return {false, "statistics command failed"};
    }
    const bool identical = slurp(dir / "a/isSignal-stats.csv") == slurp(dir / "b/isSignal-stats.csv") &&
                           !slurp(dir / "a/isSignal-stats.csv").empty();

    int bad = 0, total = 0;
    for (int t = 0; t < 200; ++t) {
        const auto c = random_scored(rng, 4 + static_cast<int>(rng.below(60)));
        for (const stats::Metric& m : {stats::Metric(stats::auroc), stats::Metric(stats::auprc)}) {
            const auto iv = stats::bootstrap_ci(c, m, 1000, rng.next_u64());
            ++total;
            if (!(iv.lower >= 0.0 && iv.upper <= 1.0 && iv.lower <= iv.upper)) ++bad;
        }
    }
    return {identical && bad == 0,
            fmt::format("stats CSV byte-identical across runs: {}; {} of {} bootstrap intervals outside [0,1] or inverted",
                        identical ? "yes" : "no", bad, total)};
}

Result c6_model()
{
    model::ModelConfig cfg;
    cfg.dim_input = 48;
    cfg.dim_model = 64;
    cfg.n_heads = 8;
    cfg.n_layers = 2;
    model::Transformer<float> m(cfg);
    Rng rng(6);
    m.init(rng);
    const int n = 80;
    std::vector<float> x(n * 48);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    const auto base = m.forward(x.data(), n);
    double perm_err = 0.0, sm_err = 0.0;
    for (int t = 0; t < 20; ++t) {
        std::vector<int> p(n);
        std::iota(p.begin(), p.end(), 0);
        rng.shuffle(std::span<int>(p));
        std::vector<float> xp(x.size());
        for (int i = 0; i < n; ++i) std::copy_n(x.begin() + p[i] * 48, 48, xp.begin() + i * 48);
        const auto z = m.forward(xp.data(), n);
        for (std::size_t c = 0; c < z.size(); ++c) perm_err = std::max(perm_err, double(std::abs(z[c] - base[c])));
        const std::vector<double> zd(z.begin(), z.end());
        const auto pr = model::softmax(zd);
        sm_err = std::max(sm_err, std::abs(std::accumulate(pr.begin(), pr.end(), 0.0) - 1.0));
    }

    model::ModelConfig small;
    small.dim_input = 6;
    small.dim_model = 8;
    small.n_heads = 2;
    small.n_layers = 2;
    small.dropout = 0.0;
    const auto gc = model::gradcheck(small, 5, 1, 66);

    std::vector<model::Bag> bags;
    for (int i = 0; i < 8; ++i) {
        model::Bag b;
        b.patient = std::to_string(i);
        b.label = i % 2;
        b.n = 24;
        b.d = 16;
        for (int k = 0; k < b.n * b.d; ++k) b.feats.push_back(static_cast<float>(rng.normal()));
        if (b.label)
            for (int t = 0; t < 6; ++t)
                for (int k = 0; k < 4; ++k) b.feats[t * 16 + k] += 1.5f;
        bags.push_back(std::move(b));
    }
    model::ModelConfig oc;
    oc.dim_input = 16;
    oc.dim_model = 32;
    oc.n_heads = 4;
    oc.dropout = 0.0;
    model::TrainConfig tc;
    tc.batch_size = 4;
    tc.max_epochs = 150;
    tc.lr = 1e-3;
    const auto tr = model::train_model(bags, {}, oc, tc);
    model::Transformer<float> om(oc);
    std::copy(tr.weights.begin(), tr.weights.end(), om.params().begin());
    int correct = 0;
    for (const auto& b : bags) correct += model::predict(om, b).pred == b.label;
    const double acc = correct / 8.0;

    const bool pass = perm_err <= kPermutationTol && sm_err <= kSoftmaxTol && gc.max_rel_error < kGradcheckTol &&
                      gc.n_params <= kGradcheckMaxParams && acc == 1.0;
    return {pass, fmt::format("permutation {:.2e} (<= {:.0e}), softmax {:.2e} (<= {:.0e}), gradcheck max rel {:.2e} "
                              "(< {:.0e}) on {} params, 8-patient training accuracy {:.3f}",
                              perm_err, kPermutationTol, sm_err, kSoftmaxTol, gc.max_rel_error, kGradcheckTol,
                              gc.n_params, acc)};
}

template <typename F>
std::optional<Error> error_of(F&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e;
    }
    return std::nullopt;
}

Result c7_splits()
{
    Rng rng(7);
    int valid = 0, rejected = 0, violations = 0;
    for (int t = 0; t < 10000; ++t) {
        const int n = 4 + static_cast<int>(rng.below(197));
        const int k = 2 + static_cast<int>(rng.below(3));
        const int n_splits = 2 + static_cast<int>(rng.below(9));
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) labels[i] = i < k ? i : static_cast<int>(rng.below(k));
        std::vector<int> count(k, 0);
        for (int l : labels) ++count[l];
        const int least = *std::min_element(count.begin(), count.end());
        std::vector<std::vector<std::size_t>> folds;
        const auto err = error_of([&] { folds = cohort::stratified_folds(labels, k, n_splits, rng.next_u64()); });
        if (least < 2 || least < n_splits) {
            const auto want = least < 2 ? ErrorCode::TooFewClassMembers : ErrorCode::TooManySplits;
            if (!err || err->code() != want) ++violations;
            ++rejected;
            continue;
        }
        if (err) {
            ++violations;
            continue;
        }
        ++valid;
        std::vector<int> seen(n, 0);
        bool ok = static_cast<int>(folds.size()) == n_splits;
        for (const auto& f : folds) {
            std::vector<int> per(k, 0);
            for (auto i : f) {
                ++seen[i];
                ++per[labels[i]];
            }
            for (int c = 0; c < k; ++c) ok &= std::abs(per[c] - static_cast<double>(count[c]) / n_splits) <= 1.0;
        }
        ok &= std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
        if (!ok) ++violations;
    }
    const auto single = error_of([] { cohort::stratified_folds({0, 0, 0, 0, 0, 1}, 2, 5, 1); });
    const auto many = error_of([] { cohort::stratified_folds({0, 0, 0, 0, 0, 1, 1, 1}, 2, 5, 1); });
    const bool goldens =
        single && single->code() == ErrorCode::TooFewClassMembers &&
        std::string(single->what()).find("The least populated class in y has only 1 member") != std::string::npos &&
        many && many->code() == ErrorCode::TooManySplits &&
        std::string(many->what()).find("n_splits=5 cannot be greater than the number of members in each class") !=
            std::string::npos;
    return {violations == 0 && goldens && valid > 0,
            fmt::format("10000 cohorts: {} split, {} rejected with the right error, {} violations; error goldens {}",
                        valid, rejected, violations, goldens ? "match" : "differ")};
}

Result c8_attribution(const fs::path& work)
{
    const fs::path dir = work / "signal";
    if (!fs::exists(dir / "crossval/folds.json")) return {false, "needs the C1 signal run"};
    const auto truth = synth::load_truth(dir / "cohort/truth.json");
    const auto plan = cohort::SplitPlan::from_json(slurp(dir / "crossval/folds.json"));
    const fs::path fdir = dir / "features/STAMP_macenko_toy-v1-d48";
    std::vector<double> overlaps;
    int negation_failures = 0, slides_checked = 0, misclassified = 0;
    double worst = 2.0, pooled_hits = 0.0, pooled_top = 0.0;
    std::string worst_slide;
    for (std::size_t k = 0; k < plan.folds.size(); ++k) {
        const auto bundle = model::read_bundle(dir / fmt::format("crossval/fold-{}/export.stamp", k));
        model::Transformer<float> m(bundle.model);
        std::copy(bundle.weights.begin(), bundle.weights.end(), m.params().begin());
        const int pos = static_cast<int>(std::find(bundle.categories.begin(), bundle.categories.end(), "POS") -
                                         bundle.categories.begin());
        for (const auto& id : plan.folds[k]) {
            const auto* st = truth.find_patient(id);
            const auto fm = features::read_feature_file(fdir / (id + ".h5"));
            const auto a_pos = explain::tile_attribution(bundle, m, fm, pos);
            const auto a_neg = explain::tile_attribution(bundle, m, fm, 1 - pos);
            ++slides_checked;
            for (std::size_t i = 0; i < a_pos.scores.size(); ++i)
                if (a_pos.scores[i] != -a_neg.scores[i]) {
                    ++negation_failures;
                    break;
                }
            if (st->label != 1) continue;
            cohort::Patient p;
            p.id = id;
            p.feature_files = {fdir / (id + ".h5")};
            const auto bag = model::load_bag(p, {});
            if (model::predict(m, bag).pred != pos) {
                ++misclassified;
                continue;
            }
            overlaps.push_back(synth::top_decile_overlap(a_pos.scores, fm.coords, fm.tile_px, fm.target_mpp, *st,
                                                         truth.tile_microns, truth.mpp));
            const double k_top = static_cast<double>((fm.n + 9) / 10);
            pooled_hits += overlaps.back() * k_top;
            pooled_top += k_top;
            if (overlaps.back() < worst) {
                worst = overlaps.back();
                // Tiles whose centre lies in the mask, against the size of the top decile.
                const double cell_px = truth.tile_microns / truth.mpp;
                int in_mask = 0;
                for (int i = 0; i < fm.n; ++i) {
                    const double cx = (fm.coords[2 * i] + fm.tile_px / 2.0) * fm.target_mpp / truth.mpp;
                    const double cy = (fm.coords[2 * i + 1] + fm.tile_px / 2.0) * fm.target_mpp / truth.mpp;
                    const int c = static_cast<int>(cx / cell_px), r = static_cast<int>(cy / cell_px);
                    in_mask += c < st->cols && r < st->rows && st->masked(c, r);
                }
                worst_slide = fmt::format("{} ({} of {} tiles in mask, top decile {})", id, in_mask, fm.n,
                                          (fm.n + 9) / 10);
            }
        }
    }
    if (overlaps.empty()) return {false, "no correctly classified positive slide"};
    const double mn = *std::min_element(overlaps.begin(), overlaps.end());
    const double mean = std::accumulate(overlaps.begin(), overlaps.end(), 0.0) / overlaps.size();
    return {negation_failures == 0 && mn >= kOverlapMin,
            fmt::format("negation identity exact on {}/{} held-out slides; top-decile mask overlap on {} correctly "
                        "classified held-out positives: min {:.3f} at {}, mean {:.3f} (each >= {}); pooled {:.3f} (not used); {} positives misclassified",
                        slides_checked - negation_failures, slides_checked, overlaps.size(), mn, worst_slide, mean,
                        kOverlapMin, pooled_hits / pooled_top, misclassified)};
}

// Expects the error line and the remediation line in a command's output.
bool has_lines(const std::string& text, const std::string& message, const std::string& remediation)
{
    return text.find(message) != std::string::npos && text.find(remediation) != std::string::npos;
}

Result c9_errors(const fs::path& work)
{
    const fs::path dir = work / "c9";
    fs::remove_all(dir);
    std::vector<std::string> failed;
    const auto expect = [&](const std::string& name, const std::string& text, const std::string& message,
                            ErrorCode code) {
        if (!has_lines(text, message, std::string(default_remediation(code)))) failed.push_back(name);
    };

    // Slides: unsupported format, missing resolution, corrupt stream.
    spit(dir / "wsi/scan.svs", "Aperio proprietary bytes");
    {
        tiff::WriteOptions o;
        o.tile_size = 256;
        o.compression = tiff::Compression::Jpeg;
        tiff::TiledWriter w(dir / "wsi/nores.tiff", o);
        w.begin_level(256, 256);
        w.write_tile(RgbImage(256, 256, 200));
        w.finish();
        o.mpp = 0.5;
        tiff::TiledWriter c(dir / "wsi/corrupt.tiff", o);
        c.begin_level(256, 256);
        c.write_tile(RgbImage(256, 256, 200));
        c.finish();
    }
    {
        // Zero the JPEG stream of the only tile.
        std::string bytes = slurp(dir / "wsi/corrupt.tiff");
        const auto soi = bytes.find("\xFF\xD8\xFF");
        for (std::size_t i = soi; i < soi + 64 && i < bytes.size(); ++i) bytes[i] = '\0';
        spit(dir / "wsi/corrupt.tiff", bytes);
    }
    spit(dir / "pre.yaml", "preprocessing:\n  output_dir: features\n  wsi_dir: wsi\n  cache_dir: cache\n  microns: 256\n"
                           "  norm: false\n  del_slide: false\n  only_feature_extraction: false\n  cores: 1\n"
                           "  device: cpu\n");
    run({STAMP_CLI, "preprocess", "-c", (dir / "pre.yaml").string()}, dir / "pre.log");
    const auto pre = slurp(dir / "pre.log");
    expect("unsupported format", pre, "Unsupported format error", ErrorCode::UnsupportedFormat);
    expect("missing resolution", pre, "Slide skipped due to missing resolution information", ErrorCode::MissingResolution);
    expect("corrupt stream", pre, "Not a JPEG file", ErrorCode::CorruptFile);

    // Missing configuration keys.
    spit(dir / "missing.yaml", "heatmaps:\n  feature_dir: f\n  wsi_dir: w\n  output_dir: o\n");
    run({STAMP_CLI, "heatmaps", "-c", (dir / "missing.yaml").string()}, dir / "missing.log");
    expect("missing config keys", slurp(dir / "missing.log"),
           "Missing required configuration keys: ['heatmaps.model_path']", ErrorCode::MissingKeys);

    // Cohort: missing features, misspelled column, stale folds.
    std::string slides = "PATIENT,FILENAME\n", clini = "PATIENT,isMSIH\n";
    for (int i = 0; i < 6; ++i) {
        const auto id = fmt::format("P{}", i);
        slides += id + "," + id + ".svs\n";
        clini += id + "," + (i % 2 ? "MSS" : "MSI-H") + "\n";
        fs::create_directories(dir / "feats");
        auto fm = features::FeatureMatrix{};
        fm.n = 2;
        fm.d = 48;
        fm.extractor_id = features::kToyExtractorId;
        fm.feats.assign(96, 0.5f);
        fm.coords = {0, 0, 224, 0};
        features::write_feature_file(dir / "feats" / (id + ".h5"), fm);
    }
    spit(dir / "slide.csv", slides);
    spit(dir / "clini.csv", clini);
    const auto modeling = [&](const std::string& name, const std::string& feature_dir, const std::string& target) {
        spit(dir / (name + ".yaml"),
             fmt::format("modeling:\n  clini_table: clini.csv\n  slide_table: slide.csv\n  feature_dir: {}\n"
                         "  output_dir: out_{}\n  target_label: {}\n  categories: [MSI-H, MSS]\n  n_splits: 3\n"
                         "  advanced:\n    max_epochs: 1\n",
                         feature_dir, name == "stale" ? "shared" : name, target));
        run({STAMP_CLI, "crossval", "-c", (dir / (name + ".yaml")).string()}, dir / (name + ".log"));
        return slurp(dir / (name + ".log"));
    };
    fs::create_directories(dir / "empty");
    expect("missing features dir", modeling("nofeat", "empty", "isMSIH"), "No features found in feature_dir",
           ErrorCode::NoFeaturesFound);
    expect("misspelled column", modeling("typo", "feats", "isMSIh"), "Key error: ['isMSIh']", ErrorCode::KeyError);
    spit(dir / "out_shared/folds.json",
         R"({"seed": 0, "n_splits": 3, "categories": ["MSI-H", "MSS"], "folds": [["P0", "P9"], ["P1"], ["P2"]]})");
    expect("stale folds", modeling("stale", "feats", "isMSIH"), "Key error: '[P9] not in index'",
           ErrorCode::StaleFolds);

    std::string d = failed.empty() ? "7 scenarios produce their error and remediation lines" : "mismatched:";
    for (const auto& f : failed) d += " [" + f + "]";
    return {failed.empty(), d};
}

// Hashes every output file of a pipeline run.
std::map<std::string, std::string> snapshot(const fs::path& dir)
{
    std::map<std::string, std::string> out;
    for (const char* sub : {"cohort", "features", "crossval", "stats", "heatmaps"}) {
        if (!fs::exists(dir / sub)) continue;
        for (const auto& e : fs::recursive_directory_iterator(dir / sub))
            if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    }
    return out;
}

Result c10_determinism(const fs::path& work)
{
    const fs::path dir = work / "determinism";
    auto first = run_synthetic_pipeline(dir, 10, 0.5, 5, true);
    if (!first.ok) return {false, "first run: " + first.failure};
    const auto a = snapshot(dir);
    auto second = run_synthetic_pipeline(dir, 10, 0.5, 5, true);
    if (!second.ok) return {false, "second run: " + second.failure};
    const auto b = snapshot(dir);
    int n_h5 = 0, n_png = 0, n_csv = 0, differ = 0;
    std::string first_diff;
    for (const auto& [name, bytes] : a) {
        const auto it = b.find(name);
        if (it == b.end() || it->second != bytes) {
            ++differ;
            if (first_diff.empty()) first_diff = name;
        }
        const auto ext = fs::path(name).extension();
        n_h5 += ext == ".h5";
        n_png += ext == ".png";
        n_csv += ext == ".csv";
    }
    const bool has_all = a.count("crossval/folds.json") && a.count("crossval/fold-0/patient-preds.csv") &&
                         a.count("stats/isSignal-stats.csv") && n_h5 == 10 && n_png > 0;
    return {differ == 0 && a.size() == b.size() && has_all,
            fmt::format("10-patient cohort run twice: {} files compared ({} feature files, {} CSVs, {} PNGs, "
                        "folds.json), {} differ{}",
                        a.size(), n_h5, n_csv, n_png, differ, first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria"};
    std::string workdir = "acceptance-work";
    std::vector<int> only;
    app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);
    const fs::path work = fs::absolute(workdir);
    fs::create_directories(work);

    const std::vector<std::pair<int, std::function<Result()>>> criteria{
        {1, [&] { return c1_end_to_end(work); }},
        {2, [&] { return c2_interface(work); }},
        {3, c3_macenko},
        {4, c4_metric_oracles},
        {5, [&] { return c5_bootstrap(work); }},
        {6, c6_model},
        {7, c7_splits},
        {8, [&] { return c8_attribution(work); }},
        {9, [&] { return c9_errors(work); }},
        {10, [&] { return c10_determinism(work); }},
    };
    int failures = 0;
    for (const auto& [id, fn] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Result r;
        try {
            r = fn();
        } catch (const Error& e) {
            r = {false, "error: " + e.summary()};
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        failures += !r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << " C" << id << " " << r.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
