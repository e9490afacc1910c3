#include "stamp/cli/cli.hpp"

#include "stamp/cohort/csv.hpp"
#include "stamp/error.hpp"
#include "stamp/features/store.hpp"
#include "stamp/synth/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <thread>

namespace stamp::cli {
namespace fs = std::filesystem;

namespace {

double parse_double(const std::string& s, const fs::path& file)
{
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::SchemaError, "non-numeric score '" + s + "'", file.string());
}

int evaluate(const fs::path& cohort_dir, const std::vector<fs::path>& preds, const std::string& category,
             const std::optional<fs::path>& heatmap_dir, const std::optional<fs::path>& feature_dir, std::ostream& out)
{
    const auto truth = synth::load_truth(cohort_dir / "truth.json");
    std::map<std::string, double> scores;
    std::map<std::string, std::string> predicted;
    for (const auto& p : preds) {
        const auto t = cohort::read_csv(p);
        const auto id = t.column("PATIENT");
        const auto pred = t.column("pred");
        const auto sc = t.column(fmt::format("{}_{}", synth::kTargetLabel, category));
        if (!id || !pred || !sc) throw Error(ErrorCode::SchemaError, "prediction file lacks required columns", p.string());
        for (const auto& row : t.rows) {
            scores[row[*id]] = parse_double(row[*sc], p);
            predicted[row[*id]] = row[*pred];
        }
    }
    const auto rep = synth::evaluate_predictions(scores, predicted, truth);
    out << fmt::format("patients {}\nauroc {:.4f}\naccuracy {:.4f}\n", rep.n_patients, rep.auroc, rep.accuracy);
    if (!heatmap_dir) return 0;
    if (!feature_dir) {
        throw Error(ErrorCode::InvalidValue, "--heatmaps needs --features for tile geometry", "--features");
    }
    double sum = 0.0;
    int n = 0;
    for (const auto& s : truth.slides) {
        if (s.label != 1 || predicted[s.patient] != synth::kPositive) continue;
        const fs::path csv = *heatmap_dir / "heatmaps" / s.slide / "scores.csv";
        if (!fs::exists(csv)) continue;
        const auto fm = features::read_feature_header(*feature_dir / (s.slide + ".h5"));
        const auto t = cohort::read_csv(csv);
        const auto cx = t.column("x"), cy = t.column("y"), cc = t.column(category);
        if (!cx || !cy || !cc) throw Error(ErrorCode::SchemaError, "scores file lacks required columns", csv.string());
        std::vector<double> sc;
        std::vector<std::int32_t> coords;
        for (const auto& row : t.rows) {
            coords.push_back(static_cast<std::int32_t>(std::stol(row[*cx])));
            coords.push_back(static_cast<std::int32_t>(std::stol(row[*cy])));
            sc.push_back(parse_double(row[*cc], csv));
        }
        const double ov = synth::top_decile_overlap(sc, coords, fm.tile_px, fm.target_mpp, s, truth.tile_microns, truth.mpp);
        out << fmt::format("overlap {} {:.4f}\n", s.slide, ov);
        sum += ov;
        ++n;
    }
    if (n > 0) out << fmt::format("mean_overlap {:.4f} over {} slides\n", sum / n, n);
    return 0;
}

} // namespace

int run_synth(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Synthetic cohort generator with a planted phenotype", "stamp-synth"};
    app.require_subcommand(1);

    synth::SynthSpec spec;
    fs::path out_dir;
    int cores = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    auto* gen = app.add_subcommand("generate", "Write slides, tables and ground truth");
    gen->add_option("-o,--out", out_dir, "Output directory")->required();
    gen->add_option("-n,--patients", spec.n_patients)->capture_default_str();
    gen->add_option("--prevalence", spec.prevalence)->capture_default_str();
    gen->add_option("--signal-strength", spec.signal_strength)->capture_default_str();
    gen->add_option("--seed", spec.seed)->capture_default_str();
    gen->add_option("--width", spec.width)->capture_default_str();
    gen->add_option("--height", spec.height)->capture_default_str();
    gen->add_option("--pen-fraction", spec.pen_fraction)->capture_default_str();
    gen->add_option("--cores", cores)->capture_default_str();

    fs::path cohort_dir;
    std::vector<fs::path> preds;
    std::string category = synth::kPositive;
    std::optional<fs::path> heatmaps, feature_dir;
    auto* ev = app.add_subcommand("evaluate", "Score predictions and attributions against the planted truth");
    ev->add_option("--cohort", cohort_dir, "Directory holding truth.json")->required();
    ev->add_option("--preds", preds, "patient-preds.csv files")->required();
    ev->add_option("--category", category)->capture_default_str();
    ev->add_option("--heatmaps", heatmaps, "Heatmap output_dir");
    ev->add_option("--features", feature_dir, "Feature directory of the cohort");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    try {
        if (gen->parsed()) {
            const auto truth = synth::generate_cohort(spec, out_dir, cores);
            out << fmt::format("wrote {} slides to {}\n", truth.slides.size(), out_dir.string());
            return 0;
        }
        return evaluate(cohort_dir, preds, category, heatmaps, feature_dir, out);
    } catch (const Error& e) {
        err << "error: " << e.summary() << "\n";
        err << "solution: " << e.remediation() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace stamp::cli
