#include "stamp/cli/cli.hpp"

#include "stamp/config/config.hpp"
#include "stamp/error.hpp"
#include "stamp/explain/heatmap.hpp"
#include "stamp/features/extractor.hpp"
#include "stamp/features/store.hpp"
#include "stamp/model/pipeline.hpp"
#include "stamp/slide/preprocess.hpp"
#include "stamp/stats/metrics.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <thread>

namespace stamp::cli {
namespace fs = std::filesystem;

namespace {

void report(const Error& e, std::ostream& err)
{
    err << "error: " << e.summary() << "\n";
    err << "solution: " << e.remediation() << "\n";
}

// Splits "https://host[:port]/path" for httplib.
void download(const std::string& url, const fs::path& dest)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidValue, "malformed URL '" + url + "'", url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string host = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(host);
    client.set_follow_location(true);
    auto res = client.Get(path);
    if (!res || res->status != 200) {
        throw Error(ErrorCode::IoError,
                    fmt::format("download failed ({})",
                                res ? std::to_string(res->status) : httplib::to_string(res.error())),
                    url, "Check the URL and network access, or place the file at the configured path by hand.");
    }
    fs::create_directories(dest.parent_path());
    const fs::path tmp = dest.string() + ".part";
    {
        std::ofstream f(tmp, std::ios::binary);
        f.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
        if (!f) throw Error(ErrorCode::IoError, "cannot write downloaded file", tmp.string());
    }
    fs::rename(tmp, dest);
}

void ensure_file(const char* key, const std::optional<fs::path>& path, const std::optional<std::string>& url,
                 std::ostream& out)
{
    if (!path) {
        out << key << ": not configured\n";
        return;
    }
    if (fs::exists(*path)) {
        out << key << ": present " << path->string() << "\n";
        return;
    }
    if (!url) {
        throw Error(ErrorCode::ConfigFileNotFound, fmt::format("{} does not exist and no URL is configured", key),
                    path->string(), "Place the file at the configured path or set the matching *_url key.");
    }
    out << key << ": fetching " << *url << "\n";
    download(*url, *path);
    out << key << ": saved " << path->string() << "\n";
}

int cmd_setup(const config::ValidatedSection& v, std::ostream& out)
{
    if (!v.preprocessing) {
        out << "no preprocessing section; nothing to set up\n";
        return 0;
    }
    const auto& p = *v.preprocessing;
    std::optional<Error> first;
    auto check = [&](const char* key, const std::optional<fs::path>& path, const std::optional<std::string>& url) {
        try {
            ensure_file(key, path, url, out);
        } catch (const Error& e) {
            out << key << ": missing\n";
            if (!first) first = e;
        }
    };
    check("preprocessing.model_path", p.model_path, p.model_url);
    check("preprocessing.normalization_template", p.normalization_template, p.template_url);
    if (first) throw *first;
    return 0;
}

int cmd_preprocess(const config::PreprocessSettings& s, std::ostream& out)
{
    slide::PreprocessOptions o;
    o.spec.microns = s.microns;
    o.qc.brightness_max = s.brightness_max;
    o.qc.edge_min = s.edge_min;
    o.qc.canny.low = static_cast<float>(s.canny_low);
    o.qc.canny.high = static_cast<float>(s.canny_high);
    o.macenko.i0 = s.macenko_i0;
    o.macenko.alpha = s.macenko_alpha;
    o.macenko.beta = s.macenko_beta;
    o.norm = s.norm;
    o.cache_dir = s.cache_dir;
    o.del_slide = s.del_slide;
    o.only_feature_extraction = s.only_feature_extraction;
    o.seed = s.seed;
    if (s.norm) {
        if (!s.normalization_template) {
            throw Error(ErrorCode::MissingKeys, "Missing required configuration keys: ['preprocessing.normalization_template']",
                        "preprocessing.normalization_template");
        }
        o.target = slide::template_stain_params(*s.normalization_template, o.macenko);
    }
    const auto extractor = features::make_extractor(s.model_path, s.device);
    o.feature_dir = s.output_dir / features::feature_dir_name(s.norm, extractor->descriptor().id);
    const auto slides = slide::list_slides(s.only_feature_extraction ? s.cache_dir : s.wsi_dir,
                                           s.only_feature_extraction);
    const auto outcomes = slide::run_preprocess(slides, o, *extractor, s.cores);
    int failed = 0;
    for (const auto& r : outcomes) {
        out << fmt::format("{}\t{}\ttiles={} accepted={}", r.stem, slide::to_string(r.status), r.report.n_grid_tiles,
                           r.report.n_accepted);
        if (!r.message.empty()) out << "\t" << r.message;
        out << "\n";
        if (r.status == slide::SlideStatus::Failed) ++failed;
    }
    out << fmt::format("{} slides, {} failed; features in {}\n", outcomes.size(), failed, o.feature_dir.string());
    return 0;
}

int dispatch(const std::string& command, const config::PipelineConfig& cfg, std::ostream& out)
{
    if (command == "config") {
        out << config::dump_config(cfg);
        return 0;
    }
    const auto v = config::validate_for_command(cfg, command);
    if (command == "setup") return cmd_setup(v, out);
    if (command == "preprocess") return cmd_preprocess(*v.preprocessing, out);
    if (command == "crossval") {
        model::run_crossval(*v.modeling);
        return 0;
    }
    if (command == "train") {
        model::run_train(*v.modeling);
        return 0;
    }
    if (command == "deploy") {
        model::run_deploy(*v.modeling);
        return 0;
    }
    if (command == "statistics") {
        const auto& s = *v.statistics;
        const auto rep = stats::aggregate_folds(s.pred_csvs, s.target_label, s.true_class, s.output_dir,
                                                s.n_bootstrap, s.seed);
        out << fmt::format("AUROC {:.4f} [{:.4f}-{:.4f}]\n", rep.auroc.point, rep.auroc.lower, rep.auroc.upper);
        out << fmt::format("AUPRC {:.4f} [{:.4f}-{:.4f}]\n", rep.auprc.point, rep.auprc.lower, rep.auprc.upper);
        return 0;
    }
    if (command == "heatmaps") {
        for (const auto& stem : explain::run_heatmaps(*v.heatmaps)) out << stem << "\n";
        return 0;
    }
    throw Error(ErrorCode::UnknownCommand, "Unknown command '" + command + "'", command);
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Weakly supervised slide-level classification pipeline", "stamp"};
    std::string command;
    std::string config_path = "config.yaml";
    bool verbose = false;
    app.add_option("command", command, "setup | config | preprocess | crossval | train | deploy | statistics | heatmaps")
        ->required();
    app.add_option("-c,--config", config_path, "Configuration file")->capture_default_str();
    app.add_flag("-v,--verbose", verbose, "Debug logging");
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
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
    try {
        if (!config::is_command(command)) {
            throw Error(ErrorCode::UnknownCommand, "Unknown command '" + command + "'", command);
        }
        const auto cfg = config::load_config(config_path);
        for (const auto& w : cfg.warnings) spdlog::warn("{}", w);
        return dispatch(command, cfg, out);
    } catch (const Error& e) {
        report(e, err);
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace stamp::cli
