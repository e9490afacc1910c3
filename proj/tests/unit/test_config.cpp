#include "helpers.hpp"

#include "stamp/cli/cli.hpp"
#include "stamp/config/config.hpp"
#include "stamp/error.hpp"

#include <doctest.h>

#include <sstream>

using namespace stamp;
using namespace stamp::config;
namespace fs = std::filesystem;

namespace {

const char* kStatsOnly = R"(statistics:
  pred_csvs: [a.csv, b.csv]
  target_label: isMSIH
  true_class: MSI-H
  output_dir: out
)";

ErrorCode code_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::IoError;
}

} // namespace

TEST_CASE("example config loads with microns 256")
{
    const auto cfg = load_config(fs::path(STAMP_SOURCE_DIR) / "config.yaml");
    const auto v = validate_for_command(cfg, "preprocess");
    REQUIRE(v.preprocessing);
    CHECK(v.preprocessing->microns == 256.0);
    CHECK(v.preprocessing->norm);
    CHECK(v.preprocessing->cores == 8);
    CHECK(v.preprocessing->device == "cuda:0");
    CHECK(v.preprocessing->model_path == fs::path("/home/STAMP/setup/ctranspath.pth"));
}

TEST_CASE("modeling section of the example config is consumed as written")
{
    const auto cfg = load_config(fs::path(STAMP_SOURCE_DIR) / "config.yaml");
    for (const char* cmd : {"crossval", "train", "deploy"}) {
        const auto v = validate_for_command(cfg, cmd);
        REQUIRE(v.modeling);
        const auto& m = *v.modeling;
        CHECK(m.target_label == "isMSIH");
        CHECK(m.categories == std::vector<std::string>{"MSI-H", "MSS"});
        CHECK(m.cat_labels == std::vector<std::string>{"STAGE", "SEX"});
        CHECK(m.cont_labels == std::vector<std::string>{"AGE"});
        CHECK(m.n_splits == 5);
        CHECK(m.clini_table == fs::path("/home/storage/clinical_table.xlsx"));
        CHECK(m.deploy_feature_dir ==
              fs::path("/home/storage/output_features_external/STAMP_macenko_xiyuewang-ctranspath-7c998680"));
    }
    const auto h = validate_for_command(cfg, "heatmaps");
    CHECK(h.heatmaps->slide_name == "20C0003*");
    CHECK(h.heatmaps->n_toptiles == 8);
    const auto s = validate_for_command(cfg, "statistics");
    CHECK(s.statistics->pred_csvs.size() == 5);
    CHECK(s.statistics->true_class == "MSI-H");
}

TEST_CASE("missing config file")
{
    try {
        load_config("/nonexistent/dir/config.yaml");
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigFileNotFound);
        CHECK(std::string(e.what()).find("Config file not found") != std::string::npos);
        CHECK(e.remediation() == default_remediation(ErrorCode::ConfigFileNotFound));
    }
}

TEST_CASE("malformed syntax reports line and column")
{
    try {
        parse_config("statistics:\n  pred_csvs: [a, b\n  target_label: x\n", "/tmp");
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigParseError);
        CHECK(std::string(e.what()).find("line") != std::string::npos);
    }
}

TEST_CASE("sections are required lazily")
{
    const auto cfg = parse_config(kStatsOnly, "/work");
    const auto v = validate_for_command(cfg, "statistics");
    REQUIRE(v.statistics);
    CHECK(v.statistics->pred_csvs == std::vector<fs::path>{"/work/a.csv", "/work/b.csv"});
    CHECK(v.statistics->output_dir == fs::path("/work/out"));
    CHECK(code_of([&] { validate_for_command(cfg, "crossval"); }) == ErrorCode::MissingKeys);
}

TEST_CASE("missing heatmaps.model_path is named in section.key form")
{
    const auto cfg = parse_config("heatmaps:\n  slide_name: '*'\n  feature_dir: f\n  wsi_dir: w\n  output_dir: o\n"
                                  "  n_toptiles: 4\n",
                                  "/work");
    try {
        validate_for_command(cfg, "heatmaps");
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingKeys);
        CHECK(std::string(e.what()) == "Missing required configuration keys: ['heatmaps.model_path']");
    }
}

TEST_CASE("every absent key is listed")
{
    const auto cfg = parse_config("preprocessing:\n  microns: 256\n", "/work");
    try {
        validate_for_command(cfg, "preprocess");
        FAIL("no error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        for (const char* key : {"preprocessing.output_dir", "preprocessing.wsi_dir", "preprocessing.cache_dir"})
            CHECK(msg.find(key) != std::string::npos);
        CHECK(msg.find("preprocessing.microns") == std::string::npos);
    }
}

TEST_CASE("type mismatches name the key")
{
    const std::string base = "modeling:\n  clini_table: c.csv\n  slide_table: s.csv\n  feature_dir: f\n"
                             "  output_dir: o\n  target_label: t\n";
    try {
        validate_for_command(parse_config(base + "  n_splits: five\n", "/w"), "crossval");
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TypeMismatch);
        CHECK(e.subject() == "modeling.n_splits");
    }
    CHECK(code_of([&] { validate_for_command(parse_config(base + "  n_splits: 1\n", "/w"), "crossval"); }) ==
          ErrorCode::InvalidValue);
    CHECK(code_of([&] {
              validate_for_command(parse_config(base + "  categories: [a, a]\n", "/w"), "crossval");
          }) == ErrorCode::InvalidValue);
    CHECK(code_of([&] { validate_for_command(parse_config(base + "  categories: []\n", "/w"), "crossval"); }) ==
          ErrorCode::InvalidValue);
}

TEST_CASE("booleans accept only true and false")
{
    const std::string pre = "preprocessing:\n  output_dir: o\n  wsi_dir: w\n  cache_dir: c\n  microns: 256\n";
    CHECK(validate_for_command(parse_config(pre + "  norm: false\n", "/w"), "preprocess").preprocessing->norm == false);
    for (const char* v : {"yes", "no", "1", "0", "True"}) {
        CAPTURE(v);
        CHECK(code_of([&] {
                  validate_for_command(parse_config(pre + "  norm: " + v + "\n", "/w"), "preprocess");
              }) == ErrorCode::TypeMismatch);
    }
}

TEST_CASE("numeric invariants")
{
    const std::string pre = "preprocessing:\n  output_dir: o\n  wsi_dir: w\n  cache_dir: c\n";
    CHECK(code_of([&] { validate_for_command(parse_config(pre + "  microns: 0\n", "/w"), "preprocess"); }) ==
          ErrorCode::InvalidValue);
    CHECK(code_of([&] {
              validate_for_command(parse_config(pre + "  microns: 256\n  cores: 0\n", "/w"), "preprocess");
          }) == ErrorCode::InvalidValue);
}

TEST_CASE("unknown keys are kept and warned about")
{
    const auto cfg = parse_config(std::string(kStatsOnly) + "  colour: blue\nextras:\n  a: 1\n", "/w");
    CHECK(cfg.warnings.size() == 2);
    CHECK(cfg.tree["statistics"].contains("colour"));
    CHECK_NOTHROW(validate_for_command(cfg, "statistics"));
}

TEST_CASE("relative paths resolve against the config file directory")
{
    testutil::TempDir dir("cfg");
    testutil::write_text(dir / "sub/config.yaml", kStatsOnly);
    const auto cfg = load_config(dir / "sub/config.yaml");
    const auto v = validate_for_command(cfg, "statistics");
    CHECK(v.statistics->output_dir == dir.path() / "sub/out");
    CHECK(v.statistics->output_dir.is_absolute());
}

TEST_CASE("printed config round-trips and validation is idempotent")
{
    const auto cfg = load_config(fs::path(STAMP_SOURCE_DIR) / "config.yaml");
    const auto again = parse_config(dump_config(cfg), "/elsewhere");
    CHECK(again == cfg);
    for (const char* cmd : {"preprocess", "crossval", "statistics", "heatmaps"})
        CHECK(validate_for_command(again, cmd) == validate_for_command(cfg, cmd));
}

TEST_CASE("unknown command is rejected")
{
    const auto cfg = parse_config(kStatsOnly, "/w");
    CHECK(code_of([&] { validate_for_command(cfg, "frobnicate"); }) == ErrorCode::UnknownCommand);
}

TEST_CASE("cli exit status and one-line failure summary")
{
    testutil::TempDir dir("cli");
    testutil::write_text(dir / "config.yaml", kStatsOnly);
    const std::string path = (dir / "config.yaml").string();
    std::ostringstream out, err;
    CHECK(cli::run({"config", "--config", path}, out, err) == 0);
    CHECK(parse_config(out.str(), dir.path()) == load_config(path));

    std::ostringstream out2, err2;
    CHECK(cli::run({"frobnicate", "--config", path}, out2, err2) != 0);
    CHECK(err2.str().rfind("error: Unknown command 'frobnicate'", 0) == 0);
    CHECK(err2.str().find(std::string(default_remediation(ErrorCode::UnknownCommand))) != std::string::npos);

    std::ostringstream out3, err3;
    CHECK(cli::run({"heatmaps", "--config", path}, out3, err3) == 1);
    CHECK(err3.str().find("Missing required configuration keys") != std::string::npos);

    std::ostringstream out4, err4;
    CHECK(cli::run({"config", "--config", (dir / "nope.yaml").string()}, out4, err4) == 1);
    CHECK(err4.str().find("Config file not found") != std::string::npos);
    CHECK(err4.str().find("--config") != std::string::npos);
}

TEST_CASE("setup reports present files and fails clearly without a URL")
{
    testutil::TempDir dir("setup");
    testutil::write_text(dir / "template.jpg", "x");
    testutil::write_text(dir / "config.yaml",
                         "preprocessing:\n  output_dir: o\n  wsi_dir: w\n  cache_dir: c\n  microns: 256\n"
                         "  normalization_template: template.jpg\n  model_path: missing.onnx\n");
    std::ostringstream out, err;
    CHECK(cli::run({"setup", "--config", (dir / "config.yaml").string()}, out, err) == 1);
    CHECK(out.str().find("present") != std::string::npos);
    CHECK(err.str().find("missing.onnx") != std::string::npos);
}
