#pragma once

#include "stamp/model/settings.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stamp::config {

using Path = std::filesystem::path;

/// Parsed configuration file: the key tree with paths already resolved
/// against the file's directory. Sections are checked lazily, per command.
struct PipelineConfig {
    Path source;
    nlohmann::ordered_json tree = nlohmann::ordered_json::object();
    std::vector<std::string> warnings;   // unknown sections and keys

    bool has_section(const std::string& name) const;
    bool operator==(const PipelineConfig& o) const { return tree == o.tree; }
};

/// Throws ConfigFileNotFound or ConfigParseError (with line and column).
PipelineConfig load_config(const Path& path);

/// Parses configuration text; relative paths resolve against `base_dir`.
PipelineConfig parse_config(const std::string& text, const Path& base_dir, const Path& source = {});

/// Renders the resolved configuration as YAML that parses back to an equal
/// PipelineConfig.
std::string dump_config(const PipelineConfig& config);

struct PreprocessSettings {
    Path output_dir;
    Path wsi_dir;
    Path cache_dir;
    double microns = 0.0;
    bool norm = false;
    std::optional<Path> normalization_template;
    std::optional<Path> model_path;
    bool del_slide = false;
    bool only_feature_extraction = false;
    int cores = 1;
    std::string device = "cpu";
    // Optional tuning keys.
    double brightness_max = 224.0;
    double edge_min = 0.02;
    double canny_low = 40.0;
    double canny_high = 100.0;
    double macenko_i0 = 240.0;
    double macenko_alpha = 1.0;
    double macenko_beta = 0.15;
    std::uint64_t seed = 0;
    std::optional<std::string> model_url;
    std::optional<std::string> template_url;

    bool operator==(const PreprocessSettings&) const = default;
};

struct ModelingSettings {
    std::optional<Path> clini_table;
    Path slide_table;
    std::optional<Path> feature_dir;
    Path output_dir;
    std::string target_label;
    std::optional<std::vector<std::string>> categories;
    std::vector<std::string> cat_labels;
    std::vector<std::string> cont_labels;
    int n_splits = 5;
    std::optional<Path> model_path;
    std::optional<Path> deploy_feature_dir;
    model::ModelConfig model;
    model::TrainConfig train;

    bool operator==(const ModelingSettings&) const = default;
};

struct StatisticsSettings {
    std::vector<Path> pred_csvs;
    std::string target_label;
    std::string true_class;
    Path output_dir;
    int n_bootstrap = 1000;
    std::uint64_t seed = 0;

    bool operator==(const StatisticsSettings&) const = default;
};

struct HeatmapsSettings {
    std::string slide_name = "*";
    Path feature_dir;
    Path wsi_dir;
    Path model_path;
    Path output_dir;
    int n_toptiles = 8;
    std::optional<Path> cache_dir;

    bool operator==(const HeatmapsSettings&) const = default;
};

/// The typed sections a command needs.
struct ValidatedSection {
    std::string command;
    std::optional<PreprocessSettings> preprocessing;
    std::optional<ModelingSettings> modeling;
    std::optional<StatisticsSettings> statistics;
    std::optional<HeatmapsSettings> heatmaps;

    bool operator==(const ValidatedSection&) const = default;
};

inline constexpr const char* kCommands[] = {"setup", "crossval", "config", "preprocess",
                                            "train", "deploy",   "statistics", "heatmaps"};

bool is_command(const std::string& command);

/// Checks and types the sections `command` needs. Throws MissingKeys listing
/// every absent key as "section.key", TypeMismatch, InvalidValue or
/// UnknownCommand.
ValidatedSection validate_for_command(const PipelineConfig& config, const std::string& command);

} // namespace stamp::config
