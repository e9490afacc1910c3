#pragma once

#include "stamp/cohort/cohort.hpp"
#include "stamp/model/settings.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace stamp::model {

inline constexpr const char* kBundleName = "export.stamp";

/// A trained model with everything deployment needs to rebuild its inputs.
struct ModelBundle {
    ModelConfig model;
    TrainConfig train;
    std::vector<std::string> categories;
    std::string target_label;
    std::string extractor_id;
    int feature_dim = 0;                 // extractor dim, before tabular columns
    std::vector<std::string> cat_labels;
    std::vector<std::string> cont_labels;
    cohort::TabularSchema tabular;
    nlohmann::json fingerprint = nlohmann::json::object();
    std::vector<float> weights;          // flat, in Transformer<float> tensor order

    bool operator==(const ModelBundle&) const = default;
};

/// Container: "STAMPBDL", u32 version, u64 manifest length, the JSON
/// manifest, then the tensors as little-endian float32 in manifest order.
void write_bundle(const std::filesystem::path& path, const ModelBundle& bundle);

/// Throws MalformedBundle on any structural problem.
ModelBundle read_bundle(const std::filesystem::path& path);

} // namespace stamp::model
