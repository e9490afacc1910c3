#pragma once

#include "stamp/features/extractor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace stamp::features {

/// "STAMP_<macenko|raw>_<extractor-id>".
std::string feature_dir_name(bool normalized, const std::string& extractor_id);

/// Writes `<stem>.h5` with datasets feats (float32 n x d) and coords
/// (int32 n x 2) and root attributes extractor, tile_px, target_mpp, norm.
/// The file is written under a temporary name and renamed into place.
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& fm);

/// Throws MalformedFeatureFile naming the path when a dataset or attribute
/// is missing or inconsistent.
FeatureMatrix read_feature_file(const std::filesystem::path& path);

/// Reads only the root attributes and shape (no feature payload).
FeatureMatrix read_feature_header(const std::filesystem::path& path);

} // namespace stamp::features
