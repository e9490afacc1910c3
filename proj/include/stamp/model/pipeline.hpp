#pragma once

#include "stamp/config/config.hpp"
#include "stamp/model/bundle.hpp"

#include <filesystem>
#include <vector>

namespace stamp::model {

/// n_splits models; fold i writes fold-<i>/patient-preds.csv and
/// fold-<i>/export.stamp under output_dir, folds.json at its root.
void run_crossval(const config::ModelingSettings& settings);

/// One model on a stratified 80/20 train/validation split, written to
/// output_dir/export.stamp.
ModelBundle run_train(const config::ModelingSettings& settings);

/// Scores deploy_feature_dir with the bundle at model_path; writes
/// output_dir/patient-preds.csv. Throws ExtractorMismatch or
/// MissingFeatures.
void run_deploy(const config::ModelingSettings& settings);

} // namespace stamp::model
