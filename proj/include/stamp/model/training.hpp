#pragma once

#include "stamp/cohort/cohort.hpp"
#include "stamp/model/bundle.hpp"
#include "stamp/model/settings.hpp"
#include "stamp/model/transformer.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace stamp::model {

struct Bag {
    std::string patient;
    int n = 0;
    int d = 0;
    std::vector<float> feats;   // n x d, tabular columns appended to every row
    int label = -1;
};

/// Concatenates the patient's feature files (in listed order) and appends
/// the tabular vector to each tile row. Throws ExtractorMismatch when a
/// file's extractor differs from `extractor_id` (unless it is empty) or
/// its width differs from `feature_dim` (unless 0).
Bag load_bag(const cohort::Patient& patient, const std::vector<float>& tabular,
             const std::string& extractor_id = {}, int feature_dim = 0);

/// Extractor id and width shared by every feature file of the cohort.
std::pair<std::string, int> cohort_extractor(const cohort::Cohort& cohort);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<float> weights;   // best epoch
    int best_epoch = 0;
    std::vector<EpochLog> history;
};

/// Inverse class frequency weights N / (C * n_c); 0 for absent classes.
std::vector<double> class_weights(const std::vector<int>& labels, int n_classes);

/// AdamW on class-weighted cross-entropy. Bags are subsampled to
/// max_bag_size tiles every epoch; training stops after `patience` epochs
/// without a lower validation loss and the best weights are returned. An
/// empty validation set trains for max_epochs.
TrainResult train_model(const std::vector<Bag>& train, const std::vector<Bag>& val, const ModelConfig& model,
                        const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {});

struct Prediction {
    std::string patient;
    int label = -1;
    std::vector<double> scores;
    int pred = 0;
    double loss = 0.0;   // only meaningful when label >= 0
};

Prediction predict(const Transformer<float>& model, const Bag& bag);

/// patient-preds.csv. Rows with ground truth first, ascending by loss, then
/// the rest by patient id.
std::string predictions_csv(const std::vector<Prediction>& preds, const std::string& target_label,
                            const std::vector<std::string>& categories);

/// Largest relative difference between analytic gradients of the
/// cross-entropy loss and central finite differences, float64 model.
/// Relative error is |a - f| / max(|a|, |f|, floor).
struct GradcheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t n_params = 0;
};
GradcheckResult gradcheck(const ModelConfig& cfg, int n_tiles, int label, std::uint64_t seed, double h = 1e-5,
                          double floor = 1e-8);

} // namespace stamp::model
