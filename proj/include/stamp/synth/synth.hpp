#pragma once

#include "stamp/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stamp::synth {

struct SynthSpec {
    int n_patients = 60;
    double prevalence = 0.5;
    int width = 8960;            // base pixels
    int height = 8960;
    double mpp = 0.5;
    int blob_min = 2;
    int blob_max = 4;
    double blob_radius_min = 1400;   // base pixels at 8960 px; scaled with slide size
    double blob_radius_max = 2600;
    double signal_strength = 0.5;    // fraction of a positive slide's tissue in signal texture
    double pen_fraction = 0.2;
    double stain_jitter = 0.05;
    double tile_microns = 256.0;     // truth mask cell size
    int jpeg_quality = 90;
    std::uint64_t seed = 0;

    /// Throws InvalidValue naming the offending field.
    void validate() const;
    nlohmann::json to_json() const;
};

/// Per-slide truth: label and signal mask on the tile grid.
struct SlideTruth {
    std::string patient;
    std::string slide;               // file stem
    int label = 0;                   // 1 = POS
    int cols = 0;
    int rows = 0;
    std::vector<std::uint8_t> mask;  // rows x cols
    std::vector<double> signal_fraction;   // per cell, of the cell area
    double tissue_signal_fraction = 0.0;

    bool masked(int col, int row) const { return mask[static_cast<std::size_t>(row) * cols + col] != 0; }
};

struct SynthTruth {
    double tile_microns = 256.0;
    double mpp = 0.5;
    std::vector<SlideTruth> slides;   // sorted by patient

    const SlideTruth* find_patient(const std::string& id) const;
    const SlideTruth* find_slide(const std::string& stem) const;
    nlohmann::json to_json() const;
    static SynthTruth from_json(const nlohmann::json& j);
};

inline constexpr const char* kTargetLabel = "isSignal";
inline constexpr const char* kPositive = "POS";
inline constexpr const char* kNegative = "NEG";

std::string patient_id(int index);   // SYN_0001, ...

/// Writes <out>/slides/<id>.tiff, slide_table.csv, clini_table.csv,
/// truth.json and normalization_template.jpg. Slides are rendered on
/// `cores` threads; the output depends only on the spec.
SynthTruth generate_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir, int cores = 1);

/// Renders one H&E-like image of nominal stain, for use as a
/// normalization template.
RgbImage render_template(int size, std::uint64_t seed);

SynthTruth load_truth(const std::filesystem::path& path);

struct TruthReport {
    double auroc = 0.0;
    double accuracy = 0.0;
    int n_patients = 0;
    std::map<std::string, double> overlap;   // slide stem -> top-decile overlap
    double mean_overlap = 0.0;
};

/// AUROC and accuracy of patient predictions (score of POS) against truth.
/// Throws CohortMismatch when the patient sets differ.
TruthReport evaluate_predictions(const std::map<std::string, double>& pos_scores,
                                 const std::map<std::string, std::string>& predicted, const SynthTruth& truth);

/// Fraction of the top-decile tiles (at least one) that fall on masked
/// cells. Coordinates are plane pixels at target_mpp; a tile belongs to the
/// cell containing its center.
double top_decile_overlap(const std::vector<double>& scores, const std::vector<std::int32_t>& coords, int tile_px,
                          double target_mpp, const SlideTruth& slide, double tile_microns, double mpp);

} // namespace stamp::synth
