#pragma once

#include "stamp/error.hpp"
#include "stamp/features/extractor.hpp"
#include "stamp/slide/macenko.hpp"
#include "stamp/slide/qc.hpp"
#include "stamp/slide/slide.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stamp::slide {

struct PreprocessOptions {
    TileSpec spec;
    QcThresholds qc;
    bool norm = false;
    std::optional<StainParams> target;   // required when norm is set
    MacenkoOptions macenko;
    std::filesystem::path cache_dir;
    std::filesystem::path feature_dir;
    bool only_feature_extraction = false;
    bool del_slide = false;
    std::uint64_t seed = 0;
    std::size_t batch_size = 64;
    std::size_t stain_sample_tiles = 50;
    std::size_t stain_sample_pixels = 250000;
    int jpeg_quality = 90;
};

/// Features and QC counts of one slide.
struct SlideResult {
    QcReport report;
    features::FeatureMatrix features;   // n == 0 when no tile was accepted
    bool normalized = false;
    std::optional<StainParams> source_stain;
    std::vector<std::string> warnings;
};

/// Tessellates, filters, normalizes and embeds one slide, writing
/// slide.jpg, canny_slide.jpg, norm_slide.jpg (when normalized) and qc.json
/// into <cache_dir>/<stem>/ if cache_dir is set.
SlideResult preprocess_slide(const SlideHandle& slide, const PreprocessOptions& options,
                             const features::ExtractorBackend& extractor);

/// Rebuilds a slide's features from a cache directory written by an earlier
/// run (normalized tiles from norm_slide.jpg, else canny_slide.jpg).
SlideResult extract_from_cache(const std::filesystem::path& slide_cache_dir, const PreprocessOptions& options,
                               const features::ExtractorBackend& extractor);

enum class SlideStatus { Processed, AlreadyDone, NoTissue, Failed };

std::string_view to_string(SlideStatus s);

struct SlideOutcome {
    std::filesystem::path slide;
    std::string stem;
    SlideStatus status = SlideStatus::Failed;
    QcReport report;
    std::optional<ErrorCode> error;
    std::string message;
};

/// Processes one slide file end to end: skips it when its feature file
/// exists, writes <feature_dir>/<stem>.h5, and deletes the slide afterwards
/// when del_slide is set. Never throws for per-slide failures.
SlideOutcome run_slide(const std::filesystem::path& slide_path, const PreprocessOptions& options,
                       const features::ExtractorBackend& extractor);

/// Runs slides on a pool of `cores` workers; outcomes are in input order.
std::vector<SlideOutcome> run_preprocess(const std::vector<std::filesystem::path>& slides,
                                         const PreprocessOptions& options,
                                         const features::ExtractorBackend& extractor, int cores);

/// Slide files (by extension) in a directory tree, sorted. With
/// `cache_layout`, cache directories holding qc.json instead.
std::vector<std::filesystem::path> list_slides(const std::filesystem::path& wsi_dir, bool cache_layout = false);

/// Stain parameters of a template image.
StainParams template_stain_params(const std::filesystem::path& image, const MacenkoOptions& options = {});

/// Thumbnail downscale factor keeping an RGB plane within 2^31 bytes and
/// JPEG's dimension limit.
int thumbnail_factor(int plane_width, int plane_height);

} // namespace stamp::slide
