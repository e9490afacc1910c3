#pragma once

#include "stamp/config/config.hpp"
#include "stamp/features/extractor.hpp"
#include "stamp/image.hpp"
#include "stamp/model/bundle.hpp"
#include "stamp/model/transformer.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stamp::explain {

struct AttributionMap {
    int category = 0;
    std::vector<double> scores;   // one per feature row
    double max_abs = 0.0;
};

/// Gradient x input per tile for the logit difference z_c - mean(z_other),
/// summed over input dimensions. `tabular` is appended to every row as in
/// training. Throws ExtractorMismatch.
AttributionMap tile_attribution(const model::ModelBundle& bundle, const model::Transformer<float>& model,
                                const features::FeatureMatrix& fm, int category,
                                const std::vector<float>& tabular = {});

/// Heatmap geometry: `cols` x `rows` tile cells of `cell_px` pixels.
struct HeatmapGrid {
    int cols = 0;
    int rows = 0;
    int tile_px = 224;
    int cell_px = 32;
};

/// Diverging blue-white-red color of v in [-1, 1].
std::array<std::uint8_t, 3> diverging_color(double v);

/// Paints each tile cell with its score / max|a| (an all-zero map is
/// neutral) at alpha 0.6 over `background`, which is stretched over the
/// grid. Without a background the canvas is white.
RgbImage render_heatmap(const AttributionMap& attr, const std::vector<std::int32_t>& coords, const HeatmapGrid& grid,
                        const RgbImage* background, int background_factor = 1);

struct RankedTile {
    std::size_t index;
    double score;   // normalized to max|a|
    int x;
    int y;
};

/// Tiles by descending attribution, ties by (y, x); at most n.
std::vector<RankedTile> top_tiles(const AttributionMap& attr, const std::vector<std::int32_t>& coords, int n);

std::string top_tile_name(const std::string& stem, const std::string& category, int rank, const RankedTile& t);

/// Runs the heatmaps command over feature files whose stem matches
/// slide_name (shell wildcards). Writes under output_dir/heatmaps/<stem>/.
/// Returns the processed stems.
std::vector<std::string> run_heatmaps(const config::HeatmapsSettings& settings);

} // namespace stamp::explain
