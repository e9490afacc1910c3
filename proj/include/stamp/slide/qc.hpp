#pragma once

#include "stamp/image.hpp"
#include "stamp/slide/canny.hpp"

#include <string_view>

namespace stamp::slide {

enum class QcVerdict { Accepted, RejectedBackground, RejectedEdges };

std::string_view to_string(QcVerdict v);

struct QcThresholds {
    double brightness_max = 224.0;
    double edge_min = 0.02;
    CannyParams canny;
};

struct QcOutcome {
    QcVerdict verdict = QcVerdict::RejectedBackground;
    double edge_fraction = 0.0;
    double mean_brightness = 0.0;
};

struct QcReport {
    std::size_t n_grid_tiles = 0;
    std::size_t n_accepted = 0;
    std::size_t n_rejected_background = 0;
    std::size_t n_rejected_edges = 0;
    double runtime_s = 0.0;

    void add(QcVerdict v);
};

/// Bright tiles are rejected before edge detection runs.
QcOutcome qc_tile(const RgbImage& tile, const QcThresholds& thresholds = {},
                  const kernels::KernelTable& k = kernels::active());

} // namespace stamp::slide
