#include "stamp/slide/qc.hpp"

#include <numeric>

namespace stamp::slide {

std::string_view to_string(QcVerdict v)
{
    switch (v) {
    case QcVerdict::Accepted: return "accepted";
    case QcVerdict::RejectedBackground: return "rejected_background";
    case QcVerdict::RejectedEdges: return "rejected_edges";
    }
    return "unknown";
}

void QcReport::add(QcVerdict v)
{
    ++n_grid_tiles;
    switch (v) {
    case QcVerdict::Accepted: ++n_accepted; break;
    case QcVerdict::RejectedBackground: ++n_rejected_background; break;
    case QcVerdict::RejectedEdges: ++n_rejected_edges; break;
    }
}

QcOutcome qc_tile(const RgbImage& tile, const QcThresholds& t, const kernels::KernelTable& k)
{
    QcOutcome out;
    auto gray = to_gray(tile, k);
    if (gray.empty()) return out;
    const double sum = std::accumulate(gray.begin(), gray.end(), 0.0);
    out.mean_brightness = sum / static_cast<double>(gray.size());
    if (out.mean_brightness >= t.brightness_max) {
        out.verdict = QcVerdict::RejectedBackground;
        return out;
    }
    const EdgeMaps maps = canny_gray(std::move(gray), tile.width, tile.height, t.canny, k);
    out.edge_fraction = maps.edge_fraction();
    out.verdict = out.edge_fraction < t.edge_min ? QcVerdict::RejectedEdges : QcVerdict::Accepted;
    return out;
}

} // namespace stamp::slide
