#include "stamp/features/extractor.hpp"

#include "stamp/error.hpp"
#include "stamp/slide/canny.hpp"

#include <algorithm>
#include <cmath>

namespace stamp::features {
namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Moments {
    double sum = 0, sum2 = 0, sum3 = 0;
};

double correlation(double n, double sx, double sy, double sxx, double syy, double sxy)
{
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    if (vx <= 1e-12 || vy <= 1e-12) return 0.0;
    return std::clamp(cov / std::sqrt(vx * vy), -1.0, 1.0);
}

} // namespace

std::vector<float> toy_extract(const RgbImage& tile)
{
    const std::size_t n = tile.pixel_count();
    std::vector<float> out;
    out.reserve(kToyDim);
    if (n == 0) {
        out.assign(kToyDim, 0.0f);
        return out;
    }
    const double nd = static_cast<double>(n);
    const std::uint8_t* p = tile.pixels.data();

    // Channel moments and histograms.
    Moments m[3];
    double hist[3][8] = {};
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = p[3 * i + c];
            m[c].sum += v;
            hist[c][p[3 * i + c] >> 5] += 1.0;
        }
    }
    double mean[3];
    for (int c = 0; c < 3; ++c) mean[c] = m[c].sum / nd;
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double d = p[3 * i + c] - mean[c];
            m[c].sum2 += d * d;
            m[c].sum3 += d * d * d;
        }
    }
    double sd[3];
    for (int c = 0; c < 3; ++c) {
        sd[c] = std::sqrt(m[c].sum2 / nd);
        out.push_back(static_cast<float>(mean[c] / 255.0));
    }
    for (int c = 0; c < 3; ++c) out.push_back(static_cast<float>(sd[c] / 128.0));
    for (int c = 0; c < 3; ++c) {
        const double skew = sd[c] > 1e-9 ? (m[c].sum3 / nd) / (sd[c] * sd[c] * sd[c]) : 0.0;
        out.push_back(static_cast<float>(0.5 + 0.5 * std::tanh(skew / 3.0)));
    }
    for (int c = 0; c < 3; ++c)
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<float>(hist[c][b] / nd));

    // Edges and gradients.
    const slide::EdgeMaps edges = slide::canny(tile);
    out.push_back(static_cast<float>(edges.edge_fraction()));

    // Mean brightness of the four quadrants.
    const int hw = tile.width / 2, hh = tile.height / 2;
    for (int q = 0; q < 4; ++q) {
        const int x0 = (q % 2) * hw, y0 = (q / 2) * hh;
        const int x1 = (q % 2) ? tile.width : hw, y1 = (q / 2) ? tile.height : hh;
        double s = 0.0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) s += edges.gray[static_cast<std::size_t>(y) * tile.width + x];
        const double cnt = static_cast<double>(x1 - x0) * (y1 - y0);
        out.push_back(static_cast<float>(cnt > 0 ? s / cnt / 255.0 : 0.0));
    }

    double gsum = 0.0, gsum2 = 0.0;
    for (float g : edges.magnitude) gsum += g;
    const double gmean = gsum / nd;
    for (float g : edges.magnitude) gsum2 += (g - gmean) * (g - gmean);
    out.push_back(static_cast<float>(gmean / 255.0));
    out.push_back(static_cast<float>(std::sqrt(gsum2 / nd) / 255.0));

    // HSV statistics and channel correlations.
    double s_sum = 0, s_sum2 = 0, hc = 0, hs = 0, n_hue = 0;
    double sr = 0, sg = 0, sb = 0, srr = 0, sgg = 0, sbb = 0, srg = 0, srb = 0, sgb = 0;
    double ssv = 0, sv = 0, svv = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = p[3 * i] / 255.0, g = p[3 * i + 1] / 255.0, b = p[3 * i + 2] / 255.0;
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        const double delta = mx - mn;
        const double s = mx > 0.0 ? delta / mx : 0.0;
        s_sum += s;
        s_sum2 += s * s;
        if (delta > 0.0) {
            double h;
            if (mx == r) h = std::fmod((g - b) / delta + 6.0, 6.0);
            else if (mx == g) h = (b - r) / delta + 2.0;
            else h = (r - g) / delta + 4.0;
            const double theta = h / 6.0 * kTwoPi;
            hc += std::cos(theta);
            hs += std::sin(theta);
            n_hue += 1.0;
        }
        sr += r; sg += g; sb += b;
        srr += r * r; sgg += g * g; sbb += b * b;
        srg += r * g; srb += r * b; sgb += g * b;
        sv += mx; svv += mx * mx; ssv += s * mx;
    }
    const double s_mean = s_sum / nd;
    out.push_back(static_cast<float>(s_mean));
    out.push_back(static_cast<float>(std::sqrt(std::max(0.0, s_sum2 / nd - s_mean * s_mean))));
    if (n_hue > 0) {
        double angle = std::atan2(hs, hc) / kTwoPi;
        if (angle < 0) angle += 1.0;
        out.push_back(static_cast<float>(angle));
        out.push_back(static_cast<float>(std::sqrt(hc * hc + hs * hs) / n_hue));
    } else {
        out.push_back(0.0f);
        out.push_back(0.0f);
    }
    const double corr[4] = {
        correlation(nd, sr, sg, srr, sgg, srg),
        correlation(nd, sr, sb, srr, sbb, srb),
        correlation(nd, sg, sb, sgg, sbb, sgb),
        correlation(nd, s_sum, sv, s_sum2, svv, ssv),
    };
    for (double r : corr) out.push_back(static_cast<float>((r + 1.0) / 2.0));
    return out;
}

std::vector<float> ToyExtractor::run(std::span<const RgbImage> tiles) const
{
    std::vector<float> out;
    out.reserve(tiles.size() * kToyDim);
    for (const auto& t : tiles) {
        const auto v = toy_extract(t);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

std::unique_ptr<ExtractorBackend> make_extractor(const std::optional<std::filesystem::path>& model_path,
                                                 const std::string& device)
{
    if (!model_path) return std::make_unique<ToyExtractor>();
    if (device.rfind("cuda", 0) == 0) {
        throw Error(ErrorCode::InvalidDevice, "CUDA error: invalid device ordinal", "preprocessing.device");
    }
    if (!std::filesystem::exists(*model_path)) {
        throw Error(ErrorCode::BackendFailure, "feature extractor model not found", model_path->string());
    }
    throw Error(ErrorCode::BackendFailure,
                "no inference runtime for neural extractor exports in this build; precomputed " +
                    std::to_string(kCtransPathDim) + "-dim feature files are accepted downstream",
                model_path->string());
}

FeatureMatrix extract_batch(std::span<const RgbImage> tiles, std::span<const slide::TileCoord> coords,
                            const ExtractorBackend& backend, std::size_t batch_size)
{
    if (tiles.size() != coords.size())
        throw Error(ErrorCode::InvalidValue, "tile and coordinate counts differ");
    const auto& desc = backend.descriptor();
    FeatureMatrix fm;
    fm.d = desc.dim;
    fm.extractor_id = desc.id;
    fm.feats.reserve(tiles.size() * static_cast<std::size_t>(desc.dim));
    batch_size = std::max<std::size_t>(1, batch_size);
    for (std::size_t start = 0; start < tiles.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, tiles.size() - start);
        for (std::size_t i = start; i < start + count; ++i) {
            if (tiles[i].width != slide::kTilePx || tiles[i].height != slide::kTilePx)
                throw Error(ErrorCode::InvalidValue, "tiles must be 224x224 RGB");
        }
        std::vector<float> out;
        try {
            out = backend.run(tiles.subspan(start, count));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw Error(ErrorCode::BackendFailure, e.what(), desc.id);
        }
        if (out.size() != count * static_cast<std::size_t>(desc.dim)) {
            const std::size_t got = count ? out.size() / count : 0;
            throw Error(ErrorCode::DimensionMismatch,
                        "extractor produced " + std::to_string(got) + "-dim vectors, descriptor declares " +
                            std::to_string(desc.dim),
                        desc.id);
        }
        for (float v : out) {
            if (!std::isfinite(v)) throw Error(ErrorCode::BackendFailure, "extractor produced non-finite values", desc.id);
        }
        fm.feats.insert(fm.feats.end(), out.begin(), out.end());
    }
    fm.n = static_cast<int>(tiles.size());
    for (const auto& c : coords) {
        fm.coords.push_back(c.x);
        fm.coords.push_back(c.y);
    }
    return fm;
}

void append_rows(FeatureMatrix& into, const FeatureMatrix& part)
{
    if (into.n == 0 && into.feats.empty()) {
        const auto tile_px = into.tile_px;
        const auto mpp = into.target_mpp;
        const auto norm = into.norm;
        into = part;
        into.tile_px = tile_px;
        into.target_mpp = mpp;
        into.norm = norm;
        return;
    }
    if (part.d != into.d || part.extractor_id != into.extractor_id)
        throw Error(ErrorCode::DimensionMismatch, "feature batches disagree on extractor or dimension");
    into.feats.insert(into.feats.end(), part.feats.begin(), part.feats.end());
    into.coords.insert(into.coords.end(), part.coords.begin(), part.coords.end());
    into.n += part.n;
}

} // namespace stamp::features
