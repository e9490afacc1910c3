#include "stamp/slide/preprocess.hpp"

#include "stamp/features/store.hpp"
#include "stamp/rng.hpp"
#include "stamp/slide/image_io.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

namespace stamp::slide {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Places a target-MPP tile into a canvas downscaled by `factor`.
void place(RgbImage& canvas, const RgbImage& tile, int x, int y, int factor)
{
    if (factor == 1) {
        blit(tile, canvas, x, y);
        return;
    }
    const int cx0 = x / factor, cy0 = y / factor;
    const int cx1 = std::min(canvas.width, (x + tile.width) / factor);
    const int cy1 = std::min(canvas.height, (y + tile.height) / factor);
    if (cx1 <= cx0 || cy1 <= cy0) return;
    const RgbImage cell = resample_area(tile, cx0 * factor - x, cy0 * factor - y, factor, factor, cx1 - cx0, cy1 - cy0);
    blit(cell, canvas, cx0, cy0);
}

json stain_json(const StainParams& p)
{
    json m = json::array();
    for (const auto& row : p.stain_matrix) m.push_back({row[0], row[1]});
    return {{"stain_matrix", m}, {"max_conc", {p.max_conc[0], p.max_conc[1]}}, {"i0", p.i0}};
}

json report_json(const QcReport& r)
{
    return {{"n_grid_tiles", r.n_grid_tiles},
            {"n_accepted", r.n_accepted},
            {"n_rejected_background", r.n_rejected_background},
            {"n_rejected_edges", r.n_rejected_edges},
            {"runtime_s", r.runtime_s}};
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write file", path.string());
    out << text;
}

// Extracts features for a stream of tiles in fixed-size batches.
class BatchedExtractor {
public:
    BatchedExtractor(const features::ExtractorBackend& backend, std::size_t batch, features::FeatureMatrix& out)
        : backend_(backend), batch_(std::max<std::size_t>(1, batch)), out_(out)
    {
    }

    void push(RgbImage tile, TileCoord coord)
    {
        tiles_.push_back(std::move(tile));
        coords_.push_back(coord);
        if (tiles_.size() == batch_) flush();
    }

    void flush()
    {
        if (tiles_.empty()) return;
        features::append_rows(out_, features::extract_batch(tiles_, coords_, backend_, batch_));
        tiles_.clear();
        coords_.clear();
    }

private:
    const features::ExtractorBackend& backend_;
    std::size_t batch_;
    features::FeatureMatrix& out_;
    std::vector<RgbImage> tiles_;
    std::vector<TileCoord> coords_;
};

std::optional<StainParams> estimate_slide_stain(const std::vector<RgbImage>& sample_tiles,
                                                const PreprocessOptions& o, std::uint64_t seed,
                                                std::vector<std::string>& warnings)
{
    std::size_t total = 0;
    for (const auto& t : sample_tiles) total += t.pixel_count();
    if (total == 0) return std::nullopt;
    const std::size_t k = std::min(total, o.stain_sample_pixels);
    std::vector<std::uint8_t> pixels(k * 3);
    Rng rng(seed);
    std::vector<std::size_t> offsets;
    for (const auto& t : sample_tiles) offsets.push_back(t.pixel_count());
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t idx = k == total ? i : static_cast<std::size_t>(rng.below(total));
        std::size_t ti = 0;
        while (idx >= offsets[ti]) idx -= offsets[ti++];
        std::copy_n(sample_tiles[ti].pixels.data() + 3 * idx, 3, pixels.data() + 3 * i);
    }
    try {
        return estimate_stain_params(pixels, o.macenko);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::InsufficientTissue) throw;
        warnings.push_back(std::string("stain normalization skipped: ") + e.what());
        return std::nullopt;
    }
}

} // namespace

int thumbnail_factor(int plane_width, int plane_height)
{
    constexpr double kMaxBytes = 2147483648.0;
    constexpr int kMaxDim = 65500;
    int f = 1;
    auto fits = [&](int factor) {
        const double w = std::ceil(static_cast<double>(plane_width) / factor);
        const double h = std::ceil(static_cast<double>(plane_height) / factor);
        return w * h * 3.0 <= kMaxBytes && w <= kMaxDim && h <= kMaxDim;
    };
    while (!fits(f)) ++f;
    return f;
}

SlideResult preprocess_slide(const SlideHandle& slide, const PreprocessOptions& o,
                             const features::ExtractorBackend& extractor)
{
    const auto t0 = std::chrono::steady_clock::now();
    if (o.norm && !o.target) throw Error(ErrorCode::InvalidValue, "stain normalization requires a template");
    const TileGrid grid = plan_tile_grid(slide, o.spec);
    const std::string stem = slide.path().stem().string();
    const int factor = thumbnail_factor(grid.plane_width, grid.plane_height);
    const int cw = (grid.plane_width + factor - 1) / factor, ch = (grid.plane_height + factor - 1) / factor;

    SlideResult result;
    RgbImage slide_canvas(cw, ch, 255);
    std::vector<TileCoord> accepted;
    for (const TileCoord c : grid.coords()) {
        RgbImage tile = grid.read_tile(slide, c);
        place(slide_canvas, tile, c.x, c.y, factor);
        const QcOutcome q = qc_tile(tile, o.qc);
        result.report.add(q.verdict);
        if (q.verdict == QcVerdict::Accepted) accepted.push_back(c);
    }

    auto fetch = [&](TileCoord c) {
        if (factor == 1) return crop(slide_canvas, c.x, c.y, grid.tile_px, grid.tile_px);
        return grid.read_tile(slide, c);
    };

    const std::uint64_t slide_seed = mix_seed(o.seed, hash_string(stem));
    std::optional<kernels::StainCoeffs> coeffs;
    if (o.norm && !accepted.empty()) {
        std::vector<std::size_t> order(accepted.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(slide_seed);
        rng.shuffle(std::span<std::size_t>(order));
        order.resize(std::min(order.size(), o.stain_sample_tiles));
        std::sort(order.begin(), order.end());
        std::vector<RgbImage> sample;
        for (std::size_t i : order) sample.push_back(fetch(accepted[i]));
        result.source_stain = estimate_slide_stain(sample, o, mix_seed(slide_seed, 1), result.warnings);
        if (result.source_stain) coeffs = make_stain_coeffs(*result.source_stain, *o.target);
    }
    result.normalized = coeffs.has_value();

    result.features.tile_px = grid.tile_px;
    result.features.target_mpp = grid.target_mpp;
    result.features.norm = result.normalized ? "macenko" : "raw";
    result.features.extractor_id = extractor.descriptor().id;
    result.features.d = extractor.descriptor().dim;

    RgbImage canny_canvas(cw, ch, 255);
    RgbImage norm_canvas;
    if (result.normalized) norm_canvas = RgbImage(cw, ch, 255);
    {
        BatchedExtractor batches(extractor, o.batch_size, result.features);
        for (const TileCoord c : accepted) {
            RgbImage tile = fetch(c);
            place(canny_canvas, tile, c.x, c.y, factor);
            if (coeffs) {
                tile = normalize_tile(tile, *coeffs);
                place(norm_canvas, tile, c.x, c.y, factor);
            }
            batches.push(std::move(tile), c);
        }
        batches.flush();
    }

    const auto t1 = std::chrono::steady_clock::now();
    result.report.runtime_s = std::chrono::duration<double>(t1 - t0).count();

    if (!o.cache_dir.empty()) {
        const fs::path dir = o.cache_dir / stem;
        fs::create_directories(dir);
        io::write_image(dir / "slide.jpg", slide_canvas, o.jpeg_quality);
        io::write_image(dir / "canny_slide.jpg", canny_canvas, o.jpeg_quality);
        if (result.normalized) io::write_image(dir / "norm_slide.jpg", norm_canvas, o.jpeg_quality);
        json coords = json::array();
        for (const auto& c : accepted) coords.push_back({c.x, c.y});
        json q = {{"slide", stem},
                  {"tile_px", grid.tile_px},
                  {"target_mpp", grid.target_mpp},
                  {"microns", o.spec.microns},
                  {"plane_width", grid.plane_width},
                  {"plane_height", grid.plane_height},
                  {"thumbnail_factor", factor},
                  {"normalized", result.normalized},
                  {"report", report_json(result.report)},
                  {"accepted", coords}};
        q["report"].erase("runtime_s");   // keeps the cache byte-stable across runs
        if (result.source_stain) q["stain"] = stain_json(*result.source_stain);
        write_text(dir / "qc.json", q.dump(2) + "\n");
    }
    return result;
}

SlideResult extract_from_cache(const fs::path& dir, const PreprocessOptions& o,
                               const features::ExtractorBackend& extractor)
{
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path qc_path = dir / "qc.json";
    json q;
    try {
        std::ifstream in(qc_path);
        if (!in) throw Error(ErrorCode::IoError, "cache has no qc.json", dir.string());
        q = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptFile, std::string("unreadable qc.json: ") + e.what(), qc_path.string());
    }
    if (q.value("thumbnail_factor", 1) != 1) {
        throw Error(ErrorCode::InvalidValue,
                    "cached slide images are downscaled thumbnails; rerun preprocessing without "
                    "only_feature_extraction",
                    dir.string());
    }
    const bool normalized = q.value("normalized", false);
    const RgbImage canvas = io::read_image(dir / (normalized ? "norm_slide.jpg" : "canny_slide.jpg"));
    const int tile_px = q.value("tile_px", kTilePx);

    SlideResult result;
    result.normalized = normalized;
    const json& rep = q.at("report");
    result.report.n_grid_tiles = rep.value("n_grid_tiles", std::size_t{0});
    result.report.n_accepted = rep.value("n_accepted", std::size_t{0});
    result.report.n_rejected_background = rep.value("n_rejected_background", std::size_t{0});
    result.report.n_rejected_edges = rep.value("n_rejected_edges", std::size_t{0});
    result.features.tile_px = tile_px;
    result.features.target_mpp = q.value("target_mpp", o.spec.target_mpp());
    result.features.norm = normalized ? "macenko" : "raw";
    result.features.extractor_id = extractor.descriptor().id;
    result.features.d = extractor.descriptor().dim;
    {
        BatchedExtractor batches(extractor, o.batch_size, result.features);
        for (const auto& c : q.at("accepted")) {
            const TileCoord tc{c.at(0).get<int>(), c.at(1).get<int>()};
            batches.push(crop(canvas, tc.x, tc.y, tile_px, tile_px), tc);
        }
        batches.flush();
    }
    result.report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

std::string_view to_string(SlideStatus s)
{
    switch (s) {
    case SlideStatus::Processed: return "processed";
    case SlideStatus::AlreadyDone: return "already processed";
    case SlideStatus::NoTissue: return "no tissue";
    case SlideStatus::Failed: return "failed";
    }
    return "unknown";
}

SlideOutcome run_slide(const fs::path& slide_path, const PreprocessOptions& o,
                       const features::ExtractorBackend& extractor)
{
    SlideOutcome out;
    out.slide = slide_path;
    out.stem = slide_path.stem().string();
    if (o.only_feature_extraction) out.stem = slide_path.filename().string();
    const fs::path feature_file = o.feature_dir / (out.stem + ".h5");
    if (fs::exists(feature_file)) {
        out.status = SlideStatus::AlreadyDone;
        spdlog::info("{}: features already extracted, skipping", out.stem);
        return out;
    }
    try {
        SlideResult r;
        if (o.only_feature_extraction) {
            r = extract_from_cache(slide_path, o, extractor);
        } else {
            const SlideHandle handle = open_slide(slide_path);
            r = preprocess_slide(handle, o, extractor);
        }
        out.report = r.report;
        for (const auto& w : r.warnings) spdlog::warn("{}: {}", out.stem, w);
        if (r.features.n == 0) {
            out.status = SlideStatus::NoTissue;
            out.message = "no tile passed quality control; no feature file written";
            spdlog::warn("{}: {}", out.stem, out.message);
            return out;
        }
        features::write_feature_file(feature_file, r.features);
        out.status = SlideStatus::Processed;
        spdlog::info("{}: {} of {} tiles accepted ({} background, {} blurry) in {:.1f} s", out.stem,
                     r.report.n_accepted, r.report.n_grid_tiles, r.report.n_rejected_background,
                     r.report.n_rejected_edges, r.report.runtime_s);
        if (o.del_slide && !o.only_feature_extraction) {
            std::error_code ec;
            fs::remove(slide_path, ec);
            if (ec) spdlog::warn("{}: could not delete slide: {}", out.stem, ec.message());
        }
    } catch (const Error& e) {
        out.status = SlideStatus::Failed;
        out.error = e.code();
        out.message = e.what();
        spdlog::warn("{}: {} [{}] {}", out.stem, e.what(), e.subject(), e.remediation());
    } catch (const std::exception& e) {
        out.status = SlideStatus::Failed;
        out.error = ErrorCode::IoError;
        out.message = e.what();
        spdlog::warn("{}: {}", out.stem, e.what());
    }
    return out;
}

std::vector<SlideOutcome> run_preprocess(const std::vector<fs::path>& slides, const PreprocessOptions& o,
                                         const features::ExtractorBackend& extractor, int cores)
{
    std::vector<SlideOutcome> outcomes(slides.size());
    std::error_code ec;
    fs::create_directories(o.feature_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create feature directory: " + ec.message(), o.feature_dir.string());
    if (!o.cache_dir.empty()) {
        fs::create_directories(o.cache_dir, ec);
        if (ec) throw Error(ErrorCode::IoError, "cannot create cache directory: " + ec.message(), o.cache_dir.string());
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < slides.size(); i = next++) outcomes[i] = run_slide(slides[i], o, extractor);
    };
    const std::size_t n_workers = std::min<std::size_t>(std::max(1, cores), std::max<std::size_t>(1, slides.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return outcomes;
}

std::vector<fs::path> list_slides(const fs::path& wsi_dir, bool cache_layout)
{
    if (!fs::is_directory(wsi_dir)) throw Error(ErrorCode::IoError, "slide directory not found", wsi_dir.string());
    static const std::set<std::string> kExtensions{".tif", ".tiff", ".svs", ".ndpi", ".mrxs", ".scn",
                                                   ".bif", ".qptiff", ".vms", ".vmu", ".svslide"};
    std::vector<fs::path> out;
    if (cache_layout) {
        for (const auto& e : fs::directory_iterator(wsi_dir))
            if (e.is_directory() && fs::exists(e.path() / "qc.json")) out.push_back(e.path());
    } else {
        for (const auto& e : fs::recursive_directory_iterator(wsi_dir)) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
            if (kExtensions.count(ext)) out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

StainParams template_stain_params(const fs::path& image, const MacenkoOptions& options)
{
    if (!fs::exists(image)) throw Error(ErrorCode::IoError, "normalization template not found", image.string());
    const RgbImage img = io::read_image(image);
    try {
        return estimate_stain_params(img.pixels, options);
    } catch (const Error& e) {
        throw Error(e.code(), std::string("normalization template: ") + e.what(), image.string());
    }
}

} // namespace stamp::slide
