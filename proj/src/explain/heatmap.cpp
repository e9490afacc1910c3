#include "stamp/explain/heatmap.hpp"

#include "stamp/cohort/csv.hpp"
#include "stamp/error.hpp"
#include "stamp/features/store.hpp"
#include "stamp/slide/image_io.hpp"
#include "stamp/slide/preprocess.hpp"
#include "stamp/slide/slide.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace stamp::explain {
namespace fs = std::filesystem;

AttributionMap tile_attribution(const model::ModelBundle& bundle, const model::Transformer<float>& model,
                                const features::FeatureMatrix& fm, int category, const std::vector<float>& tabular)
{
    if (fm.extractor_id != bundle.extractor_id || fm.d != bundle.feature_dim) {
        throw Error(ErrorCode::ExtractorMismatch,
                    fmt::format("model expects '{}' features ({} dims) but got '{}' ({} dims)", bundle.extractor_id,
                                bundle.feature_dim, fm.extractor_id, fm.d));
    }
    const int n_classes = model.config().n_classes;
    if (category < 0 || category >= n_classes) throw Error(ErrorCode::InvalidValue, "category out of range");
    std::vector<float> tab = tabular;
    tab.resize(bundle.tabular.dim(), 0.0f);
    const int din = fm.d + static_cast<int>(tab.size());
    if (din != model.config().dim_input) throw Error(ErrorCode::DimMismatch, "feature width does not match the model");

    AttributionMap out;
    out.category = category;
    out.scores.assign(static_cast<std::size_t>(fm.n), 0.0);
    if (fm.n == 0) return out;
    std::vector<float> x;
    x.reserve(static_cast<std::size_t>(fm.n) * din);
    for (int i = 0; i < fm.n; ++i) {
        x.insert(x.end(), fm.row(i), fm.row(i) + fm.d);
        x.insert(x.end(), tab.begin(), tab.end());
    }
    model::Workspace<float> ws;
    model.forward(x.data(), fm.n, &ws);
    std::vector<float> dlogits(static_cast<std::size_t>(n_classes), -1.0f / static_cast<float>(n_classes - 1));
    dlogits[category] = 1.0f;
    std::vector<float> grad(model.n_params(), 0.0f), dx(x.size(), 0.0f);
    model.backward(ws, dlogits.data(), grad.data(), dx.data());
    for (int i = 0; i < fm.n; ++i) {
        double a = 0.0;
        for (int j = 0; j < din; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * din + j;
            a += static_cast<double>(dx[k]) * x[k];
        }
        out.scores[i] = a;
        out.max_abs = std::max(out.max_abs, std::abs(a));
    }
    return out;
}

std::array<std::uint8_t, 3> diverging_color(double v)
{
    v = std::clamp(v, -1.0, 1.0);
    const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(v))));
    if (v >= 0) return {255, fade, fade};
    return {fade, fade, 255};
}

RgbImage render_heatmap(const AttributionMap& attr, const std::vector<std::int32_t>& coords, const HeatmapGrid& g,
                        const RgbImage* background, int background_factor)
{
    const int w = g.cols * g.cell_px, h = g.rows * g.cell_px;
    RgbImage canvas(w, h, 255);
    if (background && background->width > 0) {
        const double step = static_cast<double>(g.tile_px) / g.cell_px / background_factor;
        canvas = resample_area(*background, 0.0, 0.0, step, step, w, h, 255);
    }
    for (std::size_t i = 0; i < attr.scores.size(); ++i) {
        const int cx = coords[2 * i] / g.tile_px, cy = coords[2 * i + 1] / g.tile_px;
        if (cx < 0 || cy < 0 || cx >= g.cols || cy >= g.rows) continue;
        const double v = attr.max_abs > 0 ? attr.scores[i] / attr.max_abs : 0.0;
        const auto color = diverging_color(v);
        for (int y = cy * g.cell_px; y < (cy + 1) * g.cell_px; ++y) {
            std::uint8_t* px = canvas.at(cx * g.cell_px, y);
            for (int x = 0; x < g.cell_px; ++x, px += 3)
                for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>((6 * color[c] + 4 * px[c] + 5) / 10);
        }
    }
    return canvas;
}

std::vector<RankedTile> top_tiles(const AttributionMap& attr, const std::vector<std::int32_t>& coords, int n)
{
    std::vector<RankedTile> all;
    for (std::size_t i = 0; i < attr.scores.size(); ++i) {
        all.push_back({i, attr.max_abs > 0 ? attr.scores[i] / attr.max_abs : 0.0, coords[2 * i], coords[2 * i + 1]});
    }
    std::sort(all.begin(), all.end(), [&](const RankedTile& a, const RankedTile& b) {
        if (attr.scores[a.index] != attr.scores[b.index]) return attr.scores[a.index] > attr.scores[b.index];
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    if (static_cast<int>(all.size()) > n) all.resize(static_cast<std::size_t>(std::max(n, 0)));
    return all;
}

std::string top_tile_name(const std::string& stem, const std::string& category, int rank, const RankedTile& t)
{
    return fmt::format("{}_{}_top{}_s{:.4f}_x{}_y{}.png", stem, category, rank, t.score, t.x, t.y);
}

namespace {

void write_text(const fs::path& path, const std::string& text)
{
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct Thumbnail {
    RgbImage image;
    int factor = 1;
    int plane_width = 0;
    int plane_height = 0;
};

std::optional<Thumbnail> load_thumbnail(const std::optional<fs::path>& cache_dir, const std::string& stem)
{
    if (!cache_dir) return std::nullopt;
    const fs::path dir = *cache_dir / stem;
    if (!fs::exists(dir / "slide.jpg")) return std::nullopt;
    Thumbnail t;
    t.image = io::read_image(dir / "slide.jpg");
    t.plane_width = t.image.width;
    t.plane_height = t.image.height;
    std::ifstream in(dir / "qc.json");
    if (in) {
        try {
            const auto q = nlohmann::json::parse(in);
            t.factor = q.value("thumbnail_factor", 1);
            t.plane_width = q.value("plane_width", t.image.width * t.factor);
            t.plane_height = q.value("plane_height", t.image.height * t.factor);
        } catch (const nlohmann::json::exception&) {
            spdlog::warn("ignoring unreadable {}", (dir / "qc.json").string());
        }
    }
    return t;
}

} // namespace

std::vector<std::string> run_heatmaps(const config::HeatmapsSettings& s)
{
    const auto bundle = model::read_bundle(s.model_path);
    model::Transformer<float> model(bundle.model);
    std::copy(bundle.weights.begin(), bundle.weights.end(), model.params().begin());
    if (s.n_toptiles < 1) throw Error(ErrorCode::InvalidValue, "n_toptiles must be >= 1", "heatmaps.n_toptiles");

    std::vector<fs::path> files;
    if (!fs::is_directory(s.feature_dir))
        throw Error(ErrorCode::MissingFeatures, "No features found in feature_dir", s.feature_dir.string());
    for (const auto& e : fs::directory_iterator(s.feature_dir)) {
        if (e.path().extension() != ".h5") continue;
        if (fnmatch(s.slide_name.c_str(), e.path().stem().c_str(), 0) == 0) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) spdlog::warn("no feature file in {} matches '{}'", s.feature_dir.string(), s.slide_name);

    std::map<std::string, fs::path> slides;
    if (fs::is_directory(s.wsi_dir))
        for (const auto& p : slide::list_slides(s.wsi_dir)) slides.emplace(p.stem().string(), p);

    std::vector<std::string> done;
    std::optional<Error> first_error;
    for (const auto& file : files) {
        const std::string stem = file.stem().string();
        const auto fm = features::read_feature_file(file);
        const fs::path out = s.output_dir / "heatmaps" / stem;
        fs::create_directories(out);

        const auto thumb = load_thumbnail(s.cache_dir, stem);
        HeatmapGrid grid;
        grid.tile_px = fm.tile_px;
        int plane_w = 0, plane_h = 0;
        if (thumb) {
            plane_w = thumb->plane_width;
            plane_h = thumb->plane_height;
        } else {
            spdlog::warn("{} [{}]: no cached thumbnail, drawing on white", to_string(ErrorCode::MissingThumbnail),
                         stem);
        }
        for (int i = 0; i < fm.n; ++i) {
            plane_w = std::max(plane_w, fm.coords[2 * i] + fm.tile_px);
            plane_h = std::max(plane_h, fm.coords[2 * i + 1] + fm.tile_px);
        }
        grid.cols = std::max(1, (plane_w + fm.tile_px - 1) / fm.tile_px);
        grid.rows = std::max(1, (plane_h + fm.tile_px - 1) / fm.tile_px);

        std::vector<AttributionMap> maps;
        for (int c = 0; c < static_cast<int>(bundle.categories.size()); ++c) {
            maps.push_back(tile_attribution(bundle, model, fm, c));
            const auto png = render_heatmap(maps.back(), fm.coords, grid, thumb ? &thumb->image : nullptr,
                                            thumb ? thumb->factor : 1);
            io::write_image(out / fmt::format("{}_{}_heatmap.png", stem, bundle.categories[c]), png);
        }
        std::vector<std::string> header{"x", "y"};
        for (const auto& c : bundle.categories) header.push_back(c);
        std::string csv = cohort::csv_line(header);
        for (int i = 0; i < fm.n; ++i) {
            std::vector<std::string> row{std::to_string(fm.coords[2 * i]), std::to_string(fm.coords[2 * i + 1])};
            for (const auto& m : maps) row.push_back(fmt::format("{}", m.scores[i]));
            csv += cohort::csv_line(row);
        }
        write_text(out / "scores.csv", csv);

        const auto it = slides.find(stem);
        if (it == slides.end()) {
            Error e(ErrorCode::SlideUnavailable, "slide '" + stem + "' not found in wsi_dir", s.wsi_dir.string());
            spdlog::error("{}", e.summary());
            if (!first_error) first_error = e;
            continue;
        }
        if (fm.n < s.n_toptiles)
            spdlog::warn("{} has only {} tiles; exporting {} top tiles per category", stem, fm.n, fm.n);
        const auto handle = slide::open_slide(it->second);
        const auto tiles_grid =
            slide::plan_tile_grid(handle, slide::TileSpec{fm.tile_px, fm.target_mpp * fm.tile_px});
        for (std::size_t c = 0; c < maps.size(); ++c) {
            const auto ranked = top_tiles(maps[c], fm.coords, s.n_toptiles);
            for (std::size_t r = 0; r < ranked.size(); ++r) {
                const auto tile = tiles_grid.read_tile(handle, {ranked[r].x, ranked[r].y});
                io::write_image(out / top_tile_name(stem, bundle.categories[c], static_cast<int>(r) + 1, ranked[r]),
                                tile);
            }
        }
        spdlog::info("heatmaps for {} written to {}", stem, out.string());
        done.push_back(stem);
    }
    if (first_error) throw *first_error;
    return done;
}

} // namespace stamp::explain
