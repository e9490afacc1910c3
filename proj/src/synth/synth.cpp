#include "stamp/synth/synth.hpp"

#include "stamp/cohort/csv.hpp"
#include "stamp/error.hpp"
#include "stamp/rng.hpp"
#include "stamp/slide/image_io.hpp"
#include "stamp/slide/tiff.hpp"
#include "stamp/stats/metrics.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace stamp::synth {
namespace fs = std::filesystem;
namespace {

constexpr int kTile = 256;
constexpr double kMaskThreshold = 0.25;   // signal share of a cell's area

double hash01(std::uint64_t seed, std::int64_t x, std::int64_t y)
{
    const std::uint64_t h = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(x)), static_cast<std::uint64_t>(y));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smooth value noise in [0, 1).
double value_noise(std::uint64_t seed, double x, double y, double scale)
{
    const double fx = x / scale, fy = y / scale;
    const double ix = std::floor(fx), iy = std::floor(fy);
    double tx = fx - ix, ty = fy - iy;
    tx = tx * tx * (3 - 2 * tx);
    ty = ty * ty * (3 - 2 * ty);
    const auto i = static_cast<std::int64_t>(ix), j = static_cast<std::int64_t>(iy);
    const double a = hash01(seed, i, j), b = hash01(seed, i + 1, j);
    const double c = hash01(seed, i, j + 1), d = hash01(seed, i + 1, j + 1);
    return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

// Value noise over one rectangle, with the lattice values fetched once.
class NoiseTile {
public:
    NoiseTile(std::uint64_t seed, double scale, double x0, double y0, double x1, double y1) : scale_(scale)
    {
        i0_ = static_cast<std::int64_t>(std::floor(x0 / scale));
        j0_ = static_cast<std::int64_t>(std::floor(y0 / scale));
        w_ = static_cast<int>(static_cast<std::int64_t>(std::floor(x1 / scale)) - i0_ + 2);
        const int h = static_cast<int>(static_cast<std::int64_t>(std::floor(y1 / scale)) - j0_ + 2);
        vals_.resize(static_cast<std::size_t>(w_) * h);
        for (int j = 0; j < h; ++j)
            for (int i = 0; i < w_; ++i) vals_[static_cast<std::size_t>(j) * w_ + i] = hash01(seed, i0_ + i, j0_ + j);
    }

    double at(double x, double y) const
    {
        const double fx = x / scale_, fy = y / scale_;
        const double ix = std::floor(fx), iy = std::floor(fy);
        double tx = fx - ix, ty = fy - iy;
        tx = tx * tx * (3 - 2 * tx);
        ty = ty * ty * (3 - 2 * ty);
        const std::size_t k = static_cast<std::size_t>(static_cast<std::int64_t>(iy) - j0_) * w_ +
                              static_cast<std::size_t>(static_cast<std::int64_t>(ix) - i0_);
        const double a = vals_[k], b = vals_[k + 1], c = vals_[k + w_], d = vals_[k + w_ + 1];
        return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
    }

private:
    double scale_;
    std::int64_t i0_ = 0, j0_ = 0;
    int w_ = 0;
    std::vector<double> vals_;
};

struct Ellipse {
    double cx, cy, a, b, cs, sn;
    double reach;   // bounding radius including boundary wobble

    bool contains(double x, double y, double wobble) const
    {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * cs + dy * sn, v = -dx * sn + dy * cs;
        return (u / a) * (u / a) + (v / b) * (v / b) < 1.0 + wobble;
    }
    bool touches(double x0, double y0, double x1, double y1) const
    {
        return cx + reach >= x0 && cx - reach <= x1 && cy + reach >= y0 && cy - reach <= y1;
    }
};

struct Segment {
    double x0, y0, x1, y1;
};

struct Stroke {
    std::vector<Segment> segments;
    double half_width;
    double od[3];
};

constexpr double kBlobWobble = 0.3;
constexpr double kPoolWobble = 0.35;
constexpr double kInkStrength = 0.2;   // translucent marker

Ellipse make_ellipse(Rng& rng, double cx, double cy, double a, double b, double wobble)
{
    const double th = rng.uniform(0.0, 3.141592653589793);
    return {cx, cy, a, b, std::cos(th), std::sin(th), std::max(a, b) * std::sqrt(1.0 + wobble) + 2};
}

struct SlidePlan {
    int width = 0, height = 0;
    std::uint64_t seed = 0;
    std::vector<Ellipse> blobs;
    std::vector<Ellipse> pools;
    std::vector<Stroke> strokes;
    double h_vec[3] = {0.65, 0.70, 0.29};
    double e_vec[3] = {0.07, 0.99, 0.11};
    double conc_scale = 1.0;

    static constexpr double kBlobNoiseScale = 420.0;
    static constexpr double kPoolNoiseScale = 160.0;

    bool tissue_at(double x, double y, double noise) const
    {
        const double w = kBlobWobble * 2.0 * (noise - 0.5);
        for (const auto& e : blobs)
            if (e.contains(x, y, w)) return true;
        return false;
    }
    bool signal_at(double x, double y, double noise) const
    {
        const double w = kPoolWobble * 2.0 * (noise - 0.5);
        for (const auto& e : pools)
            if (e.contains(x, y, w)) return true;
        return false;
    }
    bool tissue(double x, double y) const
    {
        return tissue_at(x, y, value_noise(mix_seed(seed, 11), x, y, kBlobNoiseScale));
    }
    bool signal(double x, double y) const
    {
        return signal_at(x, y, value_noise(mix_seed(seed, 12), x, y, kPoolNoiseScale));
    }
};

void normalize3(double* v)
{
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (int i = 0; i < 3; ++i) v[i] /= n;
}

SlidePlan plan_slide(const SynthSpec& spec, std::uint64_t seed, bool positive, bool jitter)
{
    SlidePlan p;
    p.width = spec.width;
    p.height = spec.height;
    p.seed = seed;
    Rng rng(mix_seed(seed, 1));
    normalize3(p.h_vec);
    normalize3(p.e_vec);
    if (jitter) {
        for (int i = 0; i < 3; ++i) {
            p.h_vec[i] += rng.uniform(-spec.stain_jitter, spec.stain_jitter);
            p.e_vec[i] += rng.uniform(-spec.stain_jitter, spec.stain_jitter);
        }
        normalize3(p.h_vec);
        normalize3(p.e_vec);
        p.conc_scale = rng.uniform(0.9, 1.1);
    }

    const double scale = std::min(spec.width, spec.height) / 8960.0;
    const int n_blobs = spec.blob_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.blob_max - spec.blob_min + 1)));
    for (int i = 0; i < n_blobs; ++i) {
        const double a = rng.uniform(spec.blob_radius_min, spec.blob_radius_max) * scale;
        const double b = a * rng.uniform(0.55, 1.0);
        const double m = std::min(a, std::min(spec.width, spec.height) * 0.3);
        const double cx = rng.uniform(m, spec.width - m), cy = rng.uniform(m, spec.height - m);
        p.blobs.push_back(make_ellipse(rng, cx, cy, a, b, kBlobWobble));
    }

    // Signal pools are added on a coarse grid until they cover the requested
    // share of tissue.
    if (positive && spec.signal_strength > 0) {
        constexpr int cell = 32;
        const int gw = (spec.width + cell - 1) / cell, gh = (spec.height + cell - 1) / cell;
        std::vector<std::uint8_t> tissue(static_cast<std::size_t>(gw) * gh), covered(tissue.size(), 0);
        std::size_t n_tissue = 0;
        for (int j = 0; j < gh; ++j)
            for (int i = 0; i < gw; ++i) {
                const bool t = p.tissue(i * cell + cell / 2.0, j * cell + cell / 2.0);
                tissue[static_cast<std::size_t>(j) * gw + i] = t;
                n_tissue += t;
            }
        std::size_t n_covered = 0;
        const double target = spec.signal_strength * static_cast<double>(n_tissue);
        Rng prng(mix_seed(seed, 2));
        for (int iter = 0; iter < 4000 && static_cast<double>(n_covered) < target; ++iter) {
            std::vector<std::size_t> free;
            for (std::size_t k = 0; k < tissue.size(); ++k)
                if (tissue[k] && !covered[k]) free.push_back(k);
            if (free.empty()) break;
            const std::size_t k = free[prng.below(free.size())];
            const double cx = static_cast<double>(k % gw) * cell + cell / 2.0;
            const double cy = static_cast<double>(k / gw) * cell + cell / 2.0;
            const double a = prng.uniform(380.0, 820.0) * scale;
            const double b = a * prng.uniform(0.6, 1.0);
            p.pools.push_back(make_ellipse(prng, cx, cy, a, b, kPoolWobble));
            const SlidePlan& cp = p;
            const auto& e = p.pools.back();
            const int i0 = std::max(0, static_cast<int>((e.cx - e.reach) / cell));
            const int i1 = std::min(gw - 1, static_cast<int>((e.cx + e.reach) / cell));
            const int j0 = std::max(0, static_cast<int>((e.cy - e.reach) / cell));
            const int j1 = std::min(gh - 1, static_cast<int>((e.cy + e.reach) / cell));
            for (int j = j0; j <= j1; ++j)
                for (int i = i0; i <= i1; ++i) {
                    const std::size_t q = static_cast<std::size_t>(j) * gw + i;
                    if (tissue[q] && !covered[q] && cp.signal(i * cell + cell / 2.0, j * cell + cell / 2.0)) {
                        covered[q] = 1;
                        ++n_covered;
                    }
                }
        }
    }

    Rng pen(mix_seed(seed, 3));
    if (pen.uniform() < spec.pen_fraction) {
        static constexpr double kInks[3][3] = {{0.75, 0.12, 0.55}, {0.85, 0.45, 0.05}, {0.9, 0.9, 0.85}};
        const int n_strokes = 1 + static_cast<int>(pen.below(2));
        for (int s = 0; s < n_strokes; ++s) {
            Stroke st;
            st.half_width = pen.uniform(6.0, 12.0) * scale;
            const auto& ink = kInks[pen.below(3)];
            for (int c = 0; c < 3; ++c) st.od[c] = ink[c];
            const double x0 = pen.uniform(0, spec.width), y0 = pen.uniform(0, spec.height);
            const double x2 = pen.uniform(0, spec.width), y2 = pen.uniform(0, spec.height);
            const double x1 = pen.uniform(0, spec.width), y1 = pen.uniform(0, spec.height);
            double px = x0, py = y0;
            for (int k = 1; k <= 32; ++k) {
                const double t = k / 32.0, u = 1 - t;
                const double qx = u * u * x0 + 2 * u * t * x1 + t * t * x2;
                const double qy = u * u * y0 + 2 * u * t * y1 + t * t * y2;
                st.segments.push_back({px, py, qx, qy});
                px = qx;
                py = qy;
            }
            p.strokes.push_back(std::move(st));
        }
    }
    return p;
}

double segment_distance2(const Segment& s, double x, double y)
{
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = s.x0 + t * dx - x, ey = s.y0 + t * dy - y;
    return ex * ex + ey * ey;
}

// Nucleus profile in [0, 1] from a jittered grid with one candidate per cell.
double nucleus(std::uint64_t seed, double x, double y, double cell, double prob, double r_min, double r_max)
{
    const auto ci = static_cast<std::int64_t>(std::floor(x / cell)), cj = static_cast<std::int64_t>(std::floor(y / cell));
    const std::uint64_t h = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(ci)), static_cast<std::uint64_t>(cj));
    const double u0 = static_cast<double>(h & 0xFFFF) / 65536.0;
    if (u0 >= prob) return 0.0;
    const double u1 = static_cast<double>((h >> 16) & 0xFFFF) / 65536.0;
    const double u2 = static_cast<double>((h >> 32) & 0xFFFF) / 65536.0;
    const double u3 = static_cast<double>((h >> 48) & 0xFFFF) / 65536.0;
    const double r = r_min + (r_max - r_min) * u1;
    const double span = cell - 2 * (r + 1);
    const double cx = ci * cell + r + 1 + span * u2, cy = cj * cell + r + 1 + span * u3;
    const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
    if (d2 >= 1.0) return 0.0;
    return 1.0 - d2 * d2;
}

struct TileStats {
    long signal = 0;
    long tissue = 0;
};

// Renders the kTile x kTile tile with top-left (x0, y0).
RgbImage render_tile(const SlidePlan& p, int x0, int y0, TileStats& st)
{
    RgbImage img(kTile, kTile, 255);
    const double bx0 = x0, by0 = y0, bx1 = x0 + kTile, by1 = y0 + kTile;
    SlidePlan local;
    local.seed = p.seed;
    for (const auto& e : p.blobs)
        if (e.touches(bx0, by0, bx1, by1)) local.blobs.push_back(e);
    for (const auto& e : p.pools)
        if (e.touches(bx0, by0, bx1, by1)) local.pools.push_back(e);
    std::vector<std::pair<const Stroke*, std::vector<Segment>>> strokes;
    for (const auto& s : p.strokes) {
        std::vector<Segment> near;
        for (const auto& g : s.segments) {
            const double m = s.half_width + 1;
            if (std::max(g.x0, g.x1) + m >= bx0 && std::min(g.x0, g.x1) - m <= bx1 &&
                std::max(g.y0, g.y1) + m >= by0 && std::min(g.y0, g.y1) - m <= by1)
                near.push_back(g);
        }
        if (!near.empty()) strokes.emplace_back(&s, std::move(near));
    }
    const std::uint64_t s_nuc = mix_seed(p.seed, 23), s_mnuc = mix_seed(p.seed, 25), s_grain = mix_seed(p.seed, 26);
    const NoiseTile blob_noise(mix_seed(p.seed, 11), SlidePlan::kBlobNoiseScale, bx0, by0, bx1, by1);
    const NoiseTile pool_noise(mix_seed(p.seed, 12), SlidePlan::kPoolNoiseScale, bx0, by0, bx1, by1);
    const NoiseTile tex(mix_seed(p.seed, 21), 22.0, bx0, by0, bx1, by1);
    const NoiseTile tex2(mix_seed(p.seed, 22), 90.0, bx0, by0, bx1, by1);
    const NoiseTile muc(mix_seed(p.seed, 24), 48.0, bx0, by0, bx1, by1);
    constexpr double kLn10 = 2.302585092994046;

    for (int ty = 0; ty < kTile; ++ty) {
        const int y = y0 + ty;
        std::uint8_t* row = img.row(ty);
        for (int tx = 0; tx < kTile; ++tx) {
            const int x = x0 + tx;
            if (x >= p.width || y >= p.height) continue;
            const double fx = x + 0.5, fy = y + 0.5;
            const std::uint64_t g = mix_seed(mix_seed(s_grain, static_cast<std::uint64_t>(x)), static_cast<std::uint64_t>(y));
            double od[3] = {0, 0, 0};
            double i0 = 250.0;
            const bool tissue = !local.blobs.empty() && local.tissue_at(fx, fy, blob_noise.at(fx, fy));
            if (tissue) {
                ++st.tissue;
                i0 = 242.0;
                const bool sig = !local.pools.empty() && local.signal_at(fx, fy, pool_noise.at(fx, fy));
                const double n1 = tex.at(fx, fy);
                const double n2 = tex2.at(fx, fy);
                double ch, ce;
                if (sig) {
                    ++st.signal;
                    ch = 0.20 + 0.10 * n2;
                    ce = 0.03 + 0.03 * n1;
                    const double r = std::abs(muc.at(fx, fy) - 0.5);
                    if (r < 0.05) ch += 0.45 * (1.0 - r / 0.05);
                    const double nuc = nucleus(s_mnuc, fx, fy, 36.0, 0.12, 4.0, 6.5);
                    ch += 0.85 * nuc;
                } else {
                    ce = 0.26 + 0.22 * n1 + 0.10 * n2;
                    ch = 0.07 + 0.06 * n2;
                    const double nuc = nucleus(s_nuc, fx, fy, 26.0, 0.55, 4.5, 8.5);
                    ch += 0.95 * nuc;
                    ce *= 1.0 - 0.85 * nuc;
                }
                ch *= p.conc_scale;
                ce *= p.conc_scale;
                for (int c = 0; c < 3; ++c) od[c] = ch * p.h_vec[c] + ce * p.e_vec[c];
            }
            bool inked = false;
            for (const auto& [s, segs] : strokes) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& sg : segs) best = std::min(best, segment_distance2(sg, fx, fy));
                if (best < s->half_width * s->half_width) {
                    inked = true;
                    for (int c = 0; c < 3; ++c) od[c] += kInkStrength * s->od[c];
                }
            }
            std::uint8_t* px = row + 3 * tx;
            const double amp = tissue ? 8.0 : 4.0;
            for (int c = 0; c < 3; ++c) {
                const double grain = (static_cast<double>((g >> (16 * c)) & 0xFFFF) / 65536.0 - 0.5) * amp;
                const double v = (tissue || inked ? i0 * std::exp(-kLn10 * od[c]) : i0) + grain;
                px[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
            }
        }
    }
    return img;
}

SlideTruth render_slide(const SynthSpec& spec, int index, bool positive, const fs::path& path)
{
    const std::uint64_t seed = mix_seed(spec.seed, static_cast<std::uint64_t>(index) + 1);
    const SlidePlan plan = plan_slide(spec, seed, positive, true);
    const double cell_px = spec.tile_microns / spec.mpp;
    SlideTruth t;
    t.patient = patient_id(index);
    t.slide = t.patient;
    t.label = positive ? 1 : 0;
    t.cols = static_cast<int>(std::ceil(spec.width / cell_px - 1e-9));
    t.rows = static_cast<int>(std::ceil(spec.height / cell_px - 1e-9));
    std::vector<long> sig(static_cast<std::size_t>(t.cols) * t.rows, 0);

    tiff::WriteOptions wo;
    wo.tile_size = kTile;
    wo.compression = tiff::Compression::Jpeg;
    wo.jpeg_quality = spec.jpeg_quality;
    wo.mpp = spec.mpp;
    wo.description = fmt::format("synthetic H&E slide {}|MPP = {}", t.slide, spec.mpp);
    tiff::TiledWriter writer(path, wo);
    writer.begin_level(spec.width, spec.height);
    long tissue = 0, signal = 0;
    for (int y0 = 0; y0 < spec.height; y0 += kTile) {
        for (int x0 = 0; x0 < spec.width; x0 += kTile) {
            TileStats st;
            writer.write_tile(render_tile(plan, x0, y0, st));
            tissue += st.tissue;
            signal += st.signal;
            if (st.signal > 0) {
                // A render tile may straddle truth cells when cell_px is not a multiple of it.
                if (std::fmod(cell_px, kTile) == 0.0) {
                    const int c = static_cast<int>(x0 / cell_px), r = static_cast<int>(y0 / cell_px);
                    sig[static_cast<std::size_t>(r) * t.cols + c] += st.signal;
                } else {
                    for (int yy = y0; yy < std::min(y0 + kTile, spec.height); ++yy)
                        for (int xx = x0; xx < std::min(x0 + kTile, spec.width); ++xx)
                            if (plan.tissue(xx + 0.5, yy + 0.5) && plan.signal(xx + 0.5, yy + 0.5)) {
                                const int c = static_cast<int>(xx / cell_px), r = static_cast<int>(yy / cell_px);
                                sig[static_cast<std::size_t>(r) * t.cols + c] += 1;
                            }
                }
            }
        }
    }
    writer.finish();
    t.mask.resize(sig.size());
    t.signal_fraction.resize(sig.size());
    for (std::size_t k = 0; k < sig.size(); ++k) {
        t.signal_fraction[k] = static_cast<double>(sig[k]) / (cell_px * cell_px);
        t.mask[k] = t.signal_fraction[k] >= kMaskThreshold ? 1 : 0;
    }
    t.tissue_signal_fraction = tissue > 0 ? static_cast<double>(signal) / static_cast<double>(tissue) : 0.0;
    return t;
}

void write_text(const fs::path& path, const std::string& text)
{
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace

void SynthSpec::validate() const
{
    auto bad = [](const std::string& field, const std::string& why) {
        throw Error(ErrorCode::InvalidValue, "invalid synthetic cohort spec: " + field + " " + why, field);
    };
    if (n_patients < 2) bad("n_patients", "must be >= 2");
    if (!(prevalence > 0 && prevalence < 1)) bad("prevalence", "must lie in (0, 1)");
    if (width < kTile || height < kTile) bad("width/height", "must be >= 256");
    if (!(mpp > 0)) bad("mpp", "must be > 0");
    if (blob_min < 1 || blob_max < blob_min) bad("blob_min/blob_max", "must satisfy 1 <= min <= max");
    if (!(blob_radius_min > 0) || blob_radius_max < blob_radius_min) bad("blob_radius", "range is invalid");
    if (!(signal_strength >= 0 && signal_strength <= 1)) bad("signal_strength", "must lie in [0, 1]");
    if (!(pen_fraction >= 0 && pen_fraction <= 1)) bad("pen_fraction", "must lie in [0, 1]");
    if (!(tile_microns > 0)) bad("tile_microns", "must be > 0");
}

nlohmann::json SynthSpec::to_json() const
{
    return {{"n_patients", n_patients},   {"prevalence", prevalence},
            {"width", width},             {"height", height},
            {"mpp", mpp},                 {"blob_min", blob_min},
            {"blob_max", blob_max},       {"blob_radius_min", blob_radius_min},
            {"blob_radius_max", blob_radius_max}, {"signal_strength", signal_strength},
            {"pen_fraction", pen_fraction}, {"stain_jitter", stain_jitter},
            {"tile_microns", tile_microns}, {"jpeg_quality", jpeg_quality},
            {"seed", seed}};
}

std::string patient_id(int index) { return fmt::format("SYN_{:04d}", index + 1); }

const SlideTruth* SynthTruth::find_patient(const std::string& id) const
{
    for (const auto& s : slides)
        if (s.patient == id) return &s;
    return nullptr;
}

const SlideTruth* SynthTruth::find_slide(const std::string& stem) const
{
    for (const auto& s : slides)
        if (s.slide == stem) return &s;
    return nullptr;
}

nlohmann::json SynthTruth::to_json() const
{
    nlohmann::json slides_j = nlohmann::json::array();
    for (const auto& s : slides) {
        nlohmann::json rows = nlohmann::json::array();
        nlohmann::json fractions = nlohmann::json::array();
        for (int r = 0; r < s.rows; ++r) {
            std::string line;
            nlohmann::json fr = nlohmann::json::array();
            for (int c = 0; c < s.cols; ++c) {
                line += s.masked(c, r) ? '1' : '0';
                fr.push_back(std::round(s.signal_fraction[static_cast<std::size_t>(r) * s.cols + c] * 1e4) / 1e4);
            }
            rows.push_back(line);
            fractions.push_back(fr);
        }
        slides_j.push_back({{"patient", s.patient},
                            {"slide", s.slide},
                            {"label", s.label ? kPositive : kNegative},
                            {"tissue_signal_fraction", std::round(s.tissue_signal_fraction * 1e6) / 1e6},
                            {"cols", s.cols},
                            {"rows", s.rows},
                            {"mask", rows},
                            {"signal_fraction", fractions}});
    }
    return {{"tile_microns", tile_microns}, {"mpp", mpp}, {"mask_threshold", kMaskThreshold}, {"slides", slides_j}};
}

SynthTruth SynthTruth::from_json(const nlohmann::json& j)
{
    SynthTruth t;
    t.tile_microns = j.at("tile_microns").get<double>();
    t.mpp = j.at("mpp").get<double>();
    for (const auto& s : j.at("slides")) {
        SlideTruth st;
        st.patient = s.at("patient").get<std::string>();
        st.slide = s.at("slide").get<std::string>();
        st.label = s.at("label").get<std::string>() == kPositive ? 1 : 0;
        st.cols = s.at("cols").get<int>();
        st.rows = s.at("rows").get<int>();
        st.tissue_signal_fraction = s.value("tissue_signal_fraction", 0.0);
        const auto& mask = s.at("mask");
        if (static_cast<int>(mask.size()) != st.rows) throw std::runtime_error("mask row count differs from rows");
        for (const auto& line : mask) {
            const auto str = line.get<std::string>();
            if (static_cast<int>(str.size()) != st.cols) throw std::runtime_error("mask row width differs from cols");
            for (char ch : str) st.mask.push_back(ch == '1' ? 1 : 0);
        }
        if (s.contains("signal_fraction"))
            for (const auto& row : s.at("signal_fraction"))
                for (const auto& v : row) st.signal_fraction.push_back(v.get<double>());
        t.slides.push_back(std::move(st));
    }
    return t;
}

SynthTruth load_truth(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open truth file", path.string());
    try {
        return SynthTruth::from_json(nlohmann::json::parse(in));
    } catch (const std::exception& e) {
        throw Error(ErrorCode::CohortMismatch, std::string("unreadable truth file: ") + e.what(), path.string());
    }
}

RgbImage render_template(int size, std::uint64_t seed)
{
    SynthSpec spec;
    spec.width = spec.height = size;
    spec.pen_fraction = 0;
    SlidePlan plan = plan_slide(spec, mix_seed(seed, 0x7E3), false, false);
    plan.blobs = {{size / 2.0, size / 2.0, size * 2.0, size * 2.0, 1.0, 0.0, size * 4.0}};
    RgbImage out(size, size, 255);
    for (int y0 = 0; y0 < size; y0 += kTile)
        for (int x0 = 0; x0 < size; x0 += kTile) {
            TileStats st;
            blit(render_tile(plan, x0, y0, st), out, x0, y0);
        }
    return out;
}

SynthTruth generate_cohort(const SynthSpec& spec, const fs::path& out_dir, int cores)
{
    spec.validate();
    try {
        fs::create_directories(out_dir / "slides");
    } catch (const fs::filesystem_error& e) {
        throw Error(ErrorCode::IoError, e.what(), out_dir.string());
    }
    const int n = spec.n_patients;
    const int n_pos = std::clamp(static_cast<int>(std::lround(n * spec.prevalence)), 1, n - 1);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng label_rng(mix_seed(spec.seed, 0x1ABE1));
    label_rng.shuffle(std::span<int>(order));
    std::vector<bool> positive(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n_pos; ++i) positive[order[i]] = true;

    SynthTruth truth;
    truth.tile_microns = spec.tile_microns;
    truth.mpp = spec.mpp;
    truth.slides.resize(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::optional<Error> failure;
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                truth.slides[i] = render_slide(spec, i, positive[i], out_dir / "slides" / (patient_id(i) + ".tiff"));
                spdlog::debug("rendered {}", patient_id(i));
            } catch (const Error& e) {
                std::lock_guard lock(err_mu);
                if (!failure) failure = Error(ErrorCode::IoError, e.what(), e.subject());
            } catch (const std::exception& e) {
                std::lock_guard lock(err_mu);
                if (!failure) failure = Error(ErrorCode::IoError, e.what(), patient_id(i));
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < std::max(1, cores); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) throw *failure;

    std::string slide_csv = cohort::csv_line({"PATIENT", "FILENAME"});
    std::string clini_csv = cohort::csv_line({"PATIENT", kTargetLabel, "AGE", "GRADE"});
    Rng clin(mix_seed(spec.seed, 0xC11));
    for (int i = 0; i < n; ++i) {
        slide_csv += cohort::csv_line({patient_id(i), patient_id(i) + ".tiff"});
        const long age = std::clamp(std::lround(clin.normal(66.0, 11.0)), 25L, 95L);
        const char* grades[] = {"G1", "G2", "G3"};
        clini_csv += cohort::csv_line({patient_id(i), positive[i] ? kPositive : kNegative, std::to_string(age),
                                       grades[clin.below(3)]});
    }
    write_text(out_dir / "slide_table.csv", slide_csv);
    write_text(out_dir / "clini_table.csv", clini_csv);
    write_text(out_dir / "truth.json", truth.to_json().dump(1) + "\n");
    io::write_image(out_dir / "normalization_template.jpg", render_template(1024, spec.seed), 95);
    write_text(out_dir / "synth_spec.json", spec.to_json().dump(2) + "\n");
    return truth;
}

TruthReport evaluate_predictions(const std::map<std::string, double>& pos_scores,
                                 const std::map<std::string, std::string>& predicted, const SynthTruth& truth)
{
    std::set<std::string> truth_ids, pred_ids;
    for (const auto& s : truth.slides) truth_ids.insert(s.patient);
    for (const auto& [id, v] : pos_scores) pred_ids.insert(id);
    if (truth_ids != pred_ids) {
        std::vector<std::string> diff;
        std::set_symmetric_difference(truth_ids.begin(), truth_ids.end(), pred_ids.begin(), pred_ids.end(),
                                      std::back_inserter(diff));
        throw Error(ErrorCode::CohortMismatch,
                    fmt::format("predictions and truth cover different patients ({} differ, first '{}')", diff.size(),
                                diff.front()));
    }
    TruthReport r;
    std::vector<double> scores;
    std::vector<int> labels;
    int correct = 0;
    for (const auto& [id, v] : pos_scores) {
        const auto* s = truth.find_patient(id);
        scores.push_back(v);
        labels.push_back(s->label);
        const auto it = predicted.find(id);
        if (it != predicted.end() && (it->second == kPositive) == (s->label == 1)) ++correct;
    }
    r.n_patients = static_cast<int>(scores.size());
    r.auroc = stats::auroc(scores, labels);
    r.accuracy = static_cast<double>(correct) / r.n_patients;
    return r;
}

double top_decile_overlap(const std::vector<double>& scores, const std::vector<std::int32_t>& coords, int tile_px,
                          double target_mpp, const SlideTruth& slide, double tile_microns, double mpp)
{
    if (scores.empty()) return 0.0;
    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const std::size_t k = std::max<std::size_t>(1, (scores.size() + 9) / 10);
    const double cell_px = tile_microns / mpp;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t i = idx[r];
        const double cx = (coords[2 * i] + tile_px / 2.0) * target_mpp / mpp;
        const double cy = (coords[2 * i + 1] + tile_px / 2.0) * target_mpp / mpp;
        const int c = static_cast<int>(cx / cell_px), rr = static_cast<int>(cy / cell_px);
        if (c >= 0 && rr >= 0 && c < slide.cols && rr < slide.rows && slide.masked(c, rr)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

} // namespace stamp::synth
