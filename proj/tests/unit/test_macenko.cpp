#include "helpers.hpp"

#include "stamp/error.hpp"
#include "stamp/rng.hpp"
#include "stamp/slide/macenko.hpp"

#include <doctest.h>

#include <cmath>

using namespace stamp;
using namespace stamp::slide;

namespace {

using Vec3 = std::array<double, 3>;

Vec3 unit(Vec3 v)
{
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

// Beer-Lambert synthesis of a two-stain image: a fifth blank, a fifth with
// one stain, the rest mixed.
RgbImage synthesize(const Vec3& h, const Vec3& e, std::uint64_t seed, int w = 256, int hgt = 256)
{
    Rng rng(seed);
    RgbImage img(w, hgt);
    const double i0 = 240.0;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const double u = rng.uniform(0.0, 1.0);
        double ch = 0.0, ce = 0.0;
        if (u < 0.2) {
            // background
        } else if (u < 0.3) {
            ch = rng.uniform(0.8, 1.4);
        } else if (u < 0.4) {
            ce = rng.uniform(0.8, 1.4);
        } else {
            ch = rng.uniform(0.2, 1.0);
            ce = rng.uniform(0.2, 1.0);
        }
        for (int c = 0; c < 3; ++c) {
            const double od = h[c] * ch + e[c] * ce;
            img.pixels[3 * i + c] = static_cast<std::uint8_t>(std::clamp(std::lround(i0 * std::pow(10.0, -od)), 0L, 255L));
        }
    }
    return img;
}

const std::array<std::pair<Vec3, Vec3>, 3> kTruth{{
    {unit({0.5626, 0.7201, 0.4062}), unit({0.2159, 0.8012, 0.5581})},
    {unit({0.65, 0.70, 0.29}), unit({0.27, 0.87, 0.41})},
    {unit({0.49, 0.77, 0.41}), unit({0.30, 0.80, 0.52})},
}};

} // namespace

TEST_CASE("optical density and percentile")
{
    CHECK(optical_density(240, 240) == doctest::Approx(0.0));
    CHECK(optical_density(24, 240) == doctest::Approx(1.0));
    CHECK(optical_density(0, 240) == doctest::Approx(std::log10(240.0)));
    std::vector<double> v{4, 1, 3, 2, 5};
    CHECK(percentile(v, 0) == 1);
    CHECK(percentile(v, 100) == 5);
    CHECK(percentile(v, 50) == 3);
    CHECK(percentile(v, 12.5) == doctest::Approx(1.5));
}

TEST_CASE("stain estimation recovers ground-truth matrices within 2 degrees")
{
    for (std::size_t t = 0; t < kTruth.size(); ++t) {
        CAPTURE(t);
        const auto& [h, e] = kTruth[t];
        const auto img = synthesize(h, e, 100 + t);
        const auto p = estimate_stain_params(img.pixels);
        const double ah = angle_degrees(p.column(0), h);
        const double ae = angle_degrees(p.column(1), e);
        CAPTURE(ah);
        CAPTURE(ae);
        CHECK(ah <= 2.0);
        CHECK(ae <= 2.0);
    }
}

TEST_CASE("identity normalization round trip")
{
    for (std::size_t t = 0; t < kTruth.size(); ++t) {
        CAPTURE(t);
        const auto img = synthesize(kTruth[t].first, kTruth[t].second, 200 + t);
        const auto p = estimate_stain_params(img.pixels);
        const auto out = normalize_tile(img, p, p);
        double err = 0.0;
        for (std::size_t i = 0; i < img.pixels.size(); ++i) err += std::abs(int(img.pixels[i]) - int(out.pixels[i]));
        err /= static_cast<double>(img.pixels.size());
        CAPTURE(err);
        CHECK(err <= 3.0);
        // Pixels at the background intensity stay exactly where they were.
        for (std::size_t i = 0; i < img.pixel_count(); ++i) {
            if (img.pixels[3 * i] == 240 && img.pixels[3 * i + 1] == 240 && img.pixels[3 * i + 2] == 240) {
                CHECK(out.pixels[3 * i] == 240);
                CHECK(out.pixels[3 * i + 1] == 240);
                CHECK(out.pixels[3 * i + 2] == 240);
                break;
            }
        }
    }
}

TEST_CASE("normalizing A onto B re-estimates as B")
{
    const auto a = synthesize(kTruth[0].first, kTruth[0].second, 300);
    const auto b = synthesize(kTruth[1].first, kTruth[1].second, 301);
    const auto pa = estimate_stain_params(a.pixels);
    const auto pb = estimate_stain_params(b.pixels);
    const auto moved = normalize_tile(a, pa, pb);
    const auto pm = estimate_stain_params(moved.pixels);
    CHECK(angle_degrees(pm.column(0), pb.column(0)) <= 2.0);
    CHECK(angle_degrees(pm.column(1), pb.column(1)) <= 2.0);
}

TEST_CASE("insufficient tissue")
{
    RgbImage white(64, 64);
    std::fill(white.pixels.begin(), white.pixels.end(), std::uint8_t{245});
    const auto e = [](const RgbImage& img) {
        try {
            estimate_stain_params(img.pixels);
        } catch (const Error& err) {
            return err.code();
        }
        return ErrorCode::IoError;
    };
    CHECK(e(white) == ErrorCode::InsufficientTissue);

    // One stain direction only: gray levels keep the optical densities exactly
    // collinear, so the covariance is rank one.
    RgbImage single(64, 64);
    for (std::size_t i = 0; i < single.pixel_count(); ++i) {
        const auto v = static_cast<std::uint8_t>(20 + i % 150);
        for (int k = 0; k < 3; ++k) single.pixels[3 * i + k] = v;
    }
    CHECK(e(single) == ErrorCode::InsufficientTissue);
}
