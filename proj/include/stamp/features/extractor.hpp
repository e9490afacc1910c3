#pragma once

#include "stamp/image.hpp"
#include "stamp/slide/slide.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stamp::features {

inline constexpr const char* kToyExtractorId = "toy-v1-d48";
inline constexpr int kToyDim = 48;
inline constexpr const char* kCtransPathId = "xiyuewang-ctranspath-7c998680";
inline constexpr int kCtransPathDim = 768;

struct ExtractorDescriptor {
    std::string id;
    int dim = 0;
};

/// Per-slide embedding matrix. coords are tile top-left corners in
/// target-MPP pixels.
struct FeatureMatrix {
    int n = 0;
    int d = 0;
    std::vector<float> feats;            // n*d, row-major
    std::vector<std::int32_t> coords;    // n*2: x, y
    std::string extractor_id;
    int tile_px = slide::kTilePx;
    double target_mpp = 0.0;
    std::string norm = "raw";            // "macenko" or "raw"

    const float* row(int i) const { return feats.data() + static_cast<std::size_t>(i) * d; }
    bool operator==(const FeatureMatrix&) const = default;
};

/// A tile embedding backend. run() returns tiles.size() * dim floats.
class ExtractorBackend {
public:
    virtual ~ExtractorBackend() = default;
    virtual const ExtractorDescriptor& descriptor() const = 0;
    virtual std::vector<float> run(std::span<const RgbImage> tiles) const = 0;
};

/// Deterministic hand-crafted color and texture statistics.
class ToyExtractor final : public ExtractorBackend {
public:
    const ExtractorDescriptor& descriptor() const override { return desc_; }
    std::vector<float> run(std::span<const RgbImage> tiles) const override;

private:
    ExtractorDescriptor desc_{kToyExtractorId, kToyDim};
};

/// The 48 toy features of one tile.
std::vector<float> toy_extract(const RgbImage& tile);

/// Backend for the configured extractor: the toy extractor when no model
/// path is given. Neural exports need an inference runtime that this build
/// does not include; they fail with BackendFailure. A "cuda:N" device is
/// rejected with InvalidDevice for neural backends.
std::unique_ptr<ExtractorBackend> make_extractor(const std::optional<std::filesystem::path>& model_path,
                                                 const std::string& device);

/// Runs the backend over `tiles` in batches and checks its output shape.
/// Throws BackendFailure or DimensionMismatch.
FeatureMatrix extract_batch(std::span<const RgbImage> tiles, std::span<const slide::TileCoord> coords,
                            const ExtractorBackend& backend, std::size_t batch_size = 64);

/// Appends the rows of `part` to `into` (same extractor and dim).
void append_rows(FeatureMatrix& into, const FeatureMatrix& part);

} // namespace stamp::features
