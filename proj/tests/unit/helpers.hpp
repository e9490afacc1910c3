#pragma once

#include "stamp/features/extractor.hpp"
#include "stamp/features/store.hpp"
#include "stamp/image.hpp"
#include "stamp/rng.hpp"

#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

namespace testutil {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("stamp-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text)
{
    fs::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Image with smooth gradients plus noise.
inline stamp::RgbImage noise_image(int w, int h, std::uint64_t seed)
{
    stamp::RgbImage img(w, h);
    stamp::Rng rng(seed);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y)[c] = static_cast<std::uint8_t>((x * 3 + y * 5 + c * 40 + rng.below(60)) % 256);
    return img;
}

/// Feature file of n random rows of dimension d.
inline stamp::features::FeatureMatrix random_features(int n, int d, std::uint64_t seed, double shift = 0.0,
                                                      const std::string& extractor = stamp::features::kToyExtractorId)
{
    stamp::features::FeatureMatrix fm;
    fm.n = n;
    fm.d = d;
    fm.extractor_id = extractor;
    fm.target_mpp = 256.0 / 224.0;
    stamp::Rng rng(seed);
    for (int i = 0; i < n * d; ++i) fm.feats.push_back(static_cast<float>(rng.normal() + shift));
    for (int i = 0; i < n; ++i) {
        fm.coords.push_back(224 * (i % 8));
        fm.coords.push_back(224 * (i / 8));
    }
    return fm;
}

} // namespace testutil
