#pragma once

#include "stamp/image.hpp"
#include "stamp/kernels/kernels.hpp"

#include <cstdint>
#include <vector>

namespace stamp::slide {

struct CannyParams {
    float low = 40.0f;     // hysteresis thresholds on Sobel L2 magnitude
    float high = 100.0f;
    float sigma = 1.4f;    // 5x5 Gaussian pre-smoothing
};

/// Intermediate planes of one Canny run, all width*height, row-major.
struct EdgeMaps {
    int width = 0;
    int height = 0;
    std::vector<float> gray;
    std::vector<float> gx;
    std::vector<float> gy;
    std::vector<float> magnitude;
    std::vector<std::uint8_t> edges;   // 1 = edge pixel

    double edge_fraction() const;
};

/// Normalized 5-tap Gaussian.
std::vector<float> gaussian_kernel5(float sigma);

/// Luma plane of an RGB image.
std::vector<float> to_gray(const RgbImage& image, const kernels::KernelTable& k = kernels::active());

/// Gaussian smoothing, Sobel gradients, 4-direction non-maximum suppression
/// and 8-connected double-threshold hysteresis. Borders reflect without
/// repeating the edge pixel.
EdgeMaps canny(const RgbImage& image, const CannyParams& params = {},
               const kernels::KernelTable& k = kernels::active());

/// Same pipeline over an existing gray plane.
EdgeMaps canny_gray(std::vector<float> gray, int width, int height, const CannyParams& params = {},
                    const kernels::KernelTable& k = kernels::active());

} // namespace stamp::slide
