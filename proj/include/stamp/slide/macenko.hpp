#pragma once

#include "stamp/image.hpp"
#include "stamp/kernels/kernels.hpp"

#include <array>
#include <cstdint>
#include <span>

namespace stamp::slide {

struct MacenkoOptions {
    double i0 = 240.0;
    double alpha = 1.0;          // percentile of the extreme angles
    double beta = 0.15;          // optical-density floor
    std::size_t min_pixels = 1000;
};

/// Stain basis in optical-density space. Column 0 is hematoxylin, column 1
/// eosin; rows are R, G, B.
struct StainParams {
    std::array<std::array<double, 2>, 3> stain_matrix{};
    std::array<double, 2> max_conc{};
    double i0 = 240.0;

    std::array<double, 3> column(int c) const
    {
        return {stain_matrix[0][c], stain_matrix[1][c], stain_matrix[2][c]};
    }
};

/// Optical density of one channel value.
double optical_density(double intensity, double i0);

/// Percentile with linear interpolation between order statistics; `values`
/// is reordered.
double percentile(std::span<double> values, double q);

/// Estimates the stain basis from packed RGB pixels. Throws
/// Error{InsufficientTissue} when fewer than min_pixels survive the OD floor
/// or the optical densities are rank one.
StainParams estimate_stain_params(std::span<const std::uint8_t> rgb, const MacenkoOptions& options = {});

/// Per-slide coefficients for the normalization kernel.
kernels::StainCoeffs make_stain_coeffs(const StainParams& source, const StainParams& target);

/// Maps `tile` from the source stain basis onto the target basis.
RgbImage normalize_tile(const RgbImage& tile, const kernels::StainCoeffs& coeffs,
                        const kernels::KernelTable& k = kernels::active());

RgbImage normalize_tile(const RgbImage& tile, const StainParams& source, const StainParams& target);

/// Angle in degrees between two 3-vectors.
double angle_degrees(const std::array<double, 3>& a, const std::array<double, 3>& b);

} // namespace stamp::slide
