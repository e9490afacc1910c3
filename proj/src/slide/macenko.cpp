#include "stamp/slide/macenko.hpp"

#include "stamp/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace stamp::slide {

double optical_density(double intensity, double i0)
{
    return -std::log10(std::max(intensity, 1.0) / i0);
}

double percentile(std::span<double> values, double q)
{
    if (values.empty()) throw Error(ErrorCode::InvalidValue, "percentile of an empty sample");
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = values[lo];
    if (frac == 0.0 || lo + 1 >= values.size()) return a;
    const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return a + frac * (b - a);
}

double angle_degrees(const std::array<double, 3>& a, const std::array<double, 3>& b)
{
    const double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    return std::acos(std::clamp(dot / (na * nb), -1.0, 1.0)) * 180.0 / 3.14159265358979323846;
}

StainParams estimate_stain_params(std::span<const std::uint8_t> rgb, const MacenkoOptions& opt)
{
    const std::size_t n_pixels = rgb.size() / 3;
    double lut[256];
    for (int v = 0; v < 256; ++v) lut[v] = optical_density(v, opt.i0);

    std::vector<Eigen::Vector3d> od;
    od.reserve(n_pixels);
    for (std::size_t i = 0; i < n_pixels; ++i) {
        const Eigen::Vector3d p(lut[rgb[3 * i]], lut[rgb[3 * i + 1]], lut[rgb[3 * i + 2]]);
        if (p.minCoeff() >= opt.beta) od.push_back(p);
    }
    if (od.size() < opt.min_pixels) {
        throw Error(ErrorCode::InsufficientTissue,
                    "only " + std::to_string(od.size()) + " pixels above the optical-density floor (need " +
                        std::to_string(opt.min_pixels) + ")");
    }

    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : od) mean += p;
    mean /= static_cast<double>(od.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : od) {
        const Eigen::Vector3d d = p - mean;
        cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(od.size() - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Eigen::Vector3d evals = eig.eigenvalues();   // ascending
    Eigen::Vector3d e1 = eig.eigenvectors().col(2);
    Eigen::Vector3d e2 = eig.eigenvectors().col(1);
    if (!(evals(2) > 0.0) || evals(1) < 1e-8 * evals(2)) {
        throw Error(ErrorCode::InsufficientTissue, "optical densities span a single stain direction");
    }
    if (e1.sum() < 0) e1 = -e1;
    if (e2.sum() < 0) e2 = -e2;

    std::vector<double> phi(od.size());
    for (std::size_t i = 0; i < od.size(); ++i) phi[i] = std::atan2(od[i].dot(e2), od[i].dot(e1));
    const double phi_min = percentile(phi, opt.alpha);
    const double phi_max = percentile(phi, 100.0 - opt.alpha);

    auto direction = [&](double a) {
        Eigen::Vector3d v = e1 * std::cos(a) + e2 * std::sin(a);
        if (v.sum() < 0) v = -v;
        v = v.cwiseMax(0.0);
        const double norm = v.norm();
        if (norm <= 0.0) throw Error(ErrorCode::InsufficientTissue, "degenerate stain direction");
        return Eigen::Vector3d(v / norm);
    };
    const Eigen::Vector3d v_min = direction(phi_min);
    const Eigen::Vector3d v_max = direction(phi_max);
    const bool min_is_h = v_min(0) > v_max(0);
    const Eigen::Vector3d h = min_is_h ? v_min : v_max;
    const Eigen::Vector3d e = min_is_h ? v_max : v_min;

    Eigen::Matrix<double, 3, 2> m;
    m.col(0) = h;
    m.col(1) = e;
    const Eigen::Matrix2d gram = m.transpose() * m;
    if (std::fabs(gram.determinant()) < 1e-12) {
        throw Error(ErrorCode::InsufficientTissue, "stain vectors are collinear");
    }
    const Eigen::Matrix<double, 2, 3> pinv = gram.inverse() * m.transpose();

    std::vector<double> c0(od.size()), c1(od.size());
    for (std::size_t i = 0; i < od.size(); ++i) {
        const Eigen::Vector2d c = pinv * od[i];
        c0[i] = c(0);
        c1[i] = c(1);
    }
    StainParams out;
    out.i0 = opt.i0;
    for (int r = 0; r < 3; ++r) {
        out.stain_matrix[r][0] = h(r);
        out.stain_matrix[r][1] = e(r);
    }
    out.max_conc = {percentile(c0, 99.0), percentile(c1, 99.0)};
    if (!(out.max_conc[0] > 0.0) || !(out.max_conc[1] > 0.0)) {
        throw Error(ErrorCode::InsufficientTissue, "non-positive stain concentration scale");
    }
    return out;
}

kernels::StainCoeffs make_stain_coeffs(const StainParams& source, const StainParams& target)
{
    kernels::StainCoeffs k{};
    for (int v = 0; v < 256; ++v) k.od_lut[v] = static_cast<float>(optical_density(v, source.i0));
    Eigen::Matrix<double, 3, 2> m;
    for (int r = 0; r < 3; ++r) {
        m(r, 0) = source.stain_matrix[r][0];
        m(r, 1) = source.stain_matrix[r][1];
    }
    const Eigen::Matrix<double, 2, 3> pinv = (m.transpose() * m).inverse() * m.transpose();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) k.pinv[i][j] = static_cast<float>(pinv(i, j));
    for (int i = 0; i < 2; ++i) k.scale[i] = static_cast<float>(target.max_conc[i] / source.max_conc[i]);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c) k.target[r][c] = static_cast<float>(target.stain_matrix[r][c]);
    k.i0 = static_cast<float>(target.i0);
    return k;
}

RgbImage normalize_tile(const RgbImage& tile, const kernels::StainCoeffs& coeffs, const kernels::KernelTable& k)
{
    RgbImage out(tile.width, tile.height);
    k.stain_normalize(tile.pixels.data(), out.pixels.data(), tile.pixel_count(), coeffs);
    return out;
}

RgbImage normalize_tile(const RgbImage& tile, const StainParams& source, const StainParams& target)
{
    return normalize_tile(tile, make_stain_coeffs(source, target));
}

} // namespace stamp::slide
