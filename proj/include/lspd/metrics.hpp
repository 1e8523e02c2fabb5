#pragma once

#include <limits>
#include <span>

namespace lspd {

/// 10 log10(peak^2 / MSE) with peak = max(ref) - min(ref). Returns
/// +infinity when x == ref. Throws for a constant reference.
double psnr(std::span<const float> x, std::span<const float> ref);
double psnr(std::span<const double> x, std::span<const double> ref);

/// Mean local SSIM over the valid region of an 11x11 Gaussian window
/// (sigma 1.5, K1 = 0.01, K2 = 0.03) with data range max(ref) - min(ref).
double ssim(std::span<const float> x, std::span<const float> ref, int height, int width);
double ssim(std::span<const double> x, std::span<const double> ref, int height, int width);

} // namespace lspd
