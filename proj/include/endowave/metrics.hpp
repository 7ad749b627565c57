#pragma once

#include "endowave/grid.hpp"

namespace endowave {

/// 10 log10(1 / MSE) over masked pixels and channels, inputs in [0,1].
/// Identical inputs give +infinity. Throws on an empty mask.
double psnr(const ColorImage& a, const ColorImage& b, const Mask& mask);

/// Mean SSIM over masked window centers, averaged over channels.
/// 11x11 Gaussian window sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, reflect padding.
double ssim(const ColorImage& a, const ColorImage& b, const Mask& mask);

/// ssim value plus d(ssim)/d(a); d_a may be null.
double ssim_grad(const ColorImage& a, const ColorImage& b, const Mask& mask, ColorImage* d_a);

} // namespace endowave
