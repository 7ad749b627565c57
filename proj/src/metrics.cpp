#include "endowave/metrics.hpp"

#include <cmath>
#include <limits>

#include "endowave/rwavelet.hpp"

namespace endowave {

double psnr(const ColorImage& a, const ColorImage& b, const Mask& mask) {
    require(a.same_shape(b), "psnr: dimension mismatch");
    require(mask.same_shape(a.ch[0]), "psnr: mask dimension mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = a.ch[c].at(y, x) - b.ch[c].at(y, x);
                sum += d * d;
            }
            ++n;
        }
    if (n == 0) throw std::invalid_argument("psnr: empty mask");
    const double mse = sum / (3.0 * static_cast<double>(n));
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWinRadius = 5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_window() {
    static const std::vector<double> taps = [] {
        std::vector<double> t(2 * kWinRadius + 1);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = -kWinRadius; i <= kWinRadius; ++i) {
            t[i + kWinRadius] = std::exp(-0.5 * i * i / (sigma * sigma));
            sum += t[i + kWinRadius];
        }
        for (double& v : t) v /= sum;
        return t;
    }();
    return taps;
}

Grid blur(const Grid& g) {
    return correlate_cols(correlate_rows(g, gaussian_window(), kWinRadius), gaussian_window(), kWinRadius);
}

Grid blur_adjoint(const Grid& g) {
    return correlate_rows_adjoint(correlate_cols_adjoint(g, gaussian_window(), kWinRadius),
                                  gaussian_window(), kWinRadius);
}

Grid multiply(const Grid& a, const Grid& b) {
    Grid out(a.h, a.w);
    for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

} // namespace

double ssim_grad(const ColorImage& a, const ColorImage& b, const Mask& mask, ColorImage* d_a) {
    require(a.same_shape(b), "ssim: dimension mismatch");
    require(mask.same_shape(a.ch[0]), "ssim: mask dimension mismatch");
    const size_t n_mask = mask.count();
    if (n_mask == 0) throw std::invalid_argument("ssim: empty mask");
    const int h = a.height(), w = a.width();
    require(h >= 2 * kWinRadius + 1 && w >= 2 * kWinRadius + 1, "ssim: image smaller than window");

    if (d_a) *d_a = ColorImage(h, w);
    const double unit = 1.0 / (3.0 * static_cast<double>(n_mask));
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Grid& ia = a.ch[c];
        const Grid& ib = b.ch[c];
        const Grid P = blur(ia);
        const Grid Q = blur(ib);
        const Grid X = blur(multiply(ia, ia));
        const Grid Y = blur(multiply(ib, ib));
        const Grid Z = blur(multiply(ia, ib));

        Grid gP(h, w), gX(h, w), gZ(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double p = P.at(y, x), q = Q.at(y, x);
                const double va = X.at(y, x) - p * p;
                const double vb = Y.at(y, x) - q * q;
                const double cab = Z.at(y, x) - p * q;
                const double a1 = 2.0 * p * q + kC1;
                const double a2 = 2.0 * cab + kC2;
                const double b1 = p * p + q * q + kC1;
                const double b2 = va + vb + kC2;
                const double s = (a1 * a2) / (b1 * b2);
                if (!mask.at(y, x)) continue;
                total += unit * s;
                if (d_a) {
                    const double dA1 = unit * a2 / (b1 * b2);
                    const double dA2 = unit * a1 / (b1 * b2);
                    const double dB1 = -unit * s / b1;
                    const double dB2 = -unit * s / b2;
                    gP.at(y, x) = dA1 * 2.0 * q + dA2 * (-2.0 * q) + dB1 * 2.0 * p + dB2 * (-2.0 * p);
                    gX.at(y, x) = dB2;
                    gZ.at(y, x) = 2.0 * dA2;
                }
            }
        if (d_a) {
            const Grid tP = blur_adjoint(gP);
            const Grid tX = blur_adjoint(gX);
            const Grid tZ = blur_adjoint(gZ);
            Grid& out = d_a->ch[c];
            for (size_t i = 0; i < out.v.size(); ++i)
                out.v[i] = tP.v[i] + 2.0 * ia.v[i] * tX.v[i] + ib.v[i] * tZ.v[i];
        }
    }
    return total;
}

double ssim(const ColorImage& a, const ColorImage& b, const Mask& mask) {
    return ssim_grad(a, b, mask, nullptr);
}

} // namespace endowave
