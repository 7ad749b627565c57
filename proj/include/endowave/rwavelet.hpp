#pragma once

#include <vector>

#include "endowave/grid.hpp"

namespace endowave {

/// Discrete filters for one rational dilation factor a = (q+1)/q.
/// Taps are indexed t in [-radius, radius]; tap(t) = h[t + radius].
struct RationalFilterBank {
    int q = 0;
    double a = 0.0;
    double sigma = 0.0;
    int radius = 0;
    std::vector<double> h0; // low-pass, sums to 1
    std::vector<double> h1; // derivative-of-Gaussian, odd-antisymmetric
    std::vector<double> g;  // modulated-Gaussian band-pass, odd-antisymmetric

    int support() const { return 2 * radius + 1; }
    double tap(const std::vector<double>& f, int t) const { return f[static_cast<size_t>(t + radius)]; }
};

/// Builds the three filters for q >= 1. The support half-width is
/// ceil(6 * 2 sigma) + q, wide enough that truncated tail mass is below 1e-9.
RationalFilterBank design_filters(int q);

/// Zero-phase correlation of each row with centered taps, reflect padding
/// (mirror about the edge sample). Requires w >= 2*radius + 1.
Grid correlate_rows(const Grid& img, const std::vector<double>& taps, int radius);
Grid correlate_cols(const Grid& img, const std::vector<double>& taps, int radius);

/// Adjoints of the above (scatter form), used by gradient propagation.
Grid correlate_rows_adjoint(const Grid& gout, const std::vector<double>& taps, int radius);
Grid correlate_cols_adjoint(const Grid& gout, const std::vector<double>& taps, int radius);

/// Rows then columns. Throws when the image is smaller than the support.
Grid convolve_sep(const Grid& img, const RationalFilterBank& bank,
                  const std::vector<double>& row_filter, const std::vector<double>& col_filter);

/// Separable linear interpolation onto ceil(dim/a) samples per axis with
/// half-sample-centered alignment; a in (1, 2].
Grid resample_rational(const Grid& field, double a);
Grid resample_rational_adjoint(const Grid& gout, int in_h, int in_w, double a);

/// Output length of one resampled axis.
int resampled_dim(int n, double a);

struct SubBands {
    Grid ll, lh, hl, hh;
};

/// One analysis level: the four filtered fields of Eq-style separable paths
/// (h0/h0, h0/h1, h1/h0, g/g), each resampled by 1/a in both axes.
SubBands decompose_level(const Grid& img, const RationalFilterBank& bank);

struct WaveletPyramid {
    std::vector<SubBands> levels;
};

/// Iterates decompose_level on the LL band for `levels` levels.
/// Throws std::invalid_argument naming the offending level when the image
/// becomes too small.
WaveletPyramid decompose(const Grid& img, const RationalFilterBank& bank, int levels);

struct BandWeights {
    double ll = 1.0;
    double lh = 1.0;
    double hl = 1.0;
    double hh = 0.5;
};

/// Sum over levels and bands of lambda_band * ||A_band - B_band||_2
/// (root-sum-square per band). Pyramids must have identical shapes.
double wavelet_loss(const WaveletPyramid& a, const WaveletPyramid& b, const BandWeights& w);

/// Loss between decompositions of two images plus d(loss)/d(a), propagated
/// through the resampling and filtering adjoints. grad_a may be null.
double wavelet_loss_grad(const Grid& a, const Grid& b, const RationalFilterBank& bank, int levels,
                         const BandWeights& w, Grid* grad_a);

} // namespace endowave
