#pragma once

#include <string>

#include "endowave/grid.hpp"

namespace endowave {

/// 8-bit RGB PNG; values clamped to [0,1] and quantized.
void write_png_rgb8(const std::string& path, const ColorImage& img);

/// Reads 8/16-bit gray or RGB(A) PNG into [0,1] RGB.
ColorImage read_png_rgb(const std::string& path);

/// 16-bit grayscale PNG quantizing [lo, hi] onto 0..65535.
void write_png_gray16(const std::string& path, const Grid& img, double lo, double hi);

/// Raw grayscale counts (any depth); bit depth reported via out param.
Grid read_png_gray(const std::string& path, int* bit_depth = nullptr);

/// Mask as 8-bit grayscale: 255 where set, 0 elsewhere; values >= 128 read
/// back as set.
void write_mask_png(const std::string& path, const Mask& mask);
Mask read_mask_png(const std::string& path);

/// Grayscale PFM, little-endian (scale -1), rows stored bottom-up.
void write_pfm(const std::string& path, const Grid& img);
Grid read_pfm(const std::string& path);

/// Color-mapped per-pixel error panel: mean absolute channel difference,
/// scaled by vmax (or the masked maximum when vmax <= 0), dark purple for low
/// error through yellow for high. Masked-out pixels render black.
void write_error_map_png(const std::string& path, const ColorImage& a, const ColorImage& b,
                         const Mask& mask, double vmax = 0.0);

} // namespace endowave
