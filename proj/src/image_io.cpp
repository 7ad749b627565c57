#include "endowave/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include <png.h>

namespace endowave {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& msg, const std::string& path) {
    throw std::runtime_error(msg + ": " + path);
}

void write_png_impl(const std::string& path, int width, int height, int bit_depth, int color_type,
                    const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail("png: cannot open for write", path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail("png: allocation failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("png: write error", path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png); // buffers hold little-endian words
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct DecodedPng {
    int width = 0, height = 0, channels = 0, bit_depth = 0;
    std::vector<uint16_t> px; // interleaved, native counts
};

DecodedPng read_png_impl(const std::string& path, bool force_gray) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail("png: cannot open", path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) fail("png: bad signature", path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("png: allocation failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("png: read error", path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    if (force_gray)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_set_swap(png); // deliver 16-bit words little-endian
    png_read_update_info(png, info);

    DecodedPng out;
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    out.channels = png_get_channels(png, info);
    const size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::vector<png_byte>> rows(out.height, std::vector<png_byte>(rowbytes));
    std::vector<png_bytep> rowptrs(out.height);
    for (int y = 0; y < out.height; ++y) rowptrs[y] = rows[y].data();
    png_read_image(png, rowptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    out.px.resize(static_cast<size_t>(out.width) * out.height * out.channels);
    for (int y = 0; y < out.height; ++y) {
        const png_byte* row = rows[y].data();
        for (int i = 0; i < out.width * out.channels; ++i) {
            if (out.bit_depth == 16) {
                uint16_t v;
                std::memcpy(&v, row + 2 * i, 2);
                out.px[static_cast<size_t>(y) * out.width * out.channels + i] = v;
            } else {
                out.px[static_cast<size_t>(y) * out.width * out.channels + i] = row[i];
            }
        }
    }
    return out;
}

} // namespace

void write_png_rgb8(const std::string& path, const ColorImage& img) {
    const int h = img.height(), w = img.width();
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(static_cast<size_t>(w) * 3));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.ch[c].at(y, x), 0.0, 1.0);
                rows[y][static_cast<size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
    std::vector<png_bytep> rowptrs(h);
    for (int y = 0; y < h; ++y) rowptrs[y] = rows[y].data();
    write_png_impl(path, w, h, 8, PNG_COLOR_TYPE_RGB, rowptrs);
}

ColorImage read_png_rgb(const std::string& path) {
    DecodedPng d = read_png_impl(path, false);
    const double maxval = d.bit_depth == 16 ? 65535.0 : 255.0;
    ColorImage img(d.height, d.width);
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
            const size_t base = (static_cast<size_t>(y) * d.width + x) * d.channels;
            for (int c = 0; c < 3; ++c) {
                const int sc = d.channels >= 3 ? c : 0;
                img.ch[c].at(y, x) = d.px[base + sc] / maxval;
            }
        }
    return img;
}

void write_png_gray16(const std::string& path, const Grid& img, double lo, double hi) {
    const double span = hi > lo ? hi - lo : 1.0;
    const int h = img.h, w = img.w;
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(static_cast<size_t>(w) * 2));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double t = std::clamp((img.at(y, x) - lo) / span, 0.0, 1.0);
            const uint16_t v = static_cast<uint16_t>(std::lround(t * 65535.0));
            std::memcpy(&rows[y][static_cast<size_t>(x) * 2], &v, 2);
        }
    std::vector<png_bytep> rowptrs(h);
    for (int y = 0; y < h; ++y) rowptrs[y] = rows[y].data();
    write_png_impl(path, w, h, 16, PNG_COLOR_TYPE_GRAY, rowptrs);
}

Grid read_png_gray(const std::string& path, int* bit_depth) {
    DecodedPng d = read_png_impl(path, true);
    if (bit_depth) *bit_depth = d.bit_depth;
    Grid g(d.height, d.width);
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x)
            g.at(y, x) = d.px[(static_cast<size_t>(y) * d.width + x) * d.channels];
    return g;
}

void write_mask_png(const std::string& path, const Mask& mask) {
    const int h = mask.h, w = mask.w;
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) rows[y][x] = mask.at(y, x) ? 255 : 0;
    std::vector<png_bytep> rowptrs(h);
    for (int y = 0; y < h; ++y) rowptrs[y] = rows[y].data();
    write_png_impl(path, w, h, 8, PNG_COLOR_TYPE_GRAY, rowptrs);
}

Mask read_mask_png(const std::string& path) {
    int depth = 8;
    Grid g = read_png_gray(path, &depth);
    const double threshold = depth == 16 ? 32768.0 : 128.0;
    Mask m(g.h, g.w, false);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) m.set(y, x, g.at(y, x) >= threshold);
    return m;
}

namespace {

// Compact viridis ramp, linearly interpolated.
const double kRamp[9][3] = {
    {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
    {0.207, 0.372, 0.553}, {0.164, 0.471, 0.558}, {0.128, 0.567, 0.551},
    {0.135, 0.659, 0.518}, {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144}};

void colormap(double t, double rgb[3]) {
    t = std::clamp(t, 0.0, 1.0) * 8.0;
    const int i = std::min(7, static_cast<int>(t));
    const double f = t - i;
    for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - f) * kRamp[i][c] + f * kRamp[i + 1][c];
}

} // namespace

void write_error_map_png(const std::string& path, const ColorImage& a, const ColorImage& b,
                         const Mask& mask, double vmax) {
    const int h = a.height(), w = a.width();
    Grid err(h, w);
    double peak = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            double e = 0.0;
            for (int c = 0; c < 3; ++c) e += std::abs(a.ch[c].at(y, x) - b.ch[c].at(y, x));
            err.at(y, x) = e / 3.0;
            peak = std::max(peak, err.at(y, x));
        }
    const double scale = vmax > 0.0 ? vmax : (peak > 0.0 ? peak : 1.0);
    ColorImage panel(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x)) continue;
            double rgb[3];
            colormap(err.at(y, x) / scale, rgb);
            for (int c = 0; c < 3; ++c) panel.ch[c].at(y, x) = rgb[c];
        }
    write_png_rgb8(path, panel);
}

void write_pfm(const std::string& path, const Grid& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("pfm: cannot open for write", path);
    os << "Pf\n" << img.w << " " << img.h << "\n-1.0\n";
    std::vector<float> row(img.w);
    for (int y = img.h - 1; y >= 0; --y) { // bottom-up
        for (int x = 0; x < img.w; ++x) row[x] = static_cast<float>(img.at(y, x));
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(img.w) * 4);
    }
    if (!os) fail("pfm: write failed", path);
}

Grid read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("pfm: cannot open", path);
    std::string tag;
    is >> tag;
    if (tag != "Pf") fail("pfm: not a grayscale PFM", path);
    int w = 0, h = 0;
    double scale = 0.0;
    is >> w >> h >> scale;
    if (w <= 0 || h <= 0 || scale >= 0.0) fail("pfm: unsupported header (need little-endian)", path);
    is.get(); // single whitespace after the header
    Grid g(h, w);
    std::vector<float> row(w);
    for (int y = h - 1; y >= 0; --y) {
        if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w) * 4))
            fail("pfm: truncated payload", path);
        for (int x = 0; x < w; ++x) g.at(y, x) = row[x];
    }
    return g;
}

} // namespace endowave
