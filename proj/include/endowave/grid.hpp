#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>
#include <array>
#include <cmath>

namespace endowave {

/// Dense row-major scalar field.
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

/// Planar 3-channel image; channel c of pixel (y,x) is ch[c].at(y,x).
struct ColorImage {
    std::array<Grid, 3> ch;

    ColorImage() = default;
    ColorImage(int h, int w, double fill = 0.0) : ch{Grid(h, w, fill), Grid(h, w, fill), Grid(h, w, fill)} {}

    int height() const { return ch[0].h; }
    int width() const { return ch[0].w; }
    bool same_shape(const ColorImage& o) const { return ch[0].same_shape(o.ch[0]); }
};

/// Boolean pixel mask.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int h_, int w_, bool fill = false) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill ? 1 : 0) {}

    void set(int y, int x, bool b) { v[static_cast<size_t>(y) * w + x] = b ? 1 : 0; }
    bool at(int y, int x) const { return v[static_cast<size_t>(y) * w + x] != 0; }
    size_t count() const {
        size_t n = 0;
        for (uint8_t b : v) n += (b != 0);
        return n;
    }
    bool same_shape(const Grid& g) const { return h == g.h && w == g.w; }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace endowave
