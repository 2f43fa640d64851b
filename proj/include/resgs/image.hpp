#pragma once

#include <cstddef>
#include <vector>

#include "resgs/errors.hpp"
#include "resgs/vecmath.hpp"

namespace resgs {

// Row-major interleaved RGB image, double precision, values >= 0 (may exceed 1).
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // height * width * 3

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0) {}
    Image(int h, int w, const Vec3& fill) : height(h), width(w), data(static_cast<size_t>(h) * w * 3) {
        for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) {
            data[3 * p] = fill.x;
            data[3 * p + 1] = fill.y;
            data[3 * p + 2] = fill.z;
        }
    }

    size_t pixels() const { return static_cast<size_t>(height) * width; }

    double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
    double at(int r, int c, int ch) const { return data[(static_cast<size_t>(r) * width + c) * 3 + ch]; }

    Vec3 pixel(int r, int c) const {
        size_t o = (static_cast<size_t>(r) * width + c) * 3;
        return {data[o], data[o + 1], data[o + 2]};
    }
    void set_pixel(int r, int c, const Vec3& v) {
        size_t o = (static_cast<size_t>(r) * width + c) * 3;
        data[o] = v.x;
        data[o + 1] = v.y;
        data[o + 2] = v.z;
    }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + ")");
}

}  // namespace resgs
