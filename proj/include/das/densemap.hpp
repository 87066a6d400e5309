#pragma once

#include <cstddef>
#include <vector>

namespace das {

// Dense H x W grid with C channels, row-major doubles:
// values[(y*W + x)*C + c]. Used for prediction maps, target maps and
// as the payload behind autodiff leaves.
struct DenseMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    DenseMap() = default;
    DenseMap(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          values(std::size_t(h) * std::size_t(w) * std::size_t(c), fill) {}

    std::size_t size() const { return values.size(); }

    std::size_t index(int x, int y, int c = 0) const {
        return (std::size_t(y) * width + x) * channels + c;
    }

    double& at(int x, int y, int c = 0) { return values[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return values[index(x, y, c)]; }

    bool same_shape(const DenseMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// True when every stored value is finite.
bool all_finite(const DenseMap& m);

// Corner/weight geometry for border-clamped bilinear sampling. Coordinates
// are clamped to [0, W-1] x [0, H-1]; clamped_x/clamped_y report whether the
// clamp engaged (the sample is then constant along that axis).
struct BilinearGeom {
    int x0, x1, y0, y1;
    double fx, fy;
    bool clamped_x, clamped_y;
};

BilinearGeom bilinear_geom(double px, double py, int w, int h);

// Bilinear sample of channels [c0, c1) at continuous (x, y). The tape op and
// every plain-path consumer share this exact arithmetic.
void bilinear_sample(const double* values, int h, int w, int c, double px, double py,
                     int c0, int c1, double* out);

inline void bilinear_sample(const DenseMap& m, double px, double py, int c0, int c1,
                            double* out) {
    bilinear_sample(m.values.data(), m.height, m.width, m.channels, px, py, c0, c1, out);
}

}  // namespace das
