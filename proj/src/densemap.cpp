#include "das/densemap.hpp"

#include <algorithm>
#include <cmath>

namespace das {

bool all_finite(const DenseMap& m) {
    for (double v : m.values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

BilinearGeom bilinear_geom(double px, double py, int w, int h) {
    BilinearGeom g;
    double cx = std::min(double(w - 1), std::max(0.0, px));
    double cy = std::min(double(h - 1), std::max(0.0, py));
    g.clamped_x = cx != px;
    g.clamped_y = cy != py;
    g.x0 = int(std::floor(cx));
    g.y0 = int(std::floor(cy));
    if (g.x0 >= w - 1) g.x0 = w - 1;
    if (g.y0 >= h - 1) g.y0 = h - 1;
    g.x1 = std::min(g.x0 + 1, w - 1);
    g.y1 = std::min(g.y0 + 1, h - 1);
    g.fx = cx - g.x0;
    g.fy = cy - g.y0;
    return g;
}

void bilinear_sample(const double* values, int h, int w, int c, double px, double py,
                     int c0, int c1, double* out) {
    BilinearGeom g = bilinear_geom(px, py, w, h);
    double w00 = (1 - g.fx) * (1 - g.fy), w10 = g.fx * (1 - g.fy);
    double w01 = (1 - g.fx) * g.fy, w11 = g.fx * g.fy;
    for (int ch = c0; ch < c1; ++ch) {
        double v00 = values[(std::size_t(g.y0) * w + g.x0) * c + ch];
        double v10 = values[(std::size_t(g.y0) * w + g.x1) * c + ch];
        double v01 = values[(std::size_t(g.y1) * w + g.x0) * c + ch];
        double v11 = values[(std::size_t(g.y1) * w + g.x1) * c + ch];
        out[ch - c0] = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11;
    }
}

}  // namespace das
