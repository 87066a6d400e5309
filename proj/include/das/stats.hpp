#pragma once

#include <cmath>
#include <span>

namespace das {

struct Moments {
    double mean = 0.0;
    double var = 0.0;       // population variance
    double skewness = 0.0;
    double kurtosis = 0.0;  // excess kurtosis
};

inline Moments moments(std::span<const double> xs) {
    Moments m;
    std::size_t n = xs.size();
    if (n == 0) return m;
    for (double x : xs) m.mean += x;
    m.mean /= double(n);
    double m2 = 0, m3 = 0, m4 = 0;
    for (double x : xs) {
        double d = x - m.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= double(n);
    m3 /= double(n);
    m4 /= double(n);
    m.var = m2;
    if (m2 > 0) {
        m.skewness = m3 / std::pow(m2, 1.5);
        m.kurtosis = m4 / (m2 * m2) - 3.0;
    }
    return m;
}

}  // namespace das
