#pragma once

#include <cstddef>
#include <vector>

namespace tscan {

// Dense row-major matrix of doubles. Row-major keeps the inner loops of the
// OpenMP kernels contiguous.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    bool operator==(const Mat& other) const = default;
};

// Squared Euclidean distance, coordinates summed in ascending order. All
// distance comparisons in the project go through this function so that
// results are reproducible bit-for-bit.
inline double dist2(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
        double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

inline double dot(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += a[j] * b[j];
    return s;
}

} // namespace tscan
