#pragma once

// Single-level orthonormal 2-D Haar transform. For each 2x2 block
//
//   [a b]
//   [c d]
//
//   cA = (a + b + c + d) / 2      cH = ((a + b) - (c + d)) / 2
//   cV = ((a + c) - (b + d)) / 2  cD = ((a - b) - (c - d)) / 2
//
// Odd-sized inputs get their last row/column replicated before analysis; the
// synthesis crops back to the recorded source size.

#include "tracemark/error.hpp"
#include "tracemark/image.hpp"

namespace tracemark {

struct SubbandSet {
    Matrix cA, cH, cV, cD;
    /// Size of the matrix that was analysed (before any edge padding).
    std::size_t source_rows = 0;
    std::size_t source_cols = 0;
};

inline SubbandSet dwt2_haar(const Matrix& x) {
    if (x.empty()) throw Error(ErrorKind::EmptyMatrix, "dwt2_haar on empty matrix");
    const std::size_t rows = x.rows(), cols = x.cols();
    const std::size_t hr = (rows + 1) / 2, hc = (cols + 1) / 2;

    SubbandSet s{Matrix(hr, hc), Matrix(hr, hc), Matrix(hr, hc), Matrix(hr, hc), rows, cols};
    for (std::size_t i = 0; i < hr; ++i) {
        const std::size_t r0 = 2 * i, r1 = std::min(2 * i + 1, rows - 1);
        for (std::size_t j = 0; j < hc; ++j) {
            const std::size_t c0 = 2 * j, c1 = std::min(2 * j + 1, cols - 1);
            const double a = x(r0, c0), b = x(r0, c1), c = x(r1, c0), d = x(r1, c1);
            s.cA(i, j) = (a + b + c + d) * 0.5;
            s.cH(i, j) = ((a + b) - (c + d)) * 0.5;
            s.cV(i, j) = ((a + c) - (b + d)) * 0.5;
            s.cD(i, j) = ((a - b) - (c - d)) * 0.5;
        }
    }
    return s;
}

inline Matrix idwt2_haar(const SubbandSet& s) {
    const std::size_t hr = s.cA.rows(), hc = s.cA.cols();
    for (const Matrix* m : {&s.cH, &s.cV, &s.cD}) {
        if (m->rows() != hr || m->cols() != hc)
            throw Error(ErrorKind::DimensionMismatch, "subbands differ in size");
    }
    std::size_t rows = s.source_rows, cols = s.source_cols;
    if (rows == 0 && cols == 0) {
        rows = 2 * hr;
        cols = 2 * hc;
    }
    if ((rows + 1) / 2 != hr || (cols + 1) / 2 != hc)
        throw Error(ErrorKind::DimensionMismatch, "source size inconsistent with subbands");

    Matrix x(rows, cols);
    for (std::size_t i = 0; i < hr; ++i) {
        for (std::size_t j = 0; j < hc; ++j) {
            const double A = s.cA(i, j), H = s.cH(i, j), V = s.cV(i, j), D = s.cD(i, j);
            const std::size_t r0 = 2 * i, r1 = 2 * i + 1, c0 = 2 * j, c1 = 2 * j + 1;
            x(r0, c0) = (A + H + V + D) * 0.5;
            if (c1 < cols) x(r0, c1) = (A + H - V - D) * 0.5;
            if (r1 < rows) {
                x(r1, c0) = (A - H + V - D) * 0.5;
                if (c1 < cols) x(r1, c1) = (A - H - V + D) * 0.5;
            }
        }
    }
    return x;
}

} // namespace tracemark
