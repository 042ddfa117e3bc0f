#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tilab/errors.hpp"

namespace tilab {

using Vec = std::vector<double>;

struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    Vec data;  // row-major

    Mat() = default;
    Mat(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
    double operator()(size_t i, size_t j) const { return data[i * cols + j]; }

    static Mat identity(size_t n) {
        Mat m(n, n);
        for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline void check_same_size(const Vec& a, const Vec& b, const char* where) {
    if (a.size() != b.size())
        throw DimMismatch(std::string(where) + ": " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
}

inline double dot(const Vec& a, const Vec& b) {
    check_same_size(a, b, "dot");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double sq_l2(const Vec& a, const Vec& b) {
    check_same_size(a, b, "sq_l2");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    check_same_size(x, y, "axpy");
    for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec add(const Vec& a, const Vec& b) {
    check_same_size(a, b, "add");
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vec sub(const Vec& a, const Vec& b) {
    check_same_size(a, b, "sub");
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline Vec scale(double alpha, const Vec& a) {
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = alpha * a[i];
    return r;
}

// Cosine similarity, clamped to [-1, 1]. Vectors with norm below 1e-12 are
// rejected rather than silently treated as zero-similarity.
inline double cosine(const Vec& a, const Vec& b) {
    check_same_size(a, b, "cosine");
    double na = norm2(a);
    double nb = norm2(b);
    if (na < 1e-12 || nb < 1e-12) throw ZeroNorm("cosine: zero-norm input");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw DimMismatch("matmul: inner dims differ");
    Mat c(a.rows, b.cols);
    for (size_t i = 0; i < a.rows; ++i)
        for (size_t k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (size_t i = 0; i < a.rows; ++i)
        for (size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline double trace(const Mat& a) {
    if (a.rows != a.cols) throw DimMismatch("trace: matrix not square");
    double s = 0.0;
    for (size_t i = 0; i < a.rows; ++i) s += a(i, i);
    return s;
}

inline double max_asym(const Mat& a) {
    double m = 0.0;
    for (size_t i = 0; i < a.rows; ++i)
        for (size_t j = i + 1; j < a.cols; ++j)
            m = std::max(m, std::abs(a(i, j) - a(j, i)));
    return m;
}

struct EigenSym {
    Vec values;   // ascending
    Mat vectors;  // column j is the eigenvector for values[j]
};

// Cyclic Jacobi eigendecomposition for symmetric matrices. Iterates sweeps of
// plane rotations until the off-diagonal mass is negligible relative to the
// matrix scale.
inline EigenSym eigen_sym(const Mat& input, double sym_tol = 1e-8) {
    if (input.rows != input.cols) throw DimMismatch("eigen_sym: matrix not square");
    if (max_asym(input) > sym_tol) throw NotSymmetric("eigen_sym: asymmetry exceeds tolerance");
    const size_t n = input.rows;
    Mat a = input;
    // Symmetrize so rotations stay exact under roundoff.
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }
    Mat v = Mat::identity(n);

    double scale = 0.0;
    for (double x : a.data) scale = std::max(scale, std::abs(x));
    if (scale == 0.0) scale = 1.0;
    const double stop = 1e-14 * scale;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(a(i, j)));
        if (off <= stop) break;

        for (size_t p = 0; p + 1 < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (std::abs(apq) <= stop * 1e-3) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    EigenSym out;
    out.values.resize(n);
    for (size_t i = 0; i < n; ++i) out.values[i] = a(i, i);

    // Sort ascending, permuting eigenvector columns along.
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return out.values[x] < out.values[y]; });
    EigenSym sorted;
    sorted.values.resize(n);
    sorted.vectors = Mat(n, n);
    for (size_t j = 0; j < n; ++j) {
        sorted.values[j] = out.values[order[j]];
        for (size_t i = 0; i < n; ++i) sorted.vectors(i, j) = v(i, order[j]);
    }
    return sorted;
}

// Principal square root of a symmetric positive semidefinite matrix.
// Eigenvalues in [-psd_tol, 0) are treated as roundoff and clamped to zero;
// anything more negative is a hard error. Eigenvalues that are positive but
// tiny relative to the largest one are also zeroed: sqrt() would otherwise
// blow their absolute error up by orders of magnitude (sqrt(1e-15) = 3e-8),
// which visibly biases trace-of-sqrt computations on rank-deficient inputs.
inline Mat sym_psd_sqrt(const Mat& a, double psd_tol = 1e-6, double sym_tol = 1e-8) {
    EigenSym e = eigen_sym(a, sym_tol);
    const size_t n = a.rows;
    double lam_max = 0.0;
    for (double lam : e.values) {
        if (lam < -psd_tol)
            throw NotPSD("sym_psd_sqrt: eigenvalue " + std::to_string(lam) +
                         " below -" + std::to_string(psd_tol));
        lam_max = std::max(lam_max, lam);
    }
    const double floor = 1e-13 * lam_max;
    Mat root(n, n);
    for (size_t j = 0; j < n; ++j) {
        double lam = e.values[j] < floor ? 0.0 : e.values[j];
        double s = std::sqrt(lam);
        if (s == 0.0) continue;
        for (size_t i = 0; i < n; ++i)
            for (size_t k = 0; k < n; ++k)
                root(i, k) += s * e.vectors(i, j) * e.vectors(k, j);
    }
    // Make the result exactly symmetric.
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double vsym = 0.5 * (root(i, j) + root(j, i));
            root(i, j) = vsym;
            root(j, i) = vsym;
        }
    return root;
}

}  // namespace tilab
