#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "tilab/diffusion.hpp"
#include "tilab/errors.hpp"
#include "tilab/linalg.hpp"
#include "tilab/rng.hpp"

namespace tilab {

// Synthetic corpus geometry: a 16x16 canvas split into an attribute band
// (rows 0..3, one 4x4 block per attribute) and a shape region (rows 4..15).
// Blocks and shapes never overlap, so attribute overlays compose with any
// concept unambiguously.

inline constexpr int kNumConcepts = 10;
inline constexpr int kNumAttributes = 4;
inline constexpr double kBg = -0.8;
inline constexpr double kFg = 0.8;
inline constexpr int kAttrBandRows = 4;

inline const std::array<std::string, kNumConcepts>& concept_words() {
    static const std::array<std::string, kNumConcepts> w = {
        "tower", "teapot", "clock", "statue", "tree",
        "ball",  "house",  "boat",  "cup",    "lamp"};
    return w;
}

inline const std::array<std::string, kNumAttributes>& attribute_words() {
    static const std::array<std::string, kNumAttributes> w = {"fire", "burning", "striped",
                                                              "dotted"};
    return w;
}

inline void check_concept(int c) {
    if (c < 0 || c >= kNumConcepts) throw UnknownConcept("concept id " + std::to_string(c));
}

inline void check_attribute(int a) {
    if (a < 0 || a >= kNumAttributes) throw UnknownAttribute("attribute id " + std::to_string(a));
}

inline int concept_id(const std::string& word) {
    const auto& w = concept_words();
    for (int i = 0; i < kNumConcepts; ++i)
        if (w[static_cast<size_t>(i)] == word) return i;
    throw UnknownConcept(word);
}

inline int attribute_id(const std::string& word) {
    const auto& w = attribute_words();
    for (int i = 0; i < kNumAttributes; ++i)
        if (w[static_cast<size_t>(i)] == word) return i;
    throw UnknownAttribute(word);
}

inline bool shape_pixel(int concept_id, int r, int c) {
    if (r < kAttrBandRows) return false;
    switch (concept_id) {
        case 0: {  // tower: column with cap and base
            if (c >= 6 && c <= 9 && r >= 5 && r <= 13) return true;
            if (r == 4 && c >= 5 && c <= 10) return true;
            if (r >= 14 && c >= 4 && c <= 11) return true;
            return false;
        }
        case 1: {  // teapot: squat ellipse with a spout
            double dr = (r - 10.0) / 3.2, dc = (c - 6.5) / 5.2;
            if (dr * dr + dc * dc <= 1.0) return true;
            if (r >= 8 && r <= 9 && c >= 12 && c <= 14) return true;
            return false;
        }
        case 2: {  // clock: ring with a horizontal hand
            double d2 = (r - 9.5) * (r - 9.5) + (c - 7.5) * (c - 7.5);
            if (d2 >= 12.0 && d2 <= 30.0) return true;
            if (r >= 9 && r <= 10 && c >= 7 && c <= 10) return true;
            return false;
        }
        case 3: {  // statue: head, narrow body, wide pedestal
            double d2 = (r - 5.5) * (r - 5.5) + (c - 5.5) * (c - 5.5);
            if (d2 <= 2.5) return true;
            if (r >= 8 && r <= 12 && c >= 4 && c <= 7) return true;
            if (r >= 13 && c >= 2 && c <= 9) return true;
            return false;
        }
        case 4: {  // tree: triangle crown and trunk
            if (r >= 4 && r <= 10 && std::abs(c - 8) <= r - 4) return true;
            if (r >= 11 && c >= 7 && c <= 9) return true;
            return false;
        }
        case 5: {  // ball: filled disk
            double d2 = (r - 10.0) * (r - 10.0) + (c - 8.0) * (c - 8.0);
            return d2 <= 17.0;
        }
        case 6: {  // house: roof, walls, door gap
            if (r >= 4 && r <= 7 && std::abs(c - 8) <= (r - 4) + 1) return true;
            if (r >= 8 && r <= 14 && c >= 3 && c <= 13) {
                if (r >= 11 && c >= 7 && c <= 9) return false;  // door
                return true;
            }
            return false;
        }
        case 7: {  // boat: trapezoid hull, mast, sail
            if (r >= 12 && r <= 15 && c >= 2 + (15 - r) && c <= 13 - (15 - r)) return true;
            if (c == 8 && r >= 4 && r <= 11) return true;
            if (r >= 5 && r <= 9 && c > 8 && c <= 8 + (10 - r)) return true;
            return false;
        }
        case 8: {  // cup: two walls, bottom, handle
            if (r >= 6 && r <= 13 && ((c >= 3 && c <= 4) || (c >= 10 && c <= 11))) return true;
            if (r >= 13 && r <= 14 && c >= 3 && c <= 11) return true;
            if (r >= 8 && r <= 10 && c >= 13 && c <= 14) return true;
            return false;
        }
        case 9: {  // lamp: shade, pole, base
            if (r >= 4 && r <= 7 && std::abs(2 * c - 15) <= 2 * (r - 3)) return true;
            if (r >= 8 && r <= 12 && c >= 7 && c <= 8) return true;
            if (r >= 13 && r <= 14 && c >= 4 && c <= 11) return true;
            return false;
        }
        default:
            return false;
    }
}

// Each attribute owns the 4x4 block at rows 0..3, cols 4a..4a+3.
inline bool attribute_pixel(int attr, int rl, int cl) {
    switch (attr) {
        case 0: return rl >= cl;             // fire: lower triangle
        case 1: return rl % 2 == 0;          // burning: horizontal stripes
        case 2: return cl % 2 == 0;          // striped: vertical stripes
        case 3: return (rl + cl) % 2 == 0;   // dotted: checkerboard
        default: return false;
    }
}

struct Region {
    int r0, c0, rows, cols;
};

inline Region attribute_region(int attr) {
    check_attribute(attr);
    return Region{0, 4 * attr, 4, 4};
}

inline Vec concept_canvas(int concept_id) {
    check_concept(concept_id);
    Vec img(kImageDim, kBg);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            if (shape_pixel(concept_id, r, c)) img[static_cast<size_t>(r * 16 + c)] = kFg;
    return img;
}

inline void apply_attribute(Vec& img, int attr) {
    Region reg = attribute_region(attr);
    for (int rl = 0; rl < reg.rows; ++rl)
        for (int cl = 0; cl < reg.cols; ++cl) {
            size_t idx = static_cast<size_t>((reg.r0 + rl) * 16 + reg.c0 + cl);
            img[idx] = attribute_pixel(attr, rl, cl) ? kFg : kBg;
        }
}

inline Vec render_clean(int concept_id, const std::vector<int>& attrs) {
    Vec img = concept_canvas(concept_id);
    for (int a : attrs) apply_attribute(img, a);
    return img;
}

inline Vec render(int concept_id, const std::vector<int>& attrs, Rng& rng, double jitter) {
    if (jitter < 0.0) throw BadRange("render: jitter < 0");
    Vec img = render_clean(concept_id, attrs);
    if (jitter > 0.0)
        for (double& p : img) p = std::clamp(p + jitter * rng.normal(), -1.0, 1.0);
    return img;
}

// Frozen random-projection-plus-tanh image features. The projection seed is a
// release constant; regenerating it requires re-running the corpus
// calibration checks.
inline constexpr size_t kFeatureDim = 32;
inline constexpr uint64_t kFeatureSeed = 0x7ab0c1d2e3f40517ull;

inline const Mat& feature_projection() {
    static const Mat w = [] {
        Mat m(kFeatureDim, kImageDim);
        Rng rng(kFeatureSeed);
        for (double& v : m.data) v = rng.normal() / 16.0;
        return m;
    }();
    return w;
}

inline Vec feature_map(const Vec& x) {
    if (x.size() != kImageDim) throw DimMismatch("feature_map: bad input dim");
    const Mat& w = feature_projection();
    Vec f(kFeatureDim);
    for (size_t i = 0; i < kFeatureDim; ++i) {
        double s = 0.0;
        const double* row = &w.data[i * kImageDim];
        for (size_t j = 0; j < kImageDim; ++j) s += row[j] * x[j];
        f[i] = std::tanh(s);
    }
    return f;
}

// Pearson correlation between the image's block and an attribute's pattern.
// Either side having zero variance yields 0.
inline double attribute_correlation(const Vec& img, int attr) {
    if (img.size() != kImageDim) throw DimMismatch("attribute_correlation: bad input dim");
    Region reg = attribute_region(attr);
    const int n = reg.rows * reg.cols;
    double mi = 0.0, mp = 0.0;
    std::array<double, 16> iv{}, pv{};
    int k = 0;
    for (int rl = 0; rl < reg.rows; ++rl)
        for (int cl = 0; cl < reg.cols; ++cl, ++k) {
            iv[static_cast<size_t>(k)] = img[static_cast<size_t>((reg.r0 + rl) * 16 + reg.c0 + cl)];
            pv[static_cast<size_t>(k)] = attribute_pixel(attr, rl, cl) ? kFg : kBg;
            mi += iv[static_cast<size_t>(k)];
            mp += pv[static_cast<size_t>(k)];
        }
    mi /= n;
    mp /= n;
    double num = 0.0, di = 0.0, dp = 0.0;
    for (int j = 0; j < n; ++j) {
        double a = iv[static_cast<size_t>(j)] - mi;
        double b = pv[static_cast<size_t>(j)] - mp;
        num += a * b;
        di += a * a;
        dp += b * b;
    }
    if (di < 1e-18 || dp < 1e-18) return 0.0;
    return num / std::sqrt(di * dp);
}

inline constexpr double kAttributeThreshold = 0.5;
inline constexpr double kConceptRejectThreshold = 0.5;

struct OracleVerdict {
    int concept_id = -1;             // -1 means "other"
    std::vector<int> attributes;     // ascending ids
    std::vector<double> scores;      // cosine to each concept centroid
};

// Per-concept centroids: mean feature over the clean template and each
// single-attribute variant, so attribute overlays do not bias concept choice.
inline const std::vector<Vec>& concept_centroids() {
    static const std::vector<Vec> cents = [] {
        std::vector<Vec> out;
        out.reserve(kNumConcepts);
        for (int c = 0; c < kNumConcepts; ++c) {
            Vec acc(kFeatureDim, 0.0);
            int n = 0;
            {
                Vec f = feature_map(render_clean(c, {}));
                axpy(1.0, f, acc);
                ++n;
            }
            for (int a = 0; a < kNumAttributes; ++a) {
                Vec f = feature_map(render_clean(c, {a}));
                axpy(1.0, f, acc);
                ++n;
            }
            out.push_back(scale(1.0 / n, acc));
        }
        return out;
    }();
    return cents;
}

inline OracleVerdict oracle_classify(const Vec& x) {
    if (x.size() != kImageDim) throw DimMismatch("oracle_classify: bad input dim");
    Vec f = feature_map(x);
    const std::vector<Vec>& cents = concept_centroids();
    OracleVerdict v;
    v.scores.resize(kNumConcepts);
    double best = -2.0;
    for (int c = 0; c < kNumConcepts; ++c) {
        double s = cosine(f, cents[static_cast<size_t>(c)]);
        v.scores[static_cast<size_t>(c)] = s;
        if (s > best) {  // strict: ties keep the lowest class id
            best = s;
            v.concept_id = c;
        }
    }
    if (best < kConceptRejectThreshold) v.concept_id = -1;
    for (int a = 0; a < kNumAttributes; ++a)
        if (attribute_correlation(x, a) > kAttributeThreshold) v.attributes.push_back(a);
    return v;
}

inline bool verdict_has_attribute(const OracleVerdict& v, int attr) {
    return std::find(v.attributes.begin(), v.attributes.end(), attr) != v.attributes.end();
}

}  // namespace tilab
