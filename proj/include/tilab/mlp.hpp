#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tilab/errors.hpp"
#include "tilab/linalg.hpp"
#include "tilab/rng.hpp"

namespace tilab {

// Dense feedforward net: tanh on every hidden layer, linear output. Weights
// are row-major (out x in). The same shapes double as gradient and momentum
// buffers.

struct Layer {
    Mat w;
    Vec b;
};

using LayerGrads = std::vector<Layer>;

struct MlpCache {
    std::vector<Vec> act;  // act[0] is the input, act[i] the output of layer i-1
};

struct Mlp {
    std::vector<Layer> layers;

    static Mlp make(const std::vector<size_t>& dims, Rng& rng) {
        if (dims.size() < 2) throw ConfigError("Mlp::make: need at least input and output dims");
        Mlp m;
        m.layers.reserve(dims.size() - 1);
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            Layer lay;
            lay.w = Mat(dims[l + 1], dims[l]);
            lay.b = Vec(dims[l + 1], 0.0);
            double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
            for (double& v : lay.w.data) v = rng.uniform(-bound, bound);
            m.layers.push_back(std::move(lay));
        }
        return m;
    }

    size_t in_dim() const { return layers.front().w.cols; }
    size_t out_dim() const { return layers.back().w.rows; }

    size_t param_count() const {
        size_t n = 0;
        for (const Layer& l : layers) n += l.w.data.size() + l.b.size();
        return n;
    }

    LayerGrads zero_grads() const {
        LayerGrads g;
        g.reserve(layers.size());
        for (const Layer& l : layers) {
            Layer z;
            z.w = Mat(l.w.rows, l.w.cols);
            z.b = Vec(l.b.size(), 0.0);
            g.push_back(std::move(z));
        }
        return g;
    }

    Vec forward(const Vec& x, MlpCache* cache = nullptr) const {
        if (x.size() != in_dim()) throw DimMismatch("Mlp::forward: bad input size");
        if (cache) {
            cache->act.clear();
            cache->act.push_back(x);
        }
        Vec cur = x;
        for (size_t l = 0; l < layers.size(); ++l) {
            const Layer& lay = layers[l];
            Vec next(lay.w.rows);
            for (size_t i = 0; i < lay.w.rows; ++i) {
                double s = lay.b[i];
                const double* row = &lay.w.data[i * lay.w.cols];
                for (size_t j = 0; j < lay.w.cols; ++j) s += row[j] * cur[j];
                next[i] = s;
            }
            if (l + 1 < layers.size())
                for (double& v : next) v = std::tanh(v);
            cur = std::move(next);
            if (cache) cache->act.push_back(cur);
        }
        return cur;
    }

    // Backpropagates dL/dy through the cached forward pass. Parameter
    // gradients are accumulated into `grads`; the return value is dL/dx.
    Vec backward(const Vec& dy, const MlpCache& cache, LayerGrads& grads) const {
        if (cache.act.size() != layers.size() + 1)
            throw DimMismatch("Mlp::backward: cache does not match net");
        Vec delta = dy;
        for (size_t l = layers.size(); l-- > 0;) {
            const Layer& lay = layers[l];
            const Vec& in = cache.act[l];
            if (l + 1 < layers.size()) {
                const Vec& out = cache.act[l + 1];
                for (size_t i = 0; i < delta.size(); ++i)
                    delta[i] *= 1.0 - out[i] * out[i];
            }
            Layer& g = grads[l];
            for (size_t i = 0; i < lay.w.rows; ++i) {
                g.b[i] += delta[i];
                double* grow = &g.w.data[i * lay.w.cols];
                double di = delta[i];
                for (size_t j = 0; j < lay.w.cols; ++j) grow[j] += di * in[j];
            }
            Vec prev(lay.w.cols, 0.0);
            for (size_t i = 0; i < lay.w.rows; ++i) {
                const double* row = &lay.w.data[i * lay.w.cols];
                double di = delta[i];
                for (size_t j = 0; j < lay.w.cols; ++j) prev[j] += di * row[j];
            }
            delta = std::move(prev);
        }
        return delta;
    }
};

inline void scale_grads(double s, LayerGrads& g) {
    for (Layer& l : g) {
        for (double& v : l.w.data) v *= s;
        for (double& v : l.b) v *= s;
    }
}

inline void add_grads(const LayerGrads& src, LayerGrads& dst) {
    for (size_t l = 0; l < dst.size(); ++l) {
        for (size_t i = 0; i < dst[l].w.data.size(); ++i) dst[l].w.data[i] += src[l].w.data[i];
        for (size_t i = 0; i < dst[l].b.size(); ++i) dst[l].b[i] += src[l].b[i];
    }
}

// Classic SGD with heavy-ball momentum: v <- mu*v + g; p <- p - lr*v.
struct SgdMomentum {
    double lr;
    double momentum;
    LayerGrads vel;

    SgdMomentum(const Mlp& m, double lr_, double momentum_)
        : lr(lr_), momentum(momentum_), vel(m.zero_grads()) {}

    void step(Mlp& m, const LayerGrads& g) {
        for (size_t l = 0; l < m.layers.size(); ++l) {
            for (size_t i = 0; i < vel[l].w.data.size(); ++i) {
                vel[l].w.data[i] = momentum * vel[l].w.data[i] + g[l].w.data[i];
                m.layers[l].w.data[i] -= lr * vel[l].w.data[i];
            }
            for (size_t i = 0; i < vel[l].b.size(); ++i) {
                vel[l].b[i] = momentum * vel[l].b[i] + g[l].b[i];
                m.layers[l].b[i] -= lr * vel[l].b[i];
            }
        }
    }
};

}  // namespace tilab
