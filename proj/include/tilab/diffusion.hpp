#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tilab/errors.hpp"
#include "tilab/linalg.hpp"
#include "tilab/mlp.hpp"
#include "tilab/rng.hpp"

namespace tilab {

// Flattened 16x16 grayscale images in [-1, 1].
inline constexpr size_t kImageSide = 16;
inline constexpr size_t kImageDim = kImageSide * kImageSide;
inline constexpr int kDefaultSteps = 50;
inline constexpr size_t kTimeFeatDim = 16;
inline constexpr size_t kCondDim = 32;
inline constexpr size_t kDenoiserHidden = 128;

struct NoiseSchedule {
    int T = 0;
    Vec beta;       // beta[t-1] for t = 1..T
    Vec alpha;      // 1 - beta_t
    Vec alpha_bar;  // prod_{s<=t} alpha_s
    Vec sigma;      // sqrt(beta_t)

    double beta_at(int t) const { return beta[check(t)]; }
    double alpha_at(int t) const { return alpha[check(t)]; }
    double alpha_bar_at(int t) const { return alpha_bar[check(t)]; }
    double sigma_at(int t) const { return sigma[check(t)]; }

    size_t check(int t) const {
        if (t < 1 || t > T) throw BadRange("NoiseSchedule: t out of [1, T]");
        return static_cast<size_t>(t - 1);
    }
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw BadRange("make_schedule: T < 2");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end))
        throw BadRange("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma.resize(T);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double b = beta_start + (beta_end - beta_start) * (t - 1) / double(T - 1);
        s.beta[t - 1] = b;
        s.alpha[t - 1] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[t - 1] = prod;
        s.sigma[t - 1] = std::sqrt(b);
    }
    return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Vec forward_noise(const NoiseSchedule& s, const Vec& x0, int t, const Vec& eps) {
    if (x0.size() != eps.size()) throw DimMismatch("forward_noise: x0 vs eps");
    double ab = s.alpha_bar_at(t);
    double c0 = std::sqrt(ab);
    double c1 = std::sqrt(1.0 - ab);
    Vec xt(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) xt[i] = c0 * x0[i] + c1 * eps[i];
    return xt;
}

// Sinusoidal step features: pairs (sin, cos) over a geometric frequency ladder.
inline Vec time_features(int t) {
    Vec f(kTimeFeatDim);
    for (size_t i = 0; i < kTimeFeatDim / 2; ++i) {
        double w = std::pow(10000.0, -double(i) / double(kTimeFeatDim / 2));
        f[2 * i] = std::sin(t * w);
        f[2 * i + 1] = std::cos(t * w);
    }
    return f;
}

// A sample mid-chain: the image estimate plus its step index. t = 0 means the
// chain has finished.
struct LatentState {
    Vec x;
    int t = 0;
};

// Noise predictor: concat(x_t, time features, condition) -> MLP -> eps_hat.
// Training happens exactly once; `frozen` then locks the weights, and the
// sampler/inversion paths refuse unfrozen models.
struct Denoiser {
    NoiseSchedule sched;
    Mlp net;
    bool frozen = false;

    static Denoiser make(const NoiseSchedule& sched, Rng& rng) {
        Denoiser d;
        d.sched = sched;
        d.net = Mlp::make({kImageDim + kTimeFeatDim + kCondDim, kDenoiserHidden,
                           kDenoiserHidden, kDenoiserHidden, kImageDim},
                          rng);
        return d;
    }

    void require_frozen(const char* who) const {
        if (!frozen) throw FrozenRequired(std::string(who) + ": model must be frozen");
    }

    Vec assemble_input(const Vec& x_t, int t, const Vec& cond) const {
        if (x_t.size() != kImageDim) throw DimMismatch("Denoiser: x_t size");
        if (cond.size() != kCondDim) throw DimMismatch("Denoiser: cond size");
        sched.check(t);
        Vec in;
        in.reserve(kImageDim + kTimeFeatDim + kCondDim);
        in.insert(in.end(), x_t.begin(), x_t.end());
        Vec tf = time_features(t);
        in.insert(in.end(), tf.begin(), tf.end());
        in.insert(in.end(), cond.begin(), cond.end());
        return in;
    }

    Vec predict(const Vec& x_t, int t, const Vec& cond, MlpCache* cache = nullptr) const {
        return net.forward(assemble_input(x_t, t, cond), cache);
    }
};

// One reverse update with an explicit noise vector:
//   x_{t-1} = (1/sqrt(alpha_t)) * (x_t - ((1-alpha_t)/sqrt(1-abar_t)) eps_hat + sigma_t z)
// At t = 1 the caller must pass z = 0 (the last step adds no noise).
inline Vec reverse_step_with(const Denoiser& d, const Vec& x_t, int t, const Vec& cond,
                             const Vec& z) {
    d.require_frozen("reverse_step");
    if (z.size() != x_t.size()) throw DimMismatch("reverse_step: z vs x_t");
    const NoiseSchedule& s = d.sched;
    double a = s.alpha_at(t);
    double ab = s.alpha_bar_at(t);
    double inv_sqrt_a = 1.0 / std::sqrt(a);
    double eps_coef = (1.0 - a) / std::sqrt(1.0 - ab);
    double sig = s.sigma_at(t);
    Vec eps_hat = d.predict(x_t, t, cond);
    Vec out(x_t.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_a * (x_t[i] - eps_coef * eps_hat[i] + sig * z[i]);
    return out;
}

// Reverse update drawing z from the given stream (zero at t = 1).
inline LatentState reverse_step(const Denoiser& d, const LatentState& state, const Vec& cond,
                                Rng& rng) {
    Vec z(state.x.size(), 0.0);
    if (state.t > 1) rng.fill_normal(z, 0.0, 1.0);
    return LatentState{reverse_step_with(d, state.x, state.t, cond, z), state.t - 1};
}

// Full reverse chain from pure noise. The rng is a per-image stream; the
// initial noise and each step's injected noise live in fixed substreams so
// one image's chain never depends on draws made elsewhere.
inline Vec sample_one(const Denoiser& d, const Vec& cond, const Rng& stream) {
    d.require_frozen("sample");
    Rng init = stream.substream("xT");
    Vec x = init.normal_vec(kImageDim);
    Rng zs = stream.substream("z");
    for (int t = d.sched.T; t >= 1; --t) {
        Vec z(kImageDim, 0.0);
        if (t > 1) {
            Rng zt = zs.substream(static_cast<uint64_t>(t));
            z = zt.normal_vec(kImageDim);
        }
        x = reverse_step_with(d, x, t, cond, z);
    }
    return x;
}

// n independent samples under per-image substreams: the first images of an
// n = 5 batch equal an n = 3 batch drawn from the same stream.
inline std::vector<Vec> sample(const Denoiser& d, const Vec& cond, const Rng& stream, size_t n) {
    d.require_frozen("sample");
    std::vector<Vec> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = sample_one(d, cond, stream.substream(i));
    return out;
}

struct DenoiseBack {
    double loss = 0.0;
    Vec d_cond;
};

// Squared-L2 eps-prediction loss for one noised sample, with backprop.
// Network parameter gradients accumulate into *net_grads when given; d_cond
// is the gradient with respect to the conditioning vector.
inline DenoiseBack denoise_loss_backward(const Denoiser& d, const Vec& x0, int t,
                                         const Vec& eps, const Vec& cond,
                                         LayerGrads* net_grads) {
    Vec x_t = forward_noise(d.sched, x0, t, eps);
    MlpCache cache;
    Vec eps_hat = d.predict(x_t, t, cond, &cache);
    DenoiseBack out;
    Vec dy(eps_hat.size());
    for (size_t i = 0; i < eps_hat.size(); ++i) {
        double diff = eps_hat[i] - eps[i];
        out.loss += diff * diff;
        dy[i] = 2.0 * diff;
    }
    LayerGrads scratch;
    LayerGrads* g = net_grads ? net_grads : &scratch;
    if (!net_grads) scratch = d.net.zero_grads();
    Vec d_in = d.net.backward(dy, cache, *g);
    out.d_cond.assign(d_in.begin() + kImageDim + kTimeFeatDim, d_in.end());
    return out;
}

inline double denoise_loss(const Denoiser& d, const Vec& x0, int t, const Vec& eps,
                           const Vec& cond) {
    Vec x_t = forward_noise(d.sched, x0, t, eps);
    Vec eps_hat = d.predict(x_t, t, cond);
    return sq_l2(eps_hat, eps);
}

}  // namespace tilab
