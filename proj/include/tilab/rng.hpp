#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "tilab/errors.hpp"

namespace tilab {

// Counter-based generator built on the splitmix64 finalizer. Each draw hashes
// (key, counter) so streams can be split hierarchically without coordination:
// substreams derive a fresh key from the parent key plus a label, never from
// the parent's position. Results over a run are therefore a pure function of
// the root seed and the substream path, independent of evaluation order
// elsewhere in the program.

inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t key) : key_(key) {}

    Rng substream(std::string_view name) const {
        return Rng(mix64(key_ ^ mix64(fnv1a64(name))));
    }

    Rng substream(uint64_t index) const {
        return Rng(mix64(key_ ^ mix64(index + 0x51ed2701ull)));
    }

    uint64_t next_u64() {
        uint64_t v = mix64(key_ ^ mix64(counter_));
        ++counter_;
        have_spare_ = false;
        return v;
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) {
        if (!(lo <= hi)) throw BadRange("uniform: lo > hi");
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer on [0, n), rejection-sampled so all values are equally likely.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw BadRange("uniform_int: n == 0");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller; the second deviate is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so log() is finite.
        double u1 = static_cast<double>((rawu64() >> 11) + 1) * 0x1.0p-53;
        double u2 = static_cast<double>(rawu64() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) {
        if (stddev < 0.0) throw BadRange("normal: stddev < 0");
        if (stddev == 0.0) return mean;  // exact, no draw consumed
        return mean + stddev * normal();
    }

    void fill_normal(std::vector<double>& out, double mean, double stddev) {
        if (stddev < 0.0) throw BadRange("fill_normal: stddev < 0");
        if (stddev == 0.0) {
            for (double& v : out) v = mean;
            return;
        }
        for (double& v : out) v = mean + stddev * normal();
    }

    std::vector<double> normal_vec(size_t n, double mean = 0.0, double stddev = 1.0) {
        std::vector<double> out(n);
        fill_normal(out, mean, stddev);
        return out;
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }

private:
    uint64_t rawu64() {
        uint64_t v = mix64(key_ ^ mix64(counter_));
        ++counter_;
        return v;
    }

    uint64_t key_;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// dim i.i.d. draws from N(0, std^2); std = 0 yields exact zeros.
inline std::vector<double> gaussian_sample(Rng& rng, size_t dim, double std) {
    if (dim < 1) throw BadRange("gaussian_sample: dim < 1");
    return rng.normal_vec(dim, 0.0, std);
}

}  // namespace tilab
