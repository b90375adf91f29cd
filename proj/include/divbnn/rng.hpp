#pragma once

#include <cmath>
#include <cstdint>

namespace divbnn {

// Deterministic splitmix64 stream with Box-Muller normals. Hand-rolled so
// replays are bit-identical regardless of standard-library internals.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in the open interval (0, 1).
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Derive an independent stream; (seed, tag) pairs map to distinct states.
    Rng fork(uint64_t tag) const {
        Rng r(state_ ^ (0x9e3779b97f4a7c15ULL * (tag + 1)));
        r.next_u64();
        return r;
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

} // namespace divbnn
