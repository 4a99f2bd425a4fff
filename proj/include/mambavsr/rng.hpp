#pragma once

#include <cstdint>
#include <random>

namespace mvsr {

// Portable deterministic generator. The standard distributions are
// implementation-defined, so uniform/normal are derived by hand from the
// raw 64-bit engine output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    // Standard normal resampled until |z| <= 2, then scaled.
    double truncated_normal(double stddev);
    int uniform_int(int lo, int hi_inclusive);

private:
    std::mt19937_64 engine_;
};

} // namespace mvsr
