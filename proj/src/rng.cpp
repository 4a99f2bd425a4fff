#include "mambavsr/rng.hpp"

#include <cmath>
#include <numbers>

namespace mvsr {

double Rng::normal()
{
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double stddev)
{
    double z = normal();
    while (std::abs(z) > 2.0)
        z = normal();
    return z * stddev;
}

int Rng::uniform_int(int lo, int hi_inclusive)
{
    const auto span = static_cast<std::uint64_t>(hi_inclusive - lo) + 1;
    return lo + static_cast<int>(engine_() % span);
}

} // namespace mvsr
