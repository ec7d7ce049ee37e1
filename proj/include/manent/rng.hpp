#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace manent {

/// Seeded Gaussian stream. mt19937_64 is fully specified by the standard,
/// and the Box-Muller transform below is ours, so identical seeds produce
/// bit-identical streams on every platform (std::normal_distribution does not
/// guarantee that).
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

    double operator()() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1], u2 in [0,1)
        double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1p-53;
        double u2 = static_cast<double>(engine_() >> 11) * 0x1p-53;
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    std::vector<double> sample(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = (*this)();
        return out;
    }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1p-53; }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Deterministic Fisher-Yates shuffle of indices 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 engine(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(engine() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

} // namespace manent
