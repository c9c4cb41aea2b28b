#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fluidformer/tensor.hpp"

namespace ff {

// Seeded RNG for weight init and training-time shuffles.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(eng_);
    }
    std::uint64_t next_u64() { return eng_(); }
    std::size_t index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        return d(eng_);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
inline void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace ff
