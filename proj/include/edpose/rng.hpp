#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace edpose {

/// Deterministic RNG. Distribution transforms are spelled out here instead of
/// using std:: distributions, whose algorithms are implementation-defined;
/// this keeps sample streams identical across standard libraries and makes
/// the engine state serializable for checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform on [0, 1) with 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const int span = hi - lo + 1;
        int v = lo + static_cast<int>(uniform() * span);
        return v > hi ? hi : v;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller. The spare value is discarded so the
    /// stream position stays a pure function of the call count.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string serialize_state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace edpose
