#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tdflow {

using index_t = std::int64_t;

struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct rank_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct budget_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a child seed from a parent seed and stream indices. Used to give
// every layer/chunk/candidate its own reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL) + splitmix64(a) * 3 + b);
}

// mt19937_64 output is standardized; the value mappings below are hand-rolled
// so sequences do not depend on the standard library's distribution objects.
class rng {
public:
    explicit rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform integer in [0, n)
    index_t below(index_t n) {
        if (n <= 0) throw config_error("rng::below: empty range");
        const auto un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return static_cast<index_t>(v % un);
    }

    // uniform real in [0, 1) with 53-bit resolution
    double real() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * real(); }

    bool coin(double p) { return real() < p; }

private:
    std::mt19937_64 gen_;
};

}  // namespace tdflow
