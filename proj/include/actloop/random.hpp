#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace actloop {

// Counter-based random source (Philox4x32-10). The (seed, stream) pair is the
// key/counter prefix, so a stream can be reproduced from its two ids alone
// and split() derives child streams without touching the parent's position.
class RandomSource {
public:
    RandomSource() : RandomSource(0, 0) {}
    RandomSource(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    // Child stream keyed by (this stream, id). Independent of how many values
    // were already drawn from this source.
    RandomSource split(std::uint64_t id) const;

    std::uint64_t next_u64();
    // Uniform in the open interval (0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    std::vector<double> normal_vector(std::size_t n);

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

// 64-bit mixing function, exposed for stream-id derivation and hashing.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace actloop
