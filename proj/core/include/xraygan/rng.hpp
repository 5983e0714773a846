#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace xraygan {

// xoshiro256++ generator. Deterministic across platforms, serializable,
// and cheap to fork into independent named streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Unbiased integer in [0, n), n > 0.
    std::uint64_t bounded(std::uint64_t n);
    // Standard normal via Box-Muller. No cached spare: one draw consumes
    // two uniforms, which keeps the stream position independent of call
    // history.
    double normal();
    double normal(double mean, double stddev);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Child stream keyed by the tag and the current state. Does not
    // advance this stream.
    Rng derive(std::string_view tag) const;

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

private:
    std::array<std::uint64_t, 4> s_;
};

// FNV-1a over bytes; also used for config hashing.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace xraygan
