#pragma once

#include <cstdint>
#include <limits>

#include <boost/random/normal_distribution.hpp>

namespace npmc {

/// SplitMix64 finalizer. Used to derive stream keys and to seed the
/// xoshiro state; see https://prng.di.unimi.it.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Order-dependent combination of two 64-bit keys.
constexpr std::uint64_t mix_keys(std::uint64_t a, std::uint64_t b) noexcept
{
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ull));
}

/*!
 * Seedable random stream addressed by (seed, stream_id).
 *
 * The variate sequence is a pure function of the address. Child streams
 * are obtained with split(), so independent pieces of work (a replicate,
 * an iteration, a sample) can each own a stream without coordination.
 * Backed by xoshiro256** whose state is filled from SplitMix64.
 */
class RngStream
{
  public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept
        : seed_(seed), stream_id_(stream_id)
    {
        std::uint64_t x = mix_keys(seed, stream_id);
        for (auto& word : state_)
        {
            x += 0x9e3779b97f4a7c15ull;
            word = splitmix64(x);
        }
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Child stream; distinct ids give distinct, independent streams.
    RngStream split(std::uint64_t id) const noexcept
    {
        return RngStream(seed_, mix_keys(stream_id_, id));
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()() noexcept
    {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1); safe to take the logarithm of.
    double uniform_open() noexcept
    {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal variate (ziggurat).
    double normal() { return boost::random::normal_distribution<double>{}(*this); }

  private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
    {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t state_[4];
};

} // namespace npmc
