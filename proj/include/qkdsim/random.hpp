#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qkdsim {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/// Seed of the labeled substream `label`[`index`] under `root`.
/// Streams with distinct labels are independent of each other, so adding a
/// component never shifts the draws of another one.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0)
{
    std::uint64_t s = detail::splitmix64(root ^ detail::splitmix64(detail::fnv1a(label)));
    return detail::splitmix64(s + detail::splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// One labeled random substream.
class RandomStream
{
public:
    using result_type = std::mt19937_64::result_type;

    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}
    RandomStream(std::uint64_t root, std::string_view label, std::uint64_t index = 0)
        : engine_(derive_seed(root, label, index))
    {
    }

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    double exponential(double rate) { return std::exponential_distribution<double>(rate)(engine_); }
    double normal(double sigma) { return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(engine_) : 0.0; }
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    std::uint64_t geometric_trials(double p)
    {
        // number of Bernoulli(p) trials up to and including the first success
        return static_cast<std::uint64_t>(std::geometric_distribution<std::uint64_t>(p)(engine_)) + 1;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace qkdsim
