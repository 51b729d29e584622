#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>

namespace qkdsim {

/// Simulated time in integer picoseconds since simulation start.
struct SimTime
{
    std::int64_t ps = 0;

    constexpr SimTime() = default;
    constexpr explicit SimTime(std::int64_t picoseconds) : ps(picoseconds) {}

    static constexpr SimTime zero() { return SimTime{0}; }
    static constexpr SimTime max() { return SimTime{std::numeric_limits<std::int64_t>::max()}; }

    static SimTime from_seconds(double s) { return SimTime{static_cast<std::int64_t>(std::llround(s * 1e12))}; }
    static SimTime from_ns(double ns) { return SimTime{static_cast<std::int64_t>(std::llround(ns * 1e3))}; }

    constexpr double seconds() const { return static_cast<double>(ps) * 1e-12; }

    constexpr auto operator<=>(const SimTime&) const = default;

    constexpr SimTime& operator+=(SimTime o)
    {
        ps += o.ps;
        return *this;
    }
    friend constexpr SimTime operator+(SimTime a, SimTime b) { return SimTime{a.ps + b.ps}; }
    friend constexpr SimTime operator-(SimTime a, SimTime b) { return SimTime{a.ps - b.ps}; }
    friend constexpr SimTime operator-(SimTime a) { return SimTime{-a.ps}; }
};

namespace literals {
constexpr SimTime operator""_ps(unsigned long long v) { return SimTime{static_cast<std::int64_t>(v)}; }
constexpr SimTime operator""_ns(unsigned long long v) { return SimTime{static_cast<std::int64_t>(v * 1000ULL)}; }
constexpr SimTime operator""_us(unsigned long long v) { return SimTime{static_cast<std::int64_t>(v * 1000000ULL)}; }
} // namespace literals

/// Vacuum speed of light, m/s.
inline constexpr double kSpeedOfLight = 299792458.0;

} // namespace qkdsim
