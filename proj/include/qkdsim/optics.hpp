#pragma once

#include "qkdsim/params.hpp"
#include "qkdsim/random.hpp"
#include "qkdsim/states.hpp"
#include "qkdsim/time.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace qkdsim {

/// One detection event. Detector index encodes (basis, bit): 0=H, 1=V, 2=D, 3=A.
struct TimeTag
{
    Party node = Party::Alice;
    std::uint8_t detector = 0;
    SimTime timestamp;
    // 1-based index of the emitted pair that produced the click, 0 for dark
    // counts or tags read from a file. Simulation-side ground truth only.
    std::uint64_t origin = 0;

    Basis basis() const { return detector < 2 ? Basis::HV : Basis::AD; }
    int bit() const { return detector & 1; }

    bool operator==(const TimeTag&) const = default;
};

inline constexpr std::uint8_t detector_index(Basis basis, int bit)
{
    return static_cast<std::uint8_t>(static_cast<int>(basis) * 2 + bit);
}

inline const char* detector_label(int index)
{
    static constexpr const char* labels[] = {"H", "V", "D", "A"};
    return labels[index & 3];
}

/// FWHM -> standard deviation of a Gaussian.
inline double sigma_from_fwhm(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

/// Per-arm Gaussian smear such that the Alice-Bob difference has FWHM `resolution_fwhm`.
inline double arm_jitter_sigma(double resolution_fwhm_ps) { return sigma_from_fwhm(resolution_fwhm_ps) / std::sqrt(2.0); }

/// Homogeneous Poisson process on [0, duration).
inline std::vector<SimTime> poisson_times(double rate, SimTime duration, RandomStream& rng)
{
    std::vector<SimTime> out;
    if (!(rate > 0.0) || duration <= SimTime::zero()) {
        return out;
    }
    out.reserve(static_cast<std::size_t>(rate * duration.seconds() * 1.01) + 16);
    double t = 0.0;
    const double end = duration.seconds();
    while (true) {
        t += rng.exponential(rate);
        if (t >= end) {
            break;
        }
        out.emplace_back(static_cast<std::int64_t>(t * 1e12));
    }
    return out;
}

/// Pair emission times of a continuous-wave source with mean rate `brightness`.
inline std::vector<SimTime> emit_pair_times(double brightness, SimTime duration, RandomStream& rng)
{
    if (!(brightness > 0.0)) {
        throw DomainError("brightness must be positive");
    }
    return poisson_times(brightness, duration, rng);
}

inline bool fiber_survives(double loss_db, RandomStream& rng)
{
    if (loss_db == 0.0) {
        return true;
    }
    return rng.bernoulli(transmission_from_db(loss_db));
}

/// Passive 50:50 beam splitter choosing the measurement basis.
inline Basis select_basis(RandomStream& rng) { return rng.bernoulli(0.5) ? Basis::AD : Basis::HV; }

inline std::vector<SimTime> dark_count_times(double rate_cps, SimTime duration, RandomStream& rng)
{
    if (!(rate_cps >= 0.0)) {
        throw DomainError("dark count rate must be non-negative");
    }
    return poisson_times(rate_cps, duration, rng);
}

struct DarkCount
{
    SimTime time;
    std::uint8_t detector = 0;
};

/// Party-level dark counts over [start, start + duration), split uniformly
/// across the party's detectors.
inline std::vector<DarkCount> party_dark_counts(double rate_cps, SimTime start, SimTime duration, int detectors,
                                                RandomStream& rng)
{
    std::vector<DarkCount> out;
    for (SimTime t : dark_count_times(rate_cps, duration, rng)) {
        out.push_back(DarkCount{start + t, static_cast<std::uint8_t>(rng.uniform_int(0, detectors - 1))});
    }
    return out;
}

/// Mutable state of a single detector.
struct DetectorState
{
    Party node = Party::Alice;
    std::uint8_t index = 0;
    SimTime delay;                       // fixed cable/electronics offset
    double extra_jitter_fwhm_ps = 0.0;   // per-detector smear on top of the party's
    std::optional<SimTime> last_tag;

    /// Non-paralyzable dead time: records the click if the detector is live.
    std::optional<TimeTag> record(SimTime t, SimTime dead_time, std::uint64_t origin)
    {
        if (last_tag && t - *last_tag < dead_time) {
            return std::nullopt;
        }
        last_tag = t;
        return TimeTag{node, index, t, origin};
    }
};

/// Detection of a photon arriving at `arrival`. Efficiency and jitter draws
/// are always consumed so the stream stays aligned regardless of outcome.
inline std::optional<TimeTag> detect(SimTime arrival, DetectorState& state, const DetectorParams& params,
                                     double resolution_fwhm_ps, RandomStream& rng, std::uint64_t origin = 0)
{
    const bool clicks = rng.bernoulli(params.efficiency);
    const double arm = arm_jitter_sigma(resolution_fwhm_ps);
    const double extra = sigma_from_fwhm(std::hypot(params.jitter_fwhm_ps, state.extra_jitter_fwhm_ps));
    const double jitter = rng.normal(std::hypot(arm, extra));
    if (!clicks) {
        return std::nullopt;
    }
    SimTime t = arrival + state.delay + SimTime{static_cast<std::int64_t>(std::llround(jitter))};
    if (t < SimTime::zero()) {
        t = SimTime::zero();
    }
    return state.record(t, params.dead_time, origin);
}

/// Per-detector static offsets for one party; used to model unsynchronized receivers.
struct ReceiverSkew
{
    std::array<SimTime, 4> delay{};
    std::array<double, 4> extra_jitter_fwhm_ps{};
};

/// One party's receiver: passive basis choice has already happened upstream;
/// routes each photon by (basis, bit) to a detector and applies detection.
class DetectorBank
{
public:
    DetectorBank(Party node, const DetectorParams& params, double resolution_fwhm_ps, const ReceiverSkew& skew,
                 RandomStream rng)
        : params_(params), resolution_(resolution_fwhm_ps), rng_(std::move(rng))
    {
        for (std::uint8_t i = 0; i < 4; ++i) {
            detectors_[i].node = node;
            detectors_[i].index = i;
            detectors_[i].delay = skew.delay[i];
            detectors_[i].extra_jitter_fwhm_ps = skew.extra_jitter_fwhm_ps[i];
        }
    }

    std::optional<TimeTag> photon(SimTime arrival, Basis basis, int bit, std::uint64_t origin)
    {
        return detect(arrival, detectors_[detector_index(basis, bit)], params_, resolution_, rng_, origin);
    }

    std::optional<TimeTag> dark(SimTime t, std::uint8_t detector)
    {
        return detectors_[detector & 3].record(t, params_.dead_time, 0);
    }

private:
    DetectorParams params_;
    double resolution_;
    RandomStream rng_;
    std::array<DetectorState, 4> detectors_{};
};

} // namespace qkdsim
