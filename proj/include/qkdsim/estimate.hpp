#pragma once

#include "qkdsim/bbm92.hpp"
#include "qkdsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace qkdsim::estimate {

/// Source brightness from the singles and coincidence rates at one window:
/// (S_A - D_A)(S_B - D_B) / R_coinc.
inline double car_brightness(double singles_a, double dark_a, double singles_b, double dark_b,
                             double coincidence_rate)
{
    if (!(coincidence_rate > 0.0)) {
        throw UndefinedRateError("brightness undefined for a zero coincidence rate");
    }
    return (singles_a - dark_a) * (singles_b - dark_b) / coincidence_rate;
}

struct BrightnessPoint
{
    double t_c_ps = 0.0;
    double brightness_cps = 0.0;
    std::uint64_t coincidences = 0;
};

struct BrightnessEstimate
{
    std::vector<BrightnessPoint> points;
    double brightness_cps = 0.0; // fit evaluated at the window's left edge
    double window_min_ps = 0.0;
    double window_max_ps = 0.0;
    double slope_per_ps = 0.0;
    double intercept = 0.0;
    double residual_rms = 0.0;
    std::size_t points_used = 0;
    double relative_change = 0.0; // |fit(max) - fit(min)| / fit(min)
};

inline constexpr std::size_t kMinPlateauPoints = 5;

/// Ordinary least squares of B_hat against t_c over [window_min, window_max].
inline BrightnessEstimate fit_brightness(const std::vector<BrightnessPoint>& points, double window_min_ps,
                                         double window_max_ps)
{
    BrightnessEstimate est;
    est.points = points;
    est.window_min_ps = window_min_ps;
    est.window_max_ps = window_max_ps;
    std::vector<const BrightnessPoint*> used;
    for (const auto& p : points) {
        if (p.t_c_ps >= window_min_ps && p.t_c_ps <= window_max_ps && std::isfinite(p.brightness_cps)) {
            used.push_back(&p);
        }
    }
    est.points_used = used.size();
    if (used.size() < kMinPlateauPoints) {
        throw InsufficientStatistics("brightness fit needs at least " + std::to_string(kMinPlateauPoints) +
                                     " points in the plateau window, got " + std::to_string(used.size()));
    }
    const double n = static_cast<double>(used.size());
    double mx = 0.0;
    double my = 0.0;
    for (const auto* p : used) {
        mx += p->t_c_ps;
        my += p->brightness_cps;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (const auto* p : used) {
        sxx += (p->t_c_ps - mx) * (p->t_c_ps - mx);
        sxy += (p->t_c_ps - mx) * (p->brightness_cps - my);
    }
    est.slope_per_ps = sxx > 0.0 ? sxy / sxx : 0.0;
    est.intercept = my - est.slope_per_ps * mx;
    double ss = 0.0;
    for (const auto* p : used) {
        const double r = p->brightness_cps - (est.intercept + est.slope_per_ps * p->t_c_ps);
        ss += r * r;
    }
    est.residual_rms = std::sqrt(ss / n);
    const double left = used.front()->t_c_ps;
    const double right = used.back()->t_c_ps;
    est.brightness_cps = est.intercept + est.slope_per_ps * left;
    est.relative_change = std::abs(est.slope_per_ps * (right - left)) / std::abs(est.brightness_cps);
    return est;
}

/// Plateau window: from `resolution_multiple` * t_r up to the window at which
/// Poissonian accidentals reach `accidental_fraction` of the true rate.
inline std::pair<double, double> plateau_window(double resolution_ps, double singles_a, double singles_b,
                                                double true_rate, double resolution_multiple = 4.0,
                                                double accidental_fraction = 0.05)
{
    const double lo = resolution_multiple * resolution_ps;
    const double hi = singles_a > 0.0 && singles_b > 0.0
                          ? accidental_fraction * true_rate / (singles_a * singles_b) * 1e12
                          : lo;
    return {lo, hi};
}

/// Log-spaced coincidence windows, `per_decade` points per decade, both ends included.
inline std::vector<SimTime> log_grid(SimTime lo, SimTime hi, int per_decade)
{
    if (lo <= SimTime::zero() || hi < lo || per_decade < 1) {
        throw DomainError("log grid needs 0 < lo <= hi and a positive density");
    }
    const double l0 = std::log10(static_cast<double>(lo.ps));
    const double l1 = std::log10(static_cast<double>(hi.ps));
    const int steps = std::max(1, static_cast<int>(std::lround((l1 - l0) * per_decade)));
    std::vector<SimTime> out;
    for (int k = 0; k <= steps; ++k) {
        const auto ps = static_cast<std::int64_t>(std::llround(std::pow(10.0, l0 + (l1 - l0) * k / steps)));
        if (out.empty() || out.back().ps != ps) {
            out.push_back(SimTime{ps});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detection resolution

struct PairingWidth
{
    std::uint8_t alice_detector = 0;
    std::uint8_t bob_detector = 0;
    double fwhm_ps = 0.0;
    double peak_counts = 0.0; // baseline-subtracted counts under the peak
};

/// Counts above the baseline within two FWHM of the peak centre.
inline double peak_area(const bbm92::CoincidenceHistogram& h)
{
    if (!h.peak_offset_ps) {
        return 0.0;
    }
    const double reach = 2.0 * std::max(h.fwhm_ps.value_or(h.bin_width_ps), h.bin_width_ps);
    double area = 0.0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        if (std::abs(h.center(i) - *h.peak_offset_ps) <= reach) {
            area += static_cast<double>(h.counts[i]) - h.baseline;
        }
    }
    return area;
}

inline constexpr double kMinPeakCounts = 1000.0;

/// FWHM of the g2 peak of one detector pairing, after delay correction.
inline PairingWidth g2_fwhm(const bbm92::TimeTagStream& a, const bbm92::TimeTagStream& b, std::uint8_t alice_det,
                            std::uint8_t bob_det, const bbm92::DelayTable& delays = {},
                            const bbm92::HistogramOptions& opt = {})
{
    const auto h =
        bbm92::coincidence_histogram(bbm92::detector_times(a, alice_det, delays), bbm92::detector_times(b, bob_det, delays), opt);
    const std::string pairing = std::string("A") + detector_label(alice_det) + "/B" + detector_label(bob_det);
    if (!h.peak_offset_ps || !h.fwhm_ps) {
        throw InsufficientStatistics("no significant g2 peak for pairing " + pairing);
    }
    PairingWidth w{alice_det, bob_det, *h.fwhm_ps, peak_area(h)};
    if (w.peak_counts < kMinPeakCounts) {
        throw InsufficientStatistics("g2 peak for pairing " + pairing + " has only " +
                                     std::to_string(static_cast<long long>(w.peak_counts)) + " counts");
    }
    return w;
}

/// Pairings of matching basis whose bits agree for the given Bell state.
inline std::vector<std::pair<std::uint8_t, std::uint8_t>> correlated_pairings(BellState state)
{
    std::vector<std::pair<std::uint8_t, std::uint8_t>> out;
    for (Basis basis : {Basis::HV, Basis::AD}) {
        const int flip = bbm92::anticorrelated(state, basis) ? 1 : 0;
        for (int bit = 0; bit < 2; ++bit) {
            out.emplace_back(detector_index(basis, bit), detector_index(basis, bit ^ flip));
        }
    }
    return out;
}

struct ResolutionEstimate
{
    double fwhm_ps = 0.0; // mean over qualifying pairings
    std::vector<PairingWidth> pairings;
};

inline ResolutionEstimate detection_resolution(const bbm92::TimeTagStream& a, const bbm92::TimeTagStream& b,
                                               const bbm92::DelayTable& delays = {},
                                               BellState state = BellState::PsiPlus,
                                               const bbm92::HistogramOptions& opt = {})
{
    ResolutionEstimate r;
    std::string failures;
    for (const auto& [i, j] : correlated_pairings(state)) {
        try {
            r.pairings.push_back(g2_fwhm(a, b, i, j, delays, opt));
        } catch (const InsufficientStatistics& e) {
            failures += std::string(failures.empty() ? "" : "; ") + e.what();
        }
    }
    if (r.pairings.empty()) {
        throw InsufficientStatistics("detection resolution: " + failures);
    }
    for (const auto& p : r.pairings) {
        r.fwhm_ps += p.fwhm_ps;
    }
    r.fwhm_ps /= static_cast<double>(r.pairings.size());
    return r;
}

// ---------------------------------------------------------------------------
// Optical error probability

struct PoEstimate
{
    double p_o = 0.0;
    double se = 0.0;
    std::uint64_t sifted_bits = 0;
    double accidental_share = 0.0; // Poissonian accidentals / coincidences at the reference window
};

inline constexpr std::uint64_t kMinSiftedBits = 1000;
inline constexpr double kAccidentalShareWarning = 0.10;

/// p_o taken as the empirical QBER at a short reference window.
inline PoEstimate estimate_po(const bbm92::TimeTagStream& a, const bbm92::TimeTagStream& b,
                              const bbm92::DelayTable& delays = {}, SimTime reference_window = SimTime{1000},
                              BellState state = BellState::PsiPlus)
{
    const auto m = bbm92::evaluate(a, b, reference_window, delays, state);
    if (m.raw_bit_count < kMinSiftedBits) {
        throw InsufficientStatistics("p_o needs at least " + std::to_string(kMinSiftedBits) + " sifted bits, got " +
                                     std::to_string(m.raw_bit_count));
    }
    PoEstimate p;
    p.p_o = m.qber;
    p.se = m.qber_se;
    p.sifted_bits = m.raw_bit_count;
    p.accidental_share = m.coincidence_rate > 0.0
                             ? m.singles_alice * m.singles_bob * reference_window.seconds() / m.coincidence_rate
                             : 1.0;
    return p;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct EstimateOptions
{
    double dark_rate_alice_cps = 0.0;
    double dark_rate_bob_cps = 0.0;
    BellState state = BellState::PsiPlus;
    bbm92::HistogramOptions histogram;
    bool synchronize = true;
    SimTime po_window{1000};
    SimTime grid_min{100};
    SimTime grid_max{1'000'000};
    int grid_per_decade = 10;
    double resolution_multiple = 4.0;
    double accidental_fraction = 0.05;
    double slope_warning = 0.10; // relative change of the fit across the window
};

struct Estimates
{
    bbm92::DelayTable delays;
    ResolutionEstimate resolution;
    BrightnessEstimate brightness;
    PoEstimate po;
    std::vector<std::string> warnings;
};

inline Estimates estimate_parameters(const bbm92::TimeTagStream& a, const bbm92::TimeTagStream& b,
                                     const EstimateOptions& opt = {})
{
    const double exposure = a.acquisition_duration_s;
    if (!(exposure > 0.0)) {
        throw InsufficientStatistics("streams have no acquisition duration");
    }
    Estimates est;
    if (opt.synchronize) {
        est.delays = bbm92::synchronize(a, b, opt.histogram);
    }
    est.resolution = detection_resolution(a, b, est.delays, opt.state, opt.histogram);

    const double s_a = static_cast<double>(a.tags.size()) / exposure;
    const double s_b = static_cast<double>(b.tags.size()) / exposure;
    std::vector<BrightnessPoint> points;
    for (SimTime t_c : log_grid(opt.grid_min, opt.grid_max, opt.grid_per_decade)) {
        const auto n = bbm92::match_coincidences(a, b, t_c, est.delays).size();
        const double rate = static_cast<double>(n) / exposure;
        points.push_back(BrightnessPoint{static_cast<double>(t_c.ps),
                                         n ? car_brightness(s_a, opt.dark_rate_alice_cps, s_b, opt.dark_rate_bob_cps, rate)
                                           : std::nan(""),
                                         n});
    }

    // true rate near the left edge, with Poissonian accidentals removed
    const double left = opt.resolution_multiple * est.resolution.fwhm_ps;
    const auto near = std::min_element(points.begin(), points.end(), [&](const auto& x, const auto& y) {
        return std::abs(std::log(x.t_c_ps / left)) < std::abs(std::log(y.t_c_ps / left));
    });
    const double r_left = static_cast<double>(near->coincidences) / exposure;
    const double true_rate = std::max(0.0, r_left - s_a * s_b * near->t_c_ps * 1e-12);
    const auto [lo, hi] =
        plateau_window(est.resolution.fwhm_ps, s_a, s_b, true_rate, opt.resolution_multiple, opt.accidental_fraction);
    est.brightness = fit_brightness(points, lo, hi);
    if (est.brightness.relative_change > opt.slope_warning) {
        est.warnings.push_back("brightness plateau not flat: fit changes by " +
                               std::to_string(100.0 * est.brightness.relative_change) + "% across the window");
    }

    est.po = estimate_po(a, b, est.delays, opt.po_window, opt.state);
    if (est.po.accidental_share > kAccidentalShareWarning) {
        est.warnings.push_back("accidentals are " + std::to_string(100.0 * est.po.accidental_share) +
                               "% of coincidences at the p_o reference window; p_o is biased upward");
    }
    return est;
}

} // namespace qkdsim::estimate
