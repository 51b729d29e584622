#pragma once

#include "qkdsim/errors.hpp"
#include "qkdsim/params.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace qkdsim::analytic {

/// Closed-form rates for one operating point. All rates in counts (bits) per second.
struct KeyMetrics
{
    double singles_alice = 0.0;
    double singles_bob = 0.0;
    double true_coincidence_rate = 0.0;
    double accidental_rate = 0.0;
    double coincidence_rate = 0.0;
    double raw_key_rate = 0.0;
    double qber = 0.0;
    double secure_key_rate = 0.0;
};

/// Non-paralyzable dead-time efficiency of a party with `n_d` detectors.
inline double dead_time_efficiency(double brightness, double eta_link, double eta_d, double dark_rate,
                                   double dead_time_s, int n_d)
{
    if (n_d < 1) {
        throw DomainError("detector count must be at least 1");
    }
    return 1.0 / (1.0 + (brightness * eta_link * eta_d + dark_rate) * dead_time_s / n_d);
}

inline double singles_rate(double brightness, double eta_link, double eta_d, double eta_dt, double dark_rate)
{
    return brightness * eta_link * eta_d * eta_dt + dark_rate;
}

/// Fraction of a Gaussian (FWHM t_r) difference peak inside a window t_c centred on it.
inline double coincidence_window_efficiency(double t_c, double t_r)
{
    if (!(t_c > 0.0)) {
        throw DomainError("coincidence window must be positive");
    }
    if (t_r <= 0.0) {
        return 1.0;
    }
    return std::erf(std::sqrt(std::log(2.0)) * t_c / t_r);
}

inline double true_coincidence_rate(double brightness, double eta_a, double eta_b, double eta_d_a, double eta_d_b,
                                    double eta_dt_a, double eta_dt_b, double eta_r)
{
    return brightness * eta_a * eta_b * eta_d_a * eta_d_b * eta_dt_a * eta_dt_b * eta_r;
}

inline double true_coincidence_rate(double brightness, double eta_a, double eta_b, double eta_d, double eta_dt_a,
                                    double eta_dt_b, double eta_r)
{
    return true_coincidence_rate(brightness, eta_a, eta_b, eta_d, eta_d, eta_dt_a, eta_dt_b, eta_r);
}

/// Poissonian accidental rate; t_c in seconds. Overestimates when singles are
/// dominated by true pairs or when S*t_c approaches 1.
inline double accidental_rate(double singles_a, double singles_b, double t_c)
{
    if (!(t_c > 0.0)) {
        throw DomainError("coincidence window must be positive");
    }
    return -std::expm1(-singles_a * t_c) * -std::expm1(-singles_b * t_c) / t_c;
}

inline double qber_prediction(double coincidence_rate, double accidental_rate, double p_o)
{
    if (!(coincidence_rate > 0.0)) {
        throw UndefinedRateError("QBER undefined for a zero coincidence rate");
    }
    const double raw = 0.5 * coincidence_rate;
    return (raw * p_o + 0.25 * accidental_rate) / raw;
}

inline double binary_entropy(double x)
{
    if (!(x >= 0.0 && x <= 1.0)) {
        throw DomainError("binary entropy argument must lie in [0, 1]");
    }
    if (x == 0.0 || x == 1.0) {
        return 0.0;
    }
    return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

/// Error-correction cost per sifted bit, in units of H(QBER).
inline constexpr double kErrorCorrectionFactor = 2.1;

/// Asymptotic secure rate, clamped at zero above the QBER threshold.
inline double secure_key_rate(double raw_rate, double qber)
{
    if (!(raw_rate >= 0.0)) {
        throw DomainError("raw rate must be non-negative");
    }
    if (!(qber >= 0.0 && qber <= 0.5)) {
        return 0.0;
    }
    return std::max(0.0, raw_rate * (1.0 - kErrorCorrectionFactor * binary_entropy(qber)));
}

inline KeyMetrics full_model(const ExperimentParams& p)
{
    p.validate();
    const double t_d_a = p.alice.dead_time.seconds();
    const double t_d_b = p.bob.dead_time.seconds();
    const double eta_a = p.eta_alice();
    const double eta_b = p.eta_bob();

    const double dt_a = dead_time_efficiency(p.brightness_cps, eta_a, p.alice.efficiency, p.alice.dark_rate_cps, t_d_a,
                                             p.alice.count);
    const double dt_b =
        dead_time_efficiency(p.brightness_cps, eta_b, p.bob.efficiency, p.bob.dark_rate_cps, t_d_b, p.bob.count);

    KeyMetrics m;
    m.singles_alice = singles_rate(p.brightness_cps, eta_a, p.alice.efficiency, dt_a, p.alice.dark_rate_cps);
    m.singles_bob = singles_rate(p.brightness_cps, eta_b, p.bob.efficiency, dt_b, p.bob.dark_rate_cps);

    const double t_c_ps = static_cast<double>(p.coincidence_window.ps);
    const double eta_r = coincidence_window_efficiency(t_c_ps, p.detection_resolution_fwhm_ps);
    m.true_coincidence_rate =
        true_coincidence_rate(p.brightness_cps, eta_a, eta_b, p.alice.efficiency, p.bob.efficiency, dt_a, dt_b, eta_r);
    m.accidental_rate = accidental_rate(m.singles_alice, m.singles_bob, p.coincidence_window.seconds());
    m.coincidence_rate = m.true_coincidence_rate + m.accidental_rate;
    m.raw_key_rate = 0.5 * m.coincidence_rate;
    m.qber = m.coincidence_rate > 0.0 ? qber_prediction(m.coincidence_rate, m.accidental_rate, p.optics_error_prob)
                                      : 0.0;
    m.secure_key_rate = secure_key_rate(m.raw_key_rate, std::min(m.qber, 0.5));
    return m;
}

// ---------------------------------------------------------------------------
// Repeater chains

/// Probability an elementary-link attempt heralds success: linear-optics BSM
/// efficiency 1/2 times the node-to-node transmission.
inline double link_success_probability(double eta_link)
{
    if (!(eta_link >= 0.0 && eta_link <= 1.0)) {
        throw DomainError("link transmission must lie in [0, 1]");
    }
    return 0.5 * eta_link;
}

namespace detail {

inline double pairwise_sum(const std::vector<double>& v, std::size_t lo, std::size_t hi)
{
    if (hi - lo == 1) {
        return v[lo];
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

} // namespace detail

/// Mean attempt periods until all `links` independent links have succeeded,
/// i.e. E[max of `links` geometric(P0) variables].
inline double expected_attempt_periods(int links, double p0)
{
    if (links < 1) {
        throw DomainError("link count must be at least 1");
    }
    if (!(p0 > 0.0 && p0 <= 1.0)) {
        throw DomainError("link success probability must lie in (0, 1]");
    }
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(links));
    double binom = 1.0;
    for (int j = 1; j <= links; ++j) {
        binom = binom * (links - j + 1) / j;
        const double sign = (j % 2 == 1) ? 1.0 : -1.0;
        terms.push_back(sign * binom / -std::expm1(j * std::log1p(-p0)));
    }
    return detail::pairwise_sum(terms, 0, terms.size());
}

/// Expected end-to-end entanglement time (s) for 2^n elementary links of length L0.
inline double repeater_expected_time(int n, double l0_m, double p0, double refractive_index = 1.0)
{
    if (n < 0 || n > 20) {
        throw DomainError("link-count exponent must lie in [0, 20]");
    }
    if (!(p0 > 0.0)) {
        throw DomainError("expected time diverges for zero link success probability");
    }
    const double period = l0_m * refractive_index / kSpeedOfLight;
    return period * expected_attempt_periods(1 << n, p0);
}

/// End-to-end fidelity after `r` deterministic swaps of Werner(F_i) links.
inline double swapped_fidelity(double f_i, int r)
{
    if (!(f_i >= 0.25 && f_i <= 1.0)) {
        throw DomainError("elementary fidelity must lie in [1/4, 1]");
    }
    if (r < 0) {
        throw DomainError("repeater count must be non-negative");
    }
    return 0.25 + 0.75 * std::pow((4.0 * f_i - 1.0) / 3.0, r + 1);
}

} // namespace qkdsim::analytic
