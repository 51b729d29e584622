#pragma once

#include "qkdsim/errors.hpp"
#include "qkdsim/states.hpp"
#include "qkdsim/time.hpp"

#include <cmath>
#include <cstdint>
#include <string>

namespace qkdsim {

enum class Party : std::uint8_t { Alice = 0, Bob = 1 };

inline char party_code(Party p) { return p == Party::Alice ? 'A' : 'B'; }

/// Linear transmission of a `db` loss.
inline double transmission_from_db(double db) { return std::pow(10.0, -db / 10.0); }
inline double db_from_transmission(double eta) { return -10.0 * std::log10(eta); }

/// One party's bank of identical single-photon detectors.
struct DetectorParams
{
    double efficiency = 0.60;              // eta_D
    SimTime dead_time{45'000};             // t_d
    double dark_rate_cps = 0.0;            // summed over the party's detectors
    double jitter_fwhm_ps = 0.0;           // extra per-arm jitter, added in quadrature to the resolution smear
    int count = 4;                         // n_d

    void validate(const std::string& prefix) const
    {
        if (!(efficiency >= 0.0 && efficiency <= 1.0)) {
            throw ConfigError(prefix + ".efficiency", "must lie in [0, 1]");
        }
        if (dead_time < SimTime::zero()) {
            throw ConfigError(prefix + ".dead_time", "must be non-negative");
        }
        if (!(dark_rate_cps >= 0.0)) {
            throw ConfigError(prefix + ".dark_rate", "must be non-negative");
        }
        if (!(jitter_fwhm_ps >= 0.0)) {
            throw ConfigError(prefix + ".jitter_fwhm", "must be non-negative");
        }
        if (count != 4) {
            throw ConfigError(prefix + ".count", "the two-basis receiver has exactly 4 detectors");
        }
    }
};

/// Physical configuration shared by the simulator and the closed-form model.
struct ExperimentParams
{
    double brightness_cps = 1.5e6;                 // B, pairs/s
    double loss_alice_db = 12.0;
    double loss_bob_db = 12.0;
    DetectorParams alice{0.60, SimTime{45'000}, 500.0};
    DetectorParams bob{0.60, SimTime{45'000}, 1800.0};
    double detection_resolution_fwhm_ps = 1600.0;  // t_r
    SimTime coincidence_window{2'000};             // t_c
    double source_fidelity = 0.955;                // Werner F
    double optics_error_prob = 0.03;               // p_o
    double acquisition_time_s = 1.0;
    std::uint64_t shots = 0;                       // multi-shot count; 0 means use acquisition_time_s

    /// Published operating point: 94% visibility, 1.5e6 pairs/s, 12 dB per link,
    /// eta_D 0.6, 45 ns dead time, 1600 ps resolution, 500/1800 cps darks.
    static ExperimentParams table1() { return ExperimentParams{}; }

    double eta_alice() const { return transmission_from_db(loss_alice_db); }
    double eta_bob() const { return transmission_from_db(loss_bob_db); }

    const DetectorParams& detectors(Party p) const { return p == Party::Alice ? alice : bob; }
    double loss_db(Party p) const { return p == Party::Alice ? loss_alice_db : loss_bob_db; }

    double visibility() const { return visibility_from_qber(optics_error_prob); }

    /// Sets p_o = (1 - V)/2 and folds it into the Werner fidelity F = 1 - 3/2 p_o.
    ExperimentParams& set_visibility(double v)
    {
        optics_error_prob = qber_from_visibility(v);
        source_fidelity = fidelity_from_qber(optics_error_prob);
        return *this;
    }

    /// Exposure of a multi-shot run (shots / B) or the configured acquisition time.
    double exposure_s() const { return shots > 0 ? static_cast<double>(shots) / brightness_cps : acquisition_time_s; }

    void validate() const
    {
        if (!(brightness_cps > 0.0) || !std::isfinite(brightness_cps)) {
            throw ConfigError("brightness", "must be positive");
        }
        if (!(loss_alice_db >= 0.0)) {
            throw ConfigError("loss_alice_db", "must be non-negative");
        }
        if (!(loss_bob_db >= 0.0)) {
            throw ConfigError("loss_bob_db", "must be non-negative");
        }
        alice.validate("alice");
        bob.validate("bob");
        if (!(detection_resolution_fwhm_ps >= 0.0)) {
            throw ConfigError("detection_resolution", "must be non-negative");
        }
        if (coincidence_window <= SimTime::zero()) {
            throw ConfigError("coincidence_window", "must be positive");
        }
        if (!(source_fidelity >= 0.25 && source_fidelity <= 1.0)) {
            throw ConfigError("source_fidelity", "must lie in [1/4, 1]");
        }
        if (!(optics_error_prob >= 0.0 && optics_error_prob <= 0.5)) {
            throw ConfigError("optics_error_prob", "must lie in [0, 1/2]");
        }
        if (!(acquisition_time_s >= 0.0)) {
            throw ConfigError("acquisition_time", "must be non-negative");
        }
    }
};

} // namespace qkdsim
