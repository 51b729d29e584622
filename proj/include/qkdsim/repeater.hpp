#pragma once

#include "qkdsim/analytic.hpp"
#include "qkdsim/errors.hpp"
#include "qkdsim/events.hpp"
#include "qkdsim/params.hpp"
#include "qkdsim/random.hpp"
#include "qkdsim/states.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace qkdsim::repeater {

/// A chain of `links` elementary links (r = links - 1 repeater nodes), each of
/// length L0 with a Bell-state-measurement station at its midpoint.
struct RepeaterChainParams
{
    int links = 2;
    double l0_m = 1000.0;
    double link_loss_db = 0.0;       // node -> BSM -> node transmission loss
    double elementary_fidelity = 1.0; // F_i
    double refractive_index = 1.0;
    // charge swap/correction messages their propagation time (off in the validated model)
    bool charge_swap_signaling = false;
    // fixes the per-attempt heralding probability instead of deriving it from the loss
    std::optional<double> success_probability;

    static RepeaterChainParams from_exponent(int n, double l0_m, double link_loss_db, double f_i)
    {
        if (n < 0 || n > 20) {
            throw ConfigError("n", "link-count exponent must lie in [0, 20]");
        }
        RepeaterChainParams p;
        p.links = 1 << n;
        p.l0_m = l0_m;
        p.link_loss_db = link_loss_db;
        p.elementary_fidelity = f_i;
        return p;
    }

    /// Splits `end_to_end_loss_db` evenly over `repeaters + 1` links spanning `total_length_m`.
    static RepeaterChainParams for_end_to_end(int repeaters, double total_length_m, double end_to_end_loss_db,
                                              double f_i)
    {
        if (repeaters < 0) {
            throw ConfigError("repeaters", "must be non-negative");
        }
        RepeaterChainParams p;
        p.links = repeaters + 1;
        p.l0_m = total_length_m / p.links;
        p.link_loss_db = end_to_end_loss_db / p.links;
        p.elementary_fidelity = f_i;
        return p;
    }

    int repeaters() const { return links - 1; }
    double eta_link() const { return transmission_from_db(link_loss_db); }
    double p0() const
    {
        return success_probability ? *success_probability : analytic::link_success_probability(eta_link());
    }
    double period_s() const { return l0_m * refractive_index / kSpeedOfLight; }

    /// One-way node-to-BSM propagation; an attempt period is twice this.
    SimTime half_period() const { return SimTime::from_seconds(0.5 * period_s()); }
    SimTime period() const { return half_period() + half_period(); }

    void validate() const
    {
        if (links < 1) {
            throw ConfigError("links", "need at least one elementary link");
        }
        if (!(l0_m > 0.0)) {
            throw ConfigError("l0_m", "must be positive");
        }
        if (!(link_loss_db >= 0.0) || !std::isfinite(link_loss_db)) {
            throw ConfigError("link_loss_db", "must be finite and non-negative");
        }
        if (!(elementary_fidelity >= 0.25 && elementary_fidelity <= 1.0)) {
            throw ConfigError("elementary_fidelity", "must lie in [1/4, 1]");
        }
        if (success_probability && !(*success_probability >= 0.0 && *success_probability <= 1.0)) {
            throw ConfigError("success_probability", "must lie in [0, 1]");
        }
        if (!(refractive_index >= 1.0)) {
            throw ConfigError("refractive_index", "must be at least 1");
        }
    }
};

struct EntanglementRecord
{
    SimTime completion_time;
    TwoQubitDensityMatrix end_to_end_state;
    std::vector<std::uint64_t> attempts; // per link, including the successful one
};

/// r-fold left-to-right swap of identical Werner(F_i) links.
inline TwoQubitDensityMatrix end_to_end_state(int links, double f_i)
{
    const TwoQubitDensityMatrix link = werner(f_i);
    TwoQubitDensityMatrix state = link;
    for (int k = 1; k < links; ++k) {
        state = swap(state, link);
    }
    return state;
}

namespace detail {

struct EmitPhoton
{
    int link = 0;
};
struct PhotonAtStation
{
    int link = 0;
};
struct Herald
{
    int link = 0;
    bool success = false;
};
struct LinkReady
{
    int link = 0;
};
using Message = std::variant<EmitPhoton, PhotonAtStation, Herald, LinkReady>;

} // namespace detail

/// Event-driven run of one end-to-end entanglement attempt sequence.
///
/// Nodes 0..links are Alice, the repeaters and Bob; each link has a midpoint
/// station. At every attempt both end nodes of a link emit a photon towards
/// the station (L0/2 away); once both have arrived the station heralds success
/// with probability P0 back to both nodes. Failed links retry on the herald, so
/// attempts run on a shared L0/c cadence. Established links report to Alice;
/// when all are up the swaps execute deterministically.
inline EntanglementRecord simulate_chain(const RepeaterChainParams& params, std::uint64_t seed,
                                         const TwoQubitDensityMatrix& final_state)
{
    params.validate();
    using detail::Message;
    const int links = params.links;
    const double p0 = params.p0();

    Simulator<Message> sim;
    std::vector<NodeId> nodes;
    std::vector<NodeId> stations;
    for (int i = 0; i <= links; ++i) {
        nodes.push_back(sim.add_node(i == 0 ? "alice" : (i == links ? "bob" : "repeater" + std::to_string(i))));
    }
    for (int i = 0; i < links; ++i) {
        stations.push_back(sim.add_node("bsm" + std::to_string(i)));
        sim.connect(nodes[static_cast<std::size_t>(i)], stations.back(), params.half_period());
        sim.connect(nodes[static_cast<std::size_t>(i) + 1], stations.back(), params.half_period());
    }
    for (int i = 1; i <= links; ++i) {
        const double distance_periods = params.charge_swap_signaling ? i : 0.0;
        sim.connect(nodes[0], nodes[static_cast<std::size_t>(i)],
                    SimTime::from_seconds(distance_periods * params.period_s()));
    }

    std::vector<RandomStream> station_rng;
    for (int i = 0; i < links; ++i) {
        station_rng.emplace_back(seed, "bsm", static_cast<std::uint64_t>(i));
    }
    std::vector<int> photons_waiting(static_cast<std::size_t>(links), 0);
    std::vector<std::uint64_t> attempts(static_cast<std::size_t>(links), 0);
    std::vector<char> ready(static_cast<std::size_t>(links), 0);
    int ready_count = 0;
    SimTime completion;

    for (int i = 0; i <= links; ++i) {
        const auto self = nodes[static_cast<std::size_t>(i)];
        sim.set_handler(self, [&, i, self](Simulator<Message>& s, const Event<Message>& ev) {
            if (const auto* emit = std::get_if<detail::EmitPhoton>(&ev.payload)) {
                s.send_classical(self, stations[static_cast<std::size_t>(emit->link)],
                                 detail::PhotonAtStation{emit->link});
            } else if (const auto* h = std::get_if<detail::Herald>(&ev.payload)) {
                if (!h->success) {
                    s.schedule(s.now(), self, detail::EmitPhoton{h->link});
                } else if (i == h->link) {
                    // the left end node of a link reports it to Alice
                    if (i == 0) {
                        s.schedule(s.now(), self, detail::LinkReady{h->link});
                    } else {
                        s.send_classical(self, nodes[0], detail::LinkReady{h->link});
                    }
                }
            } else if (const auto* up = std::get_if<detail::LinkReady>(&ev.payload)) {
                if (!ready[static_cast<std::size_t>(up->link)]) {
                    ready[static_cast<std::size_t>(up->link)] = 1;
                    if (++ready_count == links) {
                        completion = s.now();
                    }
                }
            }
        });
    }
    for (int k = 0; k < links; ++k) {
        const auto station = stations[static_cast<std::size_t>(k)];
        sim.set_handler(station, [&, k, station](Simulator<Message>& s, const Event<Message>&) {
            auto& waiting = photons_waiting[static_cast<std::size_t>(k)];
            if (++waiting < 2) {
                return;
            }
            waiting = 0;
            ++attempts[static_cast<std::size_t>(k)];
            const bool success = station_rng[static_cast<std::size_t>(k)].bernoulli(p0);
            s.send_classical(station, nodes[static_cast<std::size_t>(k)], detail::Herald{k, success});
            s.send_classical(station, nodes[static_cast<std::size_t>(k) + 1], detail::Herald{k, success});
        });
    }

    // synchronized start: both end nodes of every link begin at t = 0
    for (int k = 0; k < links; ++k) {
        sim.schedule(SimTime::zero(), nodes[static_cast<std::size_t>(k)], detail::EmitPhoton{k});
        sim.schedule(SimTime::zero(), nodes[static_cast<std::size_t>(k) + 1], detail::EmitPhoton{k});
    }
    sim.run_until(SimTime::max());
    if (ready_count != links) {
        throw DomainError("chain did not complete; link success probability is zero");
    }
    return EntanglementRecord{completion, final_state, attempts};
}

inline EntanglementRecord simulate_chain(const RepeaterChainParams& params, std::uint64_t seed)
{
    params.validate();
    return simulate_chain(params, seed, end_to_end_state(params.links, params.elementary_fidelity));
}

struct EntanglementRate
{
    double rate_c_over_l0 = 0.0; // 1 / mean completion time, in units of c / L0
    double rate_se = 0.0;
    double mean_periods = 0.0;   // mean completion time in units of L0 / c
    double mean_periods_se = 0.0;
    double rate_per_s = 0.0;
    double rate_per_s_se = 0.0;
    std::uint64_t shots = 0;
};

struct ChainSample
{
    std::vector<double> completion_periods;
    double fidelity = 1.0;
};

inline ChainSample sample_chain(const RepeaterChainParams& params, std::uint64_t shots, std::uint64_t seed)
{
    params.validate();
    if (shots < 1) {
        throw ConfigError("shots", "must be at least 1");
    }
    if (!(params.p0() > 0.0)) {
        throw DomainError("link success probability is zero");
    }
    const auto state = end_to_end_state(params.links, params.elementary_fidelity);
    ChainSample out;
    out.fidelity = fidelity(state);
    out.completion_periods.reserve(shots);
    const double period_ps = static_cast<double>(params.period().ps);
    for (std::uint64_t s = 0; s < shots; ++s) {
        const auto rec = simulate_chain(params, derive_seed(seed, "chain.shot", s), state);
        out.completion_periods.push_back(static_cast<double>(rec.completion_time.ps) / period_ps);
    }
    return out;
}

inline EntanglementRate rate_from_sample(const ChainSample& sample, const RepeaterChainParams& params)
{
    const auto& x = sample.completion_periods;
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (double v : x) {
        var += (v - mean) * (v - mean);
    }
    var = x.size() > 1 ? var / (n - 1.0) : 0.0;

    EntanglementRate r;
    r.shots = x.size();
    r.mean_periods = mean;
    r.mean_periods_se = std::sqrt(var / n);
    r.rate_c_over_l0 = 1.0 / mean;
    r.rate_se = r.mean_periods_se / (mean * mean);
    r.rate_per_s = r.rate_c_over_l0 / params.period_s();
    r.rate_per_s_se = r.rate_se / params.period_s();
    return r;
}

inline EntanglementRate entanglement_rate(const RepeaterChainParams& params, std::uint64_t shots, std::uint64_t seed)
{
    return rate_from_sample(sample_chain(params, shots, seed), params);
}

struct ChainKeyRate
{
    EntanglementRate entanglement;
    double fidelity = 1.0;
    double qber = 0.0;
    double raw_key_rate_c_over_l0 = 0.0;
    double secure_key_rate_c_over_l0 = 0.0;
    double secure_key_rate_se = 0.0;
    double secure_key_rate_cps = 0.0;
    double secure_key_rate_cps_se = 0.0;
};

/// BBM92 on the end-to-end pairs: half of them are sifted away, the QBER follows
/// from the swapped Werner fidelity.
inline ChainKeyRate chain_secure_key_rate(const RepeaterChainParams& params, std::uint64_t shots, std::uint64_t seed)
{
    const auto sample = sample_chain(params, shots, seed);
    ChainKeyRate k;
    k.entanglement = rate_from_sample(sample, params);
    k.fidelity = std::clamp(sample.fidelity, 0.25, 1.0);
    k.qber = qber_from_fidelity(k.fidelity);
    k.raw_key_rate_c_over_l0 = 0.5 * k.entanglement.rate_c_over_l0;
    k.secure_key_rate_c_over_l0 = analytic::secure_key_rate(k.raw_key_rate_c_over_l0, k.qber);
    const double factor = k.raw_key_rate_c_over_l0 > 0.0 ? k.secure_key_rate_c_over_l0 / k.raw_key_rate_c_over_l0 : 0.0;
    k.secure_key_rate_se = factor * 0.5 * k.entanglement.rate_se;
    k.secure_key_rate_cps = k.secure_key_rate_c_over_l0 / params.period_s();
    k.secure_key_rate_cps_se = k.secure_key_rate_se / params.period_s();
    return k;
}

} // namespace qkdsim::repeater
