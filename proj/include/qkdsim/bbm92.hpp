#pragma once

#include "qkdsim/analytic.hpp"
#include "qkdsim/errors.hpp"
#include "qkdsim/events.hpp"
#include "qkdsim/optics.hpp"
#include "qkdsim/params.hpp"
#include "qkdsim/random.hpp"
#include "qkdsim/states.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

namespace qkdsim::bbm92 {

/// Time-ordered detections of one party.
struct TimeTagStream
{
    Party node = Party::Alice;
    std::vector<TimeTag> tags;
    double acquisition_duration_s = 0.0;

    bool operator==(const TimeTagStream&) const = default;

    std::size_t count(std::uint8_t detector) const
    {
        return static_cast<std::size_t>(
            std::count_if(tags.begin(), tags.end(), [&](const TimeTag& t) { return t.detector == detector; }));
    }
};

inline void sort_by_time(std::vector<TimeTag>& tags)
{
    std::stable_sort(tags.begin(), tags.end(),
                     [](const TimeTag& a, const TimeTag& b) { return a.timestamp < b.timestamp; });
}

/// Simulation knobs that are not physical parameters of the link.
struct SimulationOptions
{
    SimTime fiber_delay_alice{5'000'000};
    SimTime fiber_delay_bob{5'000'000};
    ReceiverSkew alice_skew;
    ReceiverSkew bob_skew;
    // shots per independently seeded chunk of the multi-shot accelerator
    std::uint64_t chunk_shots = 1 << 16;
    unsigned threads = 0; // 0: hardware concurrency
};

struct ProtocolRun
{
    TimeTagStream alice;
    TimeTagStream bob;
    std::uint64_t pairs_emitted = 0;
    double exposure_s = 0.0;
    SimulationReport report; // populated by the event-driven path only
};

namespace detail {

struct EmitPair
{
};
struct Photon
{
    Basis basis = Basis::HV;
    std::uint8_t bit = 0;
    std::uint64_t origin = 0;
};
struct Dark
{
    std::uint8_t detector = 0;
};
using Message = std::variant<EmitPair, Photon, Dark>;

template <class... Ts>
struct overloaded : Ts...
{
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline DetectorBank make_bank(const ExperimentParams& p, Party party, const SimulationOptions& opt, std::uint64_t seed)
{
    return DetectorBank(party, p.detectors(party), p.detection_resolution_fwhm_ps,
                        party == Party::Alice ? opt.alice_skew : opt.bob_skew,
                        RandomStream(seed, party == Party::Alice ? "detector.alice" : "detector.bob"));
}

} // namespace detail

/// Event-driven run over `params.acquisition_time_s`: the source node emits
/// Werner pairs as a Poisson process, each arm crosses its fiber link, and
/// Alice's and Bob's receivers detect photons and dark counts.
inline ProtocolRun run_protocol(const ExperimentParams& params, std::uint64_t seed, const SimulationOptions& opt = {})
{
    params.validate();
    using detail::Message;
    const SimTime duration = SimTime::from_seconds(params.acquisition_time_s);

    Simulator<Message> sim;
    const NodeId source = sim.add_node("source");
    const NodeId alice = sim.add_node("alice");
    const NodeId bob = sim.add_node("bob");
    sim.connect(source, alice, opt.fiber_delay_alice);
    sim.connect(source, bob, opt.fiber_delay_bob);
    sim.connect(alice, bob, opt.fiber_delay_alice + opt.fiber_delay_bob);

    const JointOutcomeSampler sampler(werner(params.source_fidelity));
    RandomStream emission(seed, "source.emission");
    RandomStream state_rng(seed, "source.state");
    RandomStream fiber_a(seed, "fiber.alice");
    RandomStream fiber_b(seed, "fiber.bob");
    RandomStream basis_a(seed, "basis.alice");
    RandomStream basis_b(seed, "basis.bob");
    DetectorBank bank_a = detail::make_bank(params, Party::Alice, opt, seed);
    DetectorBank bank_b = detail::make_bank(params, Party::Bob, opt, seed);

    ProtocolRun run;
    run.alice.node = Party::Alice;
    run.bob.node = Party::Bob;
    run.alice.acquisition_duration_s = run.bob.acquisition_duration_s = params.acquisition_time_s;
    run.exposure_s = params.acquisition_time_s;

    auto next_emission = [&](Simulator<Message>& s) {
        const SimTime gap = SimTime::from_seconds(emission.exponential(params.brightness_cps));
        if (s.now() + gap < duration) {
            s.schedule(s.now() + gap, source, detail::EmitPair{});
        }
    };

    sim.set_handler(source, [&](Simulator<Message>& s, const Event<Message>& ev) {
        if (!std::holds_alternative<detail::EmitPair>(ev.payload)) {
            return;
        }
        const std::uint64_t origin = ++run.pairs_emitted;
        const bool reach_a = fiber_survives(params.loss_alice_db, fiber_a);
        const bool reach_b = fiber_survives(params.loss_bob_db, fiber_b);
        if (reach_a || reach_b) {
            const Basis ba = reach_a ? select_basis(basis_a) : Basis::HV;
            const Basis bb = reach_b ? select_basis(basis_b) : Basis::HV;
            const auto [bit_a, bit_b] = sampler.sample(ba, bb, state_rng);
            if (reach_a) {
                s.send_classical(source, alice, detail::Photon{ba, static_cast<std::uint8_t>(bit_a), origin});
            }
            if (reach_b) {
                s.send_classical(source, bob, detail::Photon{bb, static_cast<std::uint8_t>(bit_b), origin});
            }
        }
        next_emission(s);
    });

    auto receiver = [&](DetectorBank& bank, TimeTagStream& out, NodeId self) {
        return [&bank, &out, self](Simulator<Message>& s, const Event<Message>& ev) {
            std::optional<TimeTag> tag = std::visit(
                detail::overloaded{
                    [&](const detail::Photon& ph) { return bank.photon(s.now(), ph.basis, ph.bit, ph.origin); },
                    [&](const detail::Dark& d) { return bank.dark(s.now(), d.detector); },
                    [](const detail::EmitPair&) { return std::optional<TimeTag>{}; }},
                ev.payload);
            if (tag) {
                out.tags.push_back(*tag);
                s.record_detection(self);
            }
        };
    };
    sim.set_handler(alice, receiver(bank_a, run.alice, alice));
    sim.set_handler(bob, receiver(bank_b, run.bob, bob));

    RandomStream dark_a(seed, "dark.alice");
    RandomStream dark_b(seed, "dark.bob");
    for (const auto& d : party_dark_counts(params.alice.dark_rate_cps, opt.fiber_delay_alice, duration, 4, dark_a)) {
        sim.schedule(d.time, alice, detail::Dark{d.detector});
    }
    for (const auto& d : party_dark_counts(params.bob.dark_rate_cps, opt.fiber_delay_bob, duration, 4, dark_b)) {
        sim.schedule(d.time, bob, detail::Dark{d.detector});
    }

    if (duration > SimTime::zero()) {
        next_emission(sim);
    }
    const SimTime horizon = duration + std::max(opt.fiber_delay_alice, opt.fiber_delay_bob) + SimTime{1'000'000};
    run.report = sim.run_until(horizon);

    sort_by_time(run.alice.tags);
    sort_by_time(run.bob.tags);
    return run;
}

namespace detail {

struct ArmArrival
{
    double time_s = 0.0; // emission time relative to the chunk start
    std::uint64_t origin = 0;
    Basis basis = Basis::HV;
    std::uint8_t bit = 0;
};

struct ChunkResult
{
    double duration_s = 0.0;
    std::vector<ArmArrival> alice;
    std::vector<ArmArrival> bob;
};

inline ChunkResult simulate_chunk(const ExperimentParams& p, const JointOutcomeSampler& sampler, std::uint64_t seed,
                                  std::uint64_t chunk, std::uint64_t first_shot, std::uint64_t shots)
{
    RandomStream emission(seed, "shot.emission", chunk);
    RandomStream state_rng(seed, "shot.state", chunk);
    RandomStream fiber_a(seed, "shot.fiber.alice", chunk);
    RandomStream fiber_b(seed, "shot.fiber.bob", chunk);
    RandomStream basis_a(seed, "shot.basis.alice", chunk);
    RandomStream basis_b(seed, "shot.basis.bob", chunk);
    ChunkResult out;
    double t = 0.0;
    for (std::uint64_t i = 0; i < shots; ++i) {
        t += emission.exponential(p.brightness_cps);
        const bool reach_a = fiber_survives(p.loss_alice_db, fiber_a);
        const bool reach_b = fiber_survives(p.loss_bob_db, fiber_b);
        if (!reach_a && !reach_b) {
            continue;
        }
        const Basis ba = reach_a ? select_basis(basis_a) : Basis::HV;
        const Basis bb = reach_b ? select_basis(basis_b) : Basis::HV;
        const auto [bit_a, bit_b] = sampler.sample(ba, bb, state_rng);
        const std::uint64_t origin = first_shot + i + 1;
        if (reach_a) {
            out.alice.push_back(ArmArrival{t, origin, ba, static_cast<std::uint8_t>(bit_a)});
        }
        if (reach_b) {
            out.bob.push_back(ArmArrival{t, origin, bb, static_cast<std::uint8_t>(bit_b)});
        }
    }
    out.duration_s = t;
    return out;
}

inline void detect_party(const std::vector<ChunkResult>& chunks, const std::vector<double>& offsets, bool is_alice,
                         SimTime fiber_delay, std::vector<DarkCount> darks, DetectorBank& bank,
                         std::vector<TimeTag>& out)
{
    std::size_t d = 0;
    auto flush_darks_until = [&](SimTime t) {
        while (d < darks.size() && darks[d].time <= t) {
            if (auto tag = bank.dark(darks[d].time, darks[d].detector)) {
                out.push_back(*tag);
            }
            ++d;
        }
    };
    for (std::size_t c = 0; c < chunks.size(); ++c) {
        const auto& arrivals = is_alice ? chunks[c].alice : chunks[c].bob;
        for (const auto& a : arrivals) {
            const SimTime arrival = fiber_delay + SimTime::from_seconds(offsets[c] + a.time_s);
            flush_darks_until(arrival);
            if (auto tag = bank.photon(arrival, a.basis, a.bit, a.origin)) {
                out.push_back(*tag);
            }
        }
    }
    flush_darks_until(SimTime::max());
}

} // namespace detail

/// Multi-shot accelerator. Each shot is one pair emission; the Werner state's
/// outcome distributions are computed once and sampled per shot. Shots are
/// generated in independently seeded chunks (optionally in parallel) and then
/// passed in time order through each party's detector bank, so results do not
/// depend on the thread count. Exposure is shots / B.
inline ProtocolRun run_protocol_multishot(const ExperimentParams& params, std::uint64_t shots, std::uint64_t seed,
                                          const SimulationOptions& opt = {})
{
    params.validate();
    if (shots < 1) {
        throw ConfigError("shots", "must be at least 1");
    }
    const JointOutcomeSampler sampler(werner(params.source_fidelity));
    const std::uint64_t chunk_shots = std::max<std::uint64_t>(1, opt.chunk_shots);
    const std::uint64_t n_chunks = (shots + chunk_shots - 1) / chunk_shots;

    std::vector<detail::ChunkResult> chunks(n_chunks);
    unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, n_chunks));
    auto work = [&](unsigned worker) {
        for (std::uint64_t c = worker; c < n_chunks; c += threads) {
            const std::uint64_t first = c * chunk_shots;
            chunks[c] = detail::simulate_chunk(params, sampler, seed, c, first, std::min(chunk_shots, shots - first));
        }
    };
    if (threads <= 1) {
        work(0);
    } else {
        std::vector<std::future<void>> pending;
        for (unsigned w = 0; w < threads; ++w) {
            pending.push_back(std::async(std::launch::async, work, w));
        }
        for (auto& f : pending) {
            f.get();
        }
    }

    std::vector<double> offsets(n_chunks, 0.0);
    for (std::uint64_t c = 1; c < n_chunks; ++c) {
        offsets[c] = offsets[c - 1] + chunks[c - 1].duration_s;
    }

    ProtocolRun run;
    run.pairs_emitted = shots;
    run.exposure_s = static_cast<double>(shots) / params.brightness_cps;
    run.alice.node = Party::Alice;
    run.bob.node = Party::Bob;
    run.alice.acquisition_duration_s = run.bob.acquisition_duration_s = run.exposure_s;

    const SimTime exposure = SimTime::from_seconds(run.exposure_s);
    RandomStream dark_a(seed, "dark.alice");
    RandomStream dark_b(seed, "dark.bob");
    DetectorBank bank_a = detail::make_bank(params, Party::Alice, opt, seed);
    DetectorBank bank_b = detail::make_bank(params, Party::Bob, opt, seed);
    detail::detect_party(chunks, offsets, true, opt.fiber_delay_alice,
                         party_dark_counts(params.alice.dark_rate_cps, opt.fiber_delay_alice, exposure, 4, dark_a),
                         bank_a, run.alice.tags);
    detail::detect_party(chunks, offsets, false, opt.fiber_delay_bob,
                         party_dark_counts(params.bob.dark_rate_cps, opt.fiber_delay_bob, exposure, 4, dark_b),
                         bank_b, run.bob.tags);
    sort_by_time(run.alice.tags);
    sort_by_time(run.bob.tags);
    return run;
}

// ---------------------------------------------------------------------------
// Timing analysis

/// Per-detector delays; a tag's corrected time is timestamp - delay.
struct DelayTable
{
    std::array<double, 4> alice{};
    std::array<double, 4> bob{};
    double residual_rms_ps = 0.0;
    std::size_t pairings_used = 0;

    double delay(const TimeTag& t) const { return (t.node == Party::Alice ? alice : bob)[t.detector & 3]; }

    SimTime corrected(const TimeTag& t) const
    {
        return t.timestamp - SimTime{static_cast<std::int64_t>(std::llround(delay(t)))};
    }
};

/// Histogram of Bob - Alice arrival differences; bin k is centred on k * bin_width.
struct CoincidenceHistogram
{
    double bin_width_ps = 100.0;
    std::int64_t first_bin = 0;
    std::vector<std::uint64_t> counts;
    double baseline = 0.0;
    double peak_height = 0.0; // above baseline
    std::optional<double> peak_offset_ps; // mu
    std::optional<double> fwhm_ps;

    double center(std::size_t i) const { return static_cast<double>(first_bin + static_cast<std::int64_t>(i)) * bin_width_ps; }
    std::uint64_t total() const
    {
        std::uint64_t s = 0;
        for (auto c : counts) {
            s += c;
        }
        return s;
    }
};

struct HistogramOptions
{
    SimTime bin_width{100};
    SimTime half_range{50'000};
    double prominence_sigma = 5.0; // peak must exceed baseline by this many sqrt(baseline)
};

namespace detail {

inline std::int64_t floor_div(std::int64_t a, std::int64_t b)
{
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) {
        --q;
    }
    return q;
}

inline double median(std::vector<double> v)
{
    if (v.empty()) {
        return 0.0;
    }
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

inline std::vector<double> box_smooth(const std::vector<double>& v, int width)
{
    std::vector<double> out(v.size(), 0.0);
    const int half = width / 2;
    const int n = static_cast<int>(v.size());
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        int used = 0;
        for (int k = i - half; k <= i + half; ++k) {
            if (k >= 0 && k < n) {
                acc += v[static_cast<std::size_t>(k)];
                ++used;
            }
        }
        out[static_cast<std::size_t>(i)] = acc / used;
    }
    return out;
}

// Width at `level` by linear interpolation, scanning inward from both ends.
inline std::optional<double> width_at(const std::vector<double>& y, double level, std::size_t peak)
{
    const std::size_t n = y.size();
    std::size_t lo = 0;
    while (lo < peak && y[lo] < level) {
        ++lo;
    }
    std::size_t hi = n - 1;
    while (hi > peak && y[hi] < level) {
        --hi;
    }
    if (lo == 0 || hi == n - 1) {
        return std::nullopt;
    }
    const double left = static_cast<double>(lo - 1) + (level - y[lo - 1]) / (y[lo] - y[lo - 1]);
    const double right = static_cast<double>(hi) + (y[hi] - level) / (y[hi] - y[hi + 1]);
    return right - left;
}

} // namespace detail

/// Locates the peak, its offset mu and FWHM. Leaves them empty when the peak
/// is not significant against the flat background.
inline void analyze_peak(CoincidenceHistogram& h, double prominence_sigma = 5.0)
{
    h.peak_offset_ps.reset();
    h.fwhm_ps.reset();
    if (h.counts.size() < 5) {
        return;
    }
    std::vector<double> y(h.counts.begin(), h.counts.end());
    h.baseline = detail::median(y);
    const auto smooth3 = detail::box_smooth(y, 3);
    const auto peak_it = std::max_element(smooth3.begin(), smooth3.end());
    const auto peak = static_cast<std::size_t>(peak_it - smooth3.begin());
    h.peak_height = *peak_it - h.baseline;
    if (h.peak_height < prominence_sigma * std::sqrt(std::max(h.baseline, 1.0))) {
        return;
    }

    // raw-bin estimate first; wide peaks are re-measured on a 5-bin box-smoothed
    // histogram and the box variance (2 bins^2) removed in quadrature
    std::vector<double> above(y.size());
    std::transform(y.begin(), y.end(), above.begin(), [&](double v) { return v - h.baseline; });
    const std::size_t raw_peak =
        static_cast<std::size_t>(std::max_element(above.begin(), above.end()) - above.begin());
    auto width = detail::width_at(above, 0.5 * h.peak_height, raw_peak);
    if (width && *width >= 10.0) {
        const auto smooth5 = detail::box_smooth(above, 5);
        const auto p5 = static_cast<std::size_t>(std::max_element(smooth5.begin(), smooth5.end()) - smooth5.begin());
        if (auto w5 = detail::width_at(smooth5, 0.5 * smooth5[p5], p5)) {
            width = std::sqrt(std::max(0.0, *w5 * *w5 - 8.0 * std::log(2.0) * 2.0));
        }
    }
    if (width) {
        h.fwhm_ps = *width * h.bin_width_ps;
    }

    // centroid of the baseline-subtracted peak
    const double reach = std::max(3.0, 1.5 * width.value_or(3.0));
    const auto lo = static_cast<std::ptrdiff_t>(std::max(0.0, static_cast<double>(peak) - reach));
    const auto hi = static_cast<std::ptrdiff_t>(
        std::min(static_cast<double>(y.size() - 1), static_cast<double>(peak) + reach));
    double w_sum = 0.0;
    double x_sum = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
        const double w = std::max(0.0, above[static_cast<std::size_t>(i)]);
        w_sum += w;
        x_sum += w * h.center(static_cast<std::size_t>(i));
    }
    h.peak_offset_ps = w_sum > 0.0 ? x_sum / w_sum : h.center(peak);
}

/// All-pairs histogram of (b - a) differences within +-half_range. Inputs sorted.
inline CoincidenceHistogram coincidence_histogram(const std::vector<SimTime>& a, const std::vector<SimTime>& b,
                                                  const HistogramOptions& opt = {})
{
    CoincidenceHistogram h;
    const std::int64_t w = opt.bin_width.ps;
    if (w <= 0) {
        throw DomainError("histogram bin width must be positive");
    }
    const std::int64_t kmax = opt.half_range.ps / w;
    h.bin_width_ps = static_cast<double>(w);
    h.first_bin = -kmax;
    h.counts.assign(static_cast<std::size_t>(2 * kmax + 1), 0);
    std::size_t lo = 0;
    for (SimTime ta : a) {
        while (lo < b.size() && b[lo].ps < ta.ps - opt.half_range.ps) {
            ++lo;
        }
        for (std::size_t k = lo; k < b.size() && b[k].ps <= ta.ps + opt.half_range.ps; ++k) {
            const std::int64_t bin = detail::floor_div(2 * (b[k].ps - ta.ps) + w, 2 * w);
            if (bin >= -kmax && bin <= kmax) {
                ++h.counts[static_cast<std::size_t>(bin + kmax)];
            }
        }
    }
    analyze_peak(h, opt.prominence_sigma);
    return h;
}

/// Corrected, sorted timestamps of one detector.
inline std::vector<SimTime> detector_times(const TimeTagStream& s, std::uint8_t detector, const DelayTable& delays = {})
{
    std::vector<SimTime> out;
    for (const auto& t : s.tags) {
        if (t.detector == detector) {
            out.push_back(delays.corrected(t));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Per-detector delays from the g2 peak displacement of every Alice/Bob
/// detector pairing, solved by least squares with Alice detector 0 fixed at 0.
/// Pairings without a significant peak are left out; the solve fails if the
/// remaining pairings do not determine every delay.
inline DelayTable synchronize(const TimeTagStream& a, const TimeTagStream& b, const HistogramOptions& opt = {})
{
    std::array<std::vector<SimTime>, 4> ta;
    std::array<std::vector<SimTime>, 4> tb;
    for (std::uint8_t d = 0; d < 4; ++d) {
        ta[d] = detector_times(a, d);
        tb[d] = detector_times(b, d);
    }
    struct Row
    {
        int i;
        int j;
        double offset;
    };
    std::vector<Row> rows;
    std::string missing;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            auto h = coincidence_histogram(ta[static_cast<std::size_t>(i)], tb[static_cast<std::size_t>(j)], opt);
            if (h.peak_offset_ps) {
                rows.push_back(Row{i, j, *h.peak_offset_ps});
            } else {
                missing += std::string(missing.empty() ? "" : ", ") + "A" + detector_label(i) + "/B" + detector_label(j);
            }
        }
    }
    // unknowns: alice[1..3] -> 0..2, bob[0..3] -> 3..6
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), 7);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        if (rows[r].i > 0) {
            m(ri, rows[r].i - 1) = -1.0;
        }
        m(ri, 3 + rows[r].j) = 1.0;
        y(ri) = rows[r].offset;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    if (rows.size() < 7 || qr.rank() < 7) {
        throw InsufficientStatistics("detector delays undetermined; pairings without a significant g2 peak: " +
                                     (missing.empty() ? std::string("none") : missing));
    }
    const Eigen::VectorXd x = qr.solve(y);
    DelayTable table;
    for (int k = 1; k < 4; ++k) {
        table.alice[static_cast<std::size_t>(k)] = x(k - 1);
    }
    for (int k = 0; k < 4; ++k) {
        table.bob[static_cast<std::size_t>(k)] = x(3 + k);
    }
    const Eigen::VectorXd resid = m * x - y;
    table.residual_rms_ps = std::sqrt(resid.squaredNorm() / static_cast<double>(rows.size()));
    table.pairings_used = rows.size();
    return table;
}

// ---------------------------------------------------------------------------
// Coincidences, sifting, metrics

struct Coincidence
{
    TimeTag alice;
    TimeTag bob;
    std::int64_t delta_ps = 0; // corrected bob - corrected alice

    bool is_true_pair() const { return alice.origin != 0 && alice.origin == bob.origin; }
};

/// Greedy chronological one-to-one matching: each Alice tag, in corrected time
/// order, takes the earliest unmatched Bob tag with |dt| <= t_c / 2.
inline std::vector<Coincidence> match_coincidences(const TimeTagStream& a, const TimeTagStream& b, SimTime t_c,
                                                   const DelayTable& delays = {})
{
    if (t_c <= SimTime::zero()) {
        throw DomainError("coincidence window must be positive");
    }
    auto corrected = [&](const TimeTagStream& s) {
        std::vector<std::pair<std::int64_t, std::size_t>> out;
        out.reserve(s.tags.size());
        for (std::size_t i = 0; i < s.tags.size(); ++i) {
            out.emplace_back(delays.corrected(s.tags[i]).ps, i);
        }
        std::stable_sort(out.begin(), out.end(),
                         [](const auto& x, const auto& y) { return x.first < y.first; });
        return out;
    };
    const auto ca = corrected(a);
    const auto cb = corrected(b);
    std::vector<char> used(cb.size(), 0);
    std::vector<Coincidence> out;
    std::size_t lo = 0;
    const std::int64_t window = t_c.ps;
    for (const auto& [t, ia] : ca) {
        while (lo < cb.size() && (used[lo] || 2 * (t - cb[lo].first) > window)) {
            ++lo;
        }
        for (std::size_t k = lo; k < cb.size() && 2 * (cb[k].first - t) <= window; ++k) {
            if (!used[k]) {
                used[k] = 1;
                out.push_back(Coincidence{a.tags[ia], b.tags[cb[k].second], cb[k].first - t});
                break;
            }
        }
    }
    return out;
}

/// Whether Bob's bit must be flipped to agree with Alice's for the agreed Bell state.
inline bool anticorrelated(BellState state, Basis basis)
{
    switch (state) {
    case BellState::PsiPlus: return basis == Basis::HV;
    case BellState::PsiMinus: return true;
    case BellState::PhiPlus: return false;
    case BellState::PhiMinus: return basis == Basis::AD;
    }
    return false;
}

struct SiftedKey
{
    std::vector<std::uint8_t> bits_alice;
    std::vector<std::uint8_t> bits_bob;
    std::vector<Basis> basis;
    std::uint64_t coincidences = 0;      // matched pairs before sifting
    std::uint64_t true_coincidences = 0; // of which from one emitted pair (simulation only)

    std::size_t size() const { return bits_alice.size(); }
    std::size_t errors() const
    {
        std::size_t e = 0;
        for (std::size_t i = 0; i < bits_alice.size(); ++i) {
            e += bits_alice[i] != bits_bob[i];
        }
        return e;
    }
};

inline SiftedKey sift(const std::vector<Coincidence>& pairs, BellState state = BellState::PsiPlus)
{
    SiftedKey key;
    key.coincidences = pairs.size();
    for (const auto& c : pairs) {
        key.true_coincidences += c.is_true_pair();
        if (c.alice.basis() != c.bob.basis()) {
            continue;
        }
        const int flip = anticorrelated(state, c.alice.basis()) ? 1 : 0;
        key.bits_alice.push_back(static_cast<std::uint8_t>(c.alice.bit()));
        key.bits_bob.push_back(static_cast<std::uint8_t>(c.bob.bit() ^ flip));
        key.basis.push_back(c.alice.basis());
    }
    return key;
}

struct EmpiricalKeyMetrics
{
    double singles_alice = 0.0;
    double singles_bob = 0.0;
    double true_coincidence_rate = 0.0;
    double accidental_rate = 0.0;
    double coincidence_rate = 0.0;
    double raw_key_rate = 0.0;
    double qber = 0.0;
    double secure_key_rate = 0.0;

    std::uint64_t raw_bit_count = 0;
    std::uint64_t error_bit_count = 0;
    std::uint64_t coincidence_count = 0;
    double raw_key_rate_se = 0.0;
    double coincidence_rate_se = 0.0;
    double qber_se = 0.0;
    double secure_key_rate_se = 0.0;

    bool qber_defined = false;
    bool low_statistics = false;
    double exposure_s = 0.0;
    std::int64_t t_c_ps = 0;
};

/// Keys with fewer sifted bits than this are flagged as low statistics.
inline constexpr std::uint64_t kLowStatisticsBits = 100;

inline EmpiricalKeyMetrics compute_metrics(const SiftedKey& key, double exposure_s, SimTime t_c)
{
    if (!(exposure_s > 0.0)) {
        throw DomainError("exposure must be positive");
    }
    EmpiricalKeyMetrics m;
    m.exposure_s = exposure_s;
    m.t_c_ps = t_c.ps;
    m.raw_bit_count = key.size();
    m.error_bit_count = key.errors();
    m.coincidence_count = key.coincidences;
    const double n = static_cast<double>(m.raw_bit_count);

    m.coincidence_rate = static_cast<double>(key.coincidences) / exposure_s;
    m.coincidence_rate_se = std::sqrt(static_cast<double>(key.coincidences)) / exposure_s;
    m.true_coincidence_rate = static_cast<double>(key.true_coincidences) / exposure_s;
    m.accidental_rate = m.coincidence_rate - m.true_coincidence_rate;
    m.raw_key_rate = n / exposure_s;
    m.raw_key_rate_se = std::sqrt(n) / exposure_s;
    m.low_statistics = m.raw_bit_count < kLowStatisticsBits;

    m.qber_defined = m.raw_bit_count > 0;
    if (!m.qber_defined) {
        m.qber = std::numeric_limits<double>::quiet_NaN();
        m.qber_se = std::numeric_limits<double>::quiet_NaN();
        return m;
    }
    m.qber = static_cast<double>(m.error_bit_count) / n;
    m.qber_se = std::sqrt(m.qber * (1.0 - m.qber) / n);
    m.secure_key_rate = analytic::secure_key_rate(m.raw_key_rate, std::min(m.qber, 0.5));
    if (m.secure_key_rate > 0.0) {
        const double factor = 1.0 - analytic::kErrorCorrectionFactor * analytic::binary_entropy(m.qber);
        const double slope = m.qber > 0.0 ? analytic::kErrorCorrectionFactor * std::log2((1.0 - m.qber) / m.qber) : 0.0;
        m.secure_key_rate_se = std::hypot(factor * m.raw_key_rate_se, m.raw_key_rate * slope * m.qber_se);
    }
    return m;
}

/// Match, sift and score two streams at one coincidence window.
inline EmpiricalKeyMetrics evaluate(const TimeTagStream& a, const TimeTagStream& b, SimTime t_c,
                                    const DelayTable& delays = {}, BellState state = BellState::PsiPlus)
{
    const double exposure = a.acquisition_duration_s;
    auto m = compute_metrics(sift(match_coincidences(a, b, t_c, delays), state), exposure, t_c);
    m.singles_alice = static_cast<double>(a.tags.size()) / exposure;
    m.singles_bob = static_cast<double>(b.tags.size()) / exposure;
    return m;
}

/// Joint outcome probabilities; rows Alice (H, V, D, A), columns Bob, each
/// 2x2 basis block normalized separately.
struct CorrelationMatrix
{
    std::array<std::array<double, 4>, 4> probability{};
    std::array<std::array<std::uint64_t, 4>, 4> counts{};
    std::array<std::array<std::uint64_t, 2>, 2> block_total{};

    std::uint64_t block_size(int row, int col) const
    {
        return block_total[static_cast<std::size_t>(row / 2)][static_cast<std::size_t>(col / 2)];
    }
};

inline CorrelationMatrix correlation_matrix(const std::vector<Coincidence>& pairs)
{
    CorrelationMatrix cm;
    for (const auto& c : pairs) {
        ++cm.counts[c.alice.detector & 3][c.bob.detector & 3];
        ++cm.block_total[(c.alice.detector & 3) / 2][(c.bob.detector & 3) / 2];
    }
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            const auto n = cm.block_size(r, c);
            cm.probability[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                n ? static_cast<double>(cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) /
                        static_cast<double>(n)
                  : 0.0;
        }
    }
    return cm;
}

} // namespace qkdsim::bbm92
