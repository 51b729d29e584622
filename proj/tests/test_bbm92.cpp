#include "qkdsim/bbm92.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qkdsim;
using namespace qkdsim::bbm92;
using namespace qkdsim::literals;

namespace {

TimeTagStream stream(Party p, std::vector<std::pair<std::uint8_t, std::int64_t>> tags, double duration = 1.0)
{
    TimeTagStream s;
    s.node = p;
    s.acquisition_duration_s = duration;
    for (auto [d, t] : tags) {
        s.tags.push_back(TimeTag{p, d, SimTime{t}, 0});
    }
    return s;
}

double z(double a, double sa, double b, double sb) { return std::abs(a - b) / std::hypot(sa, sb); }

} // namespace

TEST(Matching, WindowIsClosedAndSymmetric)
{
    const auto a = stream(Party::Alice, {{0, 1000}});
    EXPECT_EQ(match_coincidences(a, stream(Party::Bob, {{1, 2000}}), 2000_ps).size(), 1u);
    EXPECT_EQ(match_coincidences(a, stream(Party::Bob, {{1, 0}}), 2000_ps).size(), 1u);
    EXPECT_EQ(match_coincidences(a, stream(Party::Bob, {{1, 2001}}), 2000_ps).size(), 0u);
    EXPECT_EQ(match_coincidences(a, stream(Party::Bob, {{1, 2000}}), 1999_ps).size(), 0u);
    EXPECT_THROW(match_coincidences(a, a, 0_ps), DomainError);
}

TEST(Matching, GreedyOneToOne)
{
    // two Alice tags competing for one Bob tag: the earlier Alice tag wins
    const auto a = stream(Party::Alice, {{0, 100}, {0, 200}});
    const auto b = stream(Party::Bob, {{1, 150}});
    const auto pairs = match_coincidences(a, b, 1000_ps);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].alice.timestamp, 100_ps);
    EXPECT_EQ(pairs[0].delta_ps, 50);

    // each Alice tag takes the earliest unmatched Bob tag in its window
    const auto b2 = stream(Party::Bob, {{1, 90}, {1, 210}});
    const auto p2 = match_coincidences(a, b2, 1000_ps);
    ASSERT_EQ(p2.size(), 2u);
    EXPECT_EQ(p2[0].bob.timestamp, 90_ps);
    EXPECT_EQ(p2[1].bob.timestamp, 210_ps);
}

TEST(Matching, DelayCorrectionShiftsTimes)
{
    const auto a = stream(Party::Alice, {{0, 1000}});
    const auto b = stream(Party::Bob, {{2, 4500}});
    EXPECT_TRUE(match_coincidences(a, b, 2000_ps).empty());
    DelayTable d;
    d.bob[2] = 3500.0;
    const auto pairs = match_coincidences(a, b, 2000_ps, d);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].delta_ps, 0);
}

TEST(Sifting, BitMappingPerBellState)
{
    EXPECT_TRUE(anticorrelated(BellState::PsiPlus, Basis::HV));
    EXPECT_FALSE(anticorrelated(BellState::PsiPlus, Basis::AD));
    EXPECT_TRUE(anticorrelated(BellState::PsiMinus, Basis::AD));
    EXPECT_FALSE(anticorrelated(BellState::PhiPlus, Basis::HV));
    EXPECT_TRUE(anticorrelated(BellState::PhiMinus, Basis::AD));

    // H/V, D/D, H/D (discarded), V/V
    const auto a = stream(Party::Alice, {{0, 0}, {2, 10'000}, {0, 20'000}, {1, 30'000}});
    const auto b = stream(Party::Bob, {{1, 0}, {2, 10'000}, {2, 20'000}, {1, 30'000}});
    const auto key = sift(match_coincidences(a, b, 1000_ps));
    EXPECT_EQ(key.coincidences, 4u);
    ASSERT_EQ(key.size(), 3u);
    EXPECT_EQ(key.errors(), 1u); // V/V is an error for Psi+
    const auto phi = sift(match_coincidences(a, b, 1000_ps), BellState::PhiPlus);
    EXPECT_EQ(phi.errors(), 1u); // H/V is the error for Phi+
}

TEST(Metrics, EmptyKeyHasUndefinedQber)
{
    const auto a = stream(Party::Alice, {{0, 0}});
    const auto b = stream(Party::Bob, {{0, 1'000'000}});
    const auto m = evaluate(a, b, 1000_ps);
    EXPECT_FALSE(m.qber_defined);
    EXPECT_TRUE(std::isnan(m.qber));
    EXPECT_TRUE(m.low_statistics);
    EXPECT_EQ(m.raw_key_rate, 0.0);
    EXPECT_EQ(m.secure_key_rate, 0.0);
    EXPECT_THROW(compute_metrics(SiftedKey{}, 0.0, 1000_ps), DomainError);
}

TEST(Metrics, StandardErrors)
{
    SiftedKey key;
    for (int i = 0; i < 1000; ++i) {
        key.bits_alice.push_back(0);
        key.bits_bob.push_back(i < 50 ? 1 : 0);
        key.basis.push_back(Basis::HV);
    }
    key.coincidences = 2000;
    const auto m = compute_metrics(key, 2.0, 1000_ps);
    EXPECT_NEAR(m.raw_key_rate, 500.0, 1e-12);
    EXPECT_NEAR(m.raw_key_rate_se, std::sqrt(1000.0) / 2.0, 1e-12);
    EXPECT_NEAR(m.qber, 0.05, 1e-15);
    EXPECT_NEAR(m.qber_se, std::sqrt(0.05 * 0.95 / 1000), 1e-15);
    EXPECT_NEAR(m.coincidence_rate, 1000.0, 1e-12);
    EXPECT_FALSE(m.low_statistics);
    EXPECT_GT(m.secure_key_rate, 0.0);
    EXPECT_GT(m.secure_key_rate_se, 0.0);
}

TEST(Protocol, EventDrivenRunIsDeterministic)
{
    ExperimentParams p;
    p.acquisition_time_s = 0.02;
    const auto r1 = run_protocol(p, 11);
    const auto r2 = run_protocol(p, 11);
    EXPECT_EQ(r1.alice, r2.alice);
    EXPECT_EQ(r1.bob, r2.bob);
    EXPECT_EQ(r1.report, r2.report);
    const auto r3 = run_protocol(p, 12);
    EXPECT_NE(r1.alice, r3.alice);
    EXPECT_EQ(r1.report.detections_per_node[1], r1.alice.tags.size());
    EXPECT_EQ(r1.report.detections_per_node[2], r1.bob.tags.size());
}

TEST(Protocol, MultishotIsIndependentOfThreadCount)
{
    ExperimentParams p;
    SimulationOptions serial;
    serial.threads = 1;
    serial.chunk_shots = 10'000;
    SimulationOptions parallel = serial;
    parallel.threads = 4;
    const auto a = run_protocol_multishot(p, 100'000, 5, serial);
    const auto b = run_protocol_multishot(p, 100'000, 5, parallel);
    EXPECT_EQ(a.alice, b.alice);
    EXPECT_EQ(a.bob, b.bob);
    EXPECT_THROW(run_protocol_multishot(p, 0, 5), ConfigError);
}

TEST(Protocol, EventDrivenAndMultishotAgree)
{
    ExperimentParams p;
    p.acquisition_time_s = 0.5;
    const auto des = run_protocol(p, 21);
    const auto fast = run_protocol_multishot(p, 1'500'000, 22);
    for (auto [x, y] : {std::pair{&des.alice, &fast.alice}, std::pair{&des.bob, &fast.bob}}) {
        const double rx = x->tags.size() / des.exposure_s;
        const double ry = y->tags.size() / fast.exposure_s;
        EXPECT_LT(z(rx, std::sqrt(x->tags.size()) / des.exposure_s, ry, std::sqrt(y->tags.size()) / fast.exposure_s), 4.0);
    }
    const auto m1 = evaluate(des.alice, des.bob, 2000_ps);
    const auto m2 = evaluate(fast.alice, fast.bob, 2000_ps);
    EXPECT_LT(z(m1.raw_key_rate, m1.raw_key_rate_se, m2.raw_key_rate, m2.raw_key_rate_se), 4.0);
    EXPECT_LT(z(m1.qber, m1.qber_se, m2.qber, m2.qber_se), 4.0);
}

TEST(Protocol, SiftingKeepsHalf)
{
    const auto run = run_protocol_multishot(ExperimentParams{}, 2'000'000, 31);
    const auto key = sift(match_coincidences(run.alice, run.bob, 2000_ps));
    const double n = static_cast<double>(key.coincidences);
    EXPECT_NEAR(key.size() / n, 0.5, 3 * std::sqrt(0.25 / n));
}

TEST(Protocol, MatchCountGrowsWithWindow)
{
    const auto run = run_protocol_multishot(ExperimentParams{}, 300'000, 32);
    std::size_t last = 0;
    for (std::int64_t t_c = 10; t_c <= 10'000'000; t_c *= 3) {
        const auto n = match_coincidences(run.alice, run.bob, SimTime{t_c}).size();
        EXPECT_GE(n, last);
        last = n;
    }
}

TEST(Protocol, PerfectSourceCorrelationBlocks)
{
    ExperimentParams p;
    p.source_fidelity = 1.0;
    p.optics_error_prob = 0.0;
    const auto run = run_protocol_multishot(p, 1'000'000, 33);
    const auto cm = correlation_matrix(match_coincidences(run.alice, run.bob, 1000_ps));
    // Psi+: H-V and V-H in HV, D-D and A-A in AD
    EXPECT_GT(cm.probability[0][1], 0.45);
    EXPECT_GT(cm.probability[2][2], 0.45);
    EXPECT_LT(cm.probability[0][0], 0.02);
    EXPECT_LT(cm.probability[2][3], 0.02);
    for (int r = 0; r < 2; ++r) {
        for (int c = 2; c < 4; ++c) {
            EXPECT_NEAR(cm.probability[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)], 0.25, 0.06);
        }
    }
}

TEST(Histogram, DeltaPeakOfZeroJitter)
{
    std::vector<SimTime> a;
    std::vector<SimTime> b;
    for (int i = 0; i < 5000; ++i) {
        a.push_back(SimTime{i * 1'000'000LL});
        b.push_back(SimTime{i * 1'000'000LL + 700});
    }
    const auto h = coincidence_histogram(a, b);
    ASSERT_TRUE(h.peak_offset_ps.has_value());
    EXPECT_NEAR(*h.peak_offset_ps, 700.0, 1e-9);
    ASSERT_TRUE(h.fwhm_ps.has_value());
    EXPECT_LE(*h.fwhm_ps, 200.0);
}

TEST(Histogram, FlatBackgroundHasNoPeak)
{
    RandomStream rng(3, "test.flat");
    const auto a = poisson_times(2e6, SimTime::from_seconds(0.2), rng);
    const auto b = poisson_times(2e6, SimTime::from_seconds(0.2), rng);
    const auto h = coincidence_histogram(a, b);
    EXPECT_GT(h.total(), 10'000u);
    EXPECT_FALSE(h.peak_offset_ps.has_value());
    EXPECT_FALSE(h.fwhm_ps.has_value());
}

TEST(Synchronize, RecoversInjectedDelay)
{
    SimulationOptions opt;
    opt.bob_skew.delay[2] = 3500_ps;
    opt.alice_skew.delay[3] = -1200_ps;
    const auto run = run_protocol_multishot(ExperimentParams{}, 3'000'000, 41, opt);
    const auto d = synchronize(run.alice, run.bob);
    EXPECT_GE(d.pairings_used, 7u);
    EXPECT_NEAR(d.bob[2] - d.bob[0], 3500.0, 100.0);
    EXPECT_NEAR(d.alice[3], -1200.0, 100.0);
    EXPECT_NEAR(d.bob[1] - d.bob[0], 0.0, 100.0);

    // with delays corrected the 2 ns window recovers the lost D/D coincidences
    const auto raw = evaluate(run.alice, run.bob, 2000_ps);
    const auto fixed = evaluate(run.alice, run.bob, 2000_ps, d);
    EXPECT_GT(fixed.raw_key_rate, raw.raw_key_rate * 1.1);
}

TEST(Synchronize, TooFewPairingsIsInsufficientStatistics)
{
    const auto run = run_protocol_multishot(ExperimentParams{}, 2'000, 42);
    EXPECT_THROW(synchronize(run.alice, run.bob), InsufficientStatistics);
}
