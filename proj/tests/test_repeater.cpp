#include "qkdsim/repeater.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qkdsim;
using namespace qkdsim::repeater;

TEST(Repeater, ParamsValidation)
{
    auto p = RepeaterChainParams::from_exponent(1, 1000.0, 0.0, 1.0);
    EXPECT_EQ(p.links, 2);
    EXPECT_EQ(p.repeaters(), 1);
    EXPECT_NEAR(p.p0(), 0.5, 1e-15);
    EXPECT_EQ(p.period(), p.half_period() + p.half_period());
    EXPECT_THROW(RepeaterChainParams::from_exponent(-1, 1000.0, 0.0, 1.0), ConfigError);
    p.elementary_fidelity = 0.2;
    EXPECT_THROW(p.validate(), ConfigError);
    p = RepeaterChainParams{};
    p.l0_m = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Repeater, EndToEndLossSplitsEvenly)
{
    const auto p = RepeaterChainParams::for_end_to_end(3, 100e3, 20.0, 0.9);
    EXPECT_EQ(p.links, 4);
    EXPECT_NEAR(p.link_loss_db, 5.0, 1e-15);
    EXPECT_NEAR(p.l0_m, 25e3, 1e-9);
}

TEST(Repeater, CertainLinkTakesOnePeriod)
{
    RepeaterChainParams p;
    p.links = 1;
    p.l0_m = 2000.0;
    p.success_probability = 1.0;
    const auto rec = simulate_chain(p, 1);
    EXPECT_EQ(rec.completion_time, p.period());
    EXPECT_NEAR(rec.completion_time.seconds(), 2000.0 / kSpeedOfLight, 1e-12);
    EXPECT_EQ(rec.attempts, std::vector<std::uint64_t>{1});
}

TEST(Repeater, CompletionIsMaxOfLinkAttempts)
{
    const auto p = RepeaterChainParams::from_exponent(2, 5000.0, 3.0, 0.95);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto rec = simulate_chain(p, seed);
        ASSERT_EQ(rec.attempts.size(), 4u);
        const auto most = *std::max_element(rec.attempts.begin(), rec.attempts.end());
        EXPECT_EQ(rec.completion_time.ps, static_cast<std::int64_t>(most) * p.period().ps);
    }
}

TEST(Repeater, MeanCompletionMatchesBinomialSum)
{
    for (int n : {0, 1, 2, 3}) {
        for (double eta : {0.2, 0.5, 1.0}) { // P0 = 0.1, 0.25, 0.5
            RepeaterChainParams p = RepeaterChainParams::from_exponent(n, 1000.0, db_from_transmission(eta), 1.0);
            const auto r = entanglement_rate(p, 10'000, 100 + static_cast<std::uint64_t>(n));
            const double expected = analytic::expected_attempt_periods(p.links, p.p0());
            EXPECT_NEAR(r.mean_periods, expected, 3 * r.mean_periods_se) << "n=" << n << " P0=" << p.p0();
        }
    }
}

TEST(Repeater, ThreeLinkChainMatchesMonteCarlo)
{
    auto p = RepeaterChainParams::for_end_to_end(2, 30e3, 0.0, 1.0);
    const auto r = entanglement_rate(p, 10'000, 7);
    const double mc = oracle::mc_max_geometric(3, 0.5, 1'000'000, 99);
    EXPECT_NEAR(r.mean_periods, mc, 3 * r.mean_periods_se);
}

TEST(Repeater, TwoLinkRateIsThreeEighths)
{
    const auto p = RepeaterChainParams::from_exponent(1, 1000.0, 0.0, 1.0);
    const auto r = entanglement_rate(p, 1000, 3);
    EXPECT_NEAR(r.rate_c_over_l0, 3.0 / 8.0, 3 * r.rate_se);
}

TEST(Repeater, SingleLossyLinkRate)
{
    const auto p = RepeaterChainParams::from_exponent(0, 1000.0, 10.0, 1.0);
    EXPECT_NEAR(p.p0(), 0.05, 1e-15);
    const auto r = entanglement_rate(p, 10'000, 4);
    EXPECT_NEAR(r.mean_periods, 20.0, 3 * r.mean_periods_se);
    EXPECT_NEAR(r.rate_c_over_l0, 0.05, 3 * r.rate_se);
}

TEST(Repeater, RateDecreasesWithLoss)
{
    double last = 1e9;
    for (double loss : {0.0, 2.0, 5.0, 10.0}) {
        const auto p = RepeaterChainParams::from_exponent(1, 1000.0, loss, 1.0);
        const double rate = entanglement_rate(p, 4000, 5).rate_c_over_l0;
        EXPECT_LT(rate, last);
        last = rate;
    }
}

TEST(Repeater, EndToEndStateFidelity)
{
    for (int r = 0; r <= 3; ++r) {
        for (double f : {0.8, 0.9, 0.95, 1.0}) {
            EXPECT_NEAR(fidelity(end_to_end_state(r + 1, f)), analytic::swapped_fidelity(f, r), 1e-12);
        }
    }
    EXPECT_NEAR(fidelity(simulate_chain(RepeaterChainParams::from_exponent(1, 1e3, 0.0, 0.95), 1).end_to_end_state),
                0.903333333333333, 1e-12);
}

TEST(Repeater, SecureKeyRate)
{
    // perfect links: no errors, secure = raw = rate / 2
    const auto ideal = chain_secure_key_rate(RepeaterChainParams::from_exponent(1, 1e3, 0.0, 1.0), 1000, 1);
    EXPECT_NEAR(ideal.qber, 0.0, 1e-12);
    EXPECT_NEAR(ideal.secure_key_rate_c_over_l0, 0.5 * ideal.entanglement.rate_c_over_l0, 1e-12);
    EXPECT_NEAR(ideal.secure_key_rate_cps, ideal.secure_key_rate_c_over_l0 * kSpeedOfLight / 1e3, 1e-6 * ideal.secure_key_rate_cps);

    // three repeaters at F_i = 0.95: F = 0.8192, QBER above threshold
    const auto noisy = chain_secure_key_rate(RepeaterChainParams::for_end_to_end(3, 100e3, 5.0, 0.95), 200, 2);
    EXPECT_NEAR(noisy.fidelity, 0.8192, 1e-4);
    EXPECT_NEAR(noisy.qber, 0.1205, 1e-4);
    EXPECT_GT(noisy.qber, oracle::secure_threshold_qber());
    EXPECT_EQ(noisy.secure_key_rate_c_over_l0, 0.0);
}

TEST(Repeater, ChargedSignalingOnlyDelays)
{
    auto p = RepeaterChainParams::from_exponent(1, 1000.0, 0.0, 1.0);
    const auto free = simulate_chain(p, 9);
    p.charge_swap_signaling = true;
    const auto charged = simulate_chain(p, 9);
    EXPECT_EQ(free.attempts, charged.attempts);
    EXPECT_GE(charged.completion_time, free.completion_time);
}

TEST(Repeater, ZeroSuccessProbabilityIsDomainError)
{
    RepeaterChainParams p;
    p.link_loss_db = 1e6;
    EXPECT_THROW(entanglement_rate(p, 10, 1), DomainError);
}
