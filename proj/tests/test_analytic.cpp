#include "qkdsim/analytic.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qkdsim;
using namespace qkdsim::analytic;

TEST(Analytic, WindowEfficiencyMatchesErfSeries)
{
    for (double t_c : {10.0, 100.0, 800.0, 1600.0, 2000.0, 5000.0}) {
        const double expected =
            static_cast<double>(oracle::erf_series(std::sqrt(std::log(2.0L)) * t_c / 1600.0L));
        EXPECT_NEAR(coincidence_window_efficiency(t_c, 1600.0), expected, 1e-14);
    }
    EXPECT_EQ(coincidence_window_efficiency(10.0, 0.0), 1.0);
    EXPECT_THROW(coincidence_window_efficiency(0.0, 1600.0), DomainError);
}

TEST(Analytic, WindowEfficiencyIsMonotone)
{
    double last = 0.0;
    for (double t_c = 1.0; t_c < 1e6; t_c *= 1.1) {
        const double v = coincidence_window_efficiency(t_c, 1600.0);
        EXPECT_GE(v, last);
        EXPECT_LE(v, 1.0);
        last = v;
    }
    EXPECT_NEAR(last, 1.0, 1e-15);
}

TEST(Analytic, DeadTimeEfficiency)
{
    EXPECT_EQ(dead_time_efficiency(1e6, 1.0, 1.0, 0.0, 0.0, 4), 1.0);
    // (B eta eta_D + D) t_d / n_d = 1 halves the efficiency
    EXPECT_NEAR(dead_time_efficiency(1e6, 0.5, 0.8, 0.0, 1e-5, 4), 0.5, 1e-15);
    EXPECT_THROW(dead_time_efficiency(1e6, 1.0, 1.0, 0.0, 1e-9, 0), DomainError);
}

TEST(Analytic, AccidentalsSmallWindowLimit)
{
    // (1 - e^{-S_A t})(1 - e^{-S_B t}) / t -> S_A S_B t
    EXPECT_NEAR(accidental_rate(5e4, 6e4, 1e-12) / (5e4 * 6e4 * 1e-12), 1.0, 1e-6);
    // saturates: for huge windows the rate falls off as 1/t_c
    EXPECT_NEAR(accidental_rate(5e4, 6e4, 10.0), 0.1, 1e-12);
    EXPECT_THROW(accidental_rate(1.0, 1.0, 0.0), DomainError);
}

TEST(Analytic, QberPrediction)
{
    EXPECT_NEAR(qber_prediction(1000.0, 0.0, 0.03), 0.03, 1e-15);
    // accidentals only: half of them in the sifted key, half of those wrong
    EXPECT_NEAR(qber_prediction(1000.0, 1000.0, 0.0), 0.5, 1e-15);
    EXPECT_THROW(qber_prediction(0.0, 0.0, 0.03), UndefinedRateError);
}

TEST(Analytic, BinaryEntropyMatchesOracle)
{
    for (double q : {0.0, 1e-9, 0.01, 0.03, 0.1022, 0.25, 0.5, 0.9, 1.0}) {
        EXPECT_NEAR(binary_entropy(q), static_cast<double>(oracle::entropy(q)), 1e-14);
    }
    EXPECT_THROW(binary_entropy(-0.1), DomainError);
}

TEST(Analytic, SecureRateThreshold)
{
    const double q_star = oracle::secure_threshold_qber();
    EXPECT_NEAR(q_star, 0.1022, 0.0005);
    EXPECT_GT(secure_key_rate(1000.0, q_star - 1e-4), 0.0);
    EXPECT_EQ(secure_key_rate(1000.0, q_star + 1e-6), 0.0);
    EXPECT_EQ(secure_key_rate(1000.0, 0.3), 0.0);
    EXPECT_EQ(secure_key_rate(1000.0, 0.0), 1000.0);
    EXPECT_THROW(secure_key_rate(-1.0, 0.0), DomainError);
}

TEST(Analytic, SecureRateNonIncreasingInQber)
{
    double last = secure_key_rate(1.0, 0.0);
    for (double q = 0.0; q <= 0.5; q += 1e-4) {
        const double s = secure_key_rate(1.0, q);
        EXPECT_LE(s, last + 1e-15);
        last = s;
    }
}

TEST(Analytic, FullModelMatchesIndependentRecomputation)
{
    ExperimentParams p = ExperimentParams::table1();
    for (std::int64_t t_c : {100, 1000, 2000, 10000, 100000, 5000000}) {
        p.coincidence_window = SimTime{t_c};
        const auto m = full_model(p);
        const auto o = oracle::bbm92_rates(1.5e6, 12, 12, 0.6, 45e-9, 500, 1800, 1600e-12, t_c * 1e-12, 0.03);
        EXPECT_NEAR(m.singles_alice / o.singles_a, 1.0, 1e-12);
        EXPECT_NEAR(m.singles_bob / o.singles_b, 1.0, 1e-12);
        EXPECT_NEAR(m.true_coincidence_rate / o.true_rate, 1.0, 1e-12);
        EXPECT_NEAR(m.accidental_rate / o.accidental, 1.0, 1e-9);
        EXPECT_NEAR(m.raw_key_rate / o.raw, 1.0, 1e-12);
        EXPECT_NEAR(m.qber, o.qber, 1e-12);
    }
}

TEST(Analytic, FullModelValidatesParameters)
{
    ExperimentParams p;
    p.loss_alice_db = -1.0;
    try {
        full_model(p);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "loss_alice_db");
    }
}

TEST(Analytic, ExpectedAttemptsClosedForms)
{
    EXPECT_NEAR(expected_attempt_periods(1, 0.05), 20.0, 1e-12);
    EXPECT_NEAR(expected_attempt_periods(2, 0.5), 8.0 / 3.0, 1e-14);
    EXPECT_NEAR(expected_attempt_periods(1, 1.0), 1.0, 1e-15);
    for (int links : {1, 2, 3, 4, 8}) {
        for (double p0 : {0.1, 0.25, 0.5}) {
            EXPECT_NEAR(expected_attempt_periods(links, p0), oracle::survival_max_geometric(links, p0), 1e-9);
        }
    }
    EXPECT_THROW(expected_attempt_periods(0, 0.5), DomainError);
    EXPECT_THROW(expected_attempt_periods(2, 0.0), DomainError);
}

TEST(Analytic, TwoLinkConstantAgreesWithMonteCarlo)
{
    const double mc = oracle::mc_max_geometric(2, 0.5, 1'000'000, 2024);
    // sd of max of two geometric(1/2) is about 1.25
    EXPECT_NEAR(mc, 8.0 / 3.0, 3 * 1.25 / 1000.0);
    EXPECT_NEAR(expected_attempt_periods(2, 0.5), mc, 3 * 1.25 / 1000.0);
}

TEST(Analytic, RepeaterExpectedTime)
{
    const double l0 = 10e3;
    EXPECT_NEAR(repeater_expected_time(1, l0, 0.5), 8.0 / 3.0 * l0 / kSpeedOfLight, 1e-18);
    EXPECT_NEAR(repeater_expected_time(0, l0, 0.5, 1.5), 2.0 * 1.5 * l0 / kSpeedOfLight, 1e-18);
    EXPECT_THROW(repeater_expected_time(1, l0, 0.0), DomainError);
    EXPECT_NEAR(link_success_probability(1.0), 0.5, 0.0);
}

TEST(Analytic, SwappedFidelity)
{
    EXPECT_NEAR(swapped_fidelity(0.95, 1), 0.25 + 0.75 * std::pow(2.8 / 3.0, 2), 1e-15);
    EXPECT_NEAR(swapped_fidelity(0.95, 1), 0.903333333333333, 1e-12);
    EXPECT_NEAR(swapped_fidelity(0.95, 3), 0.8192, 1e-4);
    EXPECT_NEAR(swapped_fidelity(1.0, 3), 1.0, 1e-15);
    for (int r = 0; r < 4; ++r) {
        EXPECT_NEAR(swapped_fidelity(0.9, r), oracle::chain_fidelity(r + 1, 0.9), 1e-14);
    }
}
