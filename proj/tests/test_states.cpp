#include "qkdsim/states.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qkdsim;

namespace {

Matrix4c bell_diagonal(const oracle::BellWeights& w)
{
    // oracle order: (0,0) Phi+, (0,1) Phi-, (1,0) Psi+, (1,1) Psi-
    const BellState order[4] = {BellState::PhiPlus, BellState::PhiMinus, BellState::PsiPlus, BellState::PsiMinus};
    Matrix4c m = Matrix4c::Zero();
    for (int k = 0; k < 4; ++k) {
        const Vector4c v = basis_states::bell(order[k]);
        m += w[static_cast<std::size_t>(k)] * (v * v.adjoint());
    }
    return m;
}

} // namespace

TEST(States, BellStatesAreOrthonormal)
{
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            const auto ip = basis_states::bell(static_cast<BellState>(i)).dot(basis_states::bell(static_cast<BellState>(j)));
            EXPECT_NEAR(std::abs(ip), i == j ? 1.0 : 0.0, 1e-15);
        }
    }
}

TEST(States, WernerFidelityAndPurity)
{
    for (double f : {0.25, 0.5, 0.8, 0.955, 1.0}) {
        const auto rho = werner(f);
        EXPECT_NEAR(fidelity(rho), f, 1e-14);
        EXPECT_NEAR(rho.trace(), 1.0, 1e-14);
        // purity of a Werner state: F^2 + (1-F)^2/3
        EXPECT_NEAR(rho.purity(), f * f + (1 - f) * (1 - f) / 3.0, 1e-14);
        EXPECT_TRUE(TwoQubitDensityMatrix::satisfies_invariants(rho.matrix()));
    }
    EXPECT_NEAR(werner(0.25).purity(), 0.25, 1e-14);
}

TEST(States, WernerOutsideDomainThrows)
{
    EXPECT_THROW(werner(0.2), DomainError);
    EXPECT_THROW(werner(1.0001), DomainError);
    EXPECT_THROW(werner(std::nan("")), DomainError);
}

TEST(States, InvalidMatricesAreRejected)
{
    Matrix4c m = Matrix4c::Identity() * 0.25;
    m(0, 1) = 0.1; // not Hermitian
    EXPECT_FALSE(TwoQubitDensityMatrix::satisfies_invariants(m));
    EXPECT_THROW(TwoQubitDensityMatrix{m}, DomainError);

    Matrix4c trace2 = Matrix4c::Identity() * 0.5;
    EXPECT_THROW(TwoQubitDensityMatrix{trace2}, DomainError);

    Matrix4c negative = Matrix4c::Zero();
    negative(0, 0) = 1.2;
    negative(1, 1) = -0.2;
    EXPECT_THROW(TwoQubitDensityMatrix{negative}, DomainError);
}

TEST(States, ConversionsRoundTrip)
{
    EXPECT_NEAR(qber_from_fidelity(1.0), 0.0, 1e-15);
    EXPECT_NEAR(qber_from_fidelity(0.25), 0.5, 1e-15);
    EXPECT_NEAR(fidelity_from_qber(0.03), 0.955, 1e-15);
    EXPECT_NEAR(qber_from_visibility(0.94), 0.03, 1e-15);
    EXPECT_NEAR(visibility_from_qber(0.03), 0.94, 1e-15);
    for (double q = 0.0; q <= 0.5; q += 0.05) {
        EXPECT_NEAR(qber_from_fidelity(fidelity_from_qber(q)), q, 1e-14);
    }
    EXPECT_NEAR(fidelity_from_three_basis_qber(0.03, 0.03, 0.03), 0.955, 1e-15);
    EXPECT_THROW(qber_from_fidelity(0.1), DomainError);
    EXPECT_THROW(fidelity_from_qber(0.6), DomainError);
    EXPECT_THROW(qber_from_visibility(-0.1), DomainError);
}

TEST(States, BornRuleMatchesClosedForm)
{
    for (double f : {0.25, 0.6, 0.955, 1.0}) {
        const auto rho = werner(f);
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                const auto p = outcome_probabilities(rho, static_cast<Basis>(a), static_cast<Basis>(b));
                double total = 0.0;
                for (int x = 0; x < 2; ++x) {
                    for (int y = 0; y < 2; ++y) {
                        EXPECT_NEAR(p[static_cast<std::size_t>(x * 2 + y)], oracle::werner_joint_probability(f, a, b, x, y),
                                    1e-14);
                        total += p[static_cast<std::size_t>(x * 2 + y)];
                    }
                }
                EXPECT_NEAR(total, 1.0, 1e-14);
            }
        }
    }
}

TEST(States, SampledOutcomesMatchBornRule)
{
    RandomStream pick(99, "test.pick");
    for (int trial = 0; trial < 6; ++trial) {
        const double f = 0.25 + 0.75 * pick.uniform();
        const auto a = static_cast<Basis>(pick.uniform_int(0, 1));
        const auto b = static_cast<Basis>(pick.uniform_int(0, 1));
        const auto rho = werner(f);
        RandomStream rng(7, "test.sample", static_cast<std::uint64_t>(trial));
        const int n = 100'000;
        std::array<int, 4> counts{};
        for (int i = 0; i < n; ++i) {
            const auto [x, y] = joint_measure(rho, MeasurementBasis{a}, MeasurementBasis{b}, rng);
            ++counts[static_cast<std::size_t>(x * 2 + y)];
        }
        for (int k = 0; k < 4; ++k) {
            const double p = oracle::werner_joint_probability(f, static_cast<int>(a), static_cast<int>(b), k / 2, k % 2);
            const double sigma = std::sqrt(p * (1 - p) / n);
            EXPECT_NEAR(counts[static_cast<std::size_t>(k)] / static_cast<double>(n), p, 3 * sigma + 1e-12)
                << "F=" << f << " k=" << k;
        }
    }
}

TEST(States, SwapOfIdealPairsIsIdeal)
{
    const auto out = swap(bell_psi_plus(), bell_psi_plus());
    EXPECT_NEAR(fidelity(out), 1.0, 1e-12);
    EXPECT_TRUE(TwoQubitDensityMatrix::satisfies_invariants(out.matrix()));
}

TEST(States, SwapMatchesBellDiagonalConvolution)
{
    for (double f1 : {0.8, 0.9, 0.95}) {
        for (double f2 : {0.7, 0.99}) {
            const auto out = swap(werner(f1), werner(f2));
            const auto w = oracle::swap_weights(oracle::werner_weights(f1), oracle::werner_weights(f2));
            EXPECT_NEAR(fidelity(out), w[2], 1e-12);
            EXPECT_LT((out.matrix() - bell_diagonal(w)).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
    // asymmetric Bell-diagonal inputs
    const oracle::BellWeights left{0.2, 0.0, 0.7, 0.1};
    const oracle::BellWeights right{0.05, 0.15, 0.6, 0.2};
    const auto out = swap(TwoQubitDensityMatrix(bell_diagonal(left)), TwoQubitDensityMatrix(bell_diagonal(right)));
    EXPECT_LT((out.matrix() - bell_diagonal(oracle::swap_weights(left, right))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(States, SwapOrderDoesNotMatterForWernerChains)
{
    const auto w = werner(0.9);
    const auto left_first = swap(swap(w, w), w);
    const auto right_first = swap(w, swap(w, w));
    EXPECT_LT((left_first.matrix() - right_first.matrix()).cwiseAbs().maxCoeff(), 1e-12);
}
