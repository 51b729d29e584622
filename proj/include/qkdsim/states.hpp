#pragma once

#include "qkdsim/errors.hpp"
#include "qkdsim/random.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <utility>

namespace qkdsim {

/// Per-party polarization measurement basis. HV is the Z basis, AD the X basis.
enum class Basis : std::uint8_t { HV = 0, AD = 1 };

inline const char* to_string(Basis b) { return b == Basis::HV ? "HV" : "AD"; }

/// Bell state a source is agreed to distribute; fixes the sifting bit map.
enum class BellState : std::uint8_t { PsiPlus, PsiMinus, PhiPlus, PhiMinus };

inline constexpr double kStateTolerance = 1e-12;

using Matrix4c = Eigen::Matrix4cd;
using Vector4c = Eigen::Vector4cd;
using Vector2c = Eigen::Vector2cd;

/// Two-qubit density matrix in the ordered basis {|HH>, |HV>, |VH>, |VV>}.
class TwoQubitDensityMatrix
{
public:
    /// Validates Hermiticity, unit trace and positivity to `kStateTolerance`.
    explicit TwoQubitDensityMatrix(const Matrix4c& m) : rho_(m) { validate(); }

    const Matrix4c& matrix() const { return rho_; }
    std::complex<double> operator()(int r, int c) const { return rho_(r, c); }

    double trace() const { return rho_.trace().real(); }
    double purity() const { return (rho_ * rho_).trace().real(); }

    /// <psi|rho|psi> for a normalized pure state.
    double overlap(const Vector4c& psi) const { return (psi.adjoint() * rho_ * psi)(0, 0).real(); }

    static bool satisfies_invariants(const Matrix4c& m, double tol = kStateTolerance)
    {
        if ((m - m.adjoint()).cwiseAbs().maxCoeff() > tol) {
            return false;
        }
        if (std::abs(m.trace() - std::complex<double>(1.0, 0.0)) > tol) {
            return false;
        }
        Eigen::SelfAdjointEigenSolver<Matrix4c> es(m);
        return es.eigenvalues().minCoeff() >= -tol;
    }

private:
    void validate() const
    {
        if (!satisfies_invariants(rho_)) {
            throw DomainError("matrix is not a valid density matrix");
        }
    }

    Matrix4c rho_;
};

namespace basis_states {

inline Vector2c H() { return Vector2c(1.0, 0.0); }
inline Vector2c V() { return Vector2c(0.0, 1.0); }
inline Vector2c D() { return Vector2c(M_SQRT1_2, M_SQRT1_2); }
inline Vector2c A() { return Vector2c(M_SQRT1_2, -M_SQRT1_2); }

/// Single-photon state selected by `bit` in `basis`: HV -> {H, V}, AD -> {D, A}.
inline Vector2c of(Basis basis, int bit)
{
    if (basis == Basis::HV) {
        return bit == 0 ? H() : V();
    }
    return bit == 0 ? D() : A();
}

inline Vector4c kron(const Vector2c& a, const Vector2c& b)
{
    Vector4c out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            out(2 * i + j) = a(i) * b(j);
        }
    }
    return out;
}

inline Vector4c bell(BellState which)
{
    const double s = M_SQRT1_2;
    switch (which) {
    case BellState::PsiPlus: return Vector4c(0.0, s, s, 0.0);
    case BellState::PsiMinus: return Vector4c(0.0, s, -s, 0.0);
    case BellState::PhiPlus: return Vector4c(s, 0.0, 0.0, s);
    case BellState::PhiMinus: return Vector4c(s, 0.0, 0.0, -s);
    }
    return {};
}

} // namespace basis_states

/// Projector pair of one party's measurement basis.
struct MeasurementBasis
{
    Basis label = Basis::HV;

    Eigen::Matrix2cd projector(int bit) const
    {
        const Vector2c v = basis_states::of(label, bit);
        return v * v.adjoint();
    }
};

inline TwoQubitDensityMatrix pure_state(const Vector4c& psi) { return TwoQubitDensityMatrix(psi * psi.adjoint()); }

inline TwoQubitDensityMatrix bell_psi_plus() { return pure_state(basis_states::bell(BellState::PsiPlus)); }

/// Werner state ((4F-1)/3)|Psi+><Psi+| + ((1-F)/3) I.
inline TwoQubitDensityMatrix werner(double fidelity)
{
    if (!(fidelity >= 0.25 && fidelity <= 1.0)) {
        throw DomainError("Werner fidelity must lie in [1/4, 1], got " + std::to_string(fidelity));
    }
    const Vector4c psi = basis_states::bell(BellState::PsiPlus);
    const Matrix4c m = ((4.0 * fidelity - 1.0) / 3.0) * (psi * psi.adjoint()) +
                       ((1.0 - fidelity) / 3.0) * Matrix4c::Identity();
    return TwoQubitDensityMatrix(m);
}

/// Fidelity with |Psi+>.
inline double fidelity(const TwoQubitDensityMatrix& rho) { return rho.overlap(basis_states::bell(BellState::PsiPlus)); }

inline double qber_from_fidelity(double f)
{
    if (!(f >= 0.25 && f <= 1.0)) {
        throw DomainError("fidelity must lie in [1/4, 1]");
    }
    return (1.0 - f) * 2.0 / 3.0;
}

inline double fidelity_from_qber(double qber)
{
    if (!(qber >= 0.0 && qber <= 0.5)) {
        throw DomainError("qber must lie in [0, 1/2]");
    }
    return 1.0 - 1.5 * qber;
}

inline double visibility_from_qber(double qber)
{
    if (!(qber >= 0.0 && qber <= 0.5)) {
        throw DomainError("qber must lie in [0, 1/2]");
    }
    return 1.0 - 2.0 * qber;
}

inline double qber_from_visibility(double v)
{
    if (!(v >= 0.0 && v <= 1.0)) {
        throw DomainError("visibility must lie in [0, 1]");
    }
    return (1.0 - v) / 2.0;
}

inline double fidelity_from_three_basis_qber(double qx, double qy, double qz)
{
    for (double q : {qx, qy, qz}) {
        if (!(q >= 0.0 && q <= 0.5)) {
            throw DomainError("per-basis qber must lie in [0, 1/2]");
        }
    }
    return 1.0 - (qx + qy + qz) / 2.0;
}

/// Joint Born-rule outcome probabilities, indexed [bit_a * 2 + bit_b].
inline std::array<double, 4> outcome_probabilities(const TwoQubitDensityMatrix& rho, Basis a, Basis b)
{
    std::array<double, 4> p{};
    for (int bit_a = 0; bit_a < 2; ++bit_a) {
        for (int bit_b = 0; bit_b < 2; ++bit_b) {
            const Vector4c ket = basis_states::kron(basis_states::of(a, bit_a), basis_states::of(b, bit_b));
            p[static_cast<std::size_t>(bit_a * 2 + bit_b)] = std::max(0.0, rho.overlap(ket));
        }
    }
    return p;
}

/// Outcome sampler with the four per-basis-pair distributions precomputed, so
/// the pre-measurement state is evaluated once and sampled many times.
class JointOutcomeSampler
{
public:
    explicit JointOutcomeSampler(const TwoQubitDensityMatrix& rho)
    {
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                auto p = outcome_probabilities(rho, static_cast<Basis>(a), static_cast<Basis>(b));
                auto& cdf = cdf_[static_cast<std::size_t>(a * 2 + b)];
                double acc = 0.0;
                for (std::size_t k = 0; k < 4; ++k) {
                    acc += p[k];
                    cdf[k] = acc;
                }
            }
        }
    }

    std::pair<int, int> sample(Basis a, Basis b, RandomStream& rng) const
    {
        const auto& cdf = cdf_[static_cast<std::size_t>(static_cast<int>(a) * 2 + static_cast<int>(b))];
        const double u = rng.uniform() * cdf[3];
        int k = 0;
        while (k < 3 && u >= cdf[static_cast<std::size_t>(k)]) {
            ++k;
        }
        return {k / 2, k % 2};
    }

private:
    std::array<std::array<double, 4>, 4> cdf_{};
};

/// Samples (bit_a, bit_b) from Tr(rho (Pi_a x Pi_b)).
inline std::pair<int, int> joint_measure(const TwoQubitDensityMatrix& rho, MeasurementBasis a, MeasurementBasis b,
                                         RandomStream& rng)
{
    return JointOutcomeSampler(rho).sample(a.label, b.label, rng);
}

namespace detail {

using Matrix16c = Eigen::Matrix<std::complex<double>, 16, 16>;

inline Matrix16c kron4(const Matrix4c& a, const Matrix4c& b)
{
    Matrix16c out;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            out.block<4, 4>(4 * i, 4 * j) = a(i, j) * b;
        }
    }
    return out;
}

// Qubits ordered (1,2,3,4), index = q1 q2 q3 q4 with q1 most significant.
// Projects qubits (2,3) onto |bell> and traces them out, leaving (1,4).
inline Matrix4c project_inner(const Matrix16c& rho, const Vector4c& bell)
{
    Matrix4c out = Matrix4c::Zero();
    for (int a1 = 0; a1 < 2; ++a1) {
        for (int a4 = 0; a4 < 2; ++a4) {
            for (int b1 = 0; b1 < 2; ++b1) {
                for (int b4 = 0; b4 < 2; ++b4) {
                    std::complex<double> acc = 0.0;
                    for (int m = 0; m < 4; ++m) {
                        for (int n = 0; n < 4; ++n) {
                            const int row = (a1 << 3) | (m << 1) | a4;
                            const int col = (b1 << 3) | (n << 1) | b4;
                            acc += std::conj(bell(m)) * rho(row, col) * bell(n);
                        }
                    }
                    out(a1 * 2 + a4, b1 * 2 + b4) = acc;
                }
            }
        }
    }
    return out;
}

inline std::array<Eigen::Matrix2cd, 4> paulis()
{
    using C = std::complex<double>;
    Eigen::Matrix2cd I = Eigen::Matrix2cd::Identity();
    Eigen::Matrix2cd X;
    X << 0, 1, 1, 0;
    Eigen::Matrix2cd Y;
    Y << 0, C(0, -1), C(0, 1), 0;
    Eigen::Matrix2cd Z;
    Z << 1, 0, 0, -1;
    return {I, X, Y, Z};
}

inline Matrix4c on_first(const Eigen::Matrix2cd& u)
{
    Matrix4c out = Matrix4c::Zero();
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            out.block<2, 2>(2 * i, 2 * j) = u(i, j) * Eigen::Matrix2cd::Identity();
        }
    }
    return out;
}

// For each Bell outcome on the inner pair, the Pauli correction on the
// outermost left qubit that maps the ideal Psi+ x Psi+ result back to Psi+.
inline const std::array<Matrix4c, 4>& swap_corrections()
{
    static const std::array<Matrix4c, 4> corrections = [] {
        std::array<Matrix4c, 4> out;
        const Vector4c target = basis_states::bell(BellState::PsiPlus);
        const Matrix4c ideal = target * target.adjoint();
        const Matrix16c joint = kron4(ideal, ideal);
        const auto ps = paulis();
        for (int k = 0; k < 4; ++k) {
            const Vector4c outcome = basis_states::bell(static_cast<BellState>(k));
            Matrix4c post = project_inner(joint, outcome);
            post /= post.trace();
            for (const auto& p : ps) {
                const Matrix4c u = on_first(p);
                const Matrix4c corrected = u * post * u.adjoint();
                if ((target.adjoint() * corrected * target)(0, 0).real() > 1.0 - 1e-12) {
                    out[static_cast<std::size_t>(k)] = u;
                    break;
                }
            }
        }
        return out;
    }();
    return corrections;
}

} // namespace detail

/// Deterministic entanglement swap: Bell measurement on the inner qubits of
/// (left, right), Pauli correction on the left end qubit, outcomes marginalized.
/// swap(Psi+, Psi+) == Psi+.
inline TwoQubitDensityMatrix swap(const TwoQubitDensityMatrix& left, const TwoQubitDensityMatrix& right)
{
    const auto joint = detail::kron4(left.matrix(), right.matrix());
    const auto& corrections = detail::swap_corrections();
    Matrix4c out = Matrix4c::Zero();
    for (int k = 0; k < 4; ++k) {
        const Matrix4c post = detail::project_inner(joint, basis_states::bell(static_cast<BellState>(k)));
        const Matrix4c& u = corrections[static_cast<std::size_t>(k)];
        out += u * post * u.adjoint();
    }
    out /= out.trace();
    // scrub rounding asymmetry before validation
    out = (0.5 * (out + out.adjoint())).eval();
    return TwoQubitDensityMatrix(out);
}

} // namespace qkdsim
