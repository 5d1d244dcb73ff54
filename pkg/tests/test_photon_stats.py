import json
import math
import pathlib
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ampmetro.exceptions import ConvergenceError, InsensitivePointError, PoissonRegimeWarning
from ampmetro.fisher import qfi_phase_dependent
from ampmetro.gaussian import ModeGaussian, ProtocolParams, output_state
from ampmetro.photon_stats import (
    aux_coeffs,
    averaged_sensitivity,
    averaged_signal,
    cfi,
    enhancement,
    kummer_u_poly,
    kummer_u_sequence,
    laguerre,
    mean_d,
    photon_pmf,
    photon_pmf_with_derivative,
    pmf_derivative,
    pmf_oracle,
    sensitivity,
    sensitivity_optimal,
    var_d,
    working_point,
)

from oracles import laguerre_series, poisson

GOLDEN = pathlib.Path(__file__).parent / "data" / "golden_pmf.json"


def shifted(m, h):
    """Mode whose displacement moved by h along its phase derivative (first order)."""
    return ModeGaussian(m.gamma + h * m.dgamma, m.g_eff, m.squeeze_phase, m.n_eff, m.dgamma)


def fd_cfi(p, h=1e-5, cutoff=100):
    """Finite-difference CFI from dense Fock-space distributions."""
    total = 0.0
    for k in range(2):
        up = pmf_oracle(output_state(p.replace(phi=p.phi + h)).modes()[k], cutoff).probs
        dn = pmf_oracle(output_state(p.replace(phi=p.phi - h)).modes()[k], cutoff).probs
        mid = pmf_oracle(output_state(p).modes()[k], cutoff).probs
        keep = mid > 1e-14
        total += np.sum(((up - dn)[keep] / (2 * h)) ** 2 / mid[keep])
    return total


class TestSpecialFunctions:
    def test_laguerre_low_orders(self):
        assert laguerre(0, 3.7) == 1
        assert laguerre(1, 3.7) == pytest.approx(1 - 3.7)

    @pytest.mark.parametrize("n, x", [(5, 2.5), (12, 0.3), (30, 7.0)])
    def test_laguerre_series(self, n, x):
        assert laguerre(n, x) == pytest.approx(laguerre_series(n, x), rel=1e-11, abs=1e-12)

    def test_laguerre_vectorized(self):
        x = np.linspace(0, 5, 7)
        assert np.allclose(laguerre(4, x), [laguerre(4, v) for v in x])

    def test_kummer_low_orders(self):
        assert kummer_u_poly(0, 0.5, 3.1) == 1
        assert kummer_u_poly(1, 0.5, 3.1) == pytest.approx(3.1 - 0.5)

    @given(st.integers(0, 25), st.sampled_from([0.5, 1.5]), st.floats(-30, 30))
    def test_kummer_high_precision(self, j, b, z):
        with mpmath.workdps(50):
            ref = mpmath.hyperu(-j, b, z)
            got = kummer_u_poly(j, mpmath.mpf(b), mpmath.mpf(z))
            assert abs(got - ref) <= 1e-30 * max(1, abs(ref))

    @pytest.mark.parametrize("j", [1, 2, 5, 9])
    def test_kummer_derivative_identity(self, j):
        z, h = -1.7, 1e-5
        fd = (kummer_u_poly(j, 0.5, z + h) - kummer_u_poly(j, 0.5, z - h)) / (2 * h)
        assert fd == pytest.approx(j * kummer_u_poly(j - 1, 1.5, z), rel=1e-7)

    def test_sequence_matches_single(self):
        seq = kummer_u_sequence(6, 1.5, 0.4)
        assert seq[4] == pytest.approx(kummer_u_poly(4, 1.5, 0.4))


class TestAuxCoeffs:
    def test_vacuum(self):
        aux = aux_coeffs(ModeGaussian())
        assert (aux.a_x, aux.a_p) == (2, 2)
        assert aux.b_x == aux.b_p == aux.c_x == aux.c_p == 0

    def test_undisplaced(self):
        aux = aux_coeffs(ModeGaussian(0, 0.8, 0.3, 0.4))
        assert aux.b_x == aux.b_p == aux.c_x == aux.c_p == 0
        assert aux.a_x >= 1 and aux.a_p >= 1

    @given(st.complex_numbers(max_magnitude=3), st.floats(0, 1.5), st.floats(-3, 3), st.floats(0, 3))
    def test_consistency(self, gamma, r, phase, n_eff):
        aux = aux_coeffs(ModeGaussian(gamma, r, phase, n_eff))
        assert aux.c_x == pytest.approx(aux.b_x * aux.x0, abs=1e-14)
        assert aux.c_p == pytest.approx(aux.b_p * aux.p0, abs=1e-14)
        assert aux.a_x >= 1 and aux.a_p >= 1
        assert aux.x0**2 + aux.p0**2 == pytest.approx(abs(gamma) ** 2, abs=1e-12)


class TestPmf:
    def test_vacuum(self):
        pmf = photon_pmf(ModeGaussian(), cutoff=5)
        assert pmf.probs[0] == pytest.approx(1, abs=1e-15)
        assert np.all(np.abs(pmf.probs[1:]) < 1e-15)

    @pytest.mark.parametrize("gamma", [0.3, 1.2 - 0.5j, 3j, 2.5 + 1.5j])
    def test_coherent_is_poisson(self, gamma):
        pmf = photon_pmf(ModeGaussian(gamma))
        ref = poisson(abs(gamma) ** 2, pmf.cutoff + 1)
        assert np.abs(pmf.probs - ref).max() < 1e-12

    @pytest.mark.parametrize("r, phase", [(0.4, 0.0), (1.0, 2.1), (1.2, -0.8)])
    def test_squeezed_vacuum(self, r, phase):
        pmf = photon_pmf(ModeGaussian(0, r, phase, 0))
        assert np.all(np.abs(pmf.probs[1::2]) < 1e-12)
        k = np.arange(0, pmf.cutoff + 1, 2) // 2
        t = math.tanh(r)
        ref = [
            math.exp(math.lgamma(2 * j + 1) - 2 * math.lgamma(j + 1) - j * math.log(4)) * t ** (2 * j) / math.cosh(r)
            for j in k
        ]
        assert np.abs(pmf.probs[::2] - ref).max() < 1e-12

    def test_golden(self):
        data = json.loads(GOLDEN.read_text())
        mode = data["mode"]
        m = ModeGaussian(complex(*mode["gamma"]), mode["g_eff"], mode["squeeze_phase"], mode["n_eff"])
        pmf = photon_pmf(m, cutoff=data["cutoff"])
        assert np.abs(pmf.probs - data["probs"]).max() < 1e-12

    @pytest.mark.parametrize("gamma", [0, 1.5 + 1j, 3.0])
    @pytest.mark.parametrize("r", [0.0, 0.6, 1.2])
    @pytest.mark.parametrize("n_eff", [0.0, 0.5, 2.0])
    def test_matches_fock_oracle(self, gamma, r, n_eff):
        m = ModeGaussian(gamma, r, 1.3, n_eff)
        pmf = photon_pmf(m, cutoff=30)
        ref = pmf_oracle(m, 30)
        assert np.abs(pmf.probs - ref.probs).max() < 1e-8
        # the reported tail is the true missing mass
        assert pmf.tail_bound == pytest.approx(ref.tail_bound, abs=1e-9)

    @given(st.complex_numbers(max_magnitude=3), st.floats(0, 1.2), st.floats(-3, 3), st.floats(0, 2))
    def test_normalization(self, gamma, r, phase, n_eff):
        pmf = photon_pmf(ModeGaussian(gamma, r, phase, n_eff), tol=1e-10)
        total = math.fsum(pmf.probs) + pmf.tail_bound
        assert abs(total - 1) <= 1e-9
        assert pmf.tail_bound <= 1e-10
        assert pmf.probs.min() >= 0

    def test_explicit_cutoff_with_tolerance(self):
        with pytest.raises(ConvergenceError):
            photon_pmf(ModeGaussian(3.0), cutoff=5, tol=1e-9)
        assert photon_pmf(ModeGaussian(3.0), cutoff=5).tail_bound > 0.5

    def test_large_photon_numbers_stay_accurate(self):
        # heavy cancellation in the alternating sum; the Poisson limit is exact
        pmf = photon_pmf(ModeGaussian(8.0), cutoff=150)
        ref = poisson(64.0, 151)
        assert np.max(np.abs(pmf.probs - ref) / np.maximum(ref, 1e-300)) < 1e-10


class TestDerivative:
    def test_phase_independent_mode(self):
        pmf, d = photon_pmf_with_derivative(ModeGaussian(1 + 1j, 0.5, 0.2, 0.3))
        assert np.all(d == 0)
        assert pmf_derivative(ModeGaussian(1 + 1j), 3) == 0

    @pytest.mark.parametrize(
        "m",
        [
            ModeGaussian(0.8 + 0.3j, 0.4, 0.7, 0.2, dgamma=0.3 - 0.5j),
            ModeGaussian(2 - 1j, 1.0, -1.1, 0.6, dgamma=1j),
            ModeGaussian(0.5j, 0.2, 2.0, 1.5, dgamma=-0.7),
        ],
    )
    def test_central_difference_order(self, m):
        cutoff = 30
        _, d = photon_pmf_with_derivative(m, cutoff=cutoff)
        errors = []
        for h in (0.02, 0.01):
            fd = (photon_pmf(shifted(m, h), cutoff).probs - photon_pmf(shifted(m, -h), cutoff).probs) / (2 * h)
            errors.append(np.abs(fd - d).max())
        assert errors[1] <= 1e-4
        assert math.log2(errors[0] / errors[1]) >= 1.9
        fd = (photon_pmf(shifted(m, 1e-4), cutoff).probs - photon_pmf(shifted(m, -1e-4), cutoff).probs) / 2e-4
        assert np.abs(fd - d).max() < 1e-7
        assert pmf_derivative(m, 4) == pytest.approx(d[4], rel=1e-12, abs=1e-15)

    @settings(max_examples=12)
    @given(st.complex_numbers(max_magnitude=3), st.floats(0, 1.2), st.floats(-3, 3), st.floats(0, 2), st.complex_numbers(max_magnitude=2))
    def test_conserves_probability(self, gamma, r, phase, n_eff, dgamma):
        _, d = photon_pmf_with_derivative(ModeGaussian(gamma, r, phase, n_eff, dgamma), tol=1e-10)
        assert abs(math.fsum(d)) < 1e-9


class TestCfi:
    def test_poisson_modes(self):
        p = ProtocolParams.from_beta_sq(4, g=0, eta=1, phi=math.pi / 2)
        value = cfi(p)
        assert value == pytest.approx(fd_cfi(p), rel=1e-6)
        assert value == pytest.approx(4, rel=1e-10)

    @pytest.mark.parametrize(
        "beta_sq, g, eta, phi",
        [(2, 0.5, 0.3, 1.0), (1, 1.0, 0.7, 0.4), (3, 0.3, 0.05, 2.2)],
    )
    def test_finite_difference_oracle(self, beta_sq, g, eta, phi):
        p = ProtocolParams.from_beta_sq(beta_sq, g=g, eta=eta, phi=phi, lam=0.3, theta=0.1)
        assert cfi(p) == pytest.approx(fd_cfi(p), rel=1e-6)

    @pytest.mark.parametrize("g", [0.0, 0.5, 1.0, 1.5])
    def test_information_ordering(self, g):
        p = working_point(ProtocolParams.from_beta_sq(9, g=g, eta=0.1))
        scale = qfi_phase_dependent(p)
        value = cfi(p)
        assert sensitivity(p) ** -2 <= value + 1e-6 * scale
        assert value <= scale + 1e-6 * scale

    def test_conventions_agree(self):
        p = ProtocolParams.from_beta_sq(3, g=0.9, eta=0.4, phi=1.1, lam=0.6)
        assert cfi(p, convention="waveplate") == pytest.approx(cfi(p, convention="no-waveplate"), rel=1e-10)

    def test_nonnegative_without_probe(self):
        assert cfi(ProtocolParams.from_beta_sq(0, g=1, eta=0.5)) == 0


class TestMoments:
    def test_mean_examples(self):
        p = ProtocolParams.from_beta_sq(5, g=0.8, eta=0.4, phi=math.pi / 2)
        assert mean_d(p) == pytest.approx(0, abs=1e-14)
        assert mean_d(ProtocolParams.from_beta_sq(5, g=0, eta=0.4, phi=0)) == pytest.approx(2.0)
        p = ProtocolParams.from_beta_sq(5, g=1, eta=0.4, phi=0)
        assert mean_d(p) == pytest.approx(0.4 * 5 * math.e**2, rel=1e-12)

    def test_variance_examples(self):
        st_ = var_d(ProtocolParams.from_beta_sq(6, g=0, eta=0.3, phi=math.pi / 2))
        assert (st_.a_coeff, st_.b_coeff) == (pytest.approx(6), 0)
        assert st_.var_d == pytest.approx(0.3 * 6)
        st_ = var_d(ProtocolParams.from_beta_sq(20, g=1, eta=0.5, phi=math.pi / 2))
        assert st_.a_coeff == pytest.approx(318.66, abs=5e-3)
        assert st_.var_d == pytest.approx(0.5 * st_.a_coeff)

    @pytest.mark.parametrize(
        "beta_sq, g, eta, phi, lam, theta",
        [(4, 0.7, 0.3, 1.1, 0.5, 0.2), (2, 1.1, 0.8, 0.3, -1.0, 0.4), (6, 0.4, 0.1, 2.5, 2.0, -0.3)],
    )
    def test_match_distribution_moments(self, beta_sq, g, eta, phi, lam, theta):
        p = ProtocolParams.from_beta_sq(beta_sq, g=g, eta=eta, phi=phi, lam=lam, theta=theta)
        h, v = (photon_pmf(m, tol=1e-13) for m in output_state(p).modes())
        assert mean_d(p) == pytest.approx(h.mean() - v.mean(), rel=1e-6, abs=1e-9)
        assert var_d(p).var_d == pytest.approx(h.variance() + v.variance(), rel=1e-6)

    def test_sensitivity_examples(self):
        p = ProtocolParams.from_beta_sq(7, g=0, eta=0.3, phi=math.pi / 2)
        assert sensitivity(p) == pytest.approx(1 / math.sqrt(7 * 0.3), rel=1e-12)
        p = ProtocolParams.from_beta_sq(20, g=1, eta=0.5, phi=math.pi / 2)
        assert sensitivity(p) == pytest.approx(0.17083, abs=5e-6)
        assert sensitivity(p) == pytest.approx(math.sqrt(318.66) / (20 * math.sqrt(0.5) * math.e**2), rel=1e-5)

    def test_large_gain_limit(self):
        p = ProtocolParams.from_beta_sq(20, g=8, eta=0.3)
        assert sensitivity_optimal(p) * math.sqrt(40) == pytest.approx(math.sqrt(1 + 1 / 40), rel=1e-4)

    def test_optimal_matches_working_point(self):
        p = ProtocolParams.from_beta_sq(9, g=0.9, eta=0.2, theta=0.7, phi=0.1, lam=-2)
        assert sensitivity_optimal(p) == pytest.approx(
            sensitivity(p.replace(phi=math.pi / 2, lam=2 * p.theta)), rel=1e-12
        )

    def test_insensitive_point(self):
        with pytest.raises(InsensitivePointError):
            sensitivity(ProtocolParams.from_beta_sq(4, g=1, eta=0.5, phi=0))

    def test_working_point_is_optimal(self):
        p = ProtocolParams.from_beta_sq(9, g=1.2, eta=0.3, theta=0.4, lam=0.8)
        phis = np.linspace(0.01, math.pi - 0.01, 3001)
        vals = [sensitivity(p.replace(phi=x)) for x in phis]
        assert abs(phis[int(np.argmin(vals))] - math.pi / 2) < 2 * (phis[1] - phis[0])


class TestAveraged:
    def test_working_point(self):
        p = ProtocolParams.from_beta_sq(3, g=0.5, eta=0.2, phi=math.pi / 2, lam=1.3)
        sig = averaged_signal(p)
        nb = math.sinh(0.5) ** 2
        assert sig.d == pytest.approx(0, abs=1e-15)
        assert sig.n_h == pytest.approx(0.2 * (nb + 3 * (1 + 2 * nb) / 2))
        assert sig.n_h == pytest.approx(sig.n_v)

    def test_no_gain(self):
        assert tuple(averaged_signal(ProtocolParams.from_beta_sq(3, eta=0.2, phi=0))) == pytest.approx((0.6, 0, 0.6))

    def test_experiment(self):
        p = ProtocolParams.from_beta_sq(22.8, g=3.3, eta=3.48e-5, phi=0)
        nb = math.sinh(3.3) ** 2
        sig = averaged_signal(p)
        assert sig.d == pytest.approx(3.48e-5 * 22.8 * (1 + 2 * nb), rel=1e-12)
        assert sig.d == pytest.approx(0.2916, abs=1e-4)
        assert sig.d == sig.n_h - sig.n_v

    def test_lam_is_ignored(self):
        p = ProtocolParams.from_beta_sq(4, g=1, eta=0.1, phi=0.7)
        assert averaged_signal(p) == averaged_signal(p.replace(lam=2.0))

    def test_sensitivity(self):
        p = ProtocolParams.from_beta_sq(5, eta=0.4, phi=math.pi / 2)
        assert averaged_sensitivity(p, warn=False) == pytest.approx(1 / math.sqrt(5 * 0.4))
        p = ProtocolParams.from_beta_sq(22.8, g=3.3, eta=3.48e-5, phi=math.pi / 2)
        assert averaged_sensitivity(p) ** 2 * 3.48e-5 == pytest.approx(1.2455e-4, rel=2e-4)

    def test_diverges_like_inverse_sine(self):
        p = ProtocolParams.from_beta_sq(5, g=1, eta=0.4)
        a = averaged_sensitivity(p.replace(phi=1e-3), warn=False)
        b = averaged_sensitivity(p.replace(phi=2e-3), warn=False)
        assert a / b == pytest.approx(math.sin(2e-3) / math.sin(1e-3), rel=1e-12)
        with pytest.raises(InsensitivePointError):
            averaged_sensitivity(p.replace(phi=0), warn=False)

    def test_regime_warning(self):
        with pytest.warns(PoissonRegimeWarning):
            averaged_sensitivity(ProtocolParams.from_beta_sq(22.8, g=3.3, eta=0.01, phi=1.0))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            averaged_sensitivity(ProtocolParams.from_beta_sq(22.8, g=3.3, eta=3.48e-5, phi=1.0))


class TestEnhancement:
    def test_self_reference(self):
        res = enhancement(ProtocolParams.from_beta_sq(9, eta=0.3), "unamplified-difference")
        assert res.value == pytest.approx(1)
        assert res.reference == "unamplified-difference"

    def test_experiment(self):
        p = ProtocolParams.from_beta_sq(22.8, g=3.3, eta=3.48e-5)
        res = enhancement(p, "homodyne-sql")
        assert res.value == pytest.approx(0.0219298 / 1.2455e-4, rel=1e-3)
        assert res.value == pytest.approx(176.07, abs=0.05)
        # eta cancels
        assert enhancement(p.replace(eta=1e-3)).value == pytest.approx(res.value, rel=1e-12)

    def test_unknown_reference(self):
        with pytest.raises(ValueError, match="reference"):
            enhancement(ProtocolParams(), "shot-noise")
