"""Gaussian output state of the amplified interferometer.

The probe ``|alpha>_H |0>_V`` picks up the phase ``phi``, is attenuated by
the sample (transmission ``xi``), passes a quarter-wave plate on V, is
squeezed in opposite directions on H and V by the parametric amplifier
(gain ``g``, pump phase ``lam``) and is finally attenuated by the detectors
(efficiency ``eta``).  Every stage maps Gaussian states to Gaussian states,
so each output mode is a displaced squeezed thermal state

    rho_l = D(gamma_l) S(r_l e^{i phase_l}) rho_th(N_l) S^dag D^dag

with ``S(z) = exp[(z* a^2 - z a^dag^2) / 2]``, for which
``S^dag a S = a cosh r - a^dag e^{i phase} sinh r``.

Squeezing convention
--------------------
A signed per-mode gain ``-g`` is stored as magnitude ``g`` with the squeeze
phase shifted by ``pi``.  The effective squeezing after loss keeps the phase
of the input squeezing; this is the placement that reproduces the
brute-force Fock-space loss channel (see ``tests/test_gaussian.py``).

Two equivalent protocol layouts are supported:

``"waveplate"`` (default)
    quarter-wave plate on V, then H squeezed by ``-g`` and V by ``+g``.
``"no-waveplate"``
    no wave plate, both modes squeezed by ``-g``.

They differ by a phase-space rotation of the V mode, so photon statistics
and Fisher information agree.
"""

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import xlogy

from ._validation import (
    check_cutoff,
    check_nonnegative,
    check_scalar,
    check_unit_interval,
    wrap_angle,
)

CONVENTIONS = ("waveplate", "no-waveplate")


@dataclass(frozen=True)
class ProtocolParams:
    """Physical knobs of one protocol instance.

    Angles are in radians and normalized to (-pi, pi] on construction.
    ``beta_sq = xi * alpha_mag**2`` is derived, never stored.
    """

    alpha_mag: float = 1.0
    theta: float = 0.0
    xi: float = 1.0
    g: float = 0.0
    lam: float = 0.0
    eta: float = 1.0
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha_mag", check_nonnegative(self.alpha_mag, "alpha_mag"))
        object.__setattr__(self, "xi", check_unit_interval(self.xi, "xi"))
        object.__setattr__(self, "g", check_nonnegative(self.g, "g"))
        object.__setattr__(self, "eta", check_unit_interval(self.eta, "eta"))
        for name in ("theta", "lam", "phi"):
            object.__setattr__(self, name, wrap_angle(check_scalar(getattr(self, name), name)))

    @classmethod
    def from_beta_sq(cls, beta_sq, xi=1.0, **kwargs):
        """Build parameters from the post-sample photon number ``|beta|^2``."""
        beta_sq = check_nonnegative(beta_sq, "beta_sq")
        xi = check_unit_interval(xi, "xi")
        if xi == 0.0:
            if beta_sq != 0.0:
                raise ValueError("beta_sq > 0 is impossible with xi=0")
            return cls(alpha_mag=0.0, xi=0.0, **kwargs)
        return cls(alpha_mag=math.sqrt(beta_sq / xi), xi=xi, **kwargs)

    @property
    def beta_sq(self):
        return self.xi * self.alpha_mag**2

    @property
    def n_bar(self):
        return math.sinh(self.g) ** 2

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {
            "alpha_mag": self.alpha_mag,
            "theta": self.theta,
            "xi": self.xi,
            "g": self.g,
            "lam": self.lam,
            "eta": self.eta,
            "phi": self.phi,
        }


@dataclass(frozen=True)
class ModeGaussian:
    """One optical mode as a displaced squeezed thermal state.

    ``dgamma`` is the derivative of ``gamma`` with respect to the sensed
    phase; it is zero for modes that carry no phase dependence.
    """

    gamma: complex = 0j
    g_eff: float = 0.0
    squeeze_phase: float = 0.0
    n_eff: float = 0.0
    dgamma: complex = field(default=0j, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "gamma", complex(self.gamma))
        object.__setattr__(self, "dgamma", complex(self.dgamma))
        if not (cmath.isfinite(self.gamma) and cmath.isfinite(self.dgamma)):
            raise ValueError("gamma and dgamma must be finite")
        object.__setattr__(self, "g_eff", check_nonnegative(self.g_eff, "g_eff"))
        object.__setattr__(self, "n_eff", check_nonnegative(self.n_eff, "n_eff"))
        object.__setattr__(
            self, "squeeze_phase", wrap_angle(check_scalar(self.squeeze_phase, "squeeze_phase"))
        )

    def quadrature_covariance(self):
        """Covariance of (x, p) with x = (a + a^dag)/2, vacuum variance 1/4."""
        r, phase = self.g_eff, self.squeeze_phase
        v = (2 * self.n_eff + 1) / 4
        c, s = math.cos(phase), math.sin(phase)
        ch, sh = math.cosh(2 * r), math.sinh(2 * r)
        return v * np.array([[ch - c * sh, -s * sh], [-s * sh, ch + c * sh]])

    @property
    def mean_photons(self):
        return abs(self.gamma) ** 2 + (self.n_eff + 0.5) * math.cosh(2 * self.g_eff) - 0.5

    @property
    def photon_variance(self):
        cov = self.quadrature_covariance()
        d = np.array([self.gamma.real, self.gamma.imag])
        return float(2 * np.trace(cov @ cov) + 4 * d @ cov @ d - 0.25)


@dataclass(frozen=True)
class TwoModeGaussian:
    """Separable H (x) V output state."""

    h: ModeGaussian
    v: ModeGaussian

    @property
    def mean_photons(self):
        return self.h.mean_photons + self.v.mean_photons

    def modes(self):
        return (self.h, self.v)


def phase_encode(alpha_mag, theta, phi):
    """Amplitudes of the H and V coherent states after the phase shift.

    ``a_H = alpha (1 + e^{-i phi}) / 2`` and ``a_V = alpha (1 - e^{-i phi}) / 2``,
    which equal ``e^{-i phi/2} alpha cos(phi/2)`` and
    ``i e^{-i phi/2} alpha sin(phi/2)``.
    """
    alpha_mag = check_nonnegative(alpha_mag, "alpha_mag")
    alpha = alpha_mag * cmath.exp(1j * theta)
    rot = cmath.exp(-1j * phi)
    return alpha * (1 + rot) / 2, alpha * (1 - rot) / 2


def _phase_encode_derivative(alpha_mag, theta, phi):
    alpha = alpha_mag * cmath.exp(1j * theta)
    rot = cmath.exp(-1j * phi)
    return -1j * alpha * rot / 2, 1j * alpha * rot / 2


def apply_sample_loss(a, xi):
    """Coherent amplitude after a loss channel of transmission ``xi``."""
    xi = check_unit_interval(xi, "xi")
    return complex(a) * math.sqrt(xi)


def quarter_wave(a_v):
    """pi/2 relative phase on the V mode."""
    return 1j * complex(a_v)


def displace_through_squeezer(beta, g, squeeze_phase):
    """Displacement after commuting ``D(beta)`` through ``S(g e^{i phase})``.

    ``S D(beta) = D(gamma) S`` with ``gamma = beta cosh g - beta* e^{i phase} sinh g``.
    """
    g = check_nonnegative(g, "g")
    beta = complex(beta)
    return beta * math.cosh(g) - beta.conjugate() * cmath.exp(1j * squeeze_phase) * math.sinh(g)


def lossy_squeezed_vacuum(g, eta):
    """Effective (g_eff, n_eff) of squeezed vacuum ``S(g)|0>`` after loss ``eta``.

    Uses ``P = eta e^{2g} + 1 - eta`` and ``M = eta e^{-2g} + 1 - eta``:
    ``g_eff = log(P/M)/4`` and ``n_eff = (sqrt(PM) - 1)/2``, evaluated with
    ``log1p``/``expm1`` so that small gains and extreme efficiencies keep
    full precision.
    """
    g = check_nonnegative(g, "g")
    eta = check_unit_interval(eta, "eta")
    log_p = math.log1p(eta * math.expm1(2 * g))
    log_m = math.log1p(eta * math.expm1(-2 * g))
    g_eff = 0.25 * (log_p - log_m)
    # PM - 1 = 4 eta (1 - eta) sinh^2 g
    x = 4 * eta * (1 - eta) * math.sinh(g) ** 2
    n_eff = 0.5 * x / (math.sqrt(1 + x) + 1)
    return min(max(g_eff, 0.0), g), n_eff


def _mode(beta, dbeta, g, squeeze_phase, eta, g_eff, n_eff):
    gamma = displace_through_squeezer(beta, g, squeeze_phase)
    dgamma = displace_through_squeezer(dbeta, g, squeeze_phase)
    root = math.sqrt(eta)
    return ModeGaussian(
        gamma=root * gamma,
        g_eff=g_eff,
        squeeze_phase=squeeze_phase,
        n_eff=n_eff,
        dgamma=root * dgamma,
    )


def output_state(p, convention="waveplate"):
    """Exact two-mode Gaussian output state for the parameters ``p``.

    Each mode also carries ``dgamma``, the phase derivative of its
    displacement, which the Fisher-information routines consume.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    a_h, a_v = phase_encode(p.alpha_mag, p.theta, p.phi)
    da_h, da_v = _phase_encode_derivative(p.alpha_mag, p.theta, p.phi)
    b_h, b_v = apply_sample_loss(a_h, p.xi), apply_sample_loss(a_v, p.xi)
    root_xi = math.sqrt(p.xi)
    db_h, db_v = root_xi * da_h, root_xi * da_v

    minus = wrap_angle(p.lam + math.pi)
    if convention == "waveplate":
        b_v, db_v = quarter_wave(b_v), quarter_wave(db_v)
        phase_h, phase_v = minus, p.lam
    else:
        phase_h, phase_v = minus, minus

    g_eff, n_eff = lossy_squeezed_vacuum(p.g, p.eta)
    h = _mode(b_h, db_h, p.g, phase_h, p.eta, g_eff, n_eff)
    v = _mode(b_v, db_v, p.g, phase_v, p.eta, g_eff, n_eff)
    return TwoModeGaussian(h=h, v=v)


def eigen_spectrum(m, n):
    """Eigenvalue ``N^n / (1 + N)^(n+1)`` of the mode's thermal core.

    ``n`` may be an integer or an integer array; evaluation is in log space
    so large ``n_eff`` or ``n`` does not underflow prematurely.
    """
    n_eff = m.n_eff if isinstance(m, ModeGaussian) else check_nonnegative(m, "n_eff")
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("eigenvalue index must be >= 0")
    ratio = n_eff / (1 + n_eff)
    log_rho = -math.log1p(n_eff) + xlogy(n, ratio)
    out = np.exp(log_rho)
    return float(out) if out.ndim == 0 else out


def thermal_spectrum(n_eff, cutoff):
    """Eigenvalues ``0..cutoff`` of a thermal state as an array."""
    cutoff = check_cutoff(cutoff)
    return eigen_spectrum(n_eff, np.arange(cutoff + 1))
