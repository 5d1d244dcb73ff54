"""Quantum Fisher information of the amplified protocol.

Closed forms are evaluated directly.  :func:`qfi_numeric` is the
independent route: it builds the per-mode eigen-decomposition of the output
state and sums the adjacent-eigenvalue weights in a truncated Fock space.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from ._validation import check_cutoff, check_nonnegative, wrap_angle
from .exceptions import ConvergenceError
from .gaussian import lossy_squeezed_vacuum, output_state


@dataclass(frozen=True)
class QfiResult:
    value: float
    g_eff: float
    n_bar: float
    ratio_to_sql: float
    phi_opt: float


@dataclass(frozen=True)
class QfiNumericWork:
    """Intermediate quantities of the truncated-Fock QFI sum.

    ``b_coeffs`` hold the ladder coefficients of the eigenvector
    derivatives for (H, V).  ``eps_h[m, n]`` is the weight of the pair
    (m+1, n)-(m, n) and ``eps_v[m, n]`` of (m, n)-(m, n+1).  The
    eigenvalue-derivative term is identically zero because the thermal
    spectrum does not depend on the phase; it is recorded, not computed.
    """

    value: float
    tail: float
    cutoff: int
    b_coeffs: tuple
    eps_h: np.ndarray
    eps_v: np.ndarray
    eigenvalue_term: float = 0.0
    a_coeffs: tuple = None
    c_coeffs: tuple = None


def n_bar(g):
    """Photons generated per mode by the amplifier from vacuum, ``sinh^2 g``."""
    g = check_nonnegative(g, "g")
    return math.sinh(g) ** 2


def qfi_sql(beta_sq):
    """Coherent-probe benchmark ``2 |beta|^2``."""
    return 2.0 * check_nonnegative(beta_sq, "beta_sq")


def optimal_phase(p):
    """Phase maximizing the QFI, ``pi/2 - lam/2 + theta`` (mod pi)."""
    return wrap_angle(math.pi / 2 - p.lam / 2 + p.theta)


def _prefactor(p):
    g_eff, n_eff = lossy_squeezed_vacuum(p.g, p.eta)
    # sqrt(1 + 4 eta (1-eta) sinh^2 g) == 1 + 2 n_eff
    return 2 * p.beta_sq * p.eta / (1 + 2 * n_eff), g_eff


def qfi_phase_dependent(p):
    """Closed-form QFI at the phase ``p.phi``."""
    pref, g_eff = _prefactor(p)
    delta = 2 * (p.g - g_eff)
    return pref * (math.cosh(delta) - math.cos(p.lam + 2 * p.phi - 2 * p.theta) * math.sinh(delta))


def qfi_optimal(p):
    """QFI maximized over the phase, reported with its SQL ratio."""
    pref, g_eff = _prefactor(p)
    value = pref * math.exp(2 * (p.g - g_eff))
    sql = qfi_sql(p.beta_sq)
    ratio = value / sql if sql > 0 else 0.0
    return QfiResult(
        value=value,
        g_eff=g_eff,
        n_bar=n_bar(p.g),
        ratio_to_sql=ratio,
        phi_opt=optimal_phase(p),
    )


def ladder_coefficient(mode):
    """Coefficient of ``a^dag`` in the eigenvector derivative of one mode.

    ``B = cosh(r) dgamma + e^{i phase} sinh(r) dgamma*``; its modulus is
    what enters the QFI sum.
    """
    r, phase = mode.g_eff, mode.squeeze_phase
    return math.cosh(r) * mode.dgamma + np.exp(1j * phase) * math.sinh(r) * mode.dgamma.conjugate()


def _log_spectrum(n_eff, size):
    idx = np.arange(size)
    return -math.log1p(n_eff) + xlogy(idx, n_eff / (1 + n_eff))


def _pair_weight(log_a, log_b):
    # (a - b)^2 / (a + b) evaluated from logarithms; 0 when both vanish
    hi = np.maximum(log_a, log_b)
    lo = np.minimum(log_a, log_b)
    with np.errstate(invalid="ignore", over="ignore"):
        diff = -np.expm1(lo - hi)
        out = np.exp(hi) * diff**2 / (1 + np.exp(lo - hi))
    return np.where(np.isneginf(hi), 0.0, out)


def epsilon_weight(n_eff_h, n_eff_v, i, j, m, n):
    """Weight ``(rho_ij - rho_mn)^2 / (rho_ij + rho_mn)`` of two product eigenvalues."""
    size = max(i, j, m, n) + 1
    lh, lv = _log_spectrum(n_eff_h, size), _log_spectrum(n_eff_v, size)
    return float(_pair_weight(lh[i] + lv[j], lh[m] + lv[n]))


def _tail_bound(n_eff, cutoff, coeff_sq):
    # pair weights are <= rho_n (rho_m + rho_{m+1}) <= 2 rho_n rho_m
    x = n_eff / (1 + n_eff)
    xk = x**cutoff
    first = xk * (cutoff + 1 + n_eff)  # sum_{m >= K} (m + 1) rho_m
    second = (n_eff + 1) * xk  # (sum_m (m+1) rho_m) * sum_{n >= K} rho_n
    return 8 * coeff_sq * (first + second)


def required_cutoff(n_eff, tol, maximum=5000):
    """Smallest Fock cutoff whose relative tail bound is below ``tol``."""
    if n_eff == 0:
        return 1
    k = 1
    # relative to the scale 4 |B|^2
    while _tail_bound(n_eff, k, 0.25) > tol:
        k = int(math.ceil(k * 1.25)) + 1
        if k > maximum:
            raise ConvergenceError(f"QFI sum needs more than {maximum} levels", cutoff=k)
    return k


def qfi_numeric_work(p, cutoff=None, tol=1e-10, convention="waveplate", debug=False):
    """Truncated double-sum QFI with its diagnostics.

    ``tol`` bounds the neglected part relative to ``4 (|B_H|^2 + |B_V|^2)``.
    A supplied ``cutoff`` that cannot meet ``tol`` raises
    :class:`ConvergenceError`.
    """
    state = output_state(p, convention)
    b_h, b_v = ladder_coefficient(state.h), ladder_coefficient(state.v)
    n_h, n_v = state.h.n_eff, state.v.n_eff
    scale = 4 * (abs(b_h) ** 2 + abs(b_v) ** 2)
    if cutoff is None:
        cutoff = max(required_cutoff(n_h, tol), required_cutoff(n_v, tol))
    cutoff = check_cutoff(cutoff, minimum=1)

    tail = _tail_bound(n_h, cutoff, abs(b_h) ** 2) + _tail_bound(n_v, cutoff, abs(b_v) ** 2)
    if scale > 0 and tail > tol * scale:
        raise ConvergenceError(
            f"cutoff={cutoff} leaves a QFI tail of {tail:.3e} (> {tol:.1e} relative)",
            cutoff=cutoff,
            tail=tail,
        )

    lh = _log_spectrum(n_h, cutoff + 1)
    lv = _log_spectrum(n_v, cutoff + 1)
    m = np.arange(cutoff)
    # eps_h[m, n] = eps_{m+1, n, m, n}; eps_v[m, n] = eps_{m, n, m, n+1}
    eps_h = _pair_weight(lh[1:, None] + lv[None, :-1], lh[:-1, None] + lv[None, :-1])
    eps_v = _pair_weight(lh[:-1, None] + lv[None, 1:], lh[:-1, None] + lv[None, :-1])
    total_h = np.sum((m + 1)[:, None] * eps_h)
    total_v = np.sum((m + 1)[None, :] * eps_v)
    value = 4 * (abs(b_h) ** 2 * total_h + abs(b_v) ** 2 * total_v)

    a_coeffs = c_coeffs = None
    if debug:
        a_coeffs, c_coeffs = [], []
        for mode in state.modes():
            g, dg = mode.gamma, mode.dgamma
            a_coeffs.append(0.5 * (dg * g.conjugate() - g * dg.conjugate()))
            c_coeffs.append(0.5 * (g * dg.conjugate() - dg * g.conjugate()))
        a_coeffs, c_coeffs = tuple(a_coeffs), tuple(c_coeffs)

    return QfiNumericWork(
        value=float(value),
        tail=float(tail),
        cutoff=cutoff,
        b_coeffs=(complex(b_h), complex(b_v)),
        eps_h=eps_h,
        eps_v=eps_v,
        a_coeffs=a_coeffs,
        c_coeffs=c_coeffs,
    )


def qfi_numeric(p, cutoff=None, tol=1e-10, convention="waveplate"):
    """QFI from the truncated eigen-decomposition sum."""
    return qfi_numeric_work(p, cutoff=cutoff, tol=tol, convention=convention).value
