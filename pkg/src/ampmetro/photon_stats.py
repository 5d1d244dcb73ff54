"""Photon-counting statistics of the output modes.

The single-mode photon-number distribution is the overlap of the Gaussian
Wigner function with the Wigner function of a Fock state.  Expanding the
Laguerre polynomial of the latter turns the overlap into moments of a
Gaussian, which close in terms of the polynomial confluent hypergeometric
functions ``U(-j, 1/2, z)``:

    p(n) = 2 (-1)^n / (1 + 2N) exp[-2 (C_x + C_p)]
           * sum_k C(n, k) 2^k / k! sum_j C(k, j)
             U(-j, 1/2, z_x) U(-(k-j), 1/2, z_p) / (A_x^(j+1/2) A_p^(k-j+1/2))

with ``z = -2 A B^2``.  The sum alternates strongly in sign, so it is
evaluated with mpmath at a working precision chosen from an a-priori bound
on the magnitude of its terms.

The moment-based sensitivity and the phase-averaged experimental model are
plain closed forms in ``n_bar = sinh^2 g``, ``|beta|^2``, ``eta``, ``phi``
and ``lam - 2 theta``.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.special import gammaln, logsumexp

from ._validation import check_cutoff, wrap_angle
from .exceptions import ConvergenceError, InsensitivePointError, PoissonRegimeWarning
from .fock import mode_photon_distribution, working_dimension
from .gaussian import output_state

logger = logging.getLogger(__name__)

REFERENCES = ("homodyne-sql", "unamplified-difference")

# entries below this absolute size are only resolved to absolute accuracy
_ABS_FLOOR_DIGITS = 40
_CLAMP = 1e-12
_SKIP = 1e-300


# --------------------------------------------------------------------------
# special functions


def laguerre(n, x):
    """Laguerre polynomial ``L_n(x)`` by the three-term recurrence."""
    n = check_cutoff(n, "n")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), 1.0 - x
    if n == 0:
        return prev if prev.ndim else float(prev)
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 - x) * cur - k * prev) / (k + 1)
    return cur if cur.ndim else float(cur)


def kummer_u_sequence(jmax, b, z):
    """``[U(-j, b, z) for j in 0..jmax]``.

    For a nonpositive-integer first argument ``U`` is a polynomial, obtained
    here from ``U(-j-1) = (z - b - 2j) U(-j) - j (j + b - 1) U(-j+1)``.
    Works for floats and mpmath numbers alike.
    """
    jmax = check_cutoff(jmax, "jmax")
    out = [z * 0 + 1]
    if jmax >= 1:
        out.append(z - b)
    for j in range(1, jmax):
        out.append((z - b - 2 * j) * out[j] - j * (j + b - 1) * out[j - 1])
    return out


def kummer_u_poly(j, b, z):
    """Tricomi confluent hypergeometric ``U(-j, b, z)`` for integer ``j >= 0``."""
    return kummer_u_sequence(j, b, z)[-1]


# --------------------------------------------------------------------------
# auxiliary coefficients


@dataclass(frozen=True)
class AuxCoeffs:
    """Gaussian-integral coefficients in the frame of the squeezing axes.

    ``x0``/``p0`` are the displacement quadratures rotated by half the
    squeeze phase.  The x axis is the anti-squeezed one, so
    ``a_x = 1 + e^{2r}/(1+2N)`` and ``a_p = 1 + e^{-2r}/(1+2N)``.
    ``db_*``/``dc_*`` are phase derivatives carried through from
    ``dgamma``.
    """

    a_x: float
    b_x: float
    c_x: float
    a_p: float
    b_p: float
    c_p: float
    x0: float
    p0: float
    db_x: float = 0.0
    db_p: float = 0.0
    dc_x: float = 0.0
    dc_p: float = 0.0

    @property
    def z_x(self):
        return -2 * self.a_x * self.b_x**2

    @property
    def z_p(self):
        return -2 * self.a_p * self.b_p**2


def _rotated(m):
    psi = m.squeeze_phase / 2
    c, s = math.cos(psi), math.sin(psi)
    g, dg = m.gamma, m.dgamma
    x0 = g.real * c + g.imag * s
    p0 = -g.real * s + g.imag * c
    dx0 = dg.real * c + dg.imag * s
    dp0 = -dg.real * s + dg.imag * c
    return x0, p0, dx0, dp0


def aux_coeffs(m):
    """Auxiliary coefficients of a :class:`ModeGaussian`."""
    x0, p0, dx0, dp0 = _rotated(m)
    s = 1 + 2 * m.n_eff
    kx, kp = math.exp(2 * m.g_eff) / s, math.exp(-2 * m.g_eff) / s
    fx, fp = kx / (1 + kx), kp / (1 + kp)
    return AuxCoeffs(
        a_x=1 + kx,
        b_x=fx * x0,
        c_x=fx * x0**2,
        a_p=1 + kp,
        b_p=fp * p0,
        c_p=fp * p0**2,
        x0=x0,
        p0=p0,
        db_x=fx * dx0,
        db_p=fp * dp0,
        dc_x=2 * fx * x0 * dx0,
        dc_p=2 * fp * p0 * dp0,
    )


# --------------------------------------------------------------------------
# closed-form distribution


@dataclass(frozen=True)
class Pmf:
    """Photon-number probabilities ``probs[n]`` for ``n = 0..cutoff``.

    ``tail_bound`` bounds the probability of counts above ``cutoff``.
    """

    probs: np.ndarray
    cutoff: int
    tail_bound: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.cutoff + 1,):
            raise ValueError("probs must have cutoff + 1 entries")
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return self.cutoff + 1

    def mean(self):
        n = np.arange(self.cutoff + 1)
        return float(n @ self.probs)

    def variance(self):
        n = np.arange(self.cutoff + 1)
        mu = n @ self.probs
        return float(((n - mu) ** 2) @ self.probs)


def _scaled_u(a, z, jmax, b):
    # u_j = U(-j, b, z) / (a^(j+1/2) j!), recurrence kept in scaled form
    u = [1 / mpmath.sqrt(a)]
    if jmax >= 1:
        u.append((z - b) * u[0] / a)
    for j in range(1, jmax):
        u.append(((z - b - 2 * j) * u[j] - (j + b - 1) * u[j - 1] / a) / (a * (j + 1)))
    return u


def _scaled_u_float(a, z, jmax, b):
    u = np.empty(jmax + 1)
    u[0] = 1 / math.sqrt(a)
    if jmax >= 1:
        u[1] = (z - b) * u[0] / a
    with np.errstate(under="ignore"):
        for j in range(1, jmax):
            u[j + 1] = ((z - b - 2 * j) * u[j] - (j + b - 1) * u[j - 1] / a) / (a * (j + 1))
    return u


def _log_term_scale(aux, cutoff):
    """log10 of an upper bound on sum |terms| for each n (double precision)."""
    ux = np.abs(_scaled_u_float(aux.a_x, aux.z_x, cutoff, 0.5))
    up = np.abs(_scaled_u_float(aux.a_p, aux.z_p, cutoff, 0.5))
    with np.errstate(divide="ignore"):
        log_conv = np.log(np.convolve(ux, up)[: cutoff + 1])
    n = np.arange(cutoff + 1)
    log_binom = gammaln(n[:, None] + 1) - gammaln(n[None, :] + 1) - gammaln(n[:, None] - n[None, :] + 1)
    log_binom = np.where(n[None, :] <= n[:, None], log_binom, -np.inf)
    total = logsumexp(log_binom + n[None, :] * math.log(2) + log_conv[None, :], axis=1)
    return total / math.log(10)


def _working_digits(aux, cutoff):
    scale = _log_term_scale(aux, cutoff)
    top = max(float(np.max(scale)), 0.0)
    return int(math.ceil(top + math.log10(cutoff + 2))) + _ABS_FLOOR_DIGITS + 5


def _binomial_sums(n_max, weights):
    # s_n = sum_k C(n, k) w_k
    out = []
    for n in range(n_max + 1):
        row = [math.comb(n, k) for k in range(n + 1)]
        out.append(mpmath.fdot(row, weights[: n + 1]))
    return out


def _conv(u, v, kmax):
    return [mpmath.fdot(u[: k + 1], v[k::-1]) for k in range(kmax + 1)]


def _mode_series(aux, n_eff, cutoff, derivative=False, dps=None):
    """Closed-form ``p(n)`` (and ``dp/dphi``) for ``n <= cutoff`` as floats."""
    if dps is None:
        dps = _working_digits(aux, cutoff)
    with mpmath.workdps(dps):
        mpf = mpmath.mpf
        half = mpf(1) / 2
        ax, ap = mpf(aux.a_x), mpf(aux.a_p)
        bx, bp = mpf(aux.b_x), mpf(aux.b_p)
        zx, zp = -2 * ax * bx**2, -2 * ap * bp**2
        ux = _scaled_u(ax, zx, cutoff, half)
        up = _scaled_u(ap, zp, cutoff, half)
        pow2 = [mpf(2) ** k for k in range(cutoff + 1)]
        pref = 2 / (1 + 2 * mpf(n_eff)) * mpmath.exp(-2 * (mpf(aux.c_x) + mpf(aux.c_p)))
        sign = [1 if n % 2 == 0 else -1 for n in range(cutoff + 1)]

        conv = _conv(ux, up, cutoff)
        base = _binomial_sums(cutoff, [w * c for w, c in zip(pow2, conv)])
        probs = [sign[n] * pref * base[n] for n in range(cutoff + 1)]
        if not derivative:
            return np.array([float(v) for v in probs]), None

        # d/dz U(-j, 1/2, z) = j U(-(j-1), 3/2, z), so the scaled derivative
        # sequence is the scaled 3/2 sequence shifted by one and divided by a
        three_half = mpf(3) / 2
        vx = _scaled_u(ax, zx, max(cutoff - 1, 0), three_half)
        vp = _scaled_u(ap, zp, max(cutoff - 1, 0), three_half)
        dux = [mpf(0)] + [v / ax for v in vx][:cutoff]
        dup = [mpf(0)] + [v / ap for v in vp][:cutoff]
        dzx = -4 * ax * bx * mpf(aux.db_x)
        dzp = -4 * ap * bp * mpf(aux.db_p)
        dc = mpf(aux.dc_x) + mpf(aux.dc_p)

        conv2 = _conv(dux, up, cutoff)
        conv3 = _conv(ux, dup, cutoff)
        w = [pw * (dzx * c2 + dzp * c3) for pw, c2, c3 in zip(pow2, conv2, conv3)]
        base23 = _binomial_sums(cutoff, w)
        dprobs = [-2 * dc * probs[n] + sign[n] * pref * base23[n] for n in range(cutoff + 1)]
        return (
            np.array([float(v) for v in probs]),
            np.array([float(v) for v in dprobs]),
        )


def _clamp(probs):
    neg = probs < 0
    if np.any(probs < -_CLAMP):
        raise ConvergenceError(f"closed-form probability {probs.min():.3e} is negative beyond rounding")
    if np.any(neg):
        logger.debug("clamped %d tiny negative probabilities (min %.2e)", neg.sum(), probs.min())
        probs = np.where(neg, 0.0, probs)
    return probs


def _initial_cutoff(m, tol):
    # a Gaussian state's distribution decays at least like a thermal one
    # whose occupation matches the widest quadrature variance
    mean = m.mean_photons
    sd = math.sqrt(max(m.photon_variance, 0.0))
    guess = mean + 10 * sd + 12
    widest = float(np.max(np.linalg.eigvalsh(m.quadrature_covariance())))
    occupation = 2 * widest - 0.5
    if occupation > 1e-12:
        ratio = occupation / (1 + occupation)
        guess = max(guess, mean + math.log(tol) / math.log(ratio))
    return int(math.ceil(guess))


def _solve(m, cutoff, tol, derivative):
    aux = aux_coeffs(m)
    auto = cutoff is None
    if auto:
        tol = 1e-10 if tol is None else tol
        cutoff = _initial_cutoff(m, tol)
    cutoff = check_cutoff(cutoff)
    while True:
        probs, dprobs = _mode_series(aux, m.n_eff, cutoff, derivative)
        probs = _clamp(probs)
        tail = max(0.0, 1.0 - math.fsum(probs))
        if tol is None or tail <= tol:
            break
        if not auto or cutoff > 4000:
            raise ConvergenceError(
                f"photon distribution truncated at {cutoff} leaves mass {tail:.3e} > {tol:.1e}",
                cutoff=cutoff,
                tail=tail,
            )
        cutoff = int(cutoff * 1.25) + 1
    return Pmf(probs, cutoff, tail), dprobs


def photon_pmf(m, cutoff=None, tol=None):
    """Photon-number distribution of a single :class:`ModeGaussian`.

    With ``cutoff=None`` the truncation grows until the missing mass is
    below ``tol`` (default 1e-10).  With an explicit ``cutoff`` a
    :class:`ConvergenceError` is raised only when ``tol`` is given and not
    met.  ``tail_bound`` is the missing mass ``1 - sum(probs)``.
    """
    return _solve(m, cutoff, tol, derivative=False)[0]


def photon_pmf_with_derivative(m, cutoff=None, tol=None):
    """``(Pmf, dp/dphi)`` from the same closed-form evaluation."""
    return _solve(m, cutoff, tol, derivative=True)


def pmf_derivative(m, n):
    """Phase derivative ``dp(n)/dphi`` of one photon number.

    The derivative is carried by ``m.dgamma``; the three contributions
    (exponential prefactor, x-axis polynomial, p-axis polynomial) are summed.
    """
    n = check_cutoff(n, "n")
    _, dprobs = _solve(m, max(n, 1), None, derivative=True)
    return float(dprobs[n])


def pmf_oracle(m, cutoff, tol=1e-9):
    """Photon distribution from a dense Fock-space density matrix.

    The working dimension is enlarged until the first ``cutoff + 1``
    entries stop changing.  The mass lost to the working dimension must stay
    below ``tol``; the returned ``tail_bound`` is the mass above ``cutoff``.
    """
    cutoff = check_cutoff(cutoff)
    dim = working_dimension(m, cutoff)
    probs = mode_photon_distribution(m, dim)
    for _ in range(6):
        bigger = mode_photon_distribution(m, dim + 40)
        change = np.max(np.abs(bigger[: cutoff + 1] - probs[: cutoff + 1]))
        dim, probs = dim + 40, bigger
        if change < 1e-14:
            break
    else:
        raise ConvergenceError(f"Fock oracle did not settle (last change {change:.2e})", cutoff=dim)
    lost = 1.0 - math.fsum(probs)
    if lost > tol:
        raise ConvergenceError(f"Fock oracle lost mass {lost:.3e}", cutoff=dim, tail=lost)
    head = np.clip(probs[: cutoff + 1], 0.0, None)
    tail = max(0.0, 1.0 - math.fsum(head))
    return Pmf(head, cutoff, tail)


def cfi(p, cutoff=None, tol=1e-10, convention="waveplate"):
    """Classical Fisher information of photon counting on both modes.

    Terms with ``p(n) < 1e-300`` are skipped; their total mass is logged.
    """
    total = 0.0
    for mode in output_state(p, convention).modes():
        if mode.dgamma == 0:
            continue
        pmf, dprobs = photon_pmf_with_derivative(mode, cutoff=cutoff, tol=tol)
        keep = pmf.probs >= _SKIP
        skipped = float(np.sum(pmf.probs[~keep]))
        if skipped:
            logger.debug("cfi skipped mass %.3e below %.0e", skipped, _SKIP)
        total += float(np.sum(dprobs[keep] ** 2 / pmf.probs[keep]))
    return total


# --------------------------------------------------------------------------
# photon-difference moments


@dataclass(frozen=True)
class MomentStats:
    mean_d: float
    var_d: float
    a_coeff: float
    b_coeff: float


def _pieces(p):
    nb = math.sinh(p.g) ** 2
    cross = 2 * math.sqrt(nb * (1 + nb))
    shifted = p.phi + p.lam - 2 * p.theta
    return nb, cross, shifted


def mean_d(p):
    """Mean photon-number difference ``<n_H - n_V>``."""
    nb, cross, shifted = _pieces(p)
    return p.eta * p.beta_sq * (math.cos(p.phi) * (1 + 2 * nb) + math.cos(shifted) * cross)


def mean_d_slope(p):
    """``d<D>/dphi``."""
    nb, cross, shifted = _pieces(p)
    return -p.eta * p.beta_sq * (math.sin(p.phi) * (1 + 2 * nb) + math.sin(shifted) * cross)


def var_d(p):
    """Variance of the photon-number difference with its two coefficients."""
    nb, cross, shifted = _pieces(p)
    eta, b2 = p.eta, p.beta_sq
    a = 2 * nb * (1 + eta + 2 * eta * nb) + b2 * (1 + 2 * nb + eta * nb * (6 + 8 * nb))
    b = cross * b2 * (1 + eta + 4 * eta * nb)
    var = eta * (a + math.cos(p.phi) * math.cos(shifted) * b)
    return MomentStats(mean_d=mean_d(p), var_d=max(var, 0.0), a_coeff=a, b_coeff=b)


def sensitivity(p):
    """Error-propagation phase uncertainty of the difference signal."""
    slope = mean_d_slope(p)
    scale = p.eta * p.beta_sq * math.cosh(2 * p.g)
    if scale == 0 or abs(slope) <= 1e-12 * scale:
        raise InsensitivePointError(
            f"d<D>/dphi vanishes at phi={p.phi:.6g} (lam - 2 theta = {p.lam - 2 * p.theta:.6g})"
        )
    return math.sqrt(var_d(p).var_d) / abs(slope)


def working_point(p):
    """Parameters moved to ``phi = pi/2`` and ``lam = 2 theta``."""
    return p.replace(phi=math.pi / 2, lam=wrap_angle(2 * p.theta))


def sensitivity_optimal(p):
    """Sensitivity at the working point; the amplified minimum uncertainty."""
    return sensitivity(working_point(p))


# --------------------------------------------------------------------------
# phase-averaged Poissonian model


@dataclass(frozen=True)
class AveragedSignal:
    n_h: float
    n_v: float
    d: float

    def __iter__(self):
        return iter((self.n_h, self.n_v, self.d))


def averaged_signal(p):
    """Mean counts per pulse after averaging over the pump phase ``lam``."""
    nb = math.sinh(p.g) ** 2
    amp = p.beta_sq * (1 + 2 * nb)
    n_h = p.eta * (nb + amp * math.cos(p.phi / 2) ** 2)
    n_v = p.eta * (nb + amp * math.sin(p.phi / 2) ** 2)
    return AveragedSignal(n_h=n_h, n_v=n_v, d=n_h - n_v)


def averaged_sensitivity(p, warn=True):
    """Phase uncertainty per pulse for Poissonian counts with averaged means.

    Emits :class:`PoissonRegimeWarning` when a mean count reaches 1.
    """
    nb = math.sinh(p.g) ** 2
    sin = math.sin(p.phi)
    if p.beta_sq == 0 or p.eta == 0 or abs(sin) < 1e-12:
        raise InsensitivePointError(f"averaged signal is insensitive at phi={p.phi:.6g}")
    sig = averaged_signal(p)
    if warn and max(sig.n_h, sig.n_v) >= 1:
        warnings.warn(
            f"mean counts ({sig.n_h:.3g}, {sig.n_v:.3g}) per pulse leave the weak-signal regime",
            PoissonRegimeWarning,
            stacklevel=2,
        )
    amp = p.beta_sq * (1 + 2 * nb)
    return math.sqrt(2 * nb + amp) / (amp * math.sqrt(p.eta) * abs(sin))


@dataclass(frozen=True)
class Enhancement:
    value: float
    reference: str
    delta_phi_ref: float
    delta_phi_exp: float


def enhancement(p, reference="homodyne-sql"):
    """Squared ratio of a reference uncertainty to the amplified one.

    The amplified uncertainty is :func:`averaged_sensitivity` at
    ``phi = pi/2``.  ``reference`` selects the benchmark:
    ``"homodyne-sql"`` uses ``(2 |beta|^2 eta)^(-1/2)``,
    ``"unamplified-difference"`` the same averaged model at ``g = 0``.
    """
    if reference not in REFERENCES:
        raise ValueError(f"reference must be one of {REFERENCES}, got {reference!r}")
    at = p.replace(phi=math.pi / 2)
    exp = averaged_sensitivity(at, warn=False)
    if reference == "homodyne-sql":
        ref = 1 / math.sqrt(2 * p.beta_sq * p.eta)
    else:
        ref = averaged_sensitivity(at.replace(g=0.0), warn=False)
    return Enhancement(value=(ref / exp) ** 2, reference=reference, delta_phi_ref=ref, delta_phi_exp=exp)
