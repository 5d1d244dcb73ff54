"""Simulated photon-counting experiments and Bayesian phase inference.

Counts are drawn pulse by pulse from either the exact photon-number
distribution of each output mode (``"exact-pmf"``) or from Poisson laws with
the pump-phase-averaged means (``"phase-averaged-poisson"``).  The phase is
inferred on a grid over [0, pi) with a uniform prior; after a coarse pass the
posterior is re-evaluated on a finer grid around its bulk.

The exact model evaluates likelihoods from a table of photon distributions
sampled on a regular grid of the physical phase over [0, 2 pi) and
interpolated with a periodic cubic spline.  The table depends on the
configuration but not on the data, so it is built once per process and
shared by every run with the same physical settings.

Randomness: a run with ``seed`` uses ``numpy.random.default_rng(seed)``.
Campaign run ``i`` under a master seed ``s`` uses the seed returned by
:func:`derive_seed`, i.e. ``SeedSequence(s, spawn_key=(i,))``.  The two
stages of :func:`two_step_run` draw their seeds from
``SeedSequence(seed).spawn(2)``.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammaln, logsumexp, xlogy
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_counts, check_cutoff, check_scalar, wrap_angle
from .exceptions import ModelMismatchWarning, MultimodalPosteriorWarning, PosteriorUnderflowError
from .fisher import qfi_optimal
from .gaussian import ProtocolParams, lossy_squeezed_vacuum, output_state
from .photon_stats import averaged_signal, cfi, photon_pmf

MODELS = ("exact-pmf", "phase-averaged-poisson")
_TINY = 1e-300
_TABLES = {}


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch of ``pulses`` repetitions at fixed settings.

    ``params.phi`` is the true phase.  ``phase_offset`` is a known control
    phase added to it in the apparatus, so the detectors see
    ``phi + phase_offset``.
    """

    params: ProtocolParams
    pulses: int
    seed: int = 0
    model: str = "exact-pmf"
    phi_grid_points: int = 2048
    phase_offset: float = 0.0
    table_points: int = 512

    def __post_init__(self):
        check_cutoff(self.pulses, "pulses", minimum=1)
        check_cutoff(self.seed, "seed", minimum=0)
        check_cutoff(self.phi_grid_points, "phi_grid_points", minimum=16)
        check_cutoff(self.table_points, "table_points", minimum=16)
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        object.__setattr__(self, "phase_offset", check_scalar(self.phase_offset, "phase_offset"))

    def physical_params(self, phi=None):
        phi = self.params.phi if phi is None else phi
        return self.params.replace(phi=phi + self.phase_offset)


@dataclass(frozen=True)
class CountData:
    """Per-pulse counts; column 0 is the H detector, column 1 the V detector."""

    counts: np.ndarray
    seed: int = None
    warnings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "counts", check_counts(self.counts))

    @property
    def pulses(self):
        return self.counts.shape[0]

    def histograms(self, size=None):
        top = int(self.counts.max()) + 1 if self.counts.size else 1
        size = max(size or 0, top)
        return (
            np.bincount(self.counts[:, 0], minlength=size),
            np.bincount(self.counts[:, 1], minlength=size),
        )


@dataclass(frozen=True)
class PhiPosterior:
    grid: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if grid.shape != weights.shape or grid.ndim != 1:
            raise ValueError("grid and weights must be 1-d arrays of equal length")
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("weights must be a nonnegative probability vector")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class PointEstimate:
    phi_hat: float
    err: float
    multimodal: bool = False

    def __iter__(self):
        return iter((self.phi_hat, self.err))


@dataclass(frozen=True)
class TwoStepResult:
    phi_rough: float
    psi_shift: float
    phi_hat: float
    err: float
    m1: int
    m2: int
    degraded: bool = False
    multimodal: bool = False
    rough_err: float = field(default=float("nan"), compare=False)


@dataclass(frozen=True)
class AdaptiveBoundInputs:
    """Inputs of the two-stage accuracy bound.

    ``I1`` is the Fisher information of the first (rough) stage, ``I2_0``
    that of the second stage at its optimum and ``I2pp_0 <= 0`` its second
    derivative there.
    """

    M: int
    p: float
    I1: float
    I2_0: float
    I2pp_0: float

    def __post_init__(self):
        check_cutoff(self.M, "M", minimum=1)
        p = check_scalar(self.p, "p", min_val=0.0, max_val=1.0)
        if p in (0.0, 1.0):
            raise ValueError("p must lie strictly between 0 and 1")
        if check_scalar(self.I1, "I1") <= 0 or check_scalar(self.I2_0, "I2_0") <= 0:
            raise ValueError("I1 and I2_0 must be positive")
        if check_scalar(self.I2pp_0, "I2pp_0") > 0:
            raise ValueError("I2pp_0 must be <= 0 at a maximum")


# --------------------------------------------------------------------------
# seeds and grids


def derive_seed(master, index):
    """Seed of run ``index`` in a campaign with ``master`` seed."""
    seq = np.random.SeedSequence(check_cutoff(master, "seed"), spawn_key=(check_cutoff(index, "index"),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def uniform_prior(points=2048, lo=0.0, hi=math.pi):
    """Flat prior on ``points`` regular grid nodes ``lo + (hi - lo) k / points``."""
    points = check_cutoff(points, "points", minimum=1)
    grid = lo + (hi - lo) * np.arange(points) / points
    return PhiPosterior(grid, np.full(points, 1.0 / points))


# --------------------------------------------------------------------------
# likelihood models


def _model_warnings(c):
    out = []
    p = c.params
    if c.model == "phase-averaged-poisson" and p.g > 0 and p.lam != 0.0:
        out.append(f"model {c.model!r} averages over the pump phase; lam={p.lam:.6g} is ignored")
    return tuple(out)


class _PmfTable:
    """Photon distributions of both modes tabulated over the physical phase."""

    def __init__(self, params, points, tol=1e-12):
        nodes = 2 * math.pi * np.arange(points + 1) / points
        rows_h, rows_v = [], []
        for phi in nodes[:-1]:
            state = output_state(params.replace(phi=phi))
            rows_h.append(photon_pmf(state.h, tol=tol).probs)
            rows_v.append(photon_pmf(state.v, tol=tol).probs)
        self.size = max(max(len(r) for r in rows_h), max(len(r) for r in rows_v))
        tab_h = np.zeros((points + 1, self.size))
        tab_v = np.zeros((points + 1, self.size))
        for k, (rh, rv) in enumerate(zip(rows_h, rows_v)):
            tab_h[k, : len(rh)] = rh
            tab_v[k, : len(rv)] = rv
        tab_h[-1], tab_v[-1] = tab_h[0], tab_v[0]
        self.spline_h = CubicSpline(nodes, tab_h, bc_type="periodic")
        self.spline_v = CubicSpline(nodes, tab_v, bc_type="periodic")

    def log_likelihood(self, phys, hist_h, hist_v):
        phys = np.mod(phys, 2 * math.pi)
        out = np.zeros(len(phys))
        for spline, hist in ((self.spline_h, hist_h), (self.spline_v, hist_v)):
            used = np.flatnonzero(hist)
            inside = used[used < self.size]
            outside = hist[used[used >= self.size]].sum()
            probs = np.clip(spline(phys)[:, inside], _TINY, None)
            out += np.log(probs) @ hist[inside] + outside * math.log(_TINY)
        return out


def _table_key(params, points):
    return (params.replace(phi=0.0), points)


def likelihood_table(params, points=512):
    """Cached :class:`_PmfTable` for the phase-independent part of ``params``."""
    key = _table_key(params, points)
    if key not in _TABLES:
        _TABLES[key] = _PmfTable(key[0], points)
    return _TABLES[key]


def _poisson_log_likelihood(params, phys, hist_h, hist_v):
    nb = math.sinh(params.g) ** 2
    amp = params.beta_sq * (1 + 2 * nb)
    mu_h = params.eta * (nb + amp * np.cos(phys / 2) ** 2)
    mu_v = params.eta * (nb + amp * np.sin(phys / 2) ** 2)
    out = np.zeros(len(phys))
    for mu, hist in ((mu_h, hist_h), (mu_v, hist_v)):
        n = np.arange(len(hist))
        total = hist.sum()
        weighted = n @ hist
        out += xlogy(weighted, mu) - total * mu - hist @ gammaln(n + 1)
    return out


def log_likelihood(grid, data, c):
    """Log-likelihood of ``data`` at each candidate phase in ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if data.pulses == 0:
        return np.zeros(len(grid))
    hist_h, hist_v = data.histograms()
    phys = grid + c.phase_offset
    if c.model == "phase-averaged-poisson":
        return _poisson_log_likelihood(c.params, phys, hist_h, hist_v)
    table = likelihood_table(c.params, c.table_points)
    return table.log_likelihood(phys, hist_h, hist_v)


# --------------------------------------------------------------------------
# simulation and inference


def simulate_counts(c):
    """Draw ``c.pulses`` independent (n_H, n_V) pairs at the true phase."""
    notes = _model_warnings(c)
    for note in notes:
        warnings.warn(note, ModelMismatchWarning, stacklevel=2)
    rng = np.random.default_rng(c.seed)
    phys = c.physical_params()
    if c.model == "phase-averaged-poisson":
        sig = averaged_signal(phys)
        n_h = rng.poisson(sig.n_h, size=c.pulses)
        n_v = rng.poisson(sig.n_v, size=c.pulses)
    else:
        cols = []
        for mode in output_state(phys).modes():
            probs = photon_pmf(mode, tol=1e-12).probs
            cols.append(rng.choice(len(probs), size=c.pulses, p=probs / probs.sum()))
        n_h, n_v = cols
    return CountData(np.column_stack([n_h, n_v]), seed=c.seed, warnings=notes)


def _normalize(grid, log_w):
    if not np.any(np.isfinite(log_w)):
        raise PosteriorUnderflowError("every posterior weight underflowed to zero")
    log_w = log_w - logsumexp(log_w)
    weights = np.exp(log_w)
    return PhiPosterior(grid, weights / weights.sum())


def posterior_update(prior, data, c):
    """Multiply ``prior`` by the likelihood of ``data`` in log space."""
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior.weights)
    return _normalize(prior.grid, log_prior + log_likelihood(prior.grid, data, c))


def _regions(weights, level):
    above = weights >= level
    edges = np.flatnonzero(np.diff(above.astype(int)))
    starts = list(np.flatnonzero(above[:1])) + [e + 1 for e in edges if not above[e]]
    stops = [e + 1 for e in edges if above[e]] + ([len(weights)] if above[-1] else [])
    return list(zip(starts, stops))


def is_multimodal(post, share=0.2):
    """True when two or more separated posterior modes each carry ``share`` of the mass."""
    w = post.weights
    regions = _regions(w, 1e-3 * w.max())
    masses = [w[a:b].sum() for a, b in regions]
    return bool(sum(m >= share for m in masses) >= 2)


def point_estimate(post, warn=True):
    """Posterior mean and standard deviation on the grid."""
    mean = float(post.grid @ post.weights)
    var = float(((post.grid - mean) ** 2) @ post.weights)
    multimodal = is_multimodal(post)
    if multimodal and warn:
        warnings.warn("posterior mass is split between separated modes", MultimodalPosteriorWarning, stacklevel=2)
    return PointEstimate(phi_hat=mean, err=math.sqrt(max(var, 0.0)), multimodal=multimodal)


def _refined_grid(post, points=801, width=12.0):
    est = point_estimate(post, warn=False)
    spacing = float(np.median(np.diff(post.grid))) if len(post.grid) > 1 else math.pi
    half = max(width * est.err, 8 * spacing)
    lo, hi = max(0.0, est.phi_hat - half), min(math.pi, est.phi_hat + half)
    return np.linspace(lo, hi, points, endpoint=False)


def infer_phase(terms, grid_points=2048, refine=True):
    """Posterior over [0, pi) for a product of independent data sets.

    ``terms`` is a sequence of ``(data, config)`` pairs; their
    log-likelihoods add.  With ``refine`` the coarse posterior is
    recomputed on a finer grid around its bulk unless it is multimodal.
    """

    def build(grid):
        total = np.zeros(len(grid))
        for data, c in terms:
            total += log_likelihood(grid, data, c)
        return _normalize(grid, total)

    post = build(uniform_prior(grid_points).grid)
    if refine and not is_multimodal(post):
        post = build(_refined_grid(post))
    return post


def run_single(c, refine=True):
    """Simulate one batch and return ``(data, posterior, estimate)``."""
    data = simulate_counts(c)
    post = infer_phase([(data, c)], c.phi_grid_points, refine=refine)
    return data, post, point_estimate(post, warn=False)


# --------------------------------------------------------------------------
# adaptive two-stage bounds


def optimal_fraction(A):
    """Fraction of pulses for the first stage, ``sqrt(A^2 + A) - A``."""
    A = check_scalar(A, "A", min_val=0.0)
    if A == 0:
        return 0.0
    # rationalized and divided by A: no cancellation or overflow at large A
    return 1.0 / (math.sqrt(1.0 + 1.0 / A) + 1.0)


def adaptive_coefficient(M, I1, I2_0, I2pp_0):
    """``A = |I2''(0)| / (2 M I1 I2(0))``."""
    return abs(I2pp_0) / (2 * M * I1 * I2_0)


def adaptive_bound(inp):
    """Variance bound of the two-stage protocol at first-stage fraction ``inp.p``."""
    M, p = inp.M, inp.p
    return (1 + abs(inp.I2pp_0) / (2 * p * M * inp.I1 * inp.I2_0)) / ((1 - p) * M * inp.I2_0)


def optimized_bound(M, I1, I2_0, I2pp_0):
    """:func:`adaptive_bound` at :func:`optimal_fraction`."""
    A = adaptive_coefficient(M, I1, I2_0, I2pp_0)
    if A == 0:
        return 1 / (M * I2_0)
    p = optimal_fraction(A)
    return adaptive_bound(AdaptiveBoundInputs(M, p, I1, I2_0, I2pp_0))


def asymptotic_bound(M, I1, I2_0, I2pp_0):
    """Large-``M`` form ``[1 + sqrt(2 |I2''| / (M I1 I2))] / (M I2)``."""
    return (1 + math.sqrt(2 * abs(I2pp_0) / (M * I1 * I2_0))) / (M * I2_0)


def two_step_fisher(params):
    """Closed-form ``(I1, I2(0), I2''(0))`` of the two-stage protocol.

    The first stage runs without gain (``I1 = 2 |beta|^2 eta``); the second
    is amplified and centred on its optimal phase.
    """
    p0 = params.replace(g=0.0)
    I1 = qfi_optimal(p0).value
    g_eff, n_eff = lossy_squeezed_vacuum(params.g, params.eta)
    scale = 2 * params.beta_sq * params.eta / (1 + 2 * n_eff)
    delta = 2 * (params.g - g_eff)
    return I1, scale * math.exp(delta), -4 * scale * math.sinh(delta)


def default_fraction(params, M):
    """First-stage fraction from the optimized bound with closed-form informations."""
    I1, I2, I2pp = two_step_fisher(params)
    if I1 <= 0 or I2 <= 0:
        return 0.5
    return optimal_fraction(adaptive_coefficient(M, I1, I2, I2pp))


def _split(M, fraction):
    m1 = int(round(fraction * M))
    return min(max(m1, 1), M - 1)


def two_step_run(c, fraction_p=None, degraded_std=math.pi / 8):
    """Rough unamplified estimate, phase shift to the working point, amplified estimate.

    Stage I uses ``g = 0`` and ``M1 = round(p M)`` pulses.  The shift
    ``psi = pi/2 - phi_rough`` and ``lam = 2 theta`` put stage II at the
    working point.  The final posterior combines both stages in the
    original frame, so ``phi_hat`` needs no back-shift.  A stage-I
    posterior wider than ``degraded_std`` or with split modes marks the run
    as degraded; such runs are still reported.
    """
    if c.pulses < 2:
        raise ValueError("two_step_run needs at least 2 pulses")
    fraction = default_fraction(c.params, c.pulses) if fraction_p is None else fraction_p
    fraction = check_scalar(fraction, "fraction_p", min_val=0.0, max_val=1.0)
    if fraction in (0.0, 1.0):
        raise ValueError("fraction_p must lie strictly between 0 and 1")
    m1 = _split(c.pulses, fraction)
    m2 = c.pulses - m1
    seed_one, seed_two = (int(s.generate_state(1, dtype=np.uint64)[0]) for s in np.random.SeedSequence(c.seed).spawn(2))

    c1 = replace(c, params=c.params.replace(g=0.0), pulses=m1, seed=seed_one, phase_offset=0.0)
    data1 = simulate_counts(c1)
    post1 = infer_phase([(data1, c1)], c.phi_grid_points)
    rough = point_estimate(post1, warn=False)
    degraded = rough.multimodal or rough.err > degraded_std

    psi = math.pi / 2 - rough.phi_hat
    work = c.params.replace(lam=wrap_angle(2 * c.params.theta))
    c2 = replace(c, params=work, pulses=m2, seed=seed_two, phase_offset=psi)
    data2 = simulate_counts(c2)
    post = infer_phase([(data1, c1), (data2, c2)], c.phi_grid_points)
    final = point_estimate(post, warn=False)
    err = final.err if final.err > 0 else float(np.min(np.diff(post.grid))) / math.sqrt(12)
    return TwoStepResult(
        phi_rough=rough.phi_hat,
        psi_shift=psi,
        phi_hat=final.phi_hat,
        err=err,
        m1=m1,
        m2=m2,
        degraded=degraded,
        multimodal=final.multimodal,
        rough_err=rough.err,
    )


# --------------------------------------------------------------------------
# campaigns


@dataclass(frozen=True)
class CampaignRow:
    phi: float
    phi_hat_mean: float
    phi_hat_std: float
    err_mean: float
    bias_stderr: float
    cfi_bound: float
    coherent_bound: float
    degraded: int
    runs: int


def working_point_cfi(params):
    """Photon-counting CFI at the amplified working point."""
    return cfi(params.replace(phi=math.pi / 2, lam=wrap_angle(2 * params.theta)))


def _campaign_task(args):
    params, phi, pulses, seed, fraction_p, grid_points, table_points = args
    c = ExperimentConfig(
        params=params.replace(phi=phi),
        pulses=pulses,
        seed=seed,
        phi_grid_points=grid_points,
        table_points=table_points,
    )
    return two_step_run(c, fraction_p)


def _install_tables(tables):
    _TABLES.update(tables)


def two_step_campaign(
    params,
    phis,
    pulses,
    repeats,
    seed=0,
    fraction_p=None,
    jobs=1,
    grid_points=2048,
    table_points=512,
):
    """Repeat :func:`two_step_run` ``repeats`` times at each phase in ``phis``.

    Run ``(i, r)`` (phase index ``i``, repetition ``r``) uses
    ``derive_seed(seed, i * repeats + r)``.  Results are aggregated in the
    order of ``phis`` whatever the completion order of the workers.
    """
    phis = [float(x) for x in phis]
    tasks = [
        (params, phi, pulses, derive_seed(seed, i * repeats + r), fraction_p, grid_points, table_points)
        for i, phi in enumerate(phis)
        for r in range(repeats)
    ]
    work = params.replace(lam=wrap_angle(2 * params.theta))
    for p in (params.replace(g=0.0), work):
        likelihood_table(p, table_points)
    if jobs > 1:
        tables = {k: v for k, v in _TABLES.items() if k[1] == table_points}
        with ProcessPoolExecutor(jobs, initializer=_install_tables, initargs=(tables,)) as pool:
            results = list(pool.map(_campaign_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_campaign_task(t) for t in tasks]

    bound = 1 / math.sqrt(pulses * working_point_cfi(params))
    rows = []
    for i, phi in enumerate(phis):
        chunk = results[i * repeats : (i + 1) * repeats]
        est = np.array([r.phi_hat for r in chunk])
        errs = np.array([r.err for r in chunk])
        spread = float(est.std(ddof=1)) if repeats > 1 else float("nan")
        coherent = cfi(params.replace(g=0.0, phi=phi))
        rows.append(
            CampaignRow(
                phi=phi,
                phi_hat_mean=float(est.mean()),
                phi_hat_std=spread,
                err_mean=float(errs.mean()),
                bias_stderr=spread / math.sqrt(repeats) if repeats > 1 else float("nan"),
                cfi_bound=bound,
                coherent_bound=1 / math.sqrt(pulses * coherent) if coherent > 0 else float("inf"),
                degraded=sum(r.degraded for r in chunk),
                runs=repeats,
            )
        )
    return rows


# --------------------------------------------------------------------------
# estimator


class BayesianPhaseEstimator(BaseEstimator):
    """Grid-posterior phase estimator for recorded (n_H, n_V) counts.

    Parameters mirror :class:`ProtocolParams` with ``beta_sq`` in place of
    ``alpha_mag``; ``phase_offset`` is the known control phase applied
    during the measurement.

    Attributes
    ----------
    posterior_ : PhiPosterior
    phi_ : float
        Posterior mean in [0, pi).
    phi_err_ : float
        Posterior standard deviation.
    multimodal_ : bool
    """

    def __init__(
        self,
        beta_sq=1.0,
        g=0.0,
        eta=1.0,
        xi=1.0,
        theta=0.0,
        lam=0.0,
        model="exact-pmf",
        phase_offset=0.0,
        grid_points=2048,
        refine=True,
        table_points=512,
    ):
        self.beta_sq = beta_sq
        self.g = g
        self.eta = eta
        self.xi = xi
        self.theta = theta
        self.lam = lam
        self.model = model
        self.phase_offset = phase_offset
        self.grid_points = grid_points
        self.refine = refine
        self.table_points = table_points

    def _config(self, pulses):
        params = ProtocolParams.from_beta_sq(
            self.beta_sq, xi=self.xi, theta=self.theta, g=self.g, lam=self.lam, eta=self.eta
        )
        return ExperimentConfig(
            params=params,
            pulses=max(pulses, 1),
            model=self.model,
            phi_grid_points=self.grid_points,
            phase_offset=self.phase_offset,
            table_points=self.table_points,
        )

    def fit(self, X, y=None):
        X = check_counts(X)
        c = self._config(X.shape[0])
        data = CountData(X)
        self.posterior_ = infer_phase([(data, c)], self.grid_points, refine=self.refine)
        est = point_estimate(self.posterior_)
        self.phi_, self.phi_err_, self.multimodal_ = est.phi_hat, est.err, est.multimodal
        self.n_pulses_ = X.shape[0]
        return self

    def score(self, X, y=None):
        """Mean log-likelihood per pulse of ``X`` at the fitted phase."""
        check_is_fitted(self, "phi_")
        X = check_counts(X)
        if X.shape[0] == 0:
            return 0.0
        c = self._config(X.shape[0])
        return float(log_likelihood([self.phi_], CountData(X), c)[0]) / X.shape[0]
