"""Command-line front end.

Every command writes one table.  CSV output starts with ``# key=value``
lines holding the resolved configuration (and diagnostics), followed by a
header row.  JSON output holds the same information as nested objects.
Neither contains timestamps; when writing to a file, a sibling
``<output>.meta.json`` records when and how the file was produced.

Exit codes: 0 success, 2 usage error, 3 numerical convergence failure.
"""

import argparse
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .estimation import (
    ExperimentConfig,
    infer_phase,
    point_estimate,
    simulate_counts,
    two_step_campaign,
)
from .exceptions import ConvergenceError, InsensitivePointError
from .fisher import qfi_numeric_work, qfi_optimal, qfi_phase_dependent, qfi_sql
from .gaussian import CONVENTIONS, ProtocolParams, output_state
from .photon_stats import (
    REFERENCES,
    averaged_signal,
    cfi,
    enhancement,
    photon_pmf_with_derivative,
    sensitivity,
    sensitivity_optimal,
)

COMMANDS = ("qfi", "cfi", "sensitivity", "pmf", "enhancement", "simulate", "two-step", "sweep")
SWEEP_COMMANDS = ("qfi", "cfi", "sensitivity", "enhancement")
AXES = ("phi", "g", "eta", "xi", "beta_sq")
ENV_OUTPUT_DIR = "AMPMETRO_OUTPUT_DIR"
# config-file keys whose option name differs from the stored setting
ALIASES = {"command": "sweep_command"}

EXIT_OK, EXIT_USAGE, EXIT_CONVERGENCE = 0, 2, 3

DEFAULTS = {
    "alpha_mag": 1.0,
    "beta_sq": None,
    "theta": 0.0,
    "xi": 1.0,
    "g": 0.0,
    "lam": 0.0,
    "eta": 1.0,
    "phi": math.pi / 2,
    "cutoff": None,
    "seed": 0,
    "output": None,
    "format": "csv",
    "convention": "waveplate",
    "axis": None,
    "sweep_command": None,
    "jobs": 1,
    "pulses": 100000,
    "model": "exact-pmf",
    "repeats": 10,
    "phi_values": [0.2, 0.5, 0.8, 1.1, 1.4, 1.7, 2.0, 2.3, 2.6, 2.9],
    "fraction_p": None,
    "grid_points": 2048,
}


class UsageError(ValueError):
    """Invalid command line or configuration file."""


@dataclass
class RunConfig:
    command: str
    params: ProtocolParams
    settings: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["settings"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self):
        """Flat, fully resolved configuration for output headers."""
        out = {"command": self.command}
        out.update({k: self.params.as_dict()[k] for k in sorted(self.params.as_dict())})
        out["beta_sq"] = self.params.beta_sq
        for key in sorted(self.settings):
            if key == "output":
                continue
            out[key] = self.settings[key]
        return out


# --------------------------------------------------------------------------
# parsing


def _float(text):
    return float(text)


def _phi_list(text):
    values = [float(v) for v in str(text).split(",") if v.strip()]
    if not values:
        raise ValueError("empty list")
    return values


def _axis(text):
    parts = str(text).split(":")
    if len(parts) != 4:
        raise ValueError("axis must be name:start:stop:steps")
    name, start, stop, steps = parts
    name = name.replace("-", "_")
    if name not in AXES:
        raise ValueError(f"axis name must be one of {AXES}, got {name!r}")
    steps = int(steps)
    if steps < 2:
        raise ValueError("axis needs steps >= 2")
    return name, float(start), float(stop), steps


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise ValueError("must be >= 0")
    return value


def _pos_int(text):
    value = int(text)
    if value < 1:
        raise ValueError("must be >= 1")
    return value


TYPES = {
    "alpha_mag": _float,
    "beta_sq": _float,
    "theta": _float,
    "xi": _float,
    "g": _float,
    "lam": _float,
    "eta": _float,
    "phi": _float,
    "cutoff": _nonneg_int,
    "seed": _nonneg_int,
    "output": str,
    "format": str,
    "convention": str,
    "axis": _axis,
    "sweep_command": str,
    "jobs": _pos_int,
    "pulses": _pos_int,
    "model": str,
    "repeats": _pos_int,
    "phi_values": _phi_list,
    "fraction_p": _float,
    "grid_points": _pos_int,
}
CHOICES = {
    "format": ("csv", "json"),
    "convention": CONVENTIONS,
    "sweep_command": SWEEP_COMMANDS,
    "model": ("exact-pmf", "phase-averaged-poisson"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="ampmetro", description="Amplified phase-estimation calculations.")
    parser.add_argument("--version", action="version", version=f"ampmetro {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; flags override its entries")
        p.add_argument("--alpha-mag", type=str, help="probe amplitude |alpha| (default 1)")
        p.add_argument("--beta-sq", type=str, help="photons after the sample, xi |alpha|^2")
        p.add_argument("--theta", type=str, help="probe phase (rad, default 0)")
        p.add_argument("--xi", type=str, help="sample transmission (default 1)")
        p.add_argument("--g", type=str, help="amplifier gain (default 0)")
        p.add_argument("--lam", type=str, help="pump phase (rad, default 0)")
        p.add_argument("--eta", type=str, help="detection efficiency (default 1)")
        p.add_argument("--phi", type=str, help="phase (rad, default pi/2)")
        p.add_argument("--cutoff", type=str, help="Fock cutoff (default: automatic)")
        p.add_argument("--seed", type=str, help="random seed (default 0)")
        p.add_argument("--output", type=str, help=f"output file (default ${ENV_OUTPUT_DIR}/<command>.<format> or stdout)")
        p.add_argument("--format", type=str, help="csv or json (default csv)")
        p.add_argument("--convention", type=str, help="waveplate or no-waveplate")
        p.add_argument("--jobs", type=str, help="worker processes (default 1)")
        if name == "sweep":
            p.add_argument("--axis", type=str, help="name:start:stop:steps with name in " + ",".join(AXES))
            p.add_argument("--command", dest="sweep_command", type=str, help="quantity to sweep: " + ",".join(SWEEP_COMMANDS))
        if name in ("simulate", "two-step"):
            p.add_argument("--pulses", type=str, help="pulses per run (default 100000)")
            p.add_argument("--grid-points", type=str, help="posterior grid size (default 2048)")
        if name == "simulate":
            p.add_argument("--model", type=str, help="exact-pmf or phase-averaged-poisson")
        if name == "two-step":
            p.add_argument("--phi-values", type=str, help="comma-separated true phases")
            p.add_argument("--repeats", type=str, help="runs per phase (default 10)")
            p.add_argument("--fraction-p", type=str, help="first-stage share of pulses (default optimal)")
    return parser


def read_config_file(path):
    """``key=value`` lines; ``#`` starts a comment.  Keys use - or _."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{number}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[ALIASES.get(key, key)] = value
    return out


def _convert(key, raw):
    if key not in TYPES:
        raise UsageError(f"unknown key {key!r}")
    try:
        value = TYPES[key](raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid value for {key}: {raw!r} ({exc})") from exc
    if key in CHOICES and value not in CHOICES[key]:
        raise UsageError(f"invalid value for {key}: {raw!r} (choose from {', '.join(CHOICES[key])})")
    return value


def parse_config(argv):
    """Resolve command-line flags and an optional config file into a RunConfig."""
    ns = build_parser().parse_args(argv)
    command = ns.cmd
    given = {k: v for k, v in vars(ns).items() if k not in ("cmd", "config") and v is not None}
    from_file = read_config_file(ns.config) if ns.config else {}
    allowed = {k for k in vars(ns) if k not in ("cmd", "config")}
    for key in from_file:
        if key not in allowed:
            raise UsageError(f"unknown key {key!r} for command {command!r}")

    merged = {}
    for key in sorted(allowed):
        if key in given:
            merged[key] = _convert(key, given[key])
        elif key in from_file:
            merged[key] = _convert(key, from_file[key])
        else:
            merged[key] = DEFAULTS[key]

    if command == "sweep":
        if merged["axis"] is None:
            raise UsageError("sweep requires --axis name:start:stop:steps")
        if merged["sweep_command"] is None:
            raise UsageError("sweep requires --command")
    if merged.get("fraction_p") is not None and not 0 < merged["fraction_p"] < 1:
        raise UsageError(f"fraction_p={merged['fraction_p']} must lie strictly between 0 and 1")

    alpha_set = "alpha_mag" in given or "alpha_mag" in from_file
    beta = merged.pop("beta_sq")
    alpha = merged.pop("alpha_mag")
    if beta is not None and alpha_set:
        raise UsageError("give either alpha_mag or beta_sq, not both")
    phys = {k: merged.pop(k) for k in ("theta", "xi", "g", "lam", "eta", "phi")}
    try:
        if beta is not None:
            params = ProtocolParams.from_beta_sq(beta, **phys)
        else:
            params = ProtocolParams(alpha_mag=alpha, **phys)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return RunConfig(command=command, params=params, settings=merged)


# --------------------------------------------------------------------------
# commands


def _inv_var(p):
    try:
        return sensitivity(p) ** -2
    except InsensitivePointError:
        return 0.0


def _qfi_row(p, cutoff, convention):
    work = qfi_numeric_work(p, cutoff=cutoff, convention=convention)
    opt = qfi_optimal(p)
    row = {
        "qfi_closed": qfi_phase_dependent(p),
        "qfi_numeric": work.value,
        "qfi_optimal": opt.value,
        "sql": qfi_sql(p.beta_sq),
        "ratio_to_sql": opt.ratio_to_sql,
        "phi_opt": opt.phi_opt,
        "g_eff": opt.g_eff,
    }
    diag = {"qfi_cutoff": work.cutoff, "qfi_tail": work.tail}
    return row, diag


def _cfi_row(p, cutoff, convention):
    work = qfi_numeric_work(p, cutoff=cutoff, convention=convention)
    row = {
        "qfi_closed": qfi_phase_dependent(p),
        "qfi_numeric": work.value,
        "cfi": cfi(p, cutoff=cutoff, convention=convention),
        "inv_var_sensitivity": _inv_var(p),
        "sql": qfi_sql(p.beta_sq),
    }
    return row, {"qfi_cutoff": work.cutoff, "qfi_tail": work.tail}


def _sensitivity_row(p, cutoff, convention):
    try:
        at = sensitivity(p)
    except InsensitivePointError:
        at = math.inf
    row = {
        "delta_phi": at,
        "delta_phi_optimal": sensitivity_optimal(p) if p.beta_sq * p.eta > 0 else math.inf,
        "inv_var_sensitivity": 0.0 if math.isinf(at) else at**-2,
        "delta_phi_sql": 1 / math.sqrt(2 * p.beta_sq) if p.beta_sq > 0 else math.inf,
    }
    return row, {}


def _enhancement_row(p, cutoff, convention):
    sig = averaged_signal(p.replace(phi=math.pi / 2))
    row = {}
    for ref in REFERENCES:
        res = enhancement(p, ref)
        key = ref.replace("-", "_")
        row[f"enhancement_{key}"] = res.value
        row[f"delta_phi_{key}"] = res.delta_phi_ref
    row["delta_phi_exp"] = res.delta_phi_exp
    row["mean_n_h"] = sig.n_h
    row["mean_n_v"] = sig.n_v
    diag = {
        "poisson_regime": bool(max(sig.n_h, sig.n_v) < 1),
        "reference_note": "homodyne-sql uses (2|beta|^2 eta)^-1/2; unamplified-difference uses the averaged model at g=0",
    }
    return row, diag


ROW_FUNCS = {
    "qfi": _qfi_row,
    "cfi": _cfi_row,
    "sensitivity": _sensitivity_row,
    "enhancement": _enhancement_row,
}


def _single(cfg):
    row, diag = ROW_FUNCS[cfg.command](cfg.params, cfg.cutoff, cfg.convention)
    if cfg.command == "enhancement":
        # evaluated at the working point whatever phi is
        return list(row), [list(row.values())], diag
    return ["phi"] + list(row), [[cfg.params.phi] + list(row.values())], diag


def _with_axis(params, name, value):
    if name == "beta_sq":
        return ProtocolParams.from_beta_sq(value, **{k: v for k, v in params.as_dict().items() if k != "alpha_mag"})
    return params.replace(**{name: value})


def _sweep_point(task):
    command, params, cutoff, convention = task
    return ROW_FUNCS[command](params, cutoff, convention)


def _sweep(cfg):
    name, start, stop, steps = cfg.axis
    values = np.linspace(start, stop, steps)
    try:
        tasks = [(cfg.sweep_command, _with_axis(cfg.params, name, float(v)), cfg.cutoff, cfg.convention) for v in values]
    except ValueError as exc:
        raise UsageError(f"axis {name}: {exc}") from exc
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    columns = [name] + list(results[0][0])
    rows = [[float(v)] + list(r.values()) for v, (r, _) in zip(values, results)]
    diag = {}
    tails = [d["qfi_tail"] for _, d in results if "qfi_tail" in d]
    if tails:
        diag["max_qfi_tail"] = max(tails)
        diag["max_qfi_cutoff"] = max(d["qfi_cutoff"] for _, d in results)
    return columns, rows, diag


def _pmf(cfg):
    columns = ["n", "p_h", "p_v", "dp_h", "dp_v"]
    state = output_state(cfg.params, cfg.convention)
    (pmf_h, d_h), (pmf_v, d_v) = (photon_pmf_with_derivative(m, cutoff=cfg.cutoff) for m in state.modes())
    size = max(pmf_h.cutoff, pmf_v.cutoff) + 1

    def pad(a):
        return np.pad(a, (0, size - len(a)))

    table = zip(range(size), pad(pmf_h.probs), pad(pmf_v.probs), pad(d_h), pad(d_v))
    rows = [[n, float(a), float(b), float(c), float(d)] for n, a, b, c, d in table]
    diag = {"tail_bound_h": pmf_h.tail_bound, "tail_bound_v": pmf_v.tail_bound}
    return columns, rows, diag


def _simulate(cfg):
    c = ExperimentConfig(
        params=cfg.params,
        pulses=cfg.pulses,
        seed=cfg.seed,
        model=cfg.model,
        phi_grid_points=cfg.grid_points,
    )
    data = simulate_counts(c)
    est = point_estimate(infer_phase([(data, c)], c.phi_grid_points), warn=False)
    columns = ["pulse", "n_h", "n_v"]
    rows = [[i, int(a), int(b)] for i, (a, b) in enumerate(data.counts)]
    diag = {
        "phi_hat": est.phi_hat,
        "phi_err": est.err,
        "multimodal": est.multimodal,
        "mean_n_h": float(data.counts[:, 0].mean()),
        "mean_n_v": float(data.counts[:, 1].mean()),
        "model_warnings": list(data.warnings),
    }
    return columns, rows, diag


def _two_step(cfg):
    rows_out = two_step_campaign(
        cfg.params,
        cfg.phi_values,
        cfg.pulses,
        cfg.repeats,
        seed=cfg.seed,
        fraction_p=cfg.fraction_p,
        jobs=cfg.jobs,
        grid_points=cfg.grid_points,
    )
    columns = ["phi", "phi_hat", "phi_hat_std", "err_mean", "bias_stderr", "cfi_bound", "coherent_bound", "degraded", "runs"]
    rows = [
        [r.phi, r.phi_hat_mean, r.phi_hat_std, r.err_mean, r.bias_stderr, r.cfi_bound, r.coherent_bound, r.degraded, r.runs]
        for r in rows_out
    ]
    return columns, rows, {"seed_rule": "run (i, r) uses SeedSequence(seed, spawn_key=(i*repeats + r,))"}


def run(cfg):
    """Execute a RunConfig and return ``(columns, rows, diagnostics)``."""
    if cfg.command in ROW_FUNCS:
        return _single(cfg)
    return {"sweep": _sweep, "pmf": _pmf, "simulate": _simulate, "two-step": _two_step}[cfg.command](cfg)


# --------------------------------------------------------------------------
# output


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    if value is None:
        return ""
    return str(value)


def _jsonable(value):
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def render(cfg, columns, rows, diag):
    echo = cfg.echo()
    if cfg.format == "json":
        doc = {
            "command": cfg.command,
            "version": __version__,
            "seed": cfg.seed,
            "config": echo,
            "diagnostics": diag,
            "units": "angles in radians; counts per pulse",
            "columns": columns,
            "rows": rows,
        }
        return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"
    lines = [f"# ampmetro {__version__}", "# units: angles in radians; counts per pulse"]
    lines += [f"# {k}={_fmt(v)}" for k, v in echo.items()]
    lines += [f"# diag.{k}={_fmt(v)}" for k, v in diag.items()]
    lines.append(",".join(columns))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _resolve_output(cfg):
    if cfg.output:
        return cfg.output
    folder = os.environ.get(ENV_OUTPUT_DIR)
    if folder:
        return os.path.join(folder, f"{cfg.command}.{cfg.format}")
    return None


def write_atomic(path, text):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".ampmetro-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"ampmetro: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    path = _resolve_output(cfg)
    try:
        columns, rows, diag = run(cfg)
    except UsageError as exc:
        print(f"ampmetro: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"ampmetro: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (InsensitivePointError, ValueError) as exc:
        print(f"ampmetro: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = render(cfg, columns, rows, diag)
    if path is None:
        sys.stdout.write(text)
        return EXIT_OK
    write_atomic(path, text)
    meta = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "argv": argv,
        "version": __version__,
        "data_file": os.path.basename(path),
    }
    write_atomic(path + ".meta.json", json.dumps(meta, indent=2) + "\n")
    return EXIT_OK
