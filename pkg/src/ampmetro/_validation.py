"""Input validation helpers shared by the estimators and free functions."""

import math
import numbers

import numpy as np
from sklearn.utils.validation import check_array


def wrap_angle(angle):
    """Map an angle to the half-open interval (-pi, pi]."""
    angle = float(angle)
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    wrapped = math.remainder(angle, 2 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2 * math.pi
    return wrapped


def check_scalar(value, name, *, min_val=None, max_val=None):
    """Return ``value`` as a finite float, raising ValueError naming ``name``."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if min_val is not None and value < min_val:
        raise ValueError(f"{name}={value!r} is below the allowed minimum {min_val}")
    if max_val is not None and value > max_val:
        raise ValueError(f"{name}={value!r} is above the allowed maximum {max_val}")
    return value


def check_unit_interval(value, name):
    return check_scalar(value, name, min_val=0.0, max_val=1.0)


def check_nonnegative(value, name):
    return check_scalar(value, name, min_val=0.0)


def check_cutoff(cutoff, name="cutoff", minimum=0):
    if isinstance(cutoff, bool) or not isinstance(cutoff, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(cutoff).__name__}")
    if cutoff < minimum:
        raise ValueError(f"{name}={cutoff} must be >= {minimum}")
    return int(cutoff)


def check_counts(X):
    """Validate a photon-count array of shape (n_pulses, 2).

    Column 0 holds the H-mode counts, column 1 the V-mode counts.
    """
    X = check_array(X, dtype=None, ensure_min_samples=0, ensure_2d=True)
    if X.shape[1] != 2:
        raise ValueError(f"counts must have 2 columns (n_h, n_v), got shape {X.shape}")
    if X.size and not np.all(np.equal(np.mod(X, 1), 0)):
        raise ValueError("counts must be integers")
    X = X.astype(np.int64)
    if X.size and X.min() < 0:
        raise ValueError("counts must be nonnegative")
    return X
