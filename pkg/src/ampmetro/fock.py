"""Brute-force truncated Fock-space representations.

These routines build density matrices with dense matrix exponentials and
serve only as independent oracles for the closed forms elsewhere in the
package.  They are deliberately simple and make no use of the Gaussian
reordering identities.
"""

import math

import numpy as np
from scipy.linalg import eigh, expm

from ._validation import check_cutoff
from .gaussian import output_state, thermal_spectrum


def annihilation(dim):
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def displacement_matrix(gamma, dim):
    a = annihilation(dim)
    return expm(gamma * a.conj().T - np.conj(gamma) * a)


def squeezing_matrix(r, phase, dim):
    """``S(z) = exp[(z* a^2 - z a^dag^2)/2]`` with ``z = r e^{i phase}``."""
    a = annihilation(dim)
    z = r * np.exp(1j * phase)
    return expm(0.5 * (np.conj(z) * a @ a - z * a.conj().T @ a.conj().T))


def mode_density_matrix(m, dim):
    """``D S rho_th S^dag D^dag`` for a :class:`ModeGaussian` in ``dim`` levels."""
    dim = check_cutoff(dim, "dim", minimum=1)
    u = displacement_matrix(m.gamma, dim) @ squeezing_matrix(m.g_eff, m.squeeze_phase, dim)
    weights = thermal_spectrum(m.n_eff, dim - 1)
    return (u * weights) @ u.conj().T


def mode_photon_distribution(m, dim):
    """Diagonal of :func:`mode_density_matrix` without forming the full product."""
    u = displacement_matrix(m.gamma, dim) @ squeezing_matrix(m.g_eff, m.squeeze_phase, dim)
    weights = thermal_spectrum(m.n_eff, dim - 1)
    return np.abs(u) ** 2 @ weights


def working_dimension(m, cutoff, pad=40):
    """Fock dimension large enough that truncation does not reach ``cutoff``."""
    mean, var = m.mean_photons, max(m.photon_variance, 0.0)
    thermal = 0 if m.n_eff == 0 else math.ceil(40 * (1 + m.n_eff))
    return int(max(cutoff + pad, mean + 14 * math.sqrt(var) + pad, thermal))


def spectral_qfi(rho, drho, threshold=1e-14):
    """QFI from ``2 sum |<k|drho|l>|^2 / (l_k + l_l)`` over the spectrum of ``rho``."""
    evals, evecs = eigh(rho)
    evals = np.clip(evals, 0.0, None)
    d = evecs.conj().T @ drho @ evecs
    denom = evals[:, None] + evals[None, :]
    mask = denom > threshold
    return float(2 * np.sum(np.abs(d[mask]) ** 2 / denom[mask]))


def qfi_bruteforce(p, dim=None, step=1e-5, convention="waveplate"):
    """QFI of the two-mode output state from dense density matrices.

    The phase derivative of each single-mode density matrix is taken by a
    fourth-order central difference; the two modes contribute additively
    because the state is a product.
    """
    total = 0.0
    states = {k: output_state(p.replace(phi=p.phi + k * step), convention) for k in (-2, -1, 1, 2)}
    centre = output_state(p, convention)
    for idx, mode in enumerate(centre.modes()):
        n = dim or working_dimension(mode, 0, pad=30)
        rho = mode_density_matrix(mode, n)
        mats = {k: mode_density_matrix(s.modes()[idx], n) for k, s in states.items()}
        drho = (mats[-2] - 8 * mats[-1] + 8 * mats[1] - mats[2]) / (12 * step)
        total += spectral_qfi(rho, drho)
    return total
