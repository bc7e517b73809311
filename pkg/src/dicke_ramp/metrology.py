"""State-quality measures: fidelity, QFI, cat coherence, spin distributions,
and phenomenological dephasing post-processing.

Dephasing here is a reporting-layer correction applied to reduced spin
states after unitary evolution; it is never fed back into the dynamics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .model import ModelParams, QuantumState, coherent_amplitudes, \
    collective_spin_matrices
from .spectral import cat_state, TruncationWarning


class ValidityWarning(UserWarning):
    """A phenomenological model is being used outside its validity regime."""


def fidelity_to_cat(state: QuantumState, params: ModelParams,
                    cat: QuantumState | None = None) -> float:
    """Squared overlap with the normalized superradiant cat state."""
    if cat is None:
        cat = cat_state(params)
    return float(abs(cat.overlap(state)) ** 2)


def qfi(state: QuantumState) -> float:
    """Quantum Fisher information 4*max_n Var(S_n) of a pure state.

    The maximization over the spin direction n is the top eigenvalue of the
    3x3 symmetrized covariance matrix of (Sx, Sy, Sz).
    """
    if isinstance(state, np.ndarray) and state.ndim == 2:
        raise ValueError("qfi is defined here for pure states only, not density matrices")
    cov = spin_covariance(state)
    return float(4.0 * scipy.linalg.eigh(cov, eigvals_only=True)[-1])


def spin_covariance(state: QuantumState) -> np.ndarray:
    """Symmetrized covariance matrix C_ij = Re<SiSj> - <Si><Sj>."""
    ops = _OpCache.for_basis(state.basis)
    v = state.vector
    applied = [op @ v for op in ops]
    means = np.array([np.vdot(v, av).real for av in applied])
    cov = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            cov[i, j] = cov[j, i] = np.vdot(applied[i], applied[j]).real \
                - means[i] * means[j]
    return cov


class _OpCache:
    """Full-space (Sx, Sy, Sz) keyed by basis shape, to keep qfi cheap in sweeps."""

    _cache: dict = {}

    @classmethod
    def for_basis(cls, basis):
        key = (basis.n_spins, basis.n_max)
        if key not in cls._cache:
            sx, sy, sz = collective_spin_matrices(basis.n_spins)
            eye_ph = sp.identity(basis.phonon_dim, format="csr")
            cls._cache[key] = tuple(sp.kron(s, eye_ph, format="csr")
                                    for s in (sx, sy, sz))
        return cls._cache[key]


@dataclass(frozen=True)
class CoherenceRecord:
    """Extremal spin-phonon coherence <N/2|<alpha| rho |-alpha>|-N/2>."""

    value: complex
    gamma_applied: float = 0.0


def _cat_branches(params: ModelParams):
    """The two displaced product branches of the cat, as flat vectors."""
    basis = params.basis
    c = coherent_amplitudes(params.alpha, params.n_max)
    tail = 1.0 - float(np.sum(c ** 2))
    if tail > 1e-8:
        warnings.warn(
            f"coherent branch weight {tail:.3e} beyond n_max = {params.n_max}",
            TruncationWarning)
    up = np.zeros((basis.spin_dim, basis.phonon_dim))
    up[-1, :] = c
    down = np.zeros_like(up)
    signs = np.where(np.arange(basis.phonon_dim) % 2 == 0, 1.0, -1.0)
    down[0, :] = signs * c
    return up.reshape(-1), down.reshape(-1)


def coherence_extremal(state_or_rho, params: ModelParams,
                       gamma_applied: float = 0.0) -> CoherenceRecord:
    """Extremal coherence between the two cat branches.

    Accepts a pure :class:`QuantumState`, a full density matrix, or a
    sequence of (weight, state) pairs treated as a statistical mixture.
    """
    up, down = _cat_branches(params)
    if isinstance(state_or_rho, QuantumState):
        v = state_or_rho.vector
        value = np.vdot(up, v) * np.vdot(v, down)
    elif isinstance(state_or_rho, np.ndarray) and state_or_rho.ndim == 2:
        value = up.conj() @ state_or_rho @ down
    else:
        value = 0.0 + 0.0j
        for weight, member in state_or_rho:
            v = member.vector
            value += weight * np.vdot(up, v) * np.vdot(v, down)
    return CoherenceRecord(value=complex(value), gamma_applied=gamma_applied)


def apply_collective_dephasing(spin_density_matrix: np.ndarray, gamma: float,
                               t: float, exponent: str = "linear",
                               b_x: float = 0.0) -> np.ndarray:
    """Damp Sz-basis coherences of a reduced spin density matrix.

    Element (m_i, m_j) is multiplied by exp(-|m_i - m_j| Gamma t); the
    ``squared`` exponent switch uses (m_i - m_j)^2 instead.  The model is
    valid only while the transverse field is off, so a nonzero ``b_x``
    triggers a warning.  The diagonal, and hence the trace, is unchanged.
    """
    if b_x != 0.0:
        warnings.warn(
            "collective dephasing decay law is valid at zero transverse field",
            ValidityWarning)
    rho = np.asarray(spin_density_matrix)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("spin density matrix must be square")
    n_spins = rho.shape[0] - 1
    m = np.arange(n_spins + 1) - n_spins / 2.0
    dm = np.abs(m[:, None] - m[None, :])
    if exponent == "linear":
        factor = np.exp(-dm * gamma * t)
    elif exponent == "squared":
        factor = np.exp(-(dm ** 2) * gamma * t)
    else:
        raise ValueError(f"exponent must be 'linear' or 'squared', got {exponent!r}")
    return rho * factor


def sx_depolarization(sx_value: float, gamma: float, t: float) -> float:
    """Strong-field depolarization correction <Sx> -> <Sx> exp(-Gamma t)."""
    return sx_value * np.exp(-gamma * t)


@dataclass(frozen=True)
class SpinDistribution:
    """Collective-spin projection probabilities with phonons traced out."""

    axis: str
    probs: np.ndarray
    m_values: np.ndarray

    def abs_mean(self) -> float:
        return float(np.sum(np.abs(self.m_values) * self.probs))


def spin_distribution(state: QuantumState, axis: str = "z") -> SpinDistribution:
    """P(m) along a collective axis; m runs from -N/2 to +N/2 ascending."""
    basis = state.basis
    mat = state.as_matrix()
    m_values = basis.m_values
    if axis == "z":
        probs = np.sum(np.abs(mat) ** 2, axis=1)
    elif axis in ("x", "y"):
        sx, sy, _ = collective_spin_matrices(basis.n_spins)
        op = sx if axis == "x" else sy
        _, vecs = scipy.linalg.eigh(op.toarray())
        probs = np.sum(np.abs(vecs.conj().T @ mat) ** 2, axis=1)
    else:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    return SpinDistribution(axis=axis, probs=probs, m_values=m_values)


def abs_sz_expectation(state: QuantumState) -> float:
    """<|Sz|> = sum_m |m| P(m), the shot-wise absolute magnetization."""
    return spin_distribution(state, "z").abs_mean()


def reduced_spin_density(state: QuantumState) -> np.ndarray:
    """Trace out the phonons, returning the (N+1)x(N+1) spin density matrix."""
    mat = state.as_matrix()
    return mat @ mat.conj().T
