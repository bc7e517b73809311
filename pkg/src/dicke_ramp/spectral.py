"""Eigenanalysis: parity sectors, ground states, sector-restricted gaps.

The Hamiltonian with b_z = 0 commutes with the combined parity

    Pi = (-1)^(n_ph + Sx + N/2),

which in the Sz product basis acts as (Pi psi)(m, n) = (-1)^(N+n) psi(-m, n).
The phase offset N/2 makes the reference state |0> x |m_x=-N/2> sit in the
+1 (Even) sector for every N.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .model import (
    Basis,
    ModelParams,
    QuantumState,
    build_hamiltonian,
    coherent_amplitudes,
)

EVEN, ODD = 1, -1

# Sector matrices at or below this dimension are diagonalized densely.
DENSE_EIG_CUTOFF = 2000
# Degenerate pairs closer than this (relative to the spectral scale) are
# reported as ambiguous.
DEGENERACY_TOL = 1e-10


class EigensolverError(RuntimeError):
    """Iterative eigensolver failed to converge."""


class TruncationWarning(UserWarning):
    """Fock truncation is too tight for the requested state."""


class DegeneracyWarning(UserWarning):
    """Two sector eigenvalues coincide within tolerance."""


def apply_parity(vec: np.ndarray, basis: Basis) -> np.ndarray:
    """Apply the combined parity operator to a flat state vector."""
    mat = vec.reshape(basis.spin_dim, basis.phonon_dim)
    signs = np.where(np.arange(basis.phonon_dim) % 2 == 0, 1.0, -1.0)
    if basis.n_spins % 2 == 1:
        signs = -signs
    return (signs * mat[::-1, :]).reshape(-1)


def parity_operator(basis: Basis) -> sp.csr_matrix:
    """Combined parity as a sparse signed permutation matrix."""
    rows, cols, vals = [], [], []
    for m_idx in range(basis.spin_dim):
        for n in range(basis.phonon_dim):
            sign = 1.0 if (basis.n_spins + n) % 2 == 0 else -1.0
            rows.append(m_idx * basis.phonon_dim + n)
            cols.append((basis.spin_dim - 1 - m_idx) * basis.phonon_dim + n)
            vals.append(sign)
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))


def parity_of(state: QuantumState) -> complex:
    """Expectation of the combined parity; +-1 for sector eigenstates."""
    return complex(np.vdot(state.vector, apply_parity(state.vector, state.basis)))


def sector_isometry(basis: Basis, sector: int) -> sp.csr_matrix:
    """Orthonormal basis of one parity sector as a (dim x d_sector) isometry.

    Basis states pair under parity as (m, n) <-> (-m, n) with sign
    (-1)^(N+n); each pair yields one even and one odd combination, and the
    self-paired m = 0 states belong to the sector matching their sign.
    """
    if sector not in (EVEN, ODD):
        raise ValueError("sector must be +1 (even) or -1 (odd)")
    rows, cols, vals = [], [], []
    col = 0
    inv = 1.0 / math.sqrt(2.0)
    for m_idx in range(basis.spin_dim):
        partner = basis.spin_dim - 1 - m_idx
        if m_idx > partner:
            continue
        for n in range(basis.phonon_dim):
            sign = 1.0 if (basis.n_spins + n) % 2 == 0 else -1.0
            i = m_idx * basis.phonon_dim + n
            j = partner * basis.phonon_dim + n
            if m_idx == partner:
                if sign == sector:
                    rows.append(i)
                    cols.append(col)
                    vals.append(1.0)
                    col += 1
            else:
                rows.append(i)
                cols.append(col)
                vals.append(inv)
                rows.append(j)
                cols.append(col)
                vals.append(sector * sign * inv)
                col += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, col))


def _lowest_eigs(h, k: int, v0=None):
    """Lowest k eigenpairs of a real symmetric sparse matrix.

    Dense below DENSE_EIG_CUTOFF or when k crowds the dimension; Lanczos
    (ARPACK) above, with a deterministic start vector.
    """
    dim = h.shape[0]
    k = min(k, dim)
    if dim <= DENSE_EIG_CUTOFF or k >= dim - 1:
        vals, vecs = scipy.linalg.eigh(h.toarray(), subset_by_index=[0, k - 1])
        return vals, vecs
    if v0 is None:
        v0 = np.linspace(1.0, 2.0, dim)
    try:
        vals, vecs = eigsh(h, k=k, which="SA", v0=v0, maxiter=10 * dim)
    except ArpackNoConvergence as exc:
        got = len(exc.eigenvalues)
        if got:
            res = np.linalg.norm(h @ exc.eigenvectors[:, 0]
                                 - exc.eigenvalues[0] * exc.eigenvectors[:, 0])
            raise EigensolverError(
                f"eigensolver converged only {got}/{k} pairs "
                f"(best residual {res:.3e})") from exc
        raise EigensolverError("eigensolver produced no converged pairs") from exc
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _fix_gauge(vec: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest-magnitude entry positive."""
    idx = int(np.argmax(np.abs(vec)))
    if vec[idx].real < 0:
        return -vec
    return vec


def sector_eigs(params: ModelParams, b_x: float, sector: int, k: int, v0=None):
    """Lowest k eigenpairs within one parity sector; vectors in the full basis."""
    basis = params.basis
    h = build_hamiltonian(params, b_x)
    q = sector_isometry(basis, sector)
    h_sector = (q.T @ (h @ q)).tocsr()
    vals, vecs = _lowest_eigs(h_sector, k, v0=v0)
    full = q @ vecs
    return vals, full


def ground_state(params: ModelParams, b_x: float):
    """Lowest eigenpair of H(b_x); the even combination on degenerate manifolds.

    Returns (energy, QuantumState).  With b_z != 0 parity is broken and the
    global ground state is computed without sector projection.
    """
    basis = params.basis
    if params.b_z != 0.0:
        h = build_hamiltonian(params, b_x)
        vals, vecs = _lowest_eigs(h, 1)
        vec = _fix_gauge(vecs[:, 0])
        energy = float(vals[0])
    else:
        vals_e, vecs_e = sector_eigs(params, b_x, EVEN, 1)
        vals_o, vecs_o = sector_eigs(params, b_x, ODD, 1)
        scale = max(1.0, abs(vals_e[0]), abs(vals_o[0]))
        if vals_o[0] < vals_e[0] - DEGENERACY_TOL * scale:
            energy, vec = float(vals_o[0]), vecs_o[:, 0]
        else:
            energy, vec = float(vals_e[0]), vecs_e[:, 0]
        vec = _fix_gauge(vec)
    state = QuantumState(vec / np.linalg.norm(vec), basis)
    edge = float(np.sum(np.abs(state.as_matrix()[:, -1]) ** 2))
    if edge > 1e-8:
        warnings.warn(
            f"ground state carries weight {edge:.3e} at the Fock truncation "
            f"n = {params.n_max}; raise n_max", TruncationWarning)
    return energy, state


def gap_in_sector(params: ModelParams, b_x: float, v0=None) -> float:
    """Energy gap from the ground state to the first excited state sharing
    its parity sector."""
    if params.b_z != 0.0:
        raise ValueError("sector gap undefined when b_z breaks the parity symmetry")
    vals_e, _ = sector_eigs(params, b_x, EVEN, 2, v0=v0)
    vals_o, _ = sector_eigs(params, b_x, ODD, 1)
    scale = max(1.0, abs(vals_e[0]), abs(vals_o[0]))
    if vals_o[0] < vals_e[0] - DEGENERACY_TOL * scale:
        vals_o2, _ = sector_eigs(params, b_x, ODD, 2)
        lo, hi = float(vals_o2[0]), float(vals_o2[1])
    else:
        lo, hi = float(vals_e[0]), float(vals_e[1])
    if hi - lo < DEGENERACY_TOL * scale:
        warnings.warn(
            f"sector gap at b_x={b_x:.6g} degenerate within {DEGENERACY_TOL}",
            DegeneracyWarning)
    return max(hi - lo, 0.0)


@dataclass(frozen=True)
class SpectrumSlice:
    """Lowest-k spectrum at one field value with sector labels."""

    b_x: float
    energies: np.ndarray
    parities: np.ndarray
    gap_same_sector: float


def spectrum_slice(params: ModelParams, b_x: float, k: int = 6) -> SpectrumSlice:
    k_each = max(2, k)
    vals_e, _ = sector_eigs(params, b_x, EVEN, k_each)
    vals_o, _ = sector_eigs(params, b_x, ODD, k_each)
    merged = sorted([(float(v), EVEN) for v in vals_e] + [(float(v), ODD) for v in vals_o])
    merged = merged[:k]
    energies = np.array([e for e, _ in merged])
    parities = np.array([p for _, p in merged])
    ground_parity = parities[0]
    same = energies[parities == ground_parity]
    gap = float(same[1] - same[0]) if len(same) > 1 else float("nan")
    return SpectrumSlice(b_x=b_x, energies=energies, parities=parities,
                         gap_same_sector=gap)


@dataclass(frozen=True)
class GapTable:
    """Sector gap and ground-state data sampled on a field grid."""

    b_values: np.ndarray
    gaps: np.ndarray
    ground_energies: np.ndarray
    parities: np.ndarray


def gap_scan(params: ModelParams, n_samples: int = 400, b_max: float | None = None,
             workers: int = 1, chunk: int = 50) -> GapTable:
    """Sample the same-sector gap on a uniform grid over [0, b_max].

    Samples are processed in fixed contiguous chunks (warm-starting the
    Lanczos start vector inside each chunk) so results do not depend on the
    worker count.
    """
    if b_max is None:
        b_max = params.b_x0
    b_values = np.linspace(0.0, b_max, n_samples)
    chunks = [range(i, min(i + chunk, n_samples)) for i in range(0, n_samples, chunk)]

    def scan_chunk(idx_range):
        out = []
        v0_even = None
        v0_odd = None
        q_even = sector_isometry(params.basis, EVEN)
        q_odd = sector_isometry(params.basis, ODD)
        for i in idx_range:
            h = build_hamiltonian(params, b_values[i])
            h_e = (q_even.T @ (h @ q_even)).tocsr()
            h_o = (q_odd.T @ (h @ q_odd)).tocsr()
            vals_e, vecs_e = _lowest_eigs(h_e, 2, v0=v0_even)
            vals_o, vecs_o = _lowest_eigs(h_o, 1, v0=v0_odd)
            if h_e.shape[0] > DENSE_EIG_CUTOFF:
                v0_even = vecs_e[:, 0]
            if h_o.shape[0] > DENSE_EIG_CUTOFF:
                v0_odd = vecs_o[:, 0]
            if vals_o[0] < vals_e[0]:
                vals_o2, _ = _lowest_eigs(h_o, 2, v0=v0_odd)
                out.append((float(vals_o2[0]), float(vals_o2[1] - vals_o2[0]), ODD))
            else:
                out.append((float(vals_e[0]), float(vals_e[1] - vals_e[0]), EVEN))
        return out

    if workers > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(scan_chunk, chunks))
    else:
        results = [scan_chunk(c) for c in chunks]
    rows = [row for block in results for row in block]
    energies = np.array([r[0] for r in rows])
    gaps = np.array([r[1] for r in rows])
    parities = np.array([r[2] for r in rows])
    return GapTable(b_values=b_values, gaps=gaps, ground_energies=energies,
                    parities=parities)


def cat_state(params: ModelParams) -> QuantumState:
    """Normalized superradiant-limit ground state in the even parity sector.

    (|+alpha> x |+N/2> + (-1)^N |-alpha> x |-N/2>) / sqrt(2); the sign on the
    second branch keeps the state in the same sector as the strong-field
    reference state for odd N (for even N both signs coincide with the
    symmetric combination).
    """
    basis = params.basis
    alpha = params.alpha
    c_plus = coherent_amplitudes(alpha, params.n_max)
    tail = 1.0 - float(np.sum(c_plus ** 2))
    if tail > 1e-8:
        warnings.warn(
            f"coherent-state weight {tail:.3e} beyond n_max = {params.n_max}; "
            f"raise n_max", TruncationWarning)
    signs = np.where(np.arange(params.n_max + 1) % 2 == 0, 1.0, -1.0)
    branch_sign = 1.0 if params.n_spins % 2 == 0 else -1.0
    amps = np.zeros((basis.spin_dim, basis.phonon_dim))
    amps[-1, :] = c_plus                     # m = +N/2 with |+alpha>
    amps[0, :] = branch_sign * signs * c_plus  # m = -N/2 with |-alpha>
    vec = amps.reshape(-1)
    return QuantumState(vec / np.linalg.norm(vec), basis)
