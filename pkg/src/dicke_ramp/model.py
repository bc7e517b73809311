"""Model parameters, product basis, and operator construction.

The system is N spin-1/2 particles, restricted to the maximal collective
multiplet S = N/2, coupled to a single truncated boson mode.  In the rotating
frame the Hamiltonian is

    H(B) = -delta * n_ph - (g/sqrt(N)) * (a + a_dag) Sz + B * Sx + b_z * Sz

with delta < 0, so the phonon term is positive.  All angular frequencies are
stored in rad/ms (2*pi rad/ms per kHz) and times in ms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

# rad/ms per kHz of ordinary frequency
KHZ = 2.0 * np.pi

# Thermal tail weight used when sizing the Fock truncation for nbar > 0.
THERMAL_EPSILON = 1e-4


class ParamsError(ValueError):
    """Raised for physically invalid model parameters."""


def default_n_max(alpha: float, nbar: float) -> int:
    """Fock cutoff covering the +-alpha coherent displacement and thermal tail.

    Takes the larger of the 6-sigma coherent envelope plus a thermal margin
    and the envelope plus the geometric-tail cutoff nbar*ln(1/eps), so the
    truncation-adequacy check in :meth:`ModelParams.validate` always passes
    for auto-sized parameters.
    """
    envelope = math.ceil(alpha * alpha + 6.0 * alpha)
    thermal_margin = math.ceil(4.0 * (nbar + 1.0))
    thermal_tail = math.ceil(alpha * alpha + 6.0 * alpha + nbar * math.log(1.0 / THERMAL_EPSILON))
    return max(20, envelope + thermal_margin, thermal_tail)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of one model instance.

    Angular frequencies (g, delta, b_x0, b_z) are in rad/ms, gamma_dephase in
    1/ms.  ``n_max=None`` auto-sizes the Fock truncation from alpha and nbar.
    """

    n_spins: int
    g: float
    delta: float
    b_x0: float
    b_z: float = 0.0
    gamma_dephase: float = 0.0
    nbar: float = 0.0
    n_max: int | None = None

    def __post_init__(self):
        if self.n_spins < 1 or int(self.n_spins) != self.n_spins:
            raise ParamsError(f"n_spins must be a positive integer, got {self.n_spins}")
        if not self.delta < 0:
            raise ParamsError(f"delta must be strictly negative, got {self.delta}")
        if self.g < 0:
            raise ParamsError(f"g must be non-negative, got {self.g}")
        if self.nbar < 0:
            raise ParamsError(f"nbar must be non-negative, got {self.nbar}")
        if self.gamma_dephase < 0:
            raise ParamsError(f"gamma_dephase must be non-negative, got {self.gamma_dephase}")
        if self.n_max is None:
            object.__setattr__(self, "n_max", default_n_max(self.alpha, self.nbar))
        elif self.n_max < 0 or int(self.n_max) != self.n_max:
            raise ParamsError(f"n_max must be a non-negative integer, got {self.n_max}")

    @classmethod
    def from_khz(cls, n_spins, g_khz, delta_khz, bx0_khz, bz_khz=0.0,
                 gamma_per_s=0.0, nbar=0.0, n_max=None):
        """Build from user-facing units: kHz for fields, 1/s for the dephasing rate."""
        return cls(
            n_spins=n_spins,
            g=KHZ * g_khz,
            delta=KHZ * delta_khz,
            b_x0=KHZ * bx0_khz,
            b_z=KHZ * bz_khz,
            gamma_dephase=gamma_per_s / 1000.0,
            nbar=nbar,
            n_max=n_max,
        )

    @property
    def j_coupling(self) -> float:
        """Effective spin-spin coupling J = g^2/|delta|, rad/ms."""
        return self.g * self.g / abs(self.delta)

    @property
    def b_crit(self) -> float:
        """Critical transverse field J/4 separating the two phases."""
        return self.j_coupling / 4.0

    @property
    def alpha(self) -> float:
        """Coherent displacement of the weak-field ground state branches."""
        return self.g * math.sqrt(self.n_spins) / (2.0 * abs(self.delta))

    @property
    def basis(self) -> "Basis":
        return Basis(self.n_spins, self.n_max)

    @property
    def dim(self) -> int:
        return (self.n_spins + 1) * (self.n_max + 1)

    def validate(self) -> list[str]:
        """Return a list of soft-invariant violations (empty when clean).

        The truncation-adequacy bound is checked here rather than in the
        constructor so that deliberately small boxes (oracle tests, truncation
        diagnostics) remain constructible; config loading rejects violations.
        """
        problems = []
        needed = math.ceil(self.alpha ** 2 + 6.0 * self.alpha
                           + self.nbar * math.log(1.0 / THERMAL_EPSILON))
        if self.n_max < needed:
            problems.append(
                f"n_max={self.n_max} below truncation-adequacy bound {needed} "
                f"(alpha={self.alpha:.4g}, nbar={self.nbar:.4g})")
        return problems


@dataclass(frozen=True)
class Basis:
    """Product basis |m> x |n> with flat index (m + N/2)*(n_max+1) + n."""

    n_spins: int
    n_max: int

    @property
    def spin_dim(self) -> int:
        return self.n_spins + 1

    @property
    def phonon_dim(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return self.spin_dim * self.phonon_dim

    @property
    def m_values(self) -> np.ndarray:
        """Sz eigenvalues -N/2 .. +N/2, ascending."""
        return np.arange(self.spin_dim) - self.n_spins / 2.0

    def index(self, m: float, n: int) -> int:
        m_idx = int(round(m + self.n_spins / 2.0))
        if not (0 <= m_idx < self.spin_dim and 0 <= n < self.phonon_dim):
            raise IndexError(f"(m={m}, n={n}) outside basis")
        return m_idx * self.phonon_dim + n


@dataclass
class QuantumState:
    """Complex amplitude vector over a :class:`Basis`."""

    vector: np.ndarray
    basis: Basis

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.complex128)
        if self.vector.shape != (self.basis.dim,):
            raise ValueError(
                f"state size {self.vector.shape} does not match basis dim {self.basis.dim}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def normalized(self) -> "QuantumState":
        return QuantumState(self.vector / self.norm(), self.basis)

    def as_matrix(self) -> np.ndarray:
        """Amplitudes reshaped to (spin_dim, phonon_dim)."""
        return self.vector.reshape(self.basis.spin_dim, self.basis.phonon_dim)

    def overlap(self, other: "QuantumState") -> complex:
        return complex(np.vdot(self.vector, other.vector))

    def expectation(self, op) -> complex:
        return complex(np.vdot(self.vector, op.dot(self.vector)))


# ---------------------------------------------------------------------------
# operators


def collective_spin_matrices(n_spins: int):
    """Spin-factor matrices (sx, sy, sz) for S = N/2, m ascending.

    Ladder elements are sqrt(S(S+1) - m(m+1)); sz is diagonal with entries m.
    """
    s = n_spins / 2.0
    m = np.arange(n_spins + 1) - s
    c_plus = np.sqrt(s * (s + 1.0) - m[:-1] * (m[:-1] + 1.0))
    s_plus = sp.diags(c_plus, -1)          # raises m: row index m+1, col m
    s_minus = s_plus.T
    sx = ((s_plus + s_minus) / 2.0).tocsr()
    sy = ((s_plus - s_minus) / (2.0j)).tocsr()
    sz = sp.diags(m).tocsr()
    return sx, sy, sz


def boson_matrices(n_max: int):
    """Phonon-factor matrices (a, a_dag, n_op) on the truncated Fock space."""
    root_n = np.sqrt(np.arange(1, n_max + 1))
    a = sp.diags(root_n, 1).tocsr()
    a_dag = sp.diags(root_n, -1).tocsr()
    n_op = sp.diags(np.arange(n_max + 1, dtype=float)).tocsr()
    return a, a_dag, n_op


def build_collective_spin_ops(params: ModelParams):
    """Full-space collective spin operators (Sx, Sy, Sz)."""
    sx, sy, sz = collective_spin_matrices(params.n_spins)
    eye_ph = sp.identity(params.n_max + 1, format="csr")
    return (sp.kron(sx, eye_ph, format="csr"),
            sp.kron(sy, eye_ph, format="csr"),
            sp.kron(sz, eye_ph, format="csr"))


def build_boson_ops(params: ModelParams):
    """Full-space boson operators (a, a_dag, n_op)."""
    a, a_dag, n_op = boson_matrices(params.n_max)
    eye_s = sp.identity(params.n_spins + 1, format="csr")
    return (sp.kron(eye_s, a, format="csr"),
            sp.kron(eye_s, a_dag, format="csr"),
            sp.kron(eye_s, n_op, format="csr"))


def hamiltonian_parts(params: ModelParams):
    """Split H(B) = H_fixed + B * Sx_full; both real CSR matrices.

    H_fixed = -delta n_ph - (g/sqrt(N)) (a + a_dag) Sz + b_z Sz.
    """
    sx, _, sz = collective_spin_matrices(params.n_spins)
    a, a_dag, n_op = boson_matrices(params.n_max)
    eye_s = sp.identity(params.n_spins + 1, format="csr")
    eye_ph = sp.identity(params.n_max + 1, format="csr")

    h_fixed = (-params.delta) * sp.kron(eye_s, n_op)
    coupling = params.g / math.sqrt(params.n_spins)
    h_fixed = h_fixed - coupling * sp.kron(sz, a + a_dag)
    if params.b_z != 0.0:
        h_fixed = h_fixed + params.b_z * sp.kron(sz, eye_ph)
    sx_full = sp.kron(sx, eye_ph, format="csr")
    return h_fixed.tocsr(), sx_full


def build_hamiltonian(params: ModelParams, b_x: float):
    """Hamiltonian at transverse field b_x (rad/ms), real sparse CSR."""
    h_fixed, sx_full = hamiltonian_parts(params)
    if b_x != 0.0:
        return (h_fixed + b_x * sx_full).tocsr()
    return h_fixed


def hermiticity_defect(op) -> float:
    """Max elementwise |H - H^dag|."""
    diff = op - op.conj().T
    if sp.issparse(diff):
        return float(abs(diff).max()) if diff.nnz else 0.0
    return float(np.abs(diff).max())


# ---------------------------------------------------------------------------
# reference product states


def x_polarized_spin(n_spins: int) -> np.ndarray:
    """Amplitudes of the lowest Sx eigenstate |m_x = -N/2> in the Sz basis.

    Closed form 2^(-N/2) (-1)^(N-k) sqrt(C(N,k)) with k = m + N/2, evaluated
    in log space so it stays finite for large N.
    """
    k = np.arange(n_spins + 1)
    log_amp = 0.5 * (gammaln(n_spins + 1) - gammaln(k + 1) - gammaln(n_spins - k + 1))
    log_amp -= 0.5 * n_spins * math.log(2.0)
    signs = np.where((n_spins - k) % 2 == 0, 1.0, -1.0)
    return signs * np.exp(log_amp)


def fock_x_state(params: ModelParams, n_phonon: int = 0) -> QuantumState:
    """Product state |n_phonon> x |m_x = -N/2>: the strong-field ground state."""
    basis = params.basis
    if not 0 <= n_phonon <= params.n_max:
        raise ValueError(f"n_phonon={n_phonon} outside truncation 0..{params.n_max}")
    amps = np.zeros((basis.spin_dim, basis.phonon_dim), dtype=np.complex128)
    amps[:, n_phonon] = x_polarized_spin(params.n_spins)
    return QuantumState(amps.reshape(-1), basis)


def coherent_amplitudes(alpha: float, n_max: int) -> np.ndarray:
    """Fock amplitudes of |alpha> for real alpha, by stable recurrence."""
    amps = np.empty(n_max + 1)
    amps[0] = math.exp(-0.5 * alpha * alpha)
    for n in range(1, n_max + 1):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return amps
