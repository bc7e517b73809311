"""Time evolution under scheduled transverse fields.

Piecewise-constant schedules (constant, bang-bang) are evolved exactly
segment by segment: below ``dense_cutoff`` through a cached eigendecomposition
of H(B), above it with an adaptive Hermitian Lanczos exponential.  Continuous
ramps are stepped with a fourth-order commutator-free scheme whose two
exponentials per step are themselves piecewise-constant Hamiltonian actions
(Gauss-weighted fields); a plain midpoint scheme is available as an option.
Quenches are instantaneous: the state is continuous while H jumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline, PchipInterpolator

from .model import ModelParams, QuantumState, fock_x_state, hamiltonian_parts
from .metrology import _OpCache, _cat_branches, qfi as qfi_of
from .spectral import GapTable, apply_parity, cat_state, gap_scan


class PropagationError(RuntimeError):
    """Numerical failure during time evolution."""


class TruncationError(PropagationError):
    """State reached the Fock truncation boundary."""


class RampError(ValueError):
    """A ramp schedule cannot be constructed."""


# ---------------------------------------------------------------------------
# schedules


class RampSchedule:
    """Transverse field B(t) on [0, duration]."""

    kind = "base"

    @property
    def duration(self) -> float:
        raise NotImplementedError

    def field_at(self, t: float) -> float:
        raise NotImplementedError

    def constant_segments(self):
        """[(t0, t1, b)] when the schedule is piecewise constant, else None."""
        return None

    def breakpoints(self) -> np.ndarray:
        """Times where B(t) is not smooth; stepping never straddles these."""
        return np.array([0.0, self.duration])


@dataclass(frozen=True)
class ConstantSchedule(RampSchedule):
    b_x: float
    t_total: float

    kind = "constant"

    def __post_init__(self):
        if self.t_total < 0:
            raise RampError("duration must be non-negative")

    @property
    def duration(self) -> float:
        return self.t_total

    def field_at(self, t: float) -> float:
        return self.b_x

    def constant_segments(self):
        return [(0.0, self.t_total, self.b_x)]


@dataclass(frozen=True)
class BangBangSchedule(RampSchedule):
    """Quench to b_hold, hold for t_hold, then quench to b_final.

    Both quenches are instantaneous, so the duration equals t_hold and the
    field at t >= t_hold is b_final.
    """

    b_hold: float
    t_hold: float
    b_final: float = 0.0

    kind = "bang_bang"

    def __post_init__(self):
        if self.t_hold < 0:
            raise RampError("t_hold must be non-negative")

    @property
    def duration(self) -> float:
        return self.t_hold

    def field_at(self, t: float) -> float:
        return self.b_hold if t < self.t_hold else self.b_final

    def constant_segments(self):
        if self.t_hold == 0.0:
            return []
        return [(0.0, self.t_hold, self.b_hold)]


@dataclass(frozen=True, eq=False)
class TabulatedSchedule(RampSchedule):
    """Piecewise-linear B(t) through arbitrary (t, B) pairs."""

    times: np.ndarray
    fields: np.ndarray

    kind = "tabulated"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        fields = np.asarray(self.fields, dtype=float)
        if times.ndim != 1 or times.shape != fields.shape or len(times) < 2:
            raise RampError("tabulated schedule needs matching 1-d (t, B) arrays")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise RampError("tabulated times must start at 0 and increase strictly")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fields", fields)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def field_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.fields))

    def breakpoints(self) -> np.ndarray:
        return self.times


@dataclass(frozen=True, eq=False)
class LocallyAdiabaticSchedule(RampSchedule):
    """Monotone ramp solving dB/dt = -gap(B)^2 / gamma, stored as a dense
    sampled table with monotone interpolation."""

    times: np.ndarray
    fields: np.ndarray
    tau_ramp: float
    gap_table: GapTable | None = None

    kind = "locally_adiabatic"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        fields = np.asarray(self.fields, dtype=float)
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise RampError("ramp table times must start at 0 and increase strictly")
        if np.any(np.diff(fields) > 0):
            raise RampError("ramp field must be non-increasing")
        if fields[-1] > 1e-6 * fields[0]:
            raise RampError(
                f"ramp must end at B <= 1e-6 * B(0); got {fields[-1]:.3e}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "_interp", PchipInterpolator(times, fields))

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def samples(self):
        return self.times, self.fields

    def field_at(self, t: float) -> float:
        if t <= 0.0:
            return float(self.fields[0])
        if t >= self.duration:
            return float(self.fields[-1])
        return float(self._interp(t))


def la_schedule(params: ModelParams, tau_ramp: float,
                gap_table: GapTable | None = None, n_gap_samples: int = 400,
                table_points: int = 20001, workers: int = 1) -> LocallyAdiabaticSchedule:
    """Locally adiabatic ramp from b_x0 to 0 over tau_ramp.

    The speed normalization gamma = tau_ramp / integral dB / gap(B)^2 makes
    the ramp fast where the sector gap is large and slowest at its minimum.
    The gap is evaluated with b_z = 0 (the schedule is designed for the
    parity-symmetric model even when evolution later includes a stray b_z).
    """
    if tau_ramp <= 0:
        raise RampError("tau_ramp must be positive")
    if gap_table is None:
        gap_params = replace(params, b_z=0.0)
        gap_table = gap_scan(gap_params, n_samples=n_gap_samples, workers=workers)
    if np.any(gap_table.gaps <= 0):
        b_bad = gap_table.b_values[np.argmin(gap_table.gaps)]
        raise RampError(
            f"sector gap vanishes near b_x = {b_bad:.6g}; cannot cross a true "
            f"level crossing adiabatically")
    gap_of_b = CubicSpline(gap_table.b_values, gap_table.gaps)
    b_fine = np.linspace(0.0, gap_table.b_values[-1], table_points)
    gaps_fine = gap_of_b(b_fine)
    if np.any(gaps_fine <= 0):
        b_bad = b_fine[int(np.argmin(gaps_fine))]
        raise RampError(f"interpolated sector gap vanishes near b_x = {b_bad:.6g}")
    integrand = 1.0 / gaps_fine ** 2
    cum = cumulative_trapezoid(integrand, b_fine, initial=0.0)
    gamma = tau_ramp / cum[-1]
    t_of_b = gamma * (cum[-1] - cum)
    times = t_of_b[::-1].copy()
    fields = b_fine[::-1].copy()
    times[0] = 0.0
    times[-1] = tau_ramp
    keep = np.concatenate(([True], np.diff(times) > 0))
    return LocallyAdiabaticSchedule(times=times[keep], fields=fields[keep],
                                    tau_ramp=tau_ramp, gap_table=gap_table)


# ---------------------------------------------------------------------------
# thermal ensemble


@dataclass(frozen=True)
class ThermalEnsemble:
    """Bose-Einstein mixture over initial Fock states, truncated and renormalized."""

    weights: tuple
    epsilon: float = 1e-4

    @classmethod
    def from_nbar(cls, nbar: float, epsilon: float = 1e-4) -> "ThermalEnsemble":
        if nbar < 0:
            raise ValueError("nbar must be non-negative")
        if nbar == 0:
            return cls(weights=((0, 1.0),), epsilon=epsilon)
        ratio = nbar / (nbar + 1.0)
        raw = []
        p = 1.0 / (nbar + 1.0)
        cum = 0.0
        n = 0
        while cum < 1.0 - epsilon:
            raw.append((n, p))
            cum += p
            p *= ratio
            n += 1
        total = sum(w for _, w in raw)
        return cls(weights=tuple((n, w / total) for n, w in raw), epsilon=epsilon)

    @property
    def max_n(self) -> int:
        return self.weights[-1][0]


# ---------------------------------------------------------------------------
# Krylov exponential


def _expm_tridiag(alpha, beta, tau):
    """u = exp(-1j tau T) e1 for real symmetric tridiagonal T."""
    if len(alpha) == 1:
        return np.array([np.exp(-1j * tau * alpha[0])])
    w, z = scipy.linalg.eigh_tridiagonal(alpha, beta)
    return z @ (np.exp(-1j * tau * w) * z[0, :])


def expmv(matvec, v, dt, hnorm, tol=1e-10, m_max=40):
    """exp(-1j dt H) v for Hermitian H, by adaptive Lanczos substeps.

    The per-substep error budget is tol scaled by the substep fraction, so
    the whole call meets ``tol``.  The Lanczos basis is fully
    reorthogonalized; the a-posteriori estimate beta_{m+1} * tau * |u_m| is
    used with a safety factor.
    """
    if dt == 0.0:
        return v.copy()
    dim = v.shape[0]
    m_cap = min(m_max, dim)
    safety = 4.0
    breakdown = 1e-14 * max(hnorm, 1.0)
    t_done = 0.0
    n_substeps = 0
    v = v.astype(np.complex128, copy=True)
    while t_done < dt:
        n_substeps += 1
        if n_substeps > 200000:
            raise PropagationError("Krylov substep count exploded; aborting")
        remaining = dt - t_done
        beta0 = np.linalg.norm(v)
        big_v = np.empty((dim, m_cap + 1), dtype=np.complex128)
        big_v[:, 0] = v / beta0
        alphas = np.empty(m_cap)
        betas = np.empty(m_cap)
        tau = remaining
        u = None
        m = m_cap
        exact = False
        for j in range(m_cap):
            w = matvec(big_v[:, j])
            a = np.vdot(big_v[:, j], w).real
            w -= a * big_v[:, j]
            if j > 0:
                w -= betas[j - 1] * big_v[:, j - 1]
            # full reorthogonalization pass
            coeffs = big_v[:, :j + 1].conj().T @ w
            w -= big_v[:, :j + 1] @ coeffs
            alphas[j] = a + coeffs[j].real
            b = np.linalg.norm(w)
            betas[j] = b
            if b <= breakdown:
                m = j + 1
                exact = True
                break
            big_v[:, j + 1] = w / b
            if j >= 1:
                u = _expm_tridiag(alphas[:j + 1], betas[:j], tau)
                err = safety * b * tau * abs(u[-1])
                if err <= tol * (tau / dt):
                    m = j + 1
                    break
        if exact:
            u = _expm_tridiag(alphas[:m], betas[:m - 1], tau)
        else:
            u = _expm_tridiag(alphas[:m], betas[:m - 1], tau)
            err = safety * betas[m - 1] * tau * abs(u[-1])
            shrink_guard = 0
            while err > tol * (tau / dt) and shrink_guard < 60:
                tau *= max(0.2, 0.7 * (tol * (tau / dt) / err) ** (1.0 / m))
                u = _expm_tridiag(alphas[:m], betas[:m - 1], tau)
                err = safety * betas[m - 1] * tau * abs(u[-1])
                shrink_guard += 1
            if shrink_guard >= 60:
                raise PropagationError(
                    "Krylov step size failed to converge; Hamiltonian norm "
                    "estimate may be invalid")
        v = big_v[:, :m] @ (beta0 * u)
        t_done += tau
    return v


class ConstantFieldEvolver:
    """Exact evolution under one fixed H: cached eigenbasis below the dense
    cutoff, adaptive Lanczos above it."""

    def __init__(self, h, dense_cutoff=2000, tol=1e-10, m_max=40):
        self.tol = tol
        self.m_max = m_max
        dim = h.shape[0]
        self.dense = dim <= dense_cutoff
        if self.dense:
            vals, vecs = scipy.linalg.eigh(h.toarray())
            self.eigvals = vals
            self.eigvecs = vecs.astype(np.complex128)
        else:
            self.h = h.astype(np.complex128).tocsr()
            self.hnorm = float(abs(h).sum(axis=1).max())

    def advance(self, vec, dt):
        if dt == 0.0:
            return vec.copy()
        if self.dense:
            w = self.eigvecs.conj().T @ vec
            return self.eigvecs @ (np.exp(-1j * dt * self.eigvals) * w)
        return expmv(lambda x: self.h @ x, vec, dt, self.hnorm,
                     tol=self.tol, m_max=self.m_max)

    def advance_from_origin(self, vec0, dts):
        """States at several elapsed times from the same start vector."""
        dts = np.asarray(dts, dtype=float)
        if self.dense:
            w = self.eigvecs.conj().T @ vec0
            phases = np.exp(-1j * np.outer(self.eigvals, dts))
            return self.eigvecs @ (phases * w[:, None])
        out = np.empty((vec0.shape[0], len(dts)), dtype=np.complex128)
        order = np.argsort(dts)
        current = vec0
        t_now = 0.0
        for k in order:
            current = self.advance(current, dts[k] - t_now)
            t_now = dts[k]
            out[:, k] = current
        return out


# ---------------------------------------------------------------------------
# propagation


@dataclass
class PropagateOptions:
    dt: float | None = None
    n_output: int = 200
    krylov_tol: float = 1e-10
    krylov_m: int = 40
    boundary_tol: float = 1e-6
    dense_cutoff: int = 2000
    scheme: str = "auto"          # auto | cf4 | midpoint (continuous ramps)
    compute_qfi: bool = False
    compute_distribution: bool = False
    compute_coherence: bool = False
    store_states: bool = False


@dataclass
class Trajectory:
    """Observables sampled along one evolution (or an ensemble average)."""

    times: np.ndarray
    bx: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    abs_sz: np.ndarray
    parity: np.ndarray
    nph: np.ndarray
    energy: np.ndarray
    fidelity: np.ndarray
    qfi: np.ndarray | None = None
    spin_dist: np.ndarray | None = None
    coherence: np.ndarray | None = None
    final_state: QuantumState | None = None
    norm_drift: float = 0.0
    members: list | None = None


class _Observables:
    """Shared operators for trajectory recording."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.basis = params.basis
        self.h_fixed, self.sx_full = hamiltonian_parts(params)
        self.h_fixed_c = self.h_fixed.astype(np.complex128).tocsr()
        self.sx_c = self.sx_full.astype(np.complex128).tocsr()
        _, self.sy_full, _ = _OpCache.for_basis(self.basis)
        m = self.basis.m_values
        self.sz_diag = np.repeat(m, self.basis.phonon_dim)
        self.abs_m_diag = np.repeat(np.abs(m), self.basis.phonon_dim)
        self.n_diag = np.tile(np.arange(self.basis.phonon_dim, dtype=float),
                              self.basis.spin_dim)
        self.cat_vec = cat_state(params).vector
        self.branch_up, self.branch_down = _cat_branches(params)

    def hnorm_bound(self, b_abs_max):
        return float(abs(self.h_fixed).sum(axis=1).max()
                     + b_abs_max * abs(self.sx_full).sum(axis=1).max())

    def matvec_at(self, b):
        h_fixed, sx = self.h_fixed_c, self.sx_c
        if b == 0.0:
            return lambda x: h_fixed @ x
        return lambda x: h_fixed @ x + b * (sx @ x)

    def record(self, vec, b, opts):
        dens = np.abs(vec) ** 2
        sx_v = self.sx_c @ vec
        row = {
            "bx": b,
            "sx": np.vdot(vec, sx_v).real,
            "sy": np.vdot(vec, self.sy_full @ vec).real,
            "sz": float(dens @ self.sz_diag),
            "abs_sz": float(dens @ self.abs_m_diag),
            "parity": np.vdot(vec, apply_parity(vec, self.basis)).real,
            "nph": float(dens @ self.n_diag),
            "fidelity": float(abs(np.vdot(self.cat_vec, vec)) ** 2),
        }
        row["energy"] = np.vdot(vec, self.h_fixed_c @ vec).real + b * row["sx"]
        if opts.compute_qfi:
            row["qfi"] = qfi_of(QuantumState(vec, self.basis))
        if opts.compute_distribution:
            row["spin_dist"] = np.sum(dens.reshape(self.basis.spin_dim,
                                                   self.basis.phonon_dim), axis=1)
        if opts.compute_coherence:
            # kept complex so statistical mixtures average correctly
            row["coherence"] = np.vdot(self.branch_up, vec) \
                * np.vdot(vec, self.branch_down)
        return row

    def boundary_occupation(self, vec):
        mat = vec.reshape(self.basis.spin_dim, self.basis.phonon_dim)
        return float(np.sum(np.abs(mat[:, -1]) ** 2))


_CF4_A1 = 0.25 + math.sqrt(3.0) / 6.0
_CF4_A2 = 0.25 - math.sqrt(3.0) / 6.0
_GAUSS_OFFSET = math.sqrt(3.0) / 6.0


def _continuous_step(vec, t0, h, schedule, obs, hnorm, opts):
    """One step of the chosen scheme across [t0, t0 + h]."""
    if opts.scheme == "midpoint":
        b_mid = schedule.field_at(t0 + 0.5 * h)
        return expmv(obs.matvec_at(b_mid), vec, h, hnorm,
                     tol=opts.krylov_tol, m_max=opts.krylov_m)
    b1 = schedule.field_at(t0 + (0.5 - _GAUSS_OFFSET) * h)
    b2 = schedule.field_at(t0 + (0.5 + _GAUSS_OFFSET) * h)
    b_first = 2.0 * (_CF4_A1 * b1 + _CF4_A2 * b2)
    b_second = 2.0 * (_CF4_A2 * b1 + _CF4_A1 * b2)
    half = 0.5 * h
    vec = expmv(obs.matvec_at(b_first), vec, half, hnorm,
                tol=opts.krylov_tol, m_max=opts.krylov_m)
    return expmv(obs.matvec_at(b_second), vec, half, hnorm,
                 tol=opts.krylov_tol, m_max=opts.krylov_m)


def propagate(state: QuantumState, params: ModelParams, schedule: RampSchedule,
              options: PropagateOptions | None = None) -> Trajectory:
    """Unitary evolution of a pure state under H(B(t)).

    Piecewise-constant schedules advance exactly segment by segment;
    continuous ones use the scheme in ``options`` with step ``dt``.
    Aborts with :class:`TruncationError` when the Fock boundary occupation
    exceeds ``boundary_tol``.
    """
    opts = options or PropagateOptions()
    if state.basis != params.basis:
        raise ValueError("state basis does not match params")
    norm0 = state.norm()
    if abs(norm0 - 1.0) > 1e-8:
        raise ValueError(f"initial state must be normalized; |psi| = {norm0}")

    obs = _Observables(params)
    duration = schedule.duration
    if duration == 0.0:
        out_times = np.array([0.0])
    else:
        out_times = np.linspace(0.0, duration, max(2, opts.n_output))

    segments = schedule.constant_segments()
    vec = state.vector.copy()
    rows = [obs.record(vec, schedule.field_at(0.0), opts)]
    max_edge = obs.boundary_occupation(vec)

    if segments is not None:
        evolvers = {}
        for k in range(1, len(out_times)):
            t0, t1 = out_times[k - 1], out_times[k]
            b = schedule.field_at(0.5 * (t0 + t1))
            if b not in evolvers:
                evolvers[b] = ConstantFieldEvolver(
                    obs.h_fixed + b * obs.sx_full if b != 0.0 else obs.h_fixed,
                    dense_cutoff=opts.dense_cutoff, tol=opts.krylov_tol,
                    m_max=opts.krylov_m)
            vec = evolvers[b].advance(vec, t1 - t0)
            rows.append(obs.record(vec, schedule.field_at(t1), opts))
            max_edge = max(max_edge, obs.boundary_occupation(vec))
    else:
        scheme = opts.scheme
        if scheme == "auto":
            opts = replace_scheme(opts, "cf4")
        hnorm = obs.hnorm_bound(float(np.max(np.abs(
            [schedule.field_at(t) for t in np.linspace(0, duration, 65)]))))
        dt = opts.dt
        if dt is None:
            dt = 1e-3 if opts.scheme == "cf4" else min(1e-3, 0.05 / hnorm)
        marks = np.unique(np.concatenate(
            [out_times, np.clip(schedule.breakpoints(), 0.0, duration)]))
        out_ptr = 1
        for k in range(1, len(marks)):
            t0, t1 = marks[k - 1], marks[k]
            if t1 <= t0:
                continue
            n_sub = max(1, math.ceil((t1 - t0) / dt))
            h = (t1 - t0) / n_sub
            for j in range(n_sub):
                vec = _continuous_step(vec, t0 + j * h, h, schedule, obs, hnorm, opts)
            while out_ptr < len(out_times) and out_times[out_ptr] <= t1 + 1e-15 * duration:
                rows.append(obs.record(vec, schedule.field_at(out_times[out_ptr]), opts))
                out_ptr += 1
            max_edge = max(max_edge, obs.boundary_occupation(vec))

    if max_edge > opts.boundary_tol:
        raise TruncationError(
            f"Fock boundary occupation reached {max_edge:.3e} "
            f"(> {opts.boundary_tol:.1e}); raise n_max above {params.n_max}")
    drift = abs(float(np.linalg.norm(vec)) - 1.0)
    if drift > 1e-6:
        raise PropagationError(f"norm drift {drift:.3e} exceeds sanity bound")

    def col(name):
        return np.array([r[name] for r in rows])

    return Trajectory(
        times=out_times,
        bx=col("bx"), sx=col("sx"), sy=col("sy"), sz=col("sz"),
        abs_sz=col("abs_sz"), parity=col("parity"), nph=col("nph"),
        energy=col("energy"), fidelity=col("fidelity"),
        qfi=col("qfi") if opts.compute_qfi else None,
        spin_dist=np.vstack([r["spin_dist"] for r in rows])
        if opts.compute_distribution else None,
        coherence=col("coherence") if opts.compute_coherence else None,
        final_state=QuantumState(vec, params.basis),
        norm_drift=drift,
    )


def replace_scheme(opts: PropagateOptions, scheme: str) -> PropagateOptions:
    out = PropagateOptions(**vars(opts))
    out.scheme = scheme
    return out


def _thermal_member(args):
    params, schedule, options, n = args
    return propagate(fock_x_state(params, n), params, schedule, options)


def propagate_thermal(ensemble: ThermalEnsemble, params: ModelParams,
                      schedule: RampSchedule,
                      options: PropagateOptions | None = None,
                      workers: int = 1, adaptive_box: bool = False) -> Trajectory:
    """Weight-averaged trajectory over |n> x |m_x = -N/2> initial states.

    Each member evolves independently (incoherent mixture); averaged
    fidelity is sum_n p_n |<CAT|psi_n>|^2.  QFI is recorded only for a pure
    vacuum ensemble, since the pure-state formula does not average.

    ``adaptive_box`` gives member n a Fock cutoff of params.n_max + n
    (params.n_max then sizes the vacuum member); the collective observables
    are truncation-independent once each member clears the boundary check,
    so this only reduces cost for hot ensembles.
    """
    opts = options or PropagateOptions()
    if ensemble.max_n > params.n_max and not adaptive_box:
        raise ValueError(
            f"ensemble occupies Fock states up to {ensemble.max_n} but "
            f"n_max = {params.n_max}")
    pure_vacuum = len(ensemble.weights) == 1 and ensemble.weights[0][0] == 0
    member_opts = PropagateOptions(**vars(opts))
    if not pure_vacuum:
        member_opts.compute_qfi = False
    if adaptive_box:
        jobs = [(replace(params, n_max=params.n_max + n), schedule,
                 member_opts, n) for n, _ in ensemble.weights]
    else:
        jobs = [(params, schedule, member_opts, n) for n, _ in ensemble.weights]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(_thermal_member, jobs, chunksize=1))
    else:
        trajectories = [_thermal_member(job) for job in jobs]

    weights = [w for _, w in ensemble.weights]
    first = trajectories[0]

    def avg(name):
        return sum(w * getattr(tr, name) for w, tr in zip(weights, trajectories))

    spin_dist = None
    if opts.compute_distribution:
        spin_dist = sum(w * tr.spin_dist for w, tr in zip(weights, trajectories))
    coherence = None
    if opts.compute_coherence:
        coherence = sum(w * tr.coherence for w, tr in zip(weights, trajectories))
    members = None
    if opts.store_states:
        members = [(n, w, tr.final_state)
                   for (n, w), tr in zip(ensemble.weights, trajectories)]
    traj = Trajectory(
        times=first.times, bx=first.bx,
        sx=avg("sx"), sy=avg("sy"), sz=avg("sz"), abs_sz=avg("abs_sz"),
        parity=avg("parity"), nph=avg("nph"), energy=avg("energy"),
        fidelity=avg("fidelity"),
        qfi=first.qfi if pure_vacuum and opts.compute_qfi else None,
        spin_dist=spin_dist,
        coherence=coherence,
        final_state=first.final_state if pure_vacuum else None,
        norm_drift=max(tr.norm_drift for tr in trajectories),
        members=members,
    )
    return traj
