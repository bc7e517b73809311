"""High-level experiments: bang-bang sweeps, protocol comparisons, size
scaling, and longitudinal-field robustness.

Bang-bang cells share one Hamiltonian diagonalization per hold field (the
hold is a constant-H evolution, so every t_hold on the grid is evaluated
exactly from the same eigenbasis).  All orderings are fixed so results are
independent of worker scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    BangBangSchedule,
    ConstantFieldEvolver,
    PropagateOptions,
    ThermalEnsemble,
    la_schedule,
    propagate,
    propagate_thermal,
)
from .metrology import fidelity_to_cat, qfi
from .model import ModelParams, QuantumState, fock_x_state, hamiltonian_parts
from .spectral import cat_state, gap_scan


@dataclass(frozen=True)
class SweepGrid:
    """Bang-bang grid: hold fields (rad/ms) by hold times (ms)."""

    b_hold_values: np.ndarray
    t_hold_values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b_hold_values, dtype=float)
        t = np.asarray(self.t_hold_values, dtype=float)
        if b.size == 0 or t.size == 0:
            raise ValueError("sweep grid axes must be non-empty")
        if np.any(np.diff(b) <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("sweep grid axes must be strictly increasing")
        object.__setattr__(self, "b_hold_values", b)
        object.__setattr__(self, "t_hold_values", t)

    @classmethod
    def default_for(cls, params: ModelParams, n_b: int = 20, n_t: int = 40,
                    b_range=(0.05, 1.0), t_range=(0.05, 2.0)) -> "SweepGrid":
        """b_hold from 0.05 J to 1.0 J, t_hold from 0.05 to 2.0 ms."""
        j = params.j_coupling
        return cls(np.linspace(b_range[0] * j, b_range[1] * j, n_b),
                   np.linspace(t_range[0], t_range[1], n_t))


@dataclass
class SweepResult:
    grid: SweepGrid
    fidelity: np.ndarray        # shape (n_b, n_t)
    abs_sz: np.ndarray          # <|Sz|>/N, same shape
    qfi: np.ndarray | None
    params: ModelParams

    def argmax(self, objective: str = "fidelity"):
        """(i, j, value) of the best cell for the given objective."""
        matrix = getattr(self, objective)
        flat = int(np.argmax(matrix))
        i, j = np.unravel_index(flat, matrix.shape)
        return int(i), int(j), float(matrix[i, j])

    def best_cell(self, objective: str = "fidelity"):
        i, j, value = self.argmax(objective)
        return {
            "b_hold": float(self.grid.b_hold_values[i]),
            "b_hold_over_j": float(self.grid.b_hold_values[i] / self.params.j_coupling),
            "t_hold": float(self.grid.t_hold_values[j]),
            "value": value,
            "objective": objective,
        }


def _hold_column(params, b_hold, t_holds, ensemble, compute_qfi, dense_cutoff):
    """Fidelity, polarization, and optional QFI for one hold field.

    Constant-H hold: one evolver per column serves every member and t_hold.
    The final quench to b_final does not change the state, so metrics at the
    end of the hold are the post-quench metrics.
    """
    h_fixed, sx_full = hamiltonian_parts(params)
    h = (h_fixed + b_hold * sx_full).tocsr()
    evolver = ConstantFieldEvolver(h, dense_cutoff=dense_cutoff)
    basis = params.basis
    cat = cat_state(params).vector
    abs_m = np.repeat(np.abs(basis.m_values), basis.phonon_dim)
    n_t = len(t_holds)
    fid = np.zeros(n_t)
    pol = np.zeros(n_t)
    qfi_col = np.zeros(n_t) if compute_qfi else None
    for n_ph, weight in ensemble.weights:
        psi0 = fock_x_state(params, n_ph).vector
        states = evolver.advance_from_origin(psi0, t_holds)
        fid += weight * np.abs(cat.conj() @ states) ** 2
        pol += weight * ((np.abs(states) ** 2) * abs_m[:, None]).sum(axis=0)
        if compute_qfi:
            # pure-state QFI is only meaningful for a vacuum ensemble
            for j in range(n_t):
                qfi_col[j] += weight * qfi(QuantumState(states[:, j], basis))
    return fid, pol / params.n_spins, qfi_col


def sweep_bang_bang(params: ModelParams, grid: SweepGrid | None = None,
                    compute_qfi: bool = False, dense_cutoff: int = 2000,
                    on_cell=None, completed: dict | None = None) -> SweepResult:
    """Evaluate fidelity and <|Sz|>/N over a bang-bang (b_hold, t_hold) grid.

    Initial phonons follow params.nbar (vacuum when 0).  ``on_cell`` is
    called as on_cell(i, j, fidelity, abs_sz, qfi_or_None) after each cell in
    a fixed row-major order, which the CLI uses for checkpointing;
    ``completed`` maps (i, j) to previously computed (fidelity, abs_sz, qfi)
    tuples that are reused instead of recomputed.
    """
    if grid is None:
        grid = SweepGrid.default_for(params)
    ensemble = ThermalEnsemble.from_nbar(params.nbar)
    if compute_qfi and len(ensemble.weights) > 1:
        raise ValueError("QFI sweep requires vacuum initial phonons (nbar = 0)")
    n_b = len(grid.b_hold_values)
    n_t = len(grid.t_hold_values)
    fid = np.zeros((n_b, n_t))
    pol = np.zeros((n_b, n_t))
    qfi_mat = np.zeros((n_b, n_t)) if compute_qfi else None
    completed = completed or {}
    for i, b_hold in enumerate(grid.b_hold_values):
        row_done = all((i, j) in completed for j in range(n_t))
        if row_done:
            for j in range(n_t):
                fid[i, j], pol[i, j], q = completed[(i, j)]
                if compute_qfi:
                    qfi_mat[i, j] = q
        else:
            fid_col, pol_col, qfi_col = _hold_column(
                params, b_hold, grid.t_hold_values, ensemble, compute_qfi,
                dense_cutoff)
            fid[i, :] = fid_col
            pol[i, :] = pol_col
            if compute_qfi:
                qfi_mat[i, :] = qfi_col
        if on_cell is not None:
            for j in range(n_t):
                on_cell(i, j, float(fid[i, j]), float(pol[i, j]),
                        float(qfi_mat[i, j]) if compute_qfi else None)
    return SweepResult(grid=grid, fidelity=fid, abs_sz=pol, qfi=qfi_mat,
                       params=params)


@dataclass
class ProtocolComparison:
    tau_values: np.ndarray
    f_bang_bang: np.ndarray
    f_la: np.ndarray
    bb_argmax: list          # per tau: best (b_hold, t_hold) dict
    crossover_tau: float | None


def compare_protocols(params: ModelParams, tau_values, grid: SweepGrid | None = None,
                      sweep: SweepResult | None = None,
                      options: PropagateOptions | None = None,
                      gap_samples: int = 400, workers: int = 1) -> ProtocolComparison:
    """Best bang-bang fidelity (over cells with t_hold <= tau) against the LA
    ramp fidelity, per ramp time tau."""
    tau_values = np.asarray(tau_values, dtype=float)
    if sweep is None:
        sweep = sweep_bang_bang(params, grid)
    gap_table = gap_scan(replace(params, b_z=0.0), n_samples=gap_samples,
                         workers=workers)
    opts = options or PropagateOptions()
    cat = cat_state(params)
    psi0 = fock_x_state(params, 0)
    ensemble = ThermalEnsemble.from_nbar(params.nbar)
    f_bb = np.zeros(len(tau_values))
    f_la = np.zeros(len(tau_values))
    bb_argmax = []
    for k, tau in enumerate(tau_values):
        usable = sweep.grid.t_hold_values <= tau + 1e-12
        if not np.any(usable):
            f_bb[k] = fidelity_to_cat(psi0, params, cat)   # no evolution fits
            bb_argmax.append({"b_hold": 0.0, "t_hold": 0.0, "value": f_bb[k]})
        else:
            sub = sweep.fidelity[:, usable]
            i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
            f_bb[k] = float(sub[i, j])
            bb_argmax.append({
                "b_hold": float(sweep.grid.b_hold_values[i]),
                "t_hold": float(sweep.grid.t_hold_values[usable][j]),
                "value": f_bb[k],
            })
        schedule = la_schedule(params, tau, gap_table=gap_table)
        if len(ensemble.weights) == 1:
            traj = propagate(psi0, params, schedule, opts)
        else:
            traj = propagate_thermal(ensemble, params, schedule, opts,
                                     workers=workers)
        f_la[k] = float(traj.fidelity[-1])
    crossover = None
    sign = np.sign(f_bb - f_la)
    for k in range(1, len(tau_values)):
        if sign[k] != sign[k - 1] and sign[k - 1] > 0:
            crossover = float(0.5 * (tau_values[k - 1] + tau_values[k]))
            break
    return ProtocolComparison(tau_values=tau_values, f_bang_bang=f_bb,
                              f_la=f_la, bb_argmax=bb_argmax,
                              crossover_tau=crossover)


def scaling_study(n_values, params_template: ModelParams, tau_values,
                  grid_shape=(20, 40), dim_cap: int = 60000,
                  options: PropagateOptions | None = None,
                  workers: int = 1):
    """Fidelity and QFI versus system size for both protocols.

    Keeps g fixed from the template and re-derives n_max, J, and the sweep
    grid per N.  Returns long-format rows
    (n_spins, protocol, tau, fidelity, qfi, b_hold, t_hold).
    """
    tau_values = np.asarray(tau_values, dtype=float)
    rows = []
    for n_spins in n_values:
        params = ModelParams(
            n_spins=int(n_spins), g=params_template.g,
            delta=params_template.delta, b_x0=params_template.b_x0,
            b_z=params_template.b_z, gamma_dephase=params_template.gamma_dephase,
            nbar=params_template.nbar, n_max=None)
        if params.dim > dim_cap:
            raise MemoryError(
                f"N={n_spins} needs Hilbert dimension {params.dim} > cap "
                f"{dim_cap}; raise dim_cap explicitly to proceed")
        vacuum = params.nbar == 0.0
        grid = SweepGrid.default_for(params, n_b=grid_shape[0], n_t=grid_shape[1],
                                     t_range=(0.05, float(tau_values.max())))
        sweep = sweep_bang_bang(params, grid, compute_qfi=vacuum)
        gap_table = gap_scan(replace(params, b_z=0.0), workers=workers)
        psi0 = fock_x_state(params, 0)
        opts = options or PropagateOptions()
        for tau in tau_values:
            usable = grid.t_hold_values <= tau + 1e-12
            sub = sweep.fidelity[:, usable]
            i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
            rows.append({
                "n_spins": int(n_spins), "protocol": "bang_bang",
                "tau": float(tau), "fidelity": float(sub[i, j]),
                "qfi": float(sweep.qfi[:, usable][i, j]) if vacuum
                else float("nan"),
                "b_hold": float(grid.b_hold_values[i]),
                "t_hold": float(grid.t_hold_values[usable][j]),
            })
            schedule = la_schedule(params, float(tau), gap_table=gap_table)
            la_opts = PropagateOptions(**vars(opts))
            la_opts.compute_qfi = vacuum
            if vacuum:
                traj = propagate(psi0, params, schedule, la_opts)
            else:
                traj = propagate_thermal(ThermalEnsemble.from_nbar(params.nbar),
                                         params, schedule, la_opts,
                                         workers=workers)
            rows.append({
                "n_spins": int(n_spins), "protocol": "locally_adiabatic",
                "tau": float(tau), "fidelity": float(traj.fidelity[-1]),
                "qfi": float(traj.qfi[-1]) if vacuum else float("nan"),
                "b_hold": float("nan"),
                "t_hold": float("nan"),
            })
    return rows


def longitudinal_robustness(params: ModelParams, b_z_values,
                            la_tau: float = 2.0, bb_t_hold: float = 0.485,
                            bb_b_hold: float | None = None,
                            options: PropagateOptions | None = None,
                            n_coherence_samples: int = 41,
                            workers: int = 1):
    """Cat coherence under a stray longitudinal field, LA versus bang-bang.

    The LA schedule and the bang-bang parameters are fixed from the b_z = 0
    model (the protocol designer does not know the stray field); evolution
    includes b_z and starts from the vacuum product state.  Returns rows (b_z, protocol, t, coherence_abs) sampling
    |<N/2|<alpha| rho |-alpha>|-N/2>| along each run, plus the final value.
    """
    if bb_b_hold is None:
        # optimize the hold field at fixed hold time on the clean model
        grid = SweepGrid(
            b_hold_values=np.linspace(0.05, 1.0, 20) * params.j_coupling,
            t_hold_values=np.array([bb_t_hold]))
        clean = replace(params, b_z=0.0)
        sweep = sweep_bang_bang(clean, grid)
        bb_b_hold = sweep.best_cell()["b_hold"]
    gap_table = gap_scan(replace(params, b_z=0.0), workers=workers)
    opts = options or PropagateOptions()
    la = la_schedule(replace(params, b_z=0.0), la_tau, gap_table=gap_table)
    bb = BangBangSchedule(b_hold=float(bb_b_hold), t_hold=bb_t_hold)
    b_z_values = np.asarray(b_z_values, dtype=float)
    if not np.any(b_z_values == 0.0):
        # the unperturbed run anchors each protocol's decay normalization
        b_z_values = np.concatenate(([0.0], b_z_values))
    rows = []
    reference = {}
    for b_z in b_z_values:
        run_params = replace(params, b_z=float(b_z))
        psi0 = fock_x_state(run_params, 0)
        for name, schedule in (("locally_adiabatic", la), ("bang_bang", bb)):
            run_opts = PropagateOptions(**vars(opts))
            run_opts.n_output = n_coherence_samples
            run_opts.compute_coherence = True
            traj = propagate(psi0, run_params, schedule, run_opts)
            final = float(abs(traj.coherence[-1]))
            if b_z == 0.0:
                reference[name] = final
            norm = reference.get(name, float("nan"))
            for t, c, par in zip(traj.times, traj.coherence, traj.parity):
                rows.append({"b_z": float(b_z), "protocol": name,
                             "t": float(t), "coherence_abs": float(abs(c)),
                             "coherence_rel": float(abs(c)) / norm if norm else float("nan"),
                             "parity": float(par)})
    return rows
