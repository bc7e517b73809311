import numpy as np
import pytest

from conftest import expm_midpoint_reference, ode_reference
from dicke_ramp.model import (
    KHZ,
    ModelParams,
    QuantumState,
    build_hamiltonian,
    fock_x_state,
)
from dicke_ramp.dynamics import (
    BangBangSchedule,
    ConstantFieldEvolver,
    ConstantSchedule,
    LocallyAdiabaticSchedule,
    PropagateOptions,
    RampError,
    TabulatedSchedule,
    ThermalEnsemble,
    TruncationError,
    expmv,
    la_schedule,
    propagate,
    propagate_thermal,
)
from dicke_ramp.spectral import GapTable, ground_state


class TestSchedules:
    def test_bang_bang_fields_and_duration(self):
        s = BangBangSchedule(b_hold=3.0, t_hold=1.2, b_final=0.5)
        assert s.duration == 1.2
        assert s.field_at(0.0) == 3.0
        assert s.field_at(1.19) == 3.0
        assert s.field_at(1.2) == 0.5
        assert s.constant_segments() == [(0.0, 1.2, 3.0)]

    def test_zero_hold(self):
        s = BangBangSchedule(b_hold=3.0, t_hold=0.0)
        assert s.duration == 0.0
        assert s.field_at(0.0) == 0.0
        with pytest.raises(RampError):
            BangBangSchedule(b_hold=1.0, t_hold=-0.1)

    def test_tabulated_validation(self):
        with pytest.raises(RampError):
            TabulatedSchedule(times=np.array([0.1, 0.2]),
                              fields=np.array([1.0, 0.0]))
        with pytest.raises(RampError):
            TabulatedSchedule(times=np.array([0.0, 0.2, 0.2]),
                              fields=np.array([1.0, 0.5, 0.0]))
        s = TabulatedSchedule(times=np.array([0.0, 0.5, 1.0]),
                              fields=np.array([2.0, 1.0, 0.0]))
        assert s.field_at(0.25) == pytest.approx(1.5)

    def test_la_table_validation(self):
        times = np.linspace(0.0, 1.0, 11)
        rising = np.linspace(0.0, 1.0, 11)
        with pytest.raises(RampError, match="non-increasing"):
            LocallyAdiabaticSchedule(times=times, fields=rising, tau_ramp=1.0)
        tail = np.linspace(1.0, 0.5, 11)
        with pytest.raises(RampError, match="1e-6"):
            LocallyAdiabaticSchedule(times=times, fields=tail, tau_ramp=1.0)


class TestLaSchedule:
    def _table(self, params, gaps):
        b = np.linspace(0.0, params.b_x0, len(gaps))
        return GapTable(b_values=b, gaps=np.asarray(gaps, dtype=float),
                        ground_energies=np.zeros(len(gaps)),
                        parities=np.ones(len(gaps)))

    def test_constant_gap_gives_linear_ramp(self, n10_params):
        table = self._table(n10_params, np.full(400, 3.0))
        sched = la_schedule(n10_params, 2.0, gap_table=table)
        ts = np.linspace(0.0, 2.0, 23)
        expected = n10_params.b_x0 * (1 - ts / 2.0)
        got = np.array([sched.field_at(t) for t in ts])
        assert np.abs(got - expected).max() < 1e-10 * n10_params.b_x0

    def test_shifted_sqrt_gap_closed_form(self, n10_params):
        # gap c*sqrt(B + s) integrates to an exact exponential-in-time ramp
        b0 = n10_params.b_x0
        c, shift = 1.5, 3.0
        b = np.linspace(0.0, b0, 400)
        table = self._table(n10_params, c * np.sqrt(b + shift))
        sched = la_schedule(n10_params, 2.0, gap_table=table)
        ts = np.linspace(0.0, 2.0, 23)
        ratio = (b0 + shift) / shift
        expected = (b0 + shift) * ratio ** (-ts / 2.0) - shift
        got = np.array([sched.field_at(t) for t in ts])
        assert np.abs(got - expected).max() < 1e-6 * b0

    def test_duration_and_endpoint(self, n10_params):
        table = self._table(n10_params, np.full(400, 2.0))
        sched = la_schedule(n10_params, 1.3, gap_table=table)
        assert sched.duration == pytest.approx(1.3)
        assert sched.field_at(1.3) == 0.0
        assert sched.field_at(0.0) == pytest.approx(n10_params.b_x0)

    def test_vanishing_gap_aborts(self, n10_params):
        gaps = np.full(400, 2.0)
        gaps[100] = 0.0
        with pytest.raises(RampError, match="gap"):
            la_schedule(n10_params, 2.0, gap_table=self._table(n10_params, gaps))

    def test_real_profile_fast_where_gap_large(self, n10_params):
        sched = la_schedule(n10_params, 2.0, n_gap_samples=120)
        times, fields = sched.samples
        rate = np.abs(np.gradient(fields, times))
        gap_table = sched.gap_table
        b_min_gap = gap_table.b_values[int(np.argmin(gap_table.gaps))]
        k_min = int(np.argmin(np.abs(fields - b_min_gap)))
        assert rate[0] > 10 * rate[k_min]


class TestThermalEnsemble:
    def test_vacuum(self):
        ens = ThermalEnsemble.from_nbar(0.0)
        assert ens.weights == ((0, 1.0),)

    def test_nbar6_truncation(self):
        ens = ThermalEnsemble.from_nbar(6.0)
        ns = [n for n, _ in ens.weights]
        # smallest n with cumulative weight >= 0.9999 under p_n = 6^n/7^(n+1)
        assert ns == list(range(60))
        ws = np.array([w for _, w in ens.weights])
        assert ws.sum() == pytest.approx(1.0, abs=1e-14)
        # renormalized geometric weights keep their ratios
        assert ws[1] / ws[0] == pytest.approx(6.0 / 7.0, rel=1e-12)
        raw_p0 = 1.0 / 7.0
        assert ws[0] == pytest.approx(raw_p0 / (1 - 1e-4), rel=1e-3)

    def test_epsilon_controls_length(self):
        assert ThermalEnsemble.from_nbar(6.0, epsilon=1e-2).max_n < 60


class TestPropagate:
    def test_eigenstate_is_stationary(self, small_params):
        b = 2.0
        energy, gs = ground_state(small_params, b)
        traj = propagate(gs, small_params, ConstantSchedule(b_x=b, t_total=2.0),
                        PropagateOptions(n_output=40))
        assert np.ptp(traj.sz) < 1e-9
        assert np.ptp(traj.sx) < 1e-9
        assert np.abs(traj.energy - energy).max() / abs(energy) < 1e-8
        assert traj.norm_drift <= 1e-8

    def test_rabi_precession_closed_form(self):
        # free spins under a constant field: <Sz>(t) = -(N/2) cos(B t)
        n_spins = 2
        p = ModelParams(n_spins=n_spins, g=0.0, delta=-2 * np.pi, b_x0=1.0,
                        n_max=3)
        amps = np.zeros((p.basis.spin_dim, p.basis.phonon_dim), complex)
        amps[0, 0] = 1.0       # m = -N/2 along z
        state = QuantumState(amps.reshape(-1), p.basis)
        b = 2.5
        traj = propagate(state, p, ConstantSchedule(b_x=b, t_total=1.0),
                         PropagateOptions(n_output=33))
        expected = -(n_spins / 2) * np.cos(b * traj.times)
        assert np.abs(traj.sz - expected).max() < 1e-9
        # dense-exponential oracle at the final time
        ref = expm_midpoint_reference(p, ConstantSchedule(b_x=b, t_total=1.0),
                                      state.vector, dt=1.0)
        assert np.linalg.norm(traj.final_state.vector - ref) < 1e-9

    def test_conservation_on_randomized_schedules(self):
        rng = np.random.default_rng(42)
        for trial in range(6):
            n_spins = int(rng.integers(3, 9))
            p = ModelParams.from_khz(n_spins, 0.6, -1.0, 7.0)
            kind = trial % 3
            if kind == 0:
                sched = ConstantSchedule(b_x=float(rng.uniform(0, 30)),
                                         t_total=0.3)
            elif kind == 1:
                sched = BangBangSchedule(b_hold=float(rng.uniform(0, 30)),
                                         t_hold=0.3)
            else:
                knots = np.sort(np.concatenate(
                    [[0.0, 0.3], rng.uniform(0, 0.3, 3)]))
                sched = TabulatedSchedule(times=knots,
                                          fields=rng.uniform(0, 30, 5))
            traj = propagate(fock_x_state(p, 0), p, sched,
                             PropagateOptions(n_output=20))
            assert traj.norm_drift <= 1e-8
            assert np.abs(traj.parity - traj.parity[0]).max() <= 1e-6

    def test_oracle_equivalence_dense_exponential(self, small_params):
        # same midpoint decomposition, exact exponentials on the oracle side;
        # knots, outputs, and dt are binary fractions so both routes sample
        # the field at identical points
        sched = TabulatedSchedule(times=np.array([0.0, 0.25, 0.5]),
                                  fields=np.array([20.0, 5.0, 0.0]))
        psi0 = fock_x_state(small_params, 0)
        dt = 0.5 / 256
        opts = PropagateOptions(scheme="midpoint", dt=dt, n_output=2)
        traj = propagate(psi0, small_params, sched, opts)
        ref = expm_midpoint_reference(small_params, sched, psi0.vector, dt=dt)
        assert np.linalg.norm(traj.final_state.vector - ref) <= 1e-8

    def test_scheme_agreement_with_ode_oracle(self, small_params):
        # production cf4 against an independent time-ordered integrator
        sched = TabulatedSchedule(times=np.array([0.0, 0.25, 0.5]),
                                  fields=np.array([30.0, 8.0, 0.0]))
        psi0 = fock_x_state(small_params, 0)
        traj = propagate(psi0, small_params, sched,
                         PropagateOptions(scheme="cf4", n_output=5))
        ref = ode_reference(small_params, sched, psi0.vector)
        assert np.linalg.norm(traj.final_state.vector - ref) < 1e-7

    def test_step_halving_convergence(self, small_params):
        sched = la_schedule(small_params, 0.8, n_gap_samples=80)
        psi0 = fock_x_state(small_params, 0)
        t1 = propagate(psi0, small_params, sched, PropagateOptions(n_output=5))
        t2 = propagate(psi0, small_params, sched,
                       PropagateOptions(n_output=5, dt=0.0005))
        assert np.linalg.norm(t1.final_state.vector
                              - t2.final_state.vector) <= 1e-8

    def test_truncation_boundary_aborts_with_guidance(self):
        p = ModelParams.from_khz(6, 2.5, -1.0, 7.0, n_max=4)
        with pytest.raises(TruncationError, match="n_max"):
            with pytest.warns():   # cat truncation warning en route
                propagate(fock_x_state(p, 0), p,
                          BangBangSchedule(b_hold=0.3 * p.j_coupling,
                                           t_hold=1.0),
                          PropagateOptions(n_output=10))

    def test_rejects_unnormalized_state(self, small_params):
        st = fock_x_state(small_params, 0)
        st.vector = st.vector * 1.1
        with pytest.raises(ValueError, match="normalized"):
            propagate(st, small_params,
                      ConstantSchedule(b_x=1.0, t_total=0.1))

    def test_quench_continuity(self, small_params):
        # the state is continuous across the final quench; only the recorded
        # field and energy switch to b_final
        hold = BangBangSchedule(b_hold=2.0, t_hold=0.5, b_final=0.0)
        ref = ConstantSchedule(b_x=2.0, t_total=0.5)
        psi0 = fock_x_state(small_params, 0)
        t_bb = propagate(psi0, small_params, hold, PropagateOptions(n_output=9))
        t_c = propagate(psi0, small_params, ref, PropagateOptions(n_output=9))
        assert np.allclose(t_bb.final_state.vector, t_c.final_state.vector)
        assert t_bb.bx[-1] == 0.0
        assert t_c.bx[-1] == 2.0

    def test_output_grid_default(self, small_params):
        traj = propagate(fock_x_state(small_params, 0), small_params,
                         ConstantSchedule(b_x=1.0, t_total=1.0))
        assert len(traj.times) == 200
        assert traj.times[0] == 0.0
        assert traj.times[-1] == pytest.approx(1.0)


class TestExpmv:
    def test_matches_dense_exponential(self, small_params):
        import scipy.linalg
        h = build_hamiltonian(small_params, 2.0)
        hc = h.astype(np.complex128)
        rng = np.random.default_rng(3)
        v = rng.normal(size=h.shape[0]) + 1j * rng.normal(size=h.shape[0])
        v /= np.linalg.norm(v)
        hnorm = float(abs(h).sum(axis=1).max())
        got = expmv(lambda x: hc @ x, v, 1.7, hnorm)
        ref = scipy.linalg.expm(-1.7j * h.toarray()) @ v
        assert np.linalg.norm(got - ref) < 1e-9

    def test_zero_time(self, small_params):
        h = build_hamiltonian(small_params, 2.0).astype(np.complex128)
        v = np.ones(h.shape[0], dtype=complex)
        assert np.array_equal(expmv(lambda x: h @ x, v, 0.0, 1.0), v)


class TestThermalPropagation:
    def test_vacuum_matches_pure(self, small_params):
        sched = BangBangSchedule(b_hold=2.0, t_hold=0.4)
        ens = ThermalEnsemble.from_nbar(0.0)
        t_mix = propagate_thermal(ens, small_params, sched,
                                  PropagateOptions(n_output=7))
        t_pure = propagate(fock_x_state(small_params, 0), small_params, sched,
                           PropagateOptions(n_output=7))
        assert np.array_equal(t_mix.fidelity, t_pure.fidelity)
        assert np.array_equal(t_mix.abs_sz, t_pure.abs_sz)

    def test_weighted_average_linearity(self, small_params):
        sched = BangBangSchedule(b_hold=2.0, t_hold=0.4)
        opts = PropagateOptions(n_output=7)
        ens = ThermalEnsemble(weights=((0, 0.75), (2, 0.25)))
        mixed = propagate_thermal(ens, small_params, sched, opts)
        t0 = propagate(fock_x_state(small_params, 0), small_params, sched, opts)
        t2 = propagate(fock_x_state(small_params, 2), small_params, sched, opts)
        for name in ("sx", "sz", "abs_sz", "fidelity", "nph", "parity"):
            manual = 0.75 * getattr(t0, name) + 0.25 * getattr(t2, name)
            assert np.allclose(getattr(mixed, name), manual, atol=1e-14)
        assert mixed.qfi is None
        assert mixed.final_state is None

    def test_worker_count_does_not_change_results(self, small_params):
        sched = BangBangSchedule(b_hold=2.0, t_hold=0.3)
        ens = ThermalEnsemble.from_nbar(0.8, epsilon=0.05)
        t1 = propagate_thermal(ens, small_params, sched,
                               PropagateOptions(n_output=5), workers=1)
        t2 = propagate_thermal(ens, small_params, sched,
                               PropagateOptions(n_output=5), workers=2)
        assert np.array_equal(t1.abs_sz, t2.abs_sz)
        assert np.array_equal(t1.fidelity, t2.fidelity)

    def test_ensemble_beyond_box_rejected(self, small_params):
        ens = ThermalEnsemble(weights=((small_params.n_max + 1, 1.0),))
        with pytest.raises(ValueError, match="n_max"):
            propagate_thermal(ens, small_params,
                              ConstantSchedule(b_x=1.0, t_total=0.1))

    def test_adaptive_box_matches_uniform(self, small_params):
        # observables are truncation-independent once every member clears the
        # boundary check, so per-member boxes must reproduce the uniform run
        from dataclasses import replace
        params = replace(small_params, n_max=32)
        sched = BangBangSchedule(b_hold=2.0, t_hold=0.4)
        ens = ThermalEnsemble(weights=((0, 0.6), (3, 0.4)))
        uniform = propagate_thermal(ens, params, sched,
                                    PropagateOptions(n_output=7))
        adaptive = propagate_thermal(ens, params, sched,
                                     PropagateOptions(n_output=7),
                                     adaptive_box=True)
        for name in ("sx", "sz", "abs_sz", "fidelity", "nph", "parity"):
            assert np.allclose(getattr(adaptive, name), getattr(uniform, name),
                               atol=1e-11)
