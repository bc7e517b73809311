"""Shared fixtures and independent reference implementations.

The reference propagators here deliberately avoid the package's Krylov and
stepping machinery: they build dense matrices and use scipy.linalg.expm or
scipy.integrate.solve_ivp, so production results are checked against an
independent numerical route.
"""

import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import solve_ivp

from dicke_ramp.model import ModelParams, KHZ, hamiltonian_parts


@pytest.fixture
def small_params():
    return ModelParams.from_khz(6, 0.935, -1.0, 7.0)


@pytest.fixture
def n10_params():
    return ModelParams.from_khz(10, 0.935, -1.0, 7.0)


def dense_h(params, b_x):
    h_fixed, sx = hamiltonian_parts(params)
    return h_fixed.toarray() + b_x * sx.toarray()


def expm_midpoint_reference(params, schedule, psi0, dt):
    """Piecewise-constant midpoint evolution with exact dense exponentials."""
    h_fixed, sx = hamiltonian_parts(params)
    h_fixed = h_fixed.toarray()
    sx = sx.toarray()
    duration = schedule.duration
    n_steps = max(1, int(round(duration / dt)))
    step = duration / n_steps
    psi = psi0.astype(np.complex128).copy()
    t = 0.0
    for _ in range(n_steps):
        b = schedule.field_at(t + 0.5 * step)
        psi = scipy.linalg.expm(-1j * step * (h_fixed + b * sx)) @ psi
        t += step
    return psi


def ode_reference(params, schedule, psi0, rtol=1e-11, atol=1e-13):
    """Time-ordered Schroedinger integration with scipy's DOP853."""
    h_fixed, sx = hamiltonian_parts(params)
    h_fixed = h_fixed.toarray()
    sx = sx.toarray()

    def rhs(t, y):
        psi = y[:len(psi0)] + 1j * y[len(psi0):]
        dpsi = -1j * ((h_fixed + schedule.field_at(t) * sx) @ psi)
        return np.concatenate([dpsi.real, dpsi.imag])

    y0 = np.concatenate([psi0.real, psi0.imag])
    sol = solve_ivp(rhs, (0.0, schedule.duration), y0, method="DOP853",
                    rtol=rtol, atol=atol, dense_output=False)
    assert sol.success
    y = sol.y[:, -1]
    return y[:len(psi0)] + 1j * y[len(psi0):]
