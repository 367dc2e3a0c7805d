"""Limit system: isothermal Euler with friction, coupled to the incompressible fluid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VacuumBreach
from .fields import FluidField, PhaseGrid
from .fluid import SpectralWorkspace, apply_momentum_exchange, step_fluid_free
from .kinetic import exchange_targets

RHO_MIN = 1e-8


@dataclass
class HydroState:
    rho: np.ndarray
    m: np.ndarray
    u: FluidField
    time: float = 0.0

    @property
    def grid(self) -> PhaseGrid:
        return self.u.grid

    @property
    def u_f(self) -> np.ndarray:
        return self.m / self.rho[None]

    def copy(self) -> "HydroState":
        return HydroState(self.rho.copy(), self.m.copy(), self.u.copy(), self.time)


def _limited_slope(a, axis, limiter):
    dl = a - np.roll(a, 1, axis)
    dr = np.roll(a, -1, axis) - a
    if limiter == "none":
        return 0.5 * (dl + dr)
    same = dl * dr > 0
    if limiter == "minmod":
        s = np.sign(dl) * np.minimum(np.abs(dl), np.abs(dr))
    elif limiter == "mc":
        s = np.sign(dl) * np.minimum(np.minimum(2 * np.abs(dl), 2 * np.abs(dr)), 0.5 * np.abs(dl + dr))
    else:
        raise ValueError(f"unknown limiter {limiter!r}")
    return np.where(same, s, 0.0)


def _flux(rho, vel, n):
    """Isothermal Euler flux in direction n for primitive (rho, vel)."""
    mn = rho * vel[n]
    out = [mn]
    for i in range(vel.shape[0]):
        out.append(mn * vel[i] + (rho if i == n else 0.0))
    return np.stack(out)


def euler_rhs(rho, m, dx, limiter="mc"):
    """Semi-discrete MUSCL-Rusanov right-hand side for (rho, m)."""
    d = m.shape[0]
    vel = m / rho[None]
    q = np.concatenate([rho[None], vel])  # primitives
    U = np.concatenate([rho[None], m])
    out = np.zeros_like(U)
    for n in range(d):
        axis = 1 + n
        s = _limited_slope(q, axis, limiter)
        qL = q + 0.5 * s  # left state at face i+1/2
        qR = np.roll(q - 0.5 * s, -1, axis)  # right state at face i+1/2
        bad = (qL[0] <= 0) | (qR[0] <= 0)
        if bad.any():
            qL = np.where(bad[None], q, qL)
            qR = np.where(bad[None], np.roll(q, -1, axis), qR)
        rl, vl = qL[0], qL[1:]
        rr, vr = qR[0], qR[1:]
        UL = np.concatenate([rl[None], rl[None] * vl])
        UR = np.concatenate([rr[None], rr[None] * vr])
        a = np.maximum(np.abs(vl[n]), np.abs(vr[n])) + 1.0
        F = 0.5 * (_flux(rl, vl, n) + _flux(rr, vr, n)) - 0.5 * a[None] * (UR - UL)
        out -= (F - np.roll(F, 1, axis)) / dx
    return out[0], out[1:]


def hydro_dt(state: HydroState, cfl: float = 0.4) -> float:
    vmax = float(np.abs(state.u_f).max()) + 1.0
    return cfl * state.grid.dx / vmax


def _euler_homogeneous(rho, m, dx, dt, limiter):
    r1, q1 = euler_rhs(rho, m, dx, limiter)
    rho1, m1 = rho + dt * r1, m + dt * q1
    if rho1.min() <= 0:
        raise VacuumBreach(f"density {rho1.min():.3e} after first stage")
    r2, q2 = euler_rhs(rho1, m1, dx, limiter)
    return 0.5 * (rho + rho1 + dt * r2), 0.5 * (m + m1 + dt * q2)


def _check_vacuum(rho, rho_min):
    lo = float(rho.min())
    if lo < rho_min:
        raise VacuumBreach(f"min density {lo:.3e} below {rho_min:.1e}")


def step_euler_isothermal(rho, m, u: FluidField, dt: float, friction: bool = True,
                          alpha: float = 1.0, limiter: str = "mc", rho_min: float = RHO_MIN):
    """Strang step of isothermal Euler with friction rho (u - u_f), u held fixed."""
    _check_vacuum(rho, rho_min)
    dx = u.grid.dx
    if friction and alpha > 0:
        m = exchange_targets(rho, m, u.velocity, alpha, 0.5 * dt, u.grid.dim, frozen_fluid=True)[0]
    rho, m = _euler_homogeneous(rho, m, dx, dt, limiter)
    if friction and alpha > 0:
        m = exchange_targets(rho, m, u.velocity, alpha, 0.5 * dt, u.grid.dim, frozen_fluid=True)[0]
    _check_vacuum(rho, rho_min)
    return rho, m


def step_hydro_coupled(state: HydroState, mu: float, dt: float, ws: SpectralWorkspace | None = None,
                       alpha: float = 1.0, limiter: str = "mc", rho_min: float = RHO_MIN) -> HydroState:
    """Euler(dt/2), fluid(dt/2), exact drag exchange(dt), fluid(dt/2), Euler(dt/2)."""
    g = state.grid
    if g.dim == 2 and ws is None:
        ws = SpectralWorkspace(g.nx)
    _check_vacuum(state.rho, rho_min)
    rho, m = _euler_homogeneous(state.rho, state.m, g.dx, 0.5 * dt, limiter)
    _check_vacuum(rho, rho_min)
    u = step_fluid_free(state.u, mu, 0.5 * dt, ws)
    m_new, _, _ = exchange_targets(rho, m, u.velocity, alpha, dt, g.dim)
    u = apply_momentum_exchange(u, m_new - m, ws)
    m = m_new
    u = step_fluid_free(u, mu, 0.5 * dt, ws)
    rho, m = _euler_homogeneous(rho, m, g.dx, 0.5 * dt, limiter)
    _check_vacuum(rho, rho_min)
    return HydroState(rho, m, u, state.time + dt)
