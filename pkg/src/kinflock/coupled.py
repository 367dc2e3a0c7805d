"""Strang-coupled particle-fluid step.

    [transport(dt/2), free fluid(dt/2)] -> relax + drag exchange (dt) -> [free fluid(dt/2), transport(dt/2)]

The drag exchange hands the fluid exactly the momentum the particles lose, so
total momentum is conserved to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

from .fields import DistributionField, FluidField, SimParams
from .fluid import SpectralWorkspace, apply_momentum_exchange, step_fluid_free
from .kinetic import relax, step_transport


@dataclass
class CoupledState:
    f: DistributionField
    u: FluidField

    @property
    def time(self) -> float:
        return self.f.time


def step_coupled(state: CoupledState, params: SimParams, dt: float,
                 ws: SpectralWorkspace | None = None, scheme: str = "auto") -> CoupledState:
    g = state.f.grid
    if g.dim == 2 and ws is None:
        ws = SpectralWorkspace(g.nx)
    t0 = state.f.time
    f = step_transport(state.f, 0.5 * dt)
    u = step_fluid_free(state.u, params.mu, 0.5 * dt, ws)
    f, dm = relax(f, u, params, dt, scheme=scheme)
    u = apply_momentum_exchange(u, dm, ws)
    u = step_fluid_free(u, params.mu, 0.5 * dt, ws)
    f = step_transport(f, 0.5 * dt, reverse=True)
    return CoupledState(f.with_values(f.values, t0 + dt), u)
