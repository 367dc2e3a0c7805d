"""Phase-space grids, field containers and velocity moments.

Layout convention: a distribution on a ``dim``-dimensional phase grid is an
array of shape ``(nx,)*dim + (nxi,)*dim``; the first ``dim`` axes are space,
the last ``dim`` axes are velocity. Vector fields on space carry a leading
component axis, ``(dim, nx, ..., nx)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TailOverflow

RHO_FLOOR = 1e-12
TAIL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform tensor grid on the unit torus times a velocity box."""

    dim: int
    nx: int
    nxi: int
    xi_max: float = 6.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        for name in ("nx", "nxi"):
            n = getattr(self, name)
            if n < 4 or n % 2:
                raise ValueError(f"{name} must be even and >= 4, got {n}")
        if not self.xi_max > 0:
            raise ValueError("xi_max must be positive")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dxi(self) -> float:
        return 2.0 * self.xi_max / self.nxi

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def xi(self) -> np.ndarray:
        return -self.xi_max + (np.arange(self.nxi) + 0.5) * self.dxi

    @property
    def xi_faces(self) -> np.ndarray:
        return -self.xi_max + np.arange(self.nxi + 1) * self.dxi

    @property
    def dvx(self) -> float:
        """Spatial cell volume."""
        return self.dx**self.dim

    @property
    def dvxi(self) -> float:
        """Velocity cell volume."""
        return self.dxi**self.dim

    @property
    def space_shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.dim

    @property
    def velocity_shape(self) -> tuple[int, ...]:
        return (self.nxi,) * self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.space_shape + self.velocity_shape

    @property
    def space_axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    @property
    def velocity_axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim, 2 * self.dim))

    def mesh_x(self) -> list[np.ndarray]:
        """Cell-center coordinates, one array of ``space_shape`` per axis."""
        return np.meshgrid(*([self.x] * self.dim), indexing="ij")

    def xi_component(self, i: int) -> np.ndarray:
        """Velocity coordinate ``xi_i`` shaped to broadcast against ``shape``."""
        shape = [1] * (2 * self.dim)
        shape[self.dim + i] = self.nxi
        return self.xi.reshape(shape)

    def xi_squared(self) -> np.ndarray:
        """|xi|^2 on the velocity grid, broadcastable against ``shape``."""
        out = 0.0
        for i in range(self.dim):
            out = out + self.xi_component(i) ** 2
        return out

    def expand_space(self, a: np.ndarray) -> np.ndarray:
        """Append singleton velocity axes to a spatial array."""
        return np.asarray(a).reshape(np.shape(a) + (1,) * self.dim)


@dataclass
class DistributionField:
    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dvx * self.grid.dvxi)

    def with_values(self, values, time=None) -> "DistributionField":
        return replace(self, values=values, time=self.time if time is None else time)

    def copy(self) -> "DistributionField":
        return replace(self, values=self.values.copy())


@dataclass
class FluidField:
    """Fluid velocity on the spatial grid; in 1D the velocity is spatially constant."""

    grid: PhaseGrid
    velocity: np.ndarray
    pressure: np.ndarray = None

    def __post_init__(self):
        g = self.grid
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.velocity.shape != (g.dim,) + g.space_shape:
            raise ValueError(f"velocity shape {self.velocity.shape} invalid for grid")
        if self.pressure is None:
            self.pressure = np.zeros(g.space_shape)

    @classmethod
    def constant(cls, grid: PhaseGrid, value) -> "FluidField":
        value = np.broadcast_to(np.asarray(value, dtype=float), (grid.dim,))
        vel = np.empty((grid.dim,) + grid.space_shape)
        for i in range(grid.dim):
            vel[i] = value[i]
        return cls(grid, vel)

    def mean(self) -> np.ndarray:
        """Mean velocity u_c (the torus has unit volume)."""
        return self.velocity.reshape(self.grid.dim, -1).mean(axis=1)

    def copy(self) -> "FluidField":
        return FluidField(self.grid, self.velocity.copy(), self.pressure.copy())


@dataclass
class MacroState:
    rho: np.ndarray
    m: np.ndarray
    u_f: np.ndarray
    Ptilde: np.ndarray
    second: np.ndarray = field(default=None, repr=False)  # raw second moment tensor


@dataclass(frozen=True)
class SimParams:
    alpha: float = 1.0
    beta: float = 1.0
    sigma: float = 1.0
    mu: float = 0.05
    epsilon: float = 1.0
    mode: str = "physical"
    rho_floor: float = RHO_FLOOR
    cfl: float = 0.4

    def __post_init__(self):
        if self.mode not in ("physical", "scaled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.alpha < 0 or self.mu < 0 or self.beta < 0 or self.sigma < 0:
            raise ValueError("model constants must be nonnegative")
        if self.mode == "scaled" and not self.epsilon > 0:
            raise ValueError("epsilon must be positive in scaled mode")
        if not 0 < self.cfl <= 0.9:
            raise ValueError("cfl must lie in (0, 0.9]")

    @classmethod
    def scaled(cls, epsilon: float, mu: float = 0.05, **kw) -> "SimParams":
        return cls(alpha=1.0, beta=1.0 / epsilon, sigma=1.0 / epsilon, mu=mu,
                   epsilon=epsilon, mode="scaled", **kw)

    @property
    def coeff_align(self) -> float:
        return 1.0 / self.epsilon if self.mode == "scaled" else self.beta

    @property
    def coeff_diff(self) -> float:
        return 1.0 / self.epsilon if self.mode == "scaled" else self.sigma

    @property
    def coeff_fluid(self) -> float:
        return 1.0 if self.mode == "scaled" else self.alpha


def velocity_sum(grid: PhaseGrid, a: np.ndarray) -> np.ndarray:
    """Midpoint quadrature over the velocity axes."""
    return a.sum(axis=grid.velocity_axes) * grid.dvxi


def compute_moments(f: DistributionField, rho_floor: float = RHO_FLOOR) -> MacroState:
    g = f.grid
    v = f.values
    rho = velocity_sum(g, v)
    m = np.stack([velocity_sum(g, g.xi_component(i) * v) for i in range(g.dim)])
    second = np.empty((g.dim, g.dim) + g.space_shape)
    for i in range(g.dim):
        for j in range(i, g.dim):
            second[i, j] = velocity_sum(g, g.xi_component(i) * g.xi_component(j) * v)
            second[j, i] = second[i, j]
    live = rho > rho_floor
    u_f = np.where(live, m / np.where(live, rho, 1.0), 0.0)
    Ptilde = np.empty_like(second)
    for i in range(g.dim):
        ci = g.xi_component(i) - g.expand_space(u_f[i])
        for j in range(i, g.dim):
            cj = g.xi_component(j) - g.expand_space(u_f[j])
            Ptilde[i, j] = velocity_sum(g, ci * cj * v)
            Ptilde[j, i] = Ptilde[i, j]
    return MacroState(rho=rho, m=m, u_f=u_f, Ptilde=Ptilde, second=second)


def tail_fraction(f: DistributionField) -> float:
    """Largest per-column share of mass in the outermost velocity layer."""
    g = f.grid
    v = f.values
    mask = np.zeros(g.velocity_shape, dtype=bool)
    for i in range(g.dim):
        idx = [slice(None)] * g.dim
        idx[i] = [0, g.nxi - 1]
        mask[tuple(idx)] = True
    outer = (v * mask).sum(axis=g.velocity_axes)
    total = v.sum(axis=g.velocity_axes)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(total > 0, outer / np.where(total > 0, total, 1.0), 0.0)
    return float(frac.max())


def maxwellian_values(grid: PhaseGrid, rho, u, temperature: float = 1.0) -> np.ndarray:
    """Grid-sampled Maxwellian, renormalised per column to the exact density."""
    rho = np.broadcast_to(np.asarray(rho, dtype=float), grid.space_shape)
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and grid.dim == 1 and u.shape != (1,) + grid.space_shape:
        u = u.reshape((1,) + u.shape)
    u = np.broadcast_to(u, (grid.dim,) + grid.space_shape)
    expo = 0.0
    for i in range(grid.dim):
        expo = expo + (grid.xi_component(i) - grid.expand_space(u[i])) ** 2
    raw = np.exp(-expo / (2.0 * temperature)) / (2 * np.pi * temperature) ** (grid.dim / 2)
    col = velocity_sum(grid, raw)
    return raw * grid.expand_space(rho / col)


def sample_maxwellian(rho_profile, u_profile, grid: PhaseGrid, temperature: float = 1.0,
                      tail_threshold: float = TAIL_THRESHOLD, time: float = 0.0) -> DistributionField:
    rho_profile = np.asarray(rho_profile, dtype=float)
    if np.any(rho_profile < 0):
        raise ValueError("density profile must be nonnegative")
    f = DistributionField(grid, maxwellian_values(grid, rho_profile, u_profile, temperature), time)
    frac = tail_fraction(f)
    if frac > tail_threshold:
        raise TailOverflow(f"outer velocity layer holds {frac:.2e} of a column's mass")
    return f


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def velocity_moment(f: DistributionField, k: float) -> np.ndarray:
    """m_k(f)(x) = sum |xi|^k f dxi."""
    g = f.grid
    return velocity_sum(g, np.sqrt(g.xi_squared()) ** k * f.values)


def moment_interpolation_check(f: DistributionField, k1: int, k2: int) -> np.ndarray:
    """Per-cell ``m_k1 - (c_d |f|_inf + 1) m_k2^((k1+d)/(k2+d))``; nonpositive when the bound holds."""
    if not k2 > k1 >= 0:
        raise ValueError("need k2 > k1 >= 0")
    d = f.grid.dim
    sup = float(f.values.max()) if f.values.size else 0.0
    lhs = velocity_moment(f, k1)
    rhs = (unit_ball_volume(d) * sup + 1.0) * velocity_moment(f, k2) ** ((k1 + d) / (k2 + d))
    return lhs - rhs
