"""Kinetic sub-steps for the distribution function.

Operators
---------
* free transport ``xi . grad_x f``: MUSCL with minmod slopes and SSP-RK2,
  periodic, dimension by dimension;
* explicit drift ``div_xi[k (xi - c) f]``: MUSCL with minmod slopes and SSP-RK2,
  zero flux through the velocity box;
* Fokker-Planck relaxation ``div_xi[D grad_xi f + k (xi - c) f]``: Chang-Cooper
  (exponentially fitted) fluxes, advanced with the matrix exponential of the
  per-column generator, evaluated by uniformisation (a positive series).

The relaxation centre ``c`` is tuned per column by a secant iteration so that
the discrete momentum after the step hits a prescribed target; with that, the
alignment operator conserves momentum to round-off and the fluid friction
exchanges exactly the momentum given by the moment ODE.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import CflViolation, LinearSolveFailure
from .fields import DistributionField, FluidField, PhaseGrid, SimParams, compute_moments


@dataclass
class KineticStepPlan:
    dt: float
    splitting: str = "Strang"
    substeps: list = field(default_factory=lambda: ["TransportX", "DriftFluid", "CollisionFP"])
    cfl_report: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps({"dt": self.dt, "splitting": self.splitting, "substeps": self.substeps,
                           "cfl": self.cfl_report, "wall_time": self.wall_time}, sort_keys=True)


def minmod(a, b):
    """Smaller-magnitude argument when signs agree, else 0."""
    return np.maximum(np.minimum(a, b), 0.0) + np.minimum(np.maximum(a, b), 0.0)


def phi1(z):
    """(e^z - 1)/z with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2, np.expm1(safe) / safe)


def bernoulli(z):
    """B(z) = z / (e^z - 1)."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    with np.errstate(over="ignore"):
        out = safe / np.expm1(safe)
    return np.where(small, 1.0 - z / 2, out)


# ---------------------------------------------------------------------------
# transport


def transport_dt_bound(grid: PhaseGrid) -> float:
    """Largest dt keeping the SSP-RK2 MUSCL update positive (Courant number 1/2)."""
    return 0.5 * grid.dx / (grid.xi_max - 0.5 * grid.dxi)


def _advect_rhs(v, vel, axis, dx):
    s = minmod(v - np.roll(v, 1, axis), np.roll(v, -1, axis) - v)
    face_pos = v + 0.5 * s
    face_neg = np.roll(v - 0.5 * s, -1, axis)
    flux = vel * np.where(vel >= 0, face_pos, face_neg)
    return -(flux - np.roll(flux, 1, axis)) / dx


def _advect_axis(v, vel, axis, dt, dx):
    v1 = v + dt * _advect_rhs(v, vel, axis, dx)
    return 0.5 * v + 0.5 * (v1 + dt * _advect_rhs(v1, vel, axis, dx))


def step_transport(f: DistributionField, dt: float, reverse: bool = False) -> DistributionField:
    """Free streaming; axes are swept x1, x2 (or reversed) with SSP-RK2 each."""
    g = f.grid
    if dt > transport_dt_bound(g) * (1 + 1e-12):
        raise CflViolation(f"transport dt={dt:.3e} exceeds bound {transport_dt_bound(g):.3e}")
    v = f.values
    axes = range(g.dim - 1, -1, -1) if reverse else range(g.dim)
    for a in axes:
        v = _advect_axis(v, g.xi_component(a), a, dt, g.dx)
    return f.with_values(v, f.time + dt)


# ---------------------------------------------------------------------------
# explicit drift in velocity


def _move_axis_last(v, axis):
    return np.moveaxis(v, axis, -1)


def _drift_rhs(v, a_face, h):
    """Conservative MUSCL drift along the last axis; ``a_face`` has n-1 interior faces."""
    pad = np.zeros(v.shape[:-1] + (1,))
    ext = np.concatenate([pad, v, pad], axis=-1)
    s = minmod(ext[..., 1:-1] - ext[..., :-2], ext[..., 2:] - ext[..., 1:-1])
    left = v[..., :-1] + 0.5 * s[..., :-1]
    right = v[..., 1:] - 0.5 * s[..., 1:]
    flux = a_face * np.where(a_face >= 0, left, right)
    full = np.concatenate([pad, flux, pad], axis=-1)
    return -(full[..., 1:] - full[..., :-1]) / h


def drift_dt_bound(grid: PhaseGrid, k: float, center_max: float) -> float:
    a_max = k * (grid.xi_max + center_max)
    return np.inf if a_max == 0 else 0.5 * grid.dxi / a_max


def _drift_axis(values, grid, axis, k, center, dt):
    """SSP-RK2 drift toward ``center`` (space-shaped) along velocity axis ``axis``."""
    if k == 0 or dt == 0:
        return values
    ax = grid.dim + axis
    v = _move_axis_last(values, ax)
    # v now has shape space + other velocity axes + (nxi,)
    c = np.asarray(center, dtype=float).reshape(grid.space_shape + (1,) * grid.dim)
    faces = grid.xi_faces[1:-1]
    a_face = k * (c - faces)
    h = grid.dxi
    v1 = v + dt * _drift_rhs(v, a_face, h)
    v2 = 0.5 * v + 0.5 * (v1 + dt * _drift_rhs(v1, a_face, h))
    return np.moveaxis(v2, -1, ax)


def step_drift(f: DistributionField, k: float, center, dt: float) -> DistributionField:
    """One explicit drift step for ``div_xi[k (xi - center) f]``."""
    g = f.grid
    center = np.broadcast_to(np.asarray(center, dtype=float), (g.dim,) + g.space_shape)
    bound = drift_dt_bound(g, k, float(np.abs(center).max()))
    if dt > bound * (1 + 1e-12):
        raise CflViolation(f"drift dt={dt:.3e} exceeds bound {bound:.3e}")
    v = f.values
    for i in range(g.dim):
        v = _drift_axis(v, g, i, k, center[i], dt)
    return f.with_values(v)


def step_drift_fluid(f: DistributionField, u: FluidField, alpha: float, dt: float) -> DistributionField:
    """Friction toward the fluid velocity, ``alpha div_xi[(xi - u) f]``."""
    return step_drift(f, alpha, u.velocity, dt)


# ---------------------------------------------------------------------------
# Fokker-Planck exponential


def _fp_generator(grid, k, D, center):
    """Tridiagonal coefficients of the column generator for all cells.

    Returns (lower, diag, upper) each shaped space + (n,) / (n-1,).
    """
    h = grid.dxi
    c = np.asarray(center, dtype=float)[..., None]
    vel = -k * (grid.xi_faces[1:-1] - c)  # face velocity, +xi direction
    if D > 0:
        z = vel * h / D
        a = (D / h) * bernoulli(-z)
        b = (D / h) * bernoulli(z)
    else:
        a = np.maximum(vel, 0.0)
        b = np.maximum(-vel, 0.0)
    n = grid.nxi
    diag = np.zeros(c.shape[:-1] + (n,))
    diag[..., 1:] -= b
    diag[..., :-1] -= a
    return a / h, diag / h, b / h


def _tri_matvec(v, lower, diag, upper):
    out = diag * v
    out[..., 1:] += lower * v[..., :-1]
    out[..., :-1] += upper * v[..., 1:]
    return out


def _poisson_terms(lam: float, tol: float = 1e-20) -> int:
    """Series length once lam^j / j! drops below tol (lam <= 2, so the tail is of that size)."""
    term, j = 1.0, 0
    while term >= tol and j < 200:
        j += 1
        term *= lam / j
    return max(j, 2)


class _ColumnPropagator:
    """exp(dt L) for a batch of columns, L the Chang-Cooper generator.

    Uses uniformisation: with nu >= max|L_jj| the matrix P = I + L/nu is
    nonnegative, so exp(tau L) = sum_j e^{-lam} lam^j / j! P^j (lam = nu tau) is a
    series of nonnegative terms. The result is positive, accurate entry by entry,
    and conserves mass to round-off. The step is cut into pieces with lam <= 2;
    for stiff columns the piece propagator is formed densely and squared, so the
    cost grows with log(nu dt) instead of nu dt.
    """

    def __init__(self, grid, k, D, center, dt):
        center = np.asarray(center, dtype=float)
        self.batch_shape = center.shape
        lower, diag, upper = _fp_generator(grid, k, D, center)
        self.n = diag.shape[-1]
        nu = np.maximum(-diag.min(axis=-1), 1e-300)
        total = float(nu.max()) * dt
        self.squarings = max(0, int(np.ceil(np.log2(total / 2.0)))) if total > 2.0 else 0
        self.pieces = 2**self.squarings
        self.lam = nu * (dt / self.pieces)
        inv = 1.0 / nu[..., None]
        self.lower = lower * inv
        self.upper = upper * inv
        self.diag = 1.0 + diag * inv
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            bad = np.argwhere(~np.isfinite(self.lower).all(axis=-1))
            raise LinearSolveFailure("non-finite generator coefficients", column=bad[:1].tolist())
        self._dense = None

    def _series(self, v, shp):
        lo = self.lower.reshape(shp + (-1,))
        di = self.diag.reshape(shp + (-1,))
        up = self.upper.reshape(shp + (-1,))
        lam = self.lam.reshape(shp + (1,))
        term = v
        acc = v.copy()
        for j in range(1, _poisson_terms(float(self.lam.max())) + 1):
            term = _tri_matvec(term, lo, di, up)
            term *= lam / j
            acc += term
        return acc * np.exp(-lam)

    def dense(self):
        """Transposed propagator, rows indexed by source cell: out = v @ dense()."""
        if self._dense is None:
            eye = np.broadcast_to(np.eye(self.n), self.batch_shape + (self.n, self.n))
            T = self._series(np.array(eye), self.batch_shape + (1,))
            for _ in range(self.squarings):
                T = T @ T
                # each source cell's mass must land somewhere: rows sum to one exactly
                T /= T.sum(axis=-1, keepdims=True)
            self._dense = T
        return self._dense

    def apply(self, cols):
        """Apply to ``cols`` of shape batch + extra + (n,); extra axes share the operator."""
        extra = cols.ndim - len(self.batch_shape) - 1
        v = np.array(cols, dtype=float)
        n = self.n
        batch = max(1, int(np.prod(self.batch_shape, dtype=int)))
        lines = max(1, v.size // (batch * n))
        nterms = _poisson_terms(float(self.lam.max()))
        # rough flop counts plus a per-call interpreter overhead
        overhead = 2e4
        series_cost = self.pieces * nterms * (3 * batch * lines * n + overhead)
        dense_cost = batch * lines * n * n + overhead
        if self._dense is None:
            dense_cost += nterms * (3 * batch * n * n + overhead) + self.squarings * (batch * n**3 + overhead)
        if dense_cost < series_cost:
            T = self.dense()
            flat = v.reshape(self.batch_shape + (-1, n))
            return np.matmul(flat, T).reshape(v.shape)
        shp = self.batch_shape + (1,) * extra
        for _ in range(self.pieces):
            v = self._series(v, shp)
        return v


def _axis_lines(values, grid, axis):
    """Move velocity axis ``axis`` last and the other velocity axes just before it."""
    return np.moveaxis(values, grid.dim + axis, -1)


def _marginal(values, grid, axis):
    others = tuple(grid.dim + j for j in range(grid.dim) if j != axis)
    marg = values.sum(axis=others) if others else values
    return marg  # space + (nxi,)


def _secant_center(moment_of, c0, target, slope0, scale, max_iter=12):
    """Vectorised secant for moment_of(c) = target; returns the final centres."""
    r0 = moment_of(c0) - target
    tol = 1e-15 * scale
    active = np.abs(r0) > tol
    if not active.any():
        return c0
    slope = np.where(np.abs(slope0) > 0, slope0, 1.0)
    c1 = np.where(active, c0 - r0 / slope, c0)
    for _ in range(max_iter):
        r1 = moment_of(c1) - target
        active = np.abs(r1) > tol
        if not active.any():
            break
        denom = r1 - r0
        ok = active & (np.abs(denom) > 0)
        step = np.where(ok, r1 * (c1 - c0) / np.where(ok, denom, 1.0), 0.0)
        c0, r0 = c1, r1
        c1 = c1 - step
        if not ok.any():
            break
    return c1


def fp_relax_axis(values, grid, axis, k, D, center, dt, target=None, rho=None):
    """Exponential Fokker-Planck step along one velocity axis.

    When ``target`` (space-shaped momentum component) is given, the centre is
    adjusted per column so the discrete momentum after the step equals it.
    """
    if dt == 0 or (k == 0 and D == 0):
        return values
    xi = grid.xi
    marg = _marginal(values, grid, axis)
    center = np.asarray(center, dtype=float)
    if target is not None and k > 0:
        def moment_of(c):
            out = _ColumnPropagator(grid, k, D, c, dt).apply(marg)
            return (out * xi).sum(axis=-1) * grid.dvxi

        slope0 = rho * -np.expm1(-k * dt)
        scale = np.abs(target) + rho * (np.abs(center) + 1.0)
        live = rho > 0
        center = np.where(live, _secant_center(moment_of, center, target, slope0, scale), center)
    prop = _ColumnPropagator(grid, k, D, center, dt)
    lines = _axis_lines(values, grid, axis)
    out = prop.apply(lines)
    return np.moveaxis(out, -1, grid.dim + axis)


def drift_relax_axis(values, grid, axis, k, center, dt, target=None, rho=None):
    """Explicit MUSCL drift along one axis, sub-cycled for positivity, with momentum targeting."""
    if dt == 0 or k == 0:
        return values
    center = np.clip(np.asarray(center, dtype=float), -grid.xi_max, grid.xi_max)
    nsub = int(np.ceil(dt / drift_dt_bound(grid, k, grid.xi_max) * (1 + 1e-12)))
    sub = dt / nsub
    xi_line = grid.xi_component(axis)

    def run(c):
        v = values
        for _ in range(nsub):
            v = _drift_axis(v, grid, axis, k, c, sub)
        return v

    if target is not None:
        def moment_of(c):
            v = run(np.clip(c, -grid.xi_max, grid.xi_max))
            return (v * xi_line).sum(axis=grid.velocity_axes) * grid.dvxi

        slope0 = rho * -np.expm1(-k * dt)
        scale = np.abs(target) + rho * (np.abs(center) + 1.0)
        center = np.clip(_secant_center(moment_of, center, target, slope0, scale),
                         -grid.xi_max, grid.xi_max)
    return run(center)


# ---------------------------------------------------------------------------
# momentum exchange with the fluid


def exchange_targets(rho, m, u, alpha, dt, dim, frozen_fluid=False):
    """Exact solution of the friction moment ODE over ``dt``.

    Returns ``(m_new, u_avg, u_new)``: the particle momentum at ``dt``, the fluid
    velocity averaged over the step, and the fluid velocity at ``dt``. In 1D the
    fluid velocity is one global vector and feels the integrated drag; in 2D
    the exchange is solved cell by cell (the caller projects afterwards).
    """
    t = dt
    if alpha == 0 or t == 0:
        return m.copy(), u.copy(), u.copy()
    if frozen_fluid:
        target = rho * u + (m - rho * u) * np.exp(-alpha * t)
        return target, u.copy(), u.copy()
    if dim == 1:
        n = rho.size
        R = rho.sum() / n
        M = m.reshape(m.shape[0], -1).sum(axis=1) / n
        u0 = u.reshape(u.shape[0], -1)[:, 0]
        P = u0 + M
        A = P / (R + 1.0)
        B = u0 - A
        lam = alpha * (R + 1.0)
        e_a = np.exp(-alpha * t)
        A_ = A.reshape(-1, *([1] * rho.ndim))
        B_ = B.reshape(A_.shape)
        m_new = m * e_a + alpha * rho * (A_ * t * phi1(-alpha * t) + B_ * e_a * t * phi1(-alpha * R * t))
        u_new = A + B * np.exp(-lam * t)
        u_avg = A + B * phi1(-lam * t)
        shape = u.shape
        return m_new, np.broadcast_to(u_avg.reshape(A_.shape), shape).copy(), \
            np.broadcast_to(u_new.reshape(A_.shape), shape).copy()
    g0 = rho * u - m
    kappa = alpha * (rho + 1.0)
    w = alpha * t * phi1(-kappa * t)
    m_new = m + g0 * w
    u_new = u - g0 * w
    u_avg = u - g0 / (rho + 1.0) * (1.0 - phi1(-kappa * t))
    return m_new, u_avg, u_new


def relax(f: DistributionField, u: FluidField, params: SimParams, dt: float,
          frozen_fluid: bool = False, scheme: str = "auto"):
    """Combined friction + alignment + diffusion over ``dt``.

    Returns ``(f_new, dm)`` where ``dm`` is the realised change of the particle
    momentum density; the caller hands ``-dm`` to the fluid.
    """
    g = f.grid
    alpha, beta, sigma = params.coeff_fluid, params.coeff_align, params.coeff_diff
    k = alpha + beta
    macro = compute_moments(f, params.rho_floor)
    if dt == 0 or (k == 0 and sigma == 0):
        return f, np.zeros_like(macro.m)
    m_target, u_avg, _ = exchange_targets(macro.rho, macro.m, u.velocity, alpha, dt, g.dim,
                                          frozen_fluid)
    center = (alpha * u_avg + beta * macro.u_f) / k if k > 0 else np.zeros_like(macro.m)
    if scheme == "auto":
        scheme = "exponential" if sigma > 0 else "muscl"
    live = macro.rho > params.rho_floor
    v = f.values
    for i in range(g.dim):
        tgt = np.where(live, m_target[i], macro.m[i]) if k > 0 else None
        if scheme == "exponential":
            v = fp_relax_axis(v, g, i, k, sigma, center[i], dt, target=tgt,
                              rho=np.where(live, macro.rho, 0.0))
        elif scheme == "muscl":
            if sigma > 0:
                raise ValueError("the explicit drift scheme does not handle diffusion")
            v = drift_relax_axis(v, g, i, k, center[i], dt, target=tgt,
                                 rho=np.where(live, macro.rho, 0.0))
        else:
            raise ValueError(f"unknown relaxation scheme {scheme!r}")
    f_new = f.with_values(v)
    m_new = np.stack([(v * g.xi_component(i)).sum(axis=g.velocity_axes) * g.dvxi
                      for i in range(g.dim)])
    return f_new, m_new - macro.m


def step_collision_fp(f: DistributionField, coeff_align: float, coeff_diff: float,
                      rho_floor: float, dt: float) -> DistributionField:
    """Alignment + diffusion toward the local Maxwellian, momentum-conserving."""
    g = f.grid
    if dt == 0 or (coeff_align == 0 and coeff_diff == 0):
        return f
    macro = compute_moments(f, rho_floor)
    live = macro.rho > rho_floor
    v = f.values
    for i in range(g.dim):
        v = fp_relax_axis(v, g, i, coeff_align, coeff_diff, macro.u_f[i], dt,
                          target=macro.m[i] if coeff_align > 0 else None,
                          rho=np.where(live, macro.rho, 0.0))
    return f.with_values(v)


def kinetic_dt(grid: PhaseGrid, params: SimParams, u: FluidField | None = None) -> float:
    """Stable step for the kinetic Strang step at the configured Courant number."""
    dt = params.cfl * grid.dx / (grid.xi_max - 0.5 * grid.dxi)
    if params.coeff_diff == 0:
        k = params.coeff_fluid + params.coeff_align
        # the relaxation sub-cycles; keep a handful of sub-steps at most
        dt = min(dt, 4 * drift_dt_bound(grid, k, grid.xi_max))
    return dt


def step_kinetic(f: DistributionField, u: FluidField, params: SimParams, dt: float,
                 plan: KineticStepPlan | None = None) -> DistributionField:
    """Strang step with the fluid held fixed: X(dt/2) R(dt) X(dt/2)."""
    t0 = _time.perf_counter()
    h = step_transport(f, 0.5 * dt)
    h, _ = relax(h, u, params, dt, frozen_fluid=True)
    h = step_transport(h, 0.5 * dt, reverse=True)
    if plan is not None:
        plan.dt = dt
        plan.cfl_report = {"transport": 0.5 * dt * (f.grid.xi_max - 0.5 * f.grid.dxi) / f.grid.dx}
        plan.wall_time = _time.perf_counter() - t0
    return h.with_values(h.values, f.time + dt)
