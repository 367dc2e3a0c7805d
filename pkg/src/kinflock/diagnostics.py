"""Functionals, balance residuals and output writers.

Every quantity is a midpoint-rule sum over the phase grid; spatial integrals
are over the unit torus, so ``int g dx`` is the cell mean of ``g``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, NonUnitMass, VacuumBreach
from .fields import DistributionField, FluidField, SimParams, compute_moments
from .fluid import SpectralWorkspace, velocity_gradient_sq

F_FLOOR = 1e-300
UNIT_MASS_TOL = 1e-8


# ---------------------------------------------------------------------------
# basic integrals


def _int_x(g, a):
    """Integral over the torus of a spatial array (or stack of them)."""
    return np.asarray(a).reshape(*np.shape(a)[: np.ndim(a) - g.dim], -1).mean(axis=-1)


def _int_phase(f: DistributionField, weight=1.0) -> float:
    g = f.grid
    return float((weight * f.values).sum() * g.dvx * g.dvxi)


def mass(f: DistributionField) -> float:
    return f.mass()


def kinetic_momentum(f: DistributionField) -> np.ndarray:
    """xi_c = int int xi f."""
    g = f.grid
    return np.array([_int_phase(f, g.xi_component(i)) for i in range(g.dim)])


def fluid_momentum(u: FluidField) -> np.ndarray:
    """u_c = int u dx."""
    return u.mean()


def kinetic_energy(f: DistributionField) -> float:
    return 0.5 * _int_phase(f, f.grid.xi_squared())


def fluid_energy(u: FluidField) -> float:
    return 0.5 * float(_int_x(u.grid, (u.velocity**2).sum(axis=0)))


def drag_work(f: DistributionField, vel) -> float:
    """int int |v(x) - xi|^2 f for a spatial vector field v."""
    g = f.grid
    w = 0.0
    for i in range(g.dim):
        w = w + (g.expand_space(vel[i]) - g.xi_component(i)) ** 2
    return _int_phase(f, w)


def lp_norms(f: DistributionField) -> dict:
    g = f.grid
    vol = g.dvx * g.dvxi
    v = f.values
    return {"l1": float(np.abs(v).sum() * vol), "l2": float(np.sqrt((v * v).sum() * vol)),
            "linf": float(np.abs(v).max())}


def lp_norm_p(f: DistributionField, p: float) -> float:
    """||f||_p^p."""
    g = f.grid
    return float((np.abs(f.values) ** p).sum() * g.dvx * g.dvxi)


def spectral_divergence_tensor(T: np.ndarray, dim: int) -> np.ndarray:
    """(div T)_i = sum_j d_j T_ij for a (dim, dim, *space) periodic tensor field."""
    n = T.shape[-1]
    k = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n)
    out = np.zeros((dim,) + T.shape[2:])
    for i in range(dim):
        for j in range(dim):
            a = T[i, j]
            ah = np.fft.fft(a, axis=j)
            shape = [1] * dim
            shape[j] = n
            if n % 2 == 0:
                kk = k.copy()
                kk[n // 2] = 0.0  # Nyquist derivative of a real field is dropped
            else:
                kk = k
            out[i] += np.fft.ifft(1j * kk.reshape(shape) * ah, axis=j).real
    return out


# ---------------------------------------------------------------------------
# energy identity


def energy_balance_residual(f_prev: DistributionField, f_next: DistributionField,
                            u_prev: FluidField, u_next: FluidField, params: SimParams, dt: float,
                            ws: SpectralWorkspace | None = None) -> float:
    """Discrete residual of the kinetic+fluid energy identity over one step.

    The dissipation terms are averaged over the two end states (trapezoid).
    """
    g = f_prev.grid
    alpha, beta, sigma = params.coeff_fluid, params.coeff_align, params.coeff_diff

    def dissipation(f, u):
        mac = compute_moments(f, params.rho_floor)
        return (params.mu * velocity_gradient_sq(u, ws) + alpha * drag_work(f, u.velocity)
                + beta * drag_work(f, mac.u_f) - g.dim * sigma * f.mass())

    e0 = kinetic_energy(f_prev) + fluid_energy(u_prev)
    e1 = kinetic_energy(f_next) + fluid_energy(u_next)
    rate = (e1 - e0) / dt
    return abs(rate + 0.5 * (dissipation(f_prev, u_prev) + dissipation(f_next, u_next)))


# ---------------------------------------------------------------------------
# entropy


def entropy_functionals(f: DistributionField, u: FluidField, u_f=None, params: SimParams | None = None,
                        ws: SpectralWorkspace | None = None):
    """(F, D1, D2) with face-centred velocity differences for D1."""
    g = f.grid
    params = params or SimParams()
    v = f.values
    if u_f is None:
        u_f = compute_moments(f, params.rho_floor).u_f
    pos = v > F_FLOOR
    flogf = np.where(pos, v * np.log(np.where(pos, v, 1.0)), 0.0)
    F = float(flogf.sum() * g.dvx * g.dvxi) + kinetic_energy(f) + fluid_energy(u)
    D1 = 0.0
    for i in range(g.dim):
        ax = g.dim + i
        lines = np.moveaxis(v, ax, -1)
        uf = np.asarray(u_f[i]).reshape(g.space_shape + (1,) * g.dim)
        uf = np.moveaxis(uf, ax, -1)
        left, right = lines[..., :-1], lines[..., 1:]
        avg = 0.5 * (left + right)
        grad = (right - left) / g.dxi
        flux = grad + (g.xi_faces[1:-1] - uf) * avg
        ok = (left > F_FLOOR) & (right > F_FLOOR)
        D1 += float(np.where(ok, flux**2 / np.where(ok, avg, 1.0), 0.0).sum() * g.dvx * g.dvxi)
    D2 = drag_work(f, u.velocity) + params.mu * velocity_gradient_sq(u, ws)
    return F, D1, D2


# ---------------------------------------------------------------------------
# moment algebra


def square_expansion_terms(f: DistributionField, u: FluidField, rho_floor: float = 1e-12) -> dict:
    """The four terms of the square-expansion identity, by moment factorisation."""
    g = f.grid
    mac = compute_moments(f, rho_floor)
    M0 = f.mass()
    xi_c = kinetic_momentum(f)
    S2 = 2.0 * kinetic_energy(f)
    rho_u2 = float(_int_x(g, mac.rho * (mac.u_f**2).sum(axis=0)))
    pair_xi = M0 * S2 - float(xi_c @ xi_c)  # half the f(x,xi) f(y,xi*) |xi - xi*|^2 integral
    slip = float(_int_x(g, mac.rho * ((u.velocity - mac.u_f) ** 2).sum(axis=0)))
    drag = drag_work(f, u.velocity)
    pair_uf = M0 * rho_u2 - float(xi_c @ xi_c)
    scale = M0 * S2 + M0 * rho_u2 + 2 * float(xi_c @ xi_c) + slip + drag
    return {"pair_xi": pair_xi, "slip": slip, "drag": drag, "pair_uf": pair_uf, "scale": scale}


def square_expansion_residual(f: DistributionField, u: FluidField, rho_floor: float = 1e-12) -> float:
    """Residual of pair_xi + slip - drag - pair_uf (an identity for unit mass).

    Relative to the uncancelled moment products that make up the terms, since
    the pair terms themselves are differences that vanish at consensus.
    """
    t = square_expansion_terms(f, u, rho_floor)
    gap = t["pair_xi"] + t["slip"] - t["drag"] - t["pair_uf"]
    return 0.0 if t["scale"] == 0 else abs(gap) / t["scale"]


def _check_unit_mass(M0):
    if abs(M0 - 1.0) > UNIT_MASS_TOL:
        raise NonUnitMass(f"total mass {M0:.12g} is not 1")


def fluctuation_energies(f: DistributionField, u: FluidField, rho_floor: float = 1e-12,
                         check: bool = True) -> dict:
    g = f.grid
    M0 = f.mass()
    _check_unit_mass(M0)
    mac = compute_moments(f, rho_floor)
    xi_c = kinetic_momentum(f)
    u_c = fluid_momentum(u)
    E_P = 0.5 * float(_int_x(g, np.trace(mac.Ptilde)))
    E_U = float(_int_x(g, mac.rho * ((mac.u_f - xi_c.reshape((-1,) + (1,) * g.dim)) ** 2).sum(axis=0)))
    rho_u2 = float(_int_x(g, mac.rho * (mac.u_f**2).sum(axis=0)))
    m_tot = _int_x(g, mac.m)
    E_U_direct = M0 * rho_u2 - float(m_tot @ m_tot)
    E_F = 0.5 * float(_int_x(g, ((u.velocity - u_c.reshape((-1,) + (1,) * g.dim)) ** 2).sum(axis=0)))
    E_I = 0.5 * float((u_c - xi_c) @ (u_c - xi_c))
    if check:
        gap = abs(E_U - E_U_direct)
        if gap > 1e-10 * max(1.0, abs(E_U)):
            raise InvariantViolation("E_U two-formula gap", gap, 1e-10)
    E = 2 * E_P + E_U + 2 * E_F + E_I
    return {"E_P": E_P, "E_U": E_U, "E_U_direct": E_U_direct, "E_F": E_F, "E_I": E_I, "E": E}


def dissipation_D(f: DistributionField, u: FluidField, mu: float, rho_floor: float = 1e-12,
                  ws: SpectralWorkspace | None = None) -> float:
    mac = compute_moments(f, rho_floor)
    E_P = 0.5 * float(_int_x(f.grid, np.trace(mac.Ptilde)))
    return 4 * E_P + 2 * mu * velocity_gradient_sq(u, ws) + 2 * drag_work(f, u.velocity)


def fluctuation_rhs(f: DistributionField, u: FluidField, mu: float, rho_floor: float = 1e-12,
              ws: SpectralWorkspace | None = None) -> dict:
    """Right-hand sides of the fluctuation evolution identities (alpha = beta = 1, sigma = 0)."""
    g = f.grid
    mac = compute_moments(f, rho_floor)
    divP = spectral_divergence_tensor(mac.Ptilde, g.dim)
    u_c = fluid_momentum(u)
    xi_c = kinetic_momentum(f)
    E_P = 0.5 * float(_int_x(g, np.trace(mac.Ptilde)))
    divP_uf = float(_int_x(g, (divP * mac.u_f).sum(axis=0)))
    drag_vec = _int_x(g, mac.rho[None] * u.velocity - mac.m)  # int rho (u - u_f)
    drag_uf = float(_int_x(g, ((mac.rho[None] * u.velocity - mac.m) * mac.u_f).sum(axis=0)))
    grad2 = velocity_gradient_sq(u, ws)
    # int int (u_c - u).(u - xi) f = int (u_c - u).(rho u - m)
    ucmu = u_c.reshape((-1,) + (1,) * g.dim) - u.velocity
    f_term = float(_int_x(g, (ucmu * (mac.rho[None] * u.velocity - mac.m)).sum(axis=0)))
    return {
        "E_P": divP_uf - 4 * E_P,
        "E_U": -2 * divP_uf + 2 * drag_uf - 2 * float(xi_c @ drag_vec),
        "E_F": -mu * grad2 + f_term,
        "E_I": -2 * float((u_c - xi_c) @ drag_vec),
        "E": -dissipation_D(f, u, mu, rho_floor, ws),
    }


def fluctuation_evolution_residuals(times, fs, us, mu: float, rho_floor: float = 1e-12,
                                    ws: SpectralWorkspace | None = None) -> dict:
    """Max over interior times of |centred dX/dt - RHS_X| for X in E_P, E_U, E_F, E_I, E."""
    times = np.asarray(times, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least three snapshots")
    energies = [fluctuation_energies(f, u, rho_floor, check=False) for f, u in zip(fs, us)]
    names = ["E_P", "E_U", "E_F", "E_I", "E"]
    out = {n: 0.0 for n in names}
    for k in range(1, len(times) - 1):
        rhs = fluctuation_rhs(fs[k], us[k], mu, rho_floor, ws)
        span = times[k + 1] - times[k - 1]
        for n in names:
            d = (energies[k + 1][n] - energies[k - 1][n]) / span
            out[n] = max(out[n], abs(d - rhs[n]))
    return out


# ---------------------------------------------------------------------------
# relative entropy against the limit system


def pressure_divergence(a, b):
    """P(a, b) = a log a - b log b - (a - b)(1 + log b), evaluated without cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = (a - b) / b
    small = np.abs(d) < 1e-2
    ds = np.where(small, d, 0.0)
    series = sum((-1) ** n * ds**n / (n * (n - 1)) for n in range(2, 10))
    dl = np.where(small, 0.0, d)
    direct = (1 + dl) * np.log1p(dl) - dl
    return b * np.where(small, series, direct)


def pressure_lower_bound(a, b):
    return 0.5 * np.minimum(1.0 / a, 1.0 / b) * (a - b) ** 2


@dataclass
class MacroFields:
    """(rho, u_f, u) triple for relative-entropy comparisons."""

    rho: np.ndarray
    u_f: np.ndarray
    u: np.ndarray

    @classmethod
    def from_kinetic(cls, f: DistributionField, fluid: FluidField, rho_floor: float = 1e-12):
        mac = compute_moments(f, rho_floor)
        return cls(mac.rho, mac.u_f, fluid.velocity)

    @classmethod
    def from_hydro(cls, state):
        return cls(state.rho, state.m / state.rho[None], state.u.velocity)


def _no_vacuum(rho, rho_min):
    lo = float(np.min(rho))
    if lo <= rho_min:
        raise VacuumBreach(f"density {lo:.3e} at or below {rho_min:.1e}")


def relative_entropy(V: MacroFields, U: MacroFields, rho_min: float = 1e-8):
    """int H(V|U) dx and its (particle velocity, fluid velocity, pressure) parts."""
    _no_vacuum(V.rho, rho_min)
    _no_vacuum(U.rho, rho_min)
    P = pressure_divergence(V.rho, U.rho)
    lb = pressure_lower_bound(V.rho, U.rho)
    slack = lb - P
    if np.any(slack > 1e-12 * np.maximum(lb, 1e-300)):
        raise InvariantViolation("pressure lower bound", float(slack.max()), 0.0)
    kin = 0.5 * V.rho * ((V.u_f - U.u_f) ** 2).sum(axis=0)
    flu = 0.5 * ((V.u - U.u) ** 2).sum(axis=0)
    parts = {"kinetic": float(kin.mean()), "fluid": float(flu.mean()), "pressure": float(P.mean())}
    return parts["kinetic"] + parts["fluid"] + parts["pressure"], parts


def relative_flux_norm(V: MacroFields, U: MacroFields, rho_min: float = 1e-8) -> float:
    H, _ = relative_entropy(V, U, rho_min)
    val = float((V.rho * ((V.u_f - U.u_f) ** 2).sum(axis=0) + ((V.u - U.u) ** 2).sum(axis=0)).mean())
    if val > 2 * H + 1e-12:
        raise InvariantViolation("relative flux bound", val - 2 * H, 1e-12)
    return val


def squared_gaps(V: MacroFields, U: MacroFields) -> dict:
    """Squared L2 distances of the bulk velocity, density and fluid velocity."""
    return {
        "gap_uf": float(((V.u_f - U.u_f) ** 2).sum(axis=0).mean()),
        "gap_rho": float(((V.rho - U.rho) ** 2).mean()),
        "gap_u": float(((V.u - U.u) ** 2).sum(axis=0).mean()),
    }


# ---------------------------------------------------------------------------
# records and series


def diagnostics_record(f: DistributionField, u: FluidField, params: SimParams,
                       ws: SpectralWorkspace | None = None) -> dict:
    g = f.grid
    mac = compute_moments(f, params.rho_floor)
    xi_c = kinetic_momentum(f)
    u_c = fluid_momentum(u)
    F, D1, D2 = entropy_functionals(f, u, mac.u_f, params, ws)
    rec = {"time": f.time, "mass": f.mass()}
    for i in range(g.dim):
        rec[f"xi_c_{i}"] = float(xi_c[i])
        rec[f"u_c_{i}"] = float(u_c[i])
        rec[f"momentum_{i}"] = float(xi_c[i] + u_c[i])
    rec["kinetic_energy"] = kinetic_energy(f)
    rec["fluid_energy"] = fluid_energy(u)
    rec.update({"F": F, "D1": D1, "D2": D2})
    try:
        fl = fluctuation_energies(f, u, params.rho_floor, check=True)
        rec.update({k: fl[k] for k in ("E_P", "E_U", "E_F", "E_I", "E")})
        rec["D"] = dissipation_D(f, u, params.mu, params.rho_floor, ws)
    except NonUnitMass:
        for k in ("E_P", "E_U", "E_F", "E_I", "E", "D"):
            rec[k] = math.nan
    rec.update(lp_norms(f))
    rec["square_expansion"] = square_expansion_residual(f, u, params.rho_floor) \
        if abs(f.mass() - 1) <= UNIT_MASS_TOL else math.nan
    return rec


@dataclass
class DiagnosticsSeries:
    rows: list = field(default_factory=list)

    def append(self, rec: dict) -> None:
        self.rows.append(dict(rec))

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, math.nan) for r in self.rows], dtype=float)

    @property
    def columns(self) -> list:
        cols = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = self.columns
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c, math.nan)) for c in cols])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------
# fitting helpers


def fit_loglinear(t, y):
    """Least-squares fit of log y = a - r t; returns (rate r, R^2)."""
    t = np.asarray(t, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(coef[1]), r2


def fit_order(h, err):
    """Slope of log err against log h."""
    slope, _ = np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(err, float)), 1)
    return float(slope)
