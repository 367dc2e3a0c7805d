"""Time loops and the four experiments."""

from __future__ import annotations

import json
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import ExperimentConfig
from .coupled import CoupledState, step_coupled
from .errors import ConfigError, InvariantViolation, KinFlockError
from .fields import FluidField, PhaseGrid, SimParams, sample_maxwellian
from .fluid import SpectralWorkspace, max_divergence, stream_velocity
from .hydro import HydroState, step_hydro_coupled
from .kinetic import kinetic_dt
from .snapshot import write_snapshot

MASS_TOL = 1e-12
MOMENTUM_TOL = 1e-10
DIV_TOL = 1e-10
SQUARE_TOL = 1e-10


class SolverFailure(KinFlockError):
    """A solver error during a run, tagged with the step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


# ---------------------------------------------------------------------------
# initial data


def initial_profiles(cfg: ExperimentConfig, grid: PhaseGrid):
    """rho0 and u_f0 on the spatial grid."""
    xs = grid.mesh_x()
    two_pi = 2 * np.pi
    rho0 = 1.0 + cfg.rho_amp * np.cos(two_pi * cfg.rho_k * xs[0])
    if grid.dim == 1:
        uf0 = (cfg.uf_amp * np.sin(two_pi * xs[0]))[None]
    else:
        uf0 = cfg.uf_amp * np.stack([np.sin(two_pi * xs[1]), np.sin(two_pi * xs[0])])
    return rho0, uf0


def consensus_shift(grid: PhaseGrid, u0: float, xi_c0: float) -> float:
    """Fluid velocity near ``u0`` placing half the total momentum on a velocity cell centre."""
    target = 0.5 * (u0 + xi_c0)
    j = int(np.argmin(np.abs(grid.xi - target)))
    return 2.0 * grid.xi[j] - xi_c0


def initial_state(cfg: ExperimentConfig, grid: PhaseGrid | None = None) -> CoupledState:
    grid = grid or cfg.grid()
    rho0, uf0 = initial_profiles(cfg, grid)
    f = sample_maxwellian(rho0, uf0, grid, cfg.temperature)
    if grid.dim == 1:
        u0 = cfg.u0
        if cfg.align_consensus_to_grid:
            u0 = consensus_shift(grid, u0, float(dg.kinetic_momentum(f)[0]))
        u = FluidField.constant(grid, u0)
    else:
        u = stream_velocity(grid, cfg.u_stream) if cfg.u_stream else FluidField.constant(grid, 0.0)
    return CoupledState(f, u)


def stable_dt(cfg: ExperimentConfig, grid: PhaseGrid, params: SimParams, u: FluidField) -> float:
    if cfg.dt > 0:
        return cfg.dt
    dt = kinetic_dt(grid, params)
    if grid.dim == 2:
        umax = float(np.abs(u.velocity).max())
        if umax > 0:
            dt = min(dt, params.cfl * grid.dx / umax)
    return dt


def time_grid(cfg: ExperimentConfig, dt_max: float):
    """(n_steps, dt) honouring ``steps`` and ``t_end``."""
    if cfg.steps > 0:
        return cfg.steps, dt_max
    if cfg.t_end == 0:
        return 0, dt_max
    n = int(math.ceil(cfg.t_end / dt_max * (1 - 1e-12)))
    return n, cfg.t_end / n


# ---------------------------------------------------------------------------
# single run


def _write_common(out: Path, cfg: ExperimentConfig):
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(cfg.to_yaml())


def run_single(cfg: ExperimentConfig, out=None, write: bool = True, keep_states: bool = False) -> dict:
    """Run the coupled system; returns the summary (also written to ``summary.json``)."""
    out = Path(out or cfg.out)
    grid = cfg.grid()
    params = cfg.params()
    state = initial_state(cfg, grid)
    ws = SpectralWorkspace(grid.nx) if grid.dim == 2 else None
    dt_max = stable_dt(cfg, grid, params, state.u)
    n_steps, dt = time_grid(cfg, dt_max)
    if write:
        _write_common(out, cfg)
    series = dg.DiagnosticsSeries()
    states = [(state.f, state.u)] if keep_states else None

    m0 = state.f.mass()
    p0 = dg.kinetic_momentum(state.f) + dg.fluid_momentum(state.u)
    worst = {"mass_drift": 0.0, "momentum_drift": 0.0, "energy_residual": 0.0,
             "square_expansion": 0.0, "divergence": 0.0, "min_f": float(state.f.values.min())}

    def record(st, e_res):
        rec = dg.diagnostics_record(st.f, st.u, params, ws)
        rec["energy_residual"] = e_res
        series.append(rec)
        if not math.isnan(rec["square_expansion"]):
            worst["square_expansion"] = max(worst["square_expansion"], rec["square_expansion"])

    def snapshot(st, k):
        if write:
            write_snapshot(out / f"snap_{k:06d}.flns", (st.f, st.u))

    record(state, 0.0)
    snapshot(state, 0)
    log = open(out / "steps.jsonl", "w") if write else None
    status, error = "pass", None
    try:
        for k in range(1, n_steps + 1):
            t0 = _time.perf_counter()
            try:
                new = step_coupled(state, params, dt, ws, scheme=cfg.scheme)
            except KinFlockError as exc:
                snapshot(state, k - 1)
                raise SolverFailure(k, exc) from exc
            diag_step = k % cfg.diagnostics_every == 0 or k == n_steps
            e_res = math.nan
            if diag_step:
                e_res = dg.energy_balance_residual(state.f, new.f, state.u, new.u, params, dt, ws)
                worst["energy_residual"] = max(worst["energy_residual"], e_res)
            state = new
            if keep_states:
                states.append((state.f, state.u))
            mass_drift = abs(state.f.mass() - m0) / m0
            mom = dg.kinetic_momentum(state.f) + dg.fluid_momentum(state.u)
            worst["mass_drift"] = max(worst["mass_drift"], mass_drift)
            worst["momentum_drift"] = max(worst["momentum_drift"], float(np.abs(mom - p0).max()))
            worst["min_f"] = min(worst["min_f"], float(state.f.values.min()))
            if grid.dim == 2:
                worst["divergence"] = max(worst["divergence"], max_divergence(state.u, ws))
            if diag_step:
                record(state, e_res)
            if cfg.snapshot_every and k % cfg.snapshot_every == 0 and k != n_steps:
                snapshot(state, k)
            if log:
                log.write(json.dumps({"step": k, "time": state.time, "dt": dt,
                                      "operators": ["TransportX", "DriftFluid", "CollisionFP"],
                                      "cfl_transport": 0.5 * dt * (grid.xi_max - 0.5 * grid.dxi) / grid.dx,
                                      "wall_time": _time.perf_counter() - t0}) + "\n")
        if n_steps:
            snapshot(state, n_steps)
    except SolverFailure as exc:
        status, error = "solver_error", str(exc)
    finally:
        if log:
            log.close()

    violations = []
    if status == "pass":
        checks = [("mass_drift", worst["mass_drift"], MASS_TOL),
                  ("momentum_drift", worst["momentum_drift"], MOMENTUM_TOL),
                  ("square_expansion", worst["square_expansion"], SQUARE_TOL),
                  ("divergence", worst["divergence"], DIV_TOL),
                  ("negative_f", max(0.0, -worst["min_f"]), 0.0)]
        for name, val, lim in checks:
            if val > lim:
                violations.append(str(InvariantViolation(name, val, lim)))
        if violations:
            status = "violation"
    summary = {"experiment": cfg.experiment, "status": status, "error": error,
               "violations": violations, "steps": n_steps, "dt": dt,
               "t_final": state.time, **worst}
    if write:
        series.write_csv(out / "diagnostics.csv")
        dg.write_json(out / "summary.json", summary)
    summary["series"] = series
    if keep_states:
        summary["states"] = states
    return summary


# ---------------------------------------------------------------------------
# epsilon sweep


def hydro_initial(cfg: ExperimentConfig, grid: PhaseGrid, u: FluidField) -> HydroState:
    rho0, uf0 = initial_profiles(cfg, grid)
    return HydroState(rho0, rho0[None] * uf0, u.copy())


def sweep_case(cfg_dict: dict, eps: float) -> dict:
    """One epsilon of the sweep: scaled kinetic run against the limit system on the same grid."""
    cfg = ExperimentConfig(**cfg_dict)
    grid = cfg.grid()
    params = cfg.params(epsilon=eps)
    state = initial_state(cfg, grid)
    hyd = hydro_initial(cfg, grid, state.u)
    ws = SpectralWorkspace(grid.nx) if grid.dim == 2 else None
    n, dt = time_grid(cfg, stable_dt(cfg, grid, params, state.u))
    rows = []
    sup = {"gap_uf": 0.0, "gap_rho": 0.0, "gap_u": 0.0, "gap_sum": 0.0, "H": 0.0}
    worst_square = [0.0]

    def compare(st, h):
        V = dg.MacroFields.from_kinetic(st.f, st.u, params.rho_floor)
        U = dg.MacroFields.from_hydro(h)
        gaps = dg.squared_gaps(V, U)
        H, _ = dg.relative_entropy(V, U)
        gaps["gap_sum"] = gaps["gap_uf"] + gaps["gap_rho"] + gaps["gap_u"]
        gaps["H"] = H
        for k in sup:
            sup[k] = max(sup[k], gaps[k])
        rows.append({"time": st.time, **gaps})
        worst_square[0] = max(worst_square[0], dg.square_expansion_residual(st.f, st.u, params.rho_floor))

    compare(state, hyd)
    for _ in range(n):
        state = step_coupled(state, params, dt, ws, scheme=cfg.scheme)
        hyd = step_hydro_coupled(hyd, params.mu, dt, ws, limiter=cfg.limiter)
        compare(state, hyd)
    return {"epsilon": eps, "steps": n, "dt": dt, **sup, "square_expansion": worst_square[0],
            "rows": rows}


def run_epsilon_sweep(cfg: ExperimentConfig, out=None, threads: int = 1, write: bool = True) -> dict:
    out = Path(out or cfg.out)
    if write:
        _write_common(out, cfg)
    eps_list = [float(e) for e in cfg.epsilons]
    cfg_dict = cfg.to_dict()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(sweep_case, [cfg_dict] * len(eps_list), eps_list))
    else:
        results = [sweep_case(cfg_dict, e) for e in eps_list]

    table = dg.DiagnosticsSeries()
    for r in results:
        table.append({k: r[k] for k in ("epsilon", "gap_uf", "gap_rho", "gap_u", "gap_sum", "H", "steps", "dt")})
    errs = [r["gap_sum"] for r in results]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    slope = dg.fit_order(eps_list, errs) if len(eps_list) > 1 and min(errs) > 0 else math.nan
    status = "pass" if decreasing and slope >= 0.5 else "violation"
    summary = {"experiment": "epsilon_sweep", "status": status, "epsilons": eps_list,
               "gap_sum": errs, "strictly_decreasing": decreasing, "slope": slope,
               "square_expansion": max(r["square_expansion"] for r in results),
               "slopes": {k: dg.fit_order(eps_list, [r[k] for r in results])
                          for k in ("gap_uf", "gap_rho", "gap_u", "H")
                          if len(eps_list) > 1 and min(r[k] for r in results) > 0},
               "violations": [] if status == "pass" else ["epsilon sweep order/monotonicity"]}
    if write:
        table.write_csv(out / "sweep.csv")
        for i, r in enumerate(results):
            s = dg.DiagnosticsSeries()
            for row in r["rows"]:
                s.append(row)
            s.write_csv(out / f"case_{i:02d}_gaps.csv")
        dg.write_json(out / "summary.json", summary)
    summary["table"] = table
    return summary


# ---------------------------------------------------------------------------
# decay study


def run_decay_study(cfg: ExperimentConfig, out=None, write: bool = True) -> dict:
    params = cfg.params()
    if params.coeff_diff != 0 or params.coeff_fluid != 1 or params.coeff_align != 1:
        raise ConfigError("the decay study needs sigma = 0 and alpha = beta = 1")
    out = Path(out or cfg.out)
    res = run_single(cfg, out, write=write)
    if res["status"] == "solver_error":
        return res
    series = res["series"]
    t = series.column("time")
    E = series.column("E")
    D = series.column("D")
    dim = cfg.dim
    uc = np.stack([series.column(f"u_c_{i}") for i in range(dim)])
    xc = np.stack([series.column(f"xi_c_{i}") for i in range(dim)])
    half = 0.5 * (uc[:, 0] + xc[:, 0])
    consensus_err = float(np.abs(uc[:, -1] - half).max())
    momentum_res = float(np.abs((uc + xc) - (uc[:, :1] + xc[:, :1])).max())
    report = {"experiment": "decay_study", "E0": float(E[0]), "E_final": float(E[-1]),
              "consensus_error": consensus_err, "momentum_residual": momentum_res}
    if E[0] <= 1e-14:
        report.update({"degenerate": True, "note": "consensus start: E vanishes, no fit",
                       "monotone": True, "energy_rate": math.nan, "r2": math.nan,
                       "alignment_rate": math.nan, "sup_E_over_D": math.nan})
    else:
        inc = np.diff(E)
        monotone = bool(np.all(inc <= 1e-10))
        tail = t >= t[-1] * (1 - cfg.fit_tail_fraction)
        ok = tail & (E > 0)
        rate, r2 = dg.fit_loglinear(t[ok], E[ok])
        gap = np.sqrt(((uc - xc) ** 2).sum(axis=0))
        good = tail & (gap > 0)
        arate = dg.fit_loglinear(t[good], gap[good])[0] if good.sum() > 2 else math.nan
        ratio = float(np.max(np.where(D > 0, E / np.where(D > 0, D, 1.0), np.inf)))
        report.update({"degenerate": False, "monotone": monotone,
                       "max_increase": float(inc.max()) if inc.size else 0.0,
                       "energy_rate": rate, "r2": r2, "alignment_rate": arate,
                       "sup_E_over_D": ratio})
    violations = list(res["violations"])
    if not report["monotone"]:
        violations.append(str(InvariantViolation("E increase", report["max_increase"], 1e-10)))
    report["violations"] = violations
    report["status"] = "pass" if not violations else "violation"
    if write:
        dg.write_json(out / "decay_report.json", report)
        dg.write_json(out / "summary.json", {**{k: v for k, v in res.items()
                                                 if k not in ("series", "states")}, "decay": report,
                                              "status": report["status"]})
    report["series"] = series
    return report


# ---------------------------------------------------------------------------
# conservation suite


def lp_growth_rate(cfg: ExperimentConfig, nxi: int = 128, p: float = 2.0, window: float | None = None) -> dict:
    """Fitted exponential growth rate of ||f||_p^p for sigma = 0, alpha = beta = 1, d = 1."""
    window = cfg.lp_window if window is None else window
    c = ExperimentConfig(**{**cfg.to_dict(), "dim": 1, "nxi": nxi, "mode": "physical",
                            "alpha": 1.0, "beta": 1.0, "sigma": 0.0, "t_end": window,
                            "steps": 0, "dt": 0.0})
    grid = c.grid()
    params = c.params()
    state = initial_state(c, grid)
    n, dt = time_grid(c, stable_dt(c, grid, params, state.u))
    ts, norms = [0.0], [dg.lp_norm_p(state.f, p)]
    for _ in range(n):
        state = step_coupled(state, params, dt, scheme=c.scheme)
        ts.append(state.time)
        norms.append(dg.lp_norm_p(state.f, p))
    rate, r2 = dg.fit_loglinear(ts, norms)
    target = grid.dim * (params.alpha + params.beta) * (p - 1)
    return {"rate": -rate, "target": target, "r2": r2, "rel_error": abs(-rate - target) / target,
            "steps": n, "dt": dt}


def run_conservation_suite(cfg: ExperimentConfig, out=None, write: bool = True) -> dict:
    out = Path(out or cfg.out)
    if write:
        _write_common(out, cfg)
    levels = []
    for n in cfg.suite_levels:
        c = ExperimentConfig(**{**cfg.to_dict(), "nx": int(n), "nxi": int(n), "steps": 0, "dt": 0.0})
        r = run_single(c, write=False)
        levels.append({"n": int(n), "status": r["status"], "dt": r["dt"],
                       **{k: r[k] for k in ("mass_drift", "momentum_drift", "energy_residual",
                                            "square_expansion", "divergence")}})
    order = math.nan
    if len(levels) > 1:
        order = dg.fit_order([1.0 / lv["n"] for lv in levels], [lv["energy_residual"] for lv in levels])
    lp = lp_growth_rate(cfg)
    violations = []
    for lv in levels:
        if lv["status"] != "pass":
            violations.append(f"level {lv['n']}: {lv['status']}")
    if len(levels) > 1 and not order >= 1.0:
        violations.append(f"energy residual order {order:.3f} below 1")
    if lp["rel_error"] > 0.1:
        violations.append(f"Lp growth rate {lp['rate']:.4f} not within 10% of {lp['target']}")
    summary = {"experiment": "conservation", "levels": levels, "energy_residual_order": order,
               "lp": lp, "violations": violations,
               "status": "pass" if not violations else "violation"}
    if write:
        table = dg.DiagnosticsSeries()
        for lv in levels:
            table.append({k: v for k, v in lv.items() if k != "status"})
        table.write_csv(out / "diagnostics.csv")
        dg.write_json(out / "summary.json", summary)
    return summary
