import math

import numpy as np
import pytest

from kinflock import diagnostics as dg
from kinflock.config import ExperimentConfig
from kinflock.coupled import CoupledState, step_coupled
from kinflock.errors import ConfigError
from kinflock.fields import DistributionField, FluidField, PhaseGrid, SimParams
from kinflock.kinetic import kinetic_dt
from kinflock.runner import (consensus_shift, hydro_initial, initial_state, run_decay_study, run_epsilon_sweep,
                             run_single, time_grid)


def tiny(**kw):
    base = dict(nx=16, nxi=16, t_end=0.05)
    return ExperimentConfig(**{**base, **kw}).validate()


def test_time_grid():
    assert time_grid(tiny(steps=7), 0.01) == (7, 0.01)
    assert time_grid(tiny(t_end=0.0), 0.01) == (0, 0.01)
    n, dt = time_grid(tiny(t_end=0.05), 0.011)
    assert n == 5 and dt == pytest.approx(0.01)
    # an exact multiple does not gain a step from round-off
    assert time_grid(tiny(t_end=0.3), 0.1)[0] == 3


def test_consensus_shift_lands_on_cell_centre():
    g = PhaseGrid(1, 16, 32)
    xi_c0 = 0.0137
    u0 = consensus_shift(g, 0.3, xi_c0)
    half = 0.5 * (u0 + xi_c0)
    assert np.min(np.abs(g.xi - half)) <= 1e-15
    assert abs(u0 - 0.3) <= g.dxi
    cfg = tiny(u0=0.3, align_consensus_to_grid=True)
    st = initial_state(cfg)
    assert float(st.u.velocity[0, 0]) == pytest.approx(consensus_shift(cfg.grid(), 0.3,
                                                                        float(dg.kinetic_momentum(st.f)[0])))


def test_consensus_state_stays_at_consensus():
    # particles concentrated on one velocity cell, fluid moving with them
    g = PhaseGrid(1, 16, 16)
    j = 9
    rho = 1 + 0.3 * np.cos(2 * np.pi * g.x)
    v = np.zeros(g.shape)
    v[:, j] = rho / g.dxi
    st = CoupledState(DistributionField(g, v), FluidField.constant(g, g.xi[j]))
    params = SimParams(sigma=0.0)
    dt = kinetic_dt(g, params)
    for _ in range(10):
        st = step_coupled(st, params, dt)
    fl = dg.fluctuation_energies(st.f, st.u)
    for k in ("E_P", "E_U", "E_F", "E_I", "E"):
        assert abs(fl[k]) <= 1e-12, k


def test_zero_horizon_run(tmp_path):
    res = run_single(tiny(t_end=0.0), out=tmp_path)
    assert res["steps"] == 0 and res["status"] == "pass"
    assert len(res["series"].rows) == 1
    assert sorted(p.name for p in tmp_path.glob("*.flns")) == ["snap_000000.flns"]


def test_single_run_invariants_and_snapshots(tmp_path):
    res = run_single(tiny(snapshot_every=2), out=tmp_path, keep_states=True)
    assert res["status"] == "pass"
    assert res["mass_drift"] <= 1e-12 and res["momentum_drift"] <= 1e-10
    assert res["min_f"] >= 0
    assert len(res["states"]) == res["steps"] + 1
    assert res["t_final"] == pytest.approx(0.05)
    snaps = sorted(p.name for p in tmp_path.glob("*.flns"))
    assert snaps[0] == "snap_000000.flns" and snaps[-1] == f"snap_{res['steps']:06d}.flns"


def test_equilibrium_run_has_zero_energy_residual():
    # sigma = alpha + beta with a centred Maxwellian and a fluid at rest
    cfg = tiny(xi_max=8.0, nxi=32, sigma=2.0, rho_amp=0.0, uf_amp=0.0, u0=0.0, t_end=0.1)
    res = run_single(cfg, write=False)
    assert res["status"] == "pass"
    assert res["energy_residual"] <= 1e-10


def test_two_dimensional_run_keeps_divergence():
    cfg = tiny(dim=2, nxi=12, nx=8, u_stream=[[1, 1, 0.02, 0.0]], t_end=0.02)
    res = run_single(cfg, write=False)
    assert res["status"] == "pass"
    assert res["divergence"] <= 1e-10


def test_runs_are_deterministic():
    a = run_single(tiny(), write=False)["series"].to_csv()
    b = run_single(tiny(), write=False)["series"].to_csv()
    assert a == b


def test_hydro_initial_matches_kinetic_moments():
    cfg = tiny(xi_max=8.0, nxi=32)
    st = initial_state(cfg)
    V = dg.MacroFields.from_kinetic(st.f, st.u)
    U = dg.MacroFields.from_hydro(hydro_initial(cfg, cfg.grid(), st.u))
    gaps = dg.squared_gaps(V, U)
    assert max(gaps.values()) <= 1e-14
    same = dg.squared_gaps(U, U)
    assert max(same.values()) == 0.0


def test_small_sweep_writes_tables(tmp_path):
    cfg = tiny(mode="scaled", epsilons=[0.2, 0.1], t_end=0.05)
    res = run_epsilon_sweep(cfg, out=tmp_path)
    assert res["epsilons"] == [0.2, 0.1]
    assert len(res["gap_sum"]) == 2 and all(g > 0 for g in res["gap_sum"])
    assert res["square_expansion"] <= 1e-10
    assert (tmp_path / "sweep.csv").exists()
    assert (tmp_path / "case_00_gaps.csv").exists() and (tmp_path / "case_01_gaps.csv").exists()


def test_decay_study_short_horizon(tmp_path):
    cfg = tiny(experiment="decay_study", sigma=0.0, u0=0.3, align_consensus_to_grid=True, t_end=1.0,
               nxi=24, diagnostics_every=5)
    rep = run_decay_study(cfg, out=tmp_path)
    assert rep["status"] == "pass" and rep["monotone"]
    assert rep["E_final"] < rep["E0"]
    assert rep["momentum_residual"] <= 1e-10
    assert (tmp_path / "decay_report.json").exists()


def test_decay_study_needs_pure_alignment():
    with pytest.raises(ConfigError):
        run_decay_study(tiny(sigma=1.0), write=False)


def test_decay_rate_is_finite_and_positive():
    cfg = tiny(sigma=0.0, u0=0.3, t_end=1.0, nxi=24)
    rep = run_decay_study(cfg, write=False)
    assert math.isfinite(rep["energy_rate"]) and rep["energy_rate"] > 0
