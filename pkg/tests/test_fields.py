import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinflock.errors import TailOverflow
from kinflock.fields import (DistributionField, FluidField, PhaseGrid, SimParams, compute_moments,
                             maxwellian_values, moment_interpolation_check, sample_maxwellian,
                             tail_fraction, unit_ball_volume)

# Frozen oracle values: 30-digit adaptive quadrature of the unit Gaussian on the
# truncated velocity interval (mpmath.quad).
TRUNC_SECOND_MOMENT_6 = 0.999999927089405658
TRUNC_SHIFTED_MEAN_6 = 0.499999892569353192  # u0 = 0.5, |xi| <= 6
TRUNC_SHIFTED_MEAN_8 = 0.499999999999756650  # u0 = 0.5, |xi| <= 8
ABS_FIRST_MOMENT = math.sqrt(2 / math.pi)


def uniform(grid, rho=1.0, u=0.0, temperature=1.0):
    rho_p = np.full(grid.space_shape, rho)
    u_p = np.full((grid.dim,) + grid.space_shape, u)
    return sample_maxwellian(rho_p, u_p, grid, temperature)


# ---------------------------------------------------------------------------
# grid and parameter validation


@pytest.mark.parametrize("kw", [dict(dim=3, nx=8, nxi=8), dict(dim=1, nx=6, nxi=7),
                                dict(dim=1, nx=2, nxi=8), dict(dim=2, nx=8, nxi=8, xi_max=0.0)])
def test_grid_rejects_invalid(kw):
    with pytest.raises(ValueError):
        PhaseGrid(**kw)


def test_grid_geometry():
    g = PhaseGrid(2, 8, 12, xi_max=3.0)
    assert g.dx == 1 / 8 and g.dxi == 0.5
    assert g.shape == (8, 8, 12, 12)
    assert g.xi[0] == -2.75 and g.xi[-1] == 2.75
    np.testing.assert_allclose(g.x, (np.arange(8) + 0.5) / 8)


@pytest.mark.parametrize("kw", [dict(alpha=-1), dict(mu=-0.1), dict(cfl=0.0), dict(cfl=0.95),
                                dict(mode="scaled", epsilon=0.0), dict(mode="other")])
def test_params_reject_invalid(kw):
    with pytest.raises(ValueError):
        SimParams(**kw)


def test_scaled_params():
    p = SimParams.scaled(0.01)
    assert p.coeff_align == pytest.approx(100) and p.coeff_diff == pytest.approx(100)
    assert p.coeff_fluid == 1.0


# ---------------------------------------------------------------------------
# moments


def test_vacuum_moments_are_zero():
    g = PhaseGrid(1, 8, 16)
    mac = compute_moments(DistributionField(g, np.zeros(g.shape)))
    assert not mac.rho.any() and not mac.m.any() and not mac.u_f.any()


def test_single_cell_concentration():
    g = PhaseGrid(1, 8, 16)
    v = np.zeros(g.shape)
    j = 11
    v[3, j] = 1.0 / g.dxi
    mac = compute_moments(DistributionField(g, v))
    assert mac.rho[3] == pytest.approx(1.0, abs=1e-15)
    assert mac.u_f[0, 3] == pytest.approx(g.xi[j], abs=1e-14)
    assert abs(mac.Ptilde[0, 0, 3]) <= 1e-14
    assert mac.u_f[0, 2] == 0.0


def test_maxwellian_moments_match_oracle():
    g = PhaseGrid(1, 4, 64, xi_max=6.0)
    mac = compute_moments(uniform(g))
    np.testing.assert_allclose(mac.rho, 1.0, atol=1e-6)
    np.testing.assert_allclose(mac.second[0, 0], 1.0, atol=1e-6)
    np.testing.assert_allclose(mac.second[0, 0], TRUNC_SECOND_MOMENT_6, atol=1e-9)


def test_sampled_density_is_exact():
    g = PhaseGrid(1, 16, 32)
    np.testing.assert_allclose(compute_moments(uniform(g)).rho, 1.0, rtol=0, atol=1e-15)


def test_shifted_maxwellian_mean():
    g6 = PhaseGrid(1, 4, 64, xi_max=6.0)
    u6 = compute_moments(uniform(g6, u=0.5)).u_f
    np.testing.assert_allclose(u6, TRUNC_SHIFTED_MEAN_6, atol=1e-8)
    g8 = PhaseGrid(1, 4, 64, xi_max=8.0)
    u8 = compute_moments(uniform(g8, u=0.5)).u_f
    np.testing.assert_allclose(u8, TRUNC_SHIFTED_MEAN_8, atol=1e-8)
    assert np.abs(u8 - 0.5).max() <= 1e-8


def test_cosine_density_total_mass():
    g = PhaseGrid(1, 32, 32)
    f = sample_maxwellian(1 + 0.1 * np.cos(2 * np.pi * g.x), np.zeros((1, 32)), g)
    assert abs(f.mass() - 1.0) <= 1e-14


def test_maxwellian_2d_moments():
    g = PhaseGrid(2, 4, 32)
    mac = compute_moments(uniform(g, u=0.25))
    np.testing.assert_allclose(mac.rho, 1.0, atol=1e-14)
    np.testing.assert_allclose(mac.u_f, 0.25, atol=1e-6)
    np.testing.assert_allclose(mac.Ptilde[0, 1], 0.0, atol=1e-12)


def test_tail_overflow():
    g = PhaseGrid(1, 4, 32, xi_max=6.0)
    with pytest.raises(TailOverflow):
        uniform(g, u=5.0)


def test_negative_density_rejected():
    g = PhaseGrid(1, 4, 16)
    with pytest.raises(ValueError):
        sample_maxwellian(-np.ones(4), np.zeros((1, 4)), g)


def test_fluid_field_shapes():
    g = PhaseGrid(2, 8, 8)
    u = FluidField.constant(g, [1.0, -2.0])
    assert u.velocity.shape == (2, 8, 8)
    np.testing.assert_array_equal(u.mean(), [1.0, -2.0])
    with pytest.raises(ValueError):
        FluidField(g, np.zeros((1, 8, 8)))


# ---------------------------------------------------------------------------
# moment interpolation


def test_interpolation_zero_function():
    g = PhaseGrid(1, 4, 16)
    res = moment_interpolation_check(DistributionField(g, np.zeros(g.shape)), 1, 2)
    assert np.all(res <= 0)


def test_interpolation_maxwellian():
    g = PhaseGrid(1, 4, 64)
    f = uniform(g)
    res = moment_interpolation_check(f, 1, 2)
    assert np.all(res <= 0)
    # oracle: m_1 = E|xi| plus the midpoint-rule correction h^2 G(0) / 12 from the
    # kink of |xi| at a cell face (Euler-Maclaurin), m_2 = 1 for the unit Gaussian
    sup = f.values.max()
    m1 = ABS_FIRST_MOMENT + g.dxi**2 / (12 * math.sqrt(2 * math.pi))
    expected = m1 - (unit_ball_volume(1) * sup + 1.0)
    np.testing.assert_allclose(res, expected, atol=1e-5)


def test_interpolation_single_cell():
    g = PhaseGrid(1, 4, 16)
    v = np.zeros(g.shape)
    j = 9
    v[:, j] = 1.0
    res = moment_interpolation_check(DistributionField(g, v), 0, 2)
    # one-cell sums: m_0 = dxi, m_2 = xi_j^2 dxi
    m0, m2 = g.dxi, g.xi[j] ** 2 * g.dxi
    expected = m0 - (2.0 + 1.0) * m2 ** (1 / 3)
    np.testing.assert_allclose(res, expected, rtol=1e-14)
    assert np.all(res <= 0)


def test_interpolation_needs_ordered_orders():
    g = PhaseGrid(1, 4, 16)
    with pytest.raises(ValueError):
        moment_interpolation_check(uniform(g), 2, 2)


def test_unit_ball_volume():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


# ---------------------------------------------------------------------------
# properties


def contained_field(seed, dim=1, nx=8, nxi=16):
    """Random nonnegative field with Gaussian tails well inside the velocity box."""
    g = PhaseGrid(dim, nx, nxi)
    rng = np.random.default_rng(seed)
    env = maxwellian_values(g, np.ones(g.space_shape), np.zeros((dim,) + g.space_shape), 0.5)
    return DistributionField(g, env * rng.uniform(0.0, 2.0, g.shape))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 5), st.floats(0, 5))
def test_moments_are_linear(seed, a, b):
    f1 = contained_field(seed)
    f2 = contained_field(seed + 1)
    m1, m2 = compute_moments(f1), compute_moments(f2)
    mc = compute_moments(f1.with_values(a * f1.values + b * f2.values))
    for name in ("rho", "m", "second"):
        lhs = getattr(mc, name)
        rhs = a * getattr(m1, name) + b * getattr(m2, name)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(-8, 8), st.integers(1, 2))
def test_galilean_shift(j, dim):
    g = PhaseGrid(dim, 4, 32, xi_max=8.0)
    base = j * 0.1
    u0 = compute_moments(uniform(g, u=base)).u_f
    u1 = compute_moments(uniform(g, u=base + g.dxi)).u_f
    np.testing.assert_allclose(u1 - u0, g.dxi, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2))
def test_momentum_equals_rho_uf(seed, dim):
    f = contained_field(seed, dim=dim, nx=4, nxi=8)
    mac = compute_moments(f)
    live = mac.rho > 1e-12
    np.testing.assert_allclose((mac.rho * mac.u_f)[:, live], mac.m[:, live], rtol=1e-13, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2), st.integers(1, 3), st.integers(1, 2))
def test_moment_interpolation_holds(seed, k1, gap, dim):
    f = contained_field(seed, dim=dim, nx=4, nxi=16)
    assert np.all(moment_interpolation_check(f, k1, k1 + gap) <= 1e-12)


def test_ptilde_is_psd():
    f = contained_field(3, dim=2, nx=4, nxi=12)
    P = compute_moments(f).Ptilde
    mats = np.moveaxis(P.reshape(2, 2, -1), -1, 0)
    np.testing.assert_allclose(mats, np.transpose(mats, (0, 2, 1)))
    assert np.linalg.eigvalsh(mats).min() >= -1e-12


def test_tail_fraction_of_compact_field():
    g = PhaseGrid(1, 4, 16)
    v = np.zeros(g.shape)
    v[:, 0] = 1.0
    v[:, 8] = 1.0
    assert tail_fraction(DistributionField(g, v)) == pytest.approx(0.5)
