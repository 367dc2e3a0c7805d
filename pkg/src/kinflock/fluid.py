"""Incompressible fluid: pseudo-spectral Navier-Stokes on the 2-torus and the
spatially constant 1D reduction, plus the drag exchange with the particles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import FluidField, MacroState, PhaseGrid


def coupling_source(macro: MacroState, u: FluidField, alpha: float) -> np.ndarray:
    """Drag felt by the fluid, alpha (m - rho u); zero in vacuum since it uses m."""
    return alpha * (macro.m - macro.rho[None] * u.velocity)


@dataclass
class SpectralWorkspace:
    """Wavenumbers, dealiasing mask and integrating-factor cache for an nx x nx torus."""

    nx: int
    kvec: np.ndarray = field(init=False, repr=False)
    k2: np.ndarray = field(init=False, repr=False)
    mask: np.ndarray = field(init=False, repr=False)
    keep: np.ndarray = field(init=False, repr=False)
    _factors: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.nx
        kint = np.fft.fftfreq(n, d=1.0 / n)
        kx, ky = np.meshgrid(kint, kint, indexing="ij")
        self.kvec = 2 * np.pi * np.stack([kx, ky])
        self.k2 = (self.kvec**2).sum(axis=0)
        self.mask = (np.abs(kx) <= n / 3) & (np.abs(ky) <= n / 3)
        # Nyquist lines have no Hermitian partner under projection; they are dropped
        self.keep = (np.abs(kx) < n / 2) & (np.abs(ky) < n / 2)

    def factor(self, mu: float, dt: float) -> np.ndarray:
        key = (mu, dt)
        if key not in self._factors:
            if len(self._factors) > 8:
                self._factors.clear()
            self._factors[key] = np.exp(-mu * self.k2 * dt)
        return self._factors[key]

    def fft(self, a):
        return np.fft.fft2(a, axes=(-2, -1))

    def ifft(self, a):
        return np.fft.ifft2(a, axes=(-2, -1)).real

    def project_hat(self, vh):
        """Leray projection in Fourier space; the mean mode passes through."""
        k = self.kvec
        k2 = np.where(self.k2 == 0, 1.0, self.k2)
        kdotv = (k * vh).sum(axis=0)
        return (vh - k * kdotv / k2) * self.keep

    def pressure_hat(self, gh):
        """Pressure solving lap p = div g, mean zero: p_hat = -i k.g_hat / |k|^2."""
        k2 = np.where(self.k2 == 0, 1.0, self.k2)
        ph = -1j * (self.kvec * gh).sum(axis=0) / k2
        ph[0, 0] = 0.0
        return ph

    def divergence(self, v) -> np.ndarray:
        vh = self.fft(v)
        return self.ifft(1j * (self.kvec * vh).sum(axis=0))

    def gradient(self, a) -> np.ndarray:
        """Spectral gradient of a periodic field (leading component axis appended)."""
        ah = self.fft(a)
        return self.ifft(1j * self.kvec.reshape((2,) + (1,) * (a.ndim - 2) + self.k2.shape) * ah)


def project(velocity: np.ndarray, ws: SpectralWorkspace) -> np.ndarray:
    return ws.ifft(ws.project_hat(ws.fft(velocity)))


def max_divergence(u: FluidField, ws: SpectralWorkspace | None = None) -> float:
    if u.grid.dim == 1:
        return 0.0
    ws = ws or SpectralWorkspace(u.grid.nx)
    return float(np.abs(ws.divergence(u.velocity)).max())


def velocity_gradient_sq(u: FluidField, ws: SpectralWorkspace | None = None) -> float:
    """int |grad u|^2 dx; zero for the constant 1D fluid."""
    if u.grid.dim == 1:
        return 0.0
    ws = ws or SpectralWorkspace(u.grid.nx)
    vh = ws.fft(u.velocity)
    # Parseval on the unit torus
    n2 = u.grid.nx**4
    return float((ws.k2 * (np.abs(vh) ** 2).sum(axis=0)).sum() / n2)


def _nonlinear_hat(vh, ws):
    """Fourier transform of -(omega x u), dealiased, zero mean."""
    vh = vh * ws.mask
    kx, ky = ws.kvec
    u, v = ws.ifft(vh)
    omega = ws.ifft(1j * kx * vh[1] - 1j * ky * vh[0])
    nh = ws.fft(np.stack([omega * v, -omega * u])) * ws.mask
    nh[:, 0, 0] = 0.0
    return nh


def step_ns_2d(u: FluidField, source, mu: float, dt: float,
               ws: SpectralWorkspace | None = None) -> FluidField:
    """Integrating-factor RK2 for u_t + u.grad u + grad p = mu lap u + source."""
    g = u.grid
    if g.dim != 2:
        raise ValueError("step_ns_2d needs a 2D grid")
    ws = ws or SpectralWorkspace(g.nx)
    E = ws.factor(mu, dt)
    sh = ws.fft(np.zeros((2,) + g.space_shape) if source is None else np.asarray(source, dtype=float))
    vh = ws.fft(u.velocity)

    def rhs(wh):
        return ws.project_hat(_nonlinear_hat(wh, ws) + sh)

    n0 = rhs(vh)
    vs = ws.project_hat(E * (vh + dt * n0))
    n1 = rhs(vs)
    out = ws.project_hat(E * vh + 0.5 * dt * (E * n0 + n1))
    # static pressure from the end state: lap p = div(-(u.grad u) + s)
    vel = ws.ifft(out)
    gh = _nonlinear_hat(out, ws) + sh
    q = ws.ifft(ws.pressure_hat(gh)) - 0.5 * (vel**2).sum(axis=0)
    return FluidField(g, vel, q - q.mean())


def step_fluid_1d(u_mean, macro: MacroState, alpha: float, dt: float) -> np.ndarray:
    """Exact solution of du/dt = -alpha (u int rho - int m) with the moments frozen."""
    u_mean = np.asarray(u_mean, dtype=float)
    R = float(macro.rho.mean())
    M = macro.m.reshape(macro.m.shape[0], -1).mean(axis=1)
    if alpha == 0 or R == 0:
        return u_mean.copy()
    target = M / R
    return target + (u_mean - target) * np.exp(-alpha * R * dt)


def apply_momentum_exchange(u: FluidField, dm: np.ndarray, ws: SpectralWorkspace | None = None) -> FluidField:
    """Hand the fluid the momentum ``-dm`` lost by the particles."""
    g = u.grid
    if g.dim == 1:
        total = dm.reshape(g.dim, -1).sum(axis=1) * g.dvx
        vel = u.velocity - total.reshape(g.dim, 1)
        return FluidField(g, vel, u.pressure)
    ws = ws or SpectralWorkspace(g.nx)
    vel = u.velocity + project(-dm, ws)
    return FluidField(g, vel, u.pressure)


def step_fluid_free(u: FluidField, mu: float, dt: float, ws: SpectralWorkspace | None = None) -> FluidField:
    """Fluid step without drag; a no-op for the constant 1D fluid."""
    if u.grid.dim == 1 or dt == 0:
        return u
    return step_ns_2d(u, None, mu, dt, ws)


def taylor_green(grid: PhaseGrid, amplitude: float = 1.0) -> FluidField:
    X, Y = grid.mesh_x()
    two_pi = 2 * np.pi
    vel = amplitude * np.stack([np.sin(two_pi * X) * np.cos(two_pi * Y),
                                -np.cos(two_pi * X) * np.sin(two_pi * Y)])
    return FluidField(grid, vel)


def stream_velocity(grid: PhaseGrid, coeffs) -> FluidField:
    """Divergence-free field from psi = sum a_k sin(2 pi (kx x + ky y) + phase).

    ``coeffs`` is a list of (kx, ky, amplitude, phase); u = (d_y psi, -d_x psi).
    """
    X, Y = grid.mesh_x()
    u = np.zeros(grid.space_shape)
    v = np.zeros(grid.space_shape)
    for kx, ky, a, ph in coeffs:
        arg = 2 * np.pi * (kx * X + ky * Y) + ph
        c = a * 2 * np.pi * np.cos(arg)
        u += c * ky
        v -= c * kx
    return FluidField(grid, np.stack([u, v]))
