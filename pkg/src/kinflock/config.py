"""Experiment configuration: one flat YAML mapping, overridable from the CLI.

Precedence (lowest to highest): built-in defaults, experiment defaults,
``--config`` file, ``--override key=value`` flags.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .fields import PhaseGrid, SimParams

EXPERIMENTS = ("single_run", "conservation", "epsilon_sweep", "decay_study")


@dataclass
class ExperimentConfig:
    experiment: str = "single_run"
    # grid
    dim: int = 1
    nx: int = 64
    nxi: int = 64
    xi_max: float = 6.0
    # model
    mode: str = "physical"
    alpha: float = 1.0
    beta: float = 1.0
    sigma: float = 1.0
    mu: float = 0.05
    epsilon: float = 1.0
    rho_floor: float = 1e-12
    cfl: float = 0.4
    # initial data: rho0 = 1 + rho_amp cos(2 pi rho_k x1), u_f0 = uf_amp sin(2 pi x1) e_1
    rho_amp: float = 0.2
    rho_k: int = 1
    uf_amp: float = 0.1
    temperature: float = 1.0
    u0: float = 0.0  # 1D fluid velocity
    u_stream: list = field(default_factory=list)  # 2D: [[kx, ky, amplitude, phase], ...]
    align_consensus_to_grid: bool = False
    # time loop
    t_end: float = 0.5
    steps: int = 0  # > 0 fixes the step count; dt = t_end / steps unless t_end is 0
    dt: float = 0.0  # > 0 overrides the CFL choice
    snapshot_every: int = 0  # 0: first and last only
    diagnostics_every: int = 1
    scheme: str = "auto"
    limiter: str = "mc"
    # sweeps
    epsilons: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    # decay study
    fit_tail_fraction: float = 0.5
    # conservation suite
    suite_levels: list = field(default_factory=lambda: [32, 64])
    lp_window: float = 0.5
    seed: int = 0
    out: str = "run"

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if not 0 <= self.rho_amp < 1:
            raise ConfigError("rho_amp must lie in [0, 1)")
        if self.rho_k < 1:
            raise ConfigError("rho_k must be a positive integer")
        if self.t_end < 0:
            raise ConfigError("t_end must be nonnegative")
        eps = list(self.epsilons)
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilons must be positive and strictly decreasing")
        if self.scheme not in ("auto", "exponential", "muscl"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.limiter not in ("mc", "minmod", "none"):
            raise ConfigError(f"unknown limiter {self.limiter!r}")
        if self.steps < 0 or self.dt < 0:
            raise ConfigError("steps and dt must be nonnegative")
        try:
            self.grid()
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def grid(self) -> PhaseGrid:
        return PhaseGrid(self.dim, self.nx, self.nxi, self.xi_max)

    def params(self, epsilon: float | None = None) -> SimParams:
        if self.mode == "scaled" or epsilon is not None:
            return SimParams.scaled(self.epsilon if epsilon is None else epsilon, mu=self.mu,
                                    rho_floor=self.rho_floor, cfl=self.cfl)
        return SimParams(alpha=self.alpha, beta=self.beta, sigma=self.sigma, mu=self.mu,
                         epsilon=self.epsilon, mode=self.mode, rho_floor=self.rho_floor, cfl=self.cfl)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


EXPERIMENT_DEFAULTS = {
    "single_run": {},
    "conservation": {"t_end": 0.2},
    "epsilon_sweep": {"mode": "scaled", "t_end": 0.5},
    "decay_study": {"sigma": 0.0, "alpha": 1.0, "beta": 1.0, "t_end": 20.0, "nx": 32,
                    "u0": 0.3, "align_consensus_to_grid": True, "diagnostics_every": 10},
}


def _coerce(name: str, value, current):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name} expects a boolean")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{name} expects an integer")
    if isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{name} expects a number")
    if isinstance(current, list):
        if isinstance(value, list):
            return value
        raise ConfigError(f"{name} expects a list")
    if isinstance(current, str):
        return str(value)
    return value


def apply_mapping(cfg: ExperimentConfig, mapping: dict) -> ExperimentConfig:
    known = {f.name for f in fields(cfg)}
    for k, v in mapping.items():
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(v, dict):
            raise ConfigError(f"config must be flat; {k!r} is a mapping")
        setattr(cfg, k, _coerce(k, v, getattr(cfg, k)))
    return cfg


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}") from exc
    return key.strip(), value


def load_config(experiment: str, path=None, overrides=(), out=None) -> ExperimentConfig:
    cfg = ExperimentConfig(experiment=experiment)
    apply_mapping(cfg, EXPERIMENT_DEFAULTS.get(experiment, {}))
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        data.pop("experiment", None)
        apply_mapping(cfg, data)
    apply_mapping(cfg, dict(parse_override(o) for o in overrides))
    if out is not None:
        cfg.out = str(out)
    return cfg.validate()
