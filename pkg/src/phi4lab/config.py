"""Experiment configuration as nested dataclasses with strict JSON loading."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

EXPERIMENTS = ("spectrum", "green-bounds", "l2-scaling", "nelson", "correlations", "counterterm", "limiting",
               "t-gap", "fk-validate", "nonsolve-demo", "determinism", "all")


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    L: float = 2.5
    n: int = 40
    boundary: str = "dirichlet"


@dataclass
class PotentialConfig:
    kind: str = "power"
    theta: float = 12.0
    C: float = 1.0
    gamma: float = 0.9
    kappa: float = 4.0


@dataclass
class SpectralConfig:
    k_max: Optional[int] = None
    tol_eig: float = 1e-9
    s: float = 1.5


@dataclass
class MCConfig:
    batch_size: int = 100000
    seed: int = 20240611
    workers: int = 1
    blocks: int = 50
    chunk: int = 4096


@dataclass
class SweepConfig:
    eps_over_a: list = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    nu: list = field(default_factory=lambda: [0.001, 0.00316, 0.01, 0.0316, 0.1])
    N: list = field(default_factory=lambda: [8.0, 16.0, 32.0, 64.0, 128.0])
    kappa: list = field(default_factory=lambda: [4.0, 16.0, 64.0, 256.0])


@dataclass
class BoundsConfig:
    truncation_N: list = field(default_factory=lambda: [4.0, 16.0, 64.0])
    min_sep: float = 2.0
    floor_rel: float = 1e-12
    tau_inv_a: int = 64
    tau_L: float = 1.5
    tau_periodic_L: float = 4.0


@dataclass
class L2Config:
    eps_over_a: float = 4.0
    ratio: float = 4.0
    coarse_n: int = 19
    toy_L: float = 1.0
    toy_n: int = 8
    toy_kappa: float = 1.0
    toy_theta: float = 2.0


@dataclass
class MCPhysicsConfig:
    N: float = 64.0
    eps_over_a: float = 4.0
    extra_seeds: int = 2
    decay_pairs: int = 50
    upsilon_c: float = 1.0


@dataclass
class CountertermConfig:
    kappa: float = 16.0
    eps_over_a: float = 4.0
    nu: float = 0.05
    tol: float = 1e-10
    max_iter: int = 200
    probe_pairs: int = 10
    probe_r: float = 0.5
    small_kappa: float = 0.01
    kappa0_sweep: list = field(default_factory=lambda: [0.01, 0.04, 0.16, 0.64, 2.56])


@dataclass
class LimitingConfig:
    kappa: float = 16.0
    nu0: float = 0.05
    steps: int = 5
    eps_power: float = 0.1
    cauchy_nu: list = field(default_factory=lambda: [0.1, 0.0316, 0.01])
    cauchy_eps_over_a: float = 4.0


@dataclass
class TGapConfig:
    bump_height: float = 1.0
    bump_radius: float = 0.5


@dataclass
class FKConfig:
    L: float = 2.5
    n: int = 80
    k_max: int = 400
    triples: int = 20
    t_min: float = 0.1
    t_max: float = 2.0
    inner_radius: float = 1.0
    n_paths: int = 100000
    rho_nu: float = 0.2
    rho_sites: list = field(default_factory=lambda: [[0.0, 0.0], [0.5, 0.0], [-0.3, 0.6]])
    envelope_times: list = field(default_factory=lambda: [0.05, 0.1, 0.25, 0.5, 1.0, 2.0])


@dataclass
class NonsolveConfig:
    eps_over_a: list = field(default_factory=lambda: [16.0, 12.0, 8.0, 6.0, 4.0])
    rcond: float = 1e-3
    step_theta: float = 12.0


@dataclass
class ExperimentConfig:
    experiment: str = "all"
    grid: GridConfig = field(default_factory=GridConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    l2: L2Config = field(default_factory=L2Config)
    gibbs: MCPhysicsConfig = field(default_factory=MCPhysicsConfig)
    counterterm: CountertermConfig = field(default_factory=CountertermConfig)
    limiting: LimitingConfig = field(default_factory=LimitingConfig)
    tgap: TGapConfig = field(default_factory=TGapConfig)
    fk: FKConfig = field(default_factory=FKConfig)
    nonsolve: NonsolveConfig = field(default_factory=NonsolveConfig)
    output_dir: str = "runs/latest"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown value {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.grid.boundary not in ("dirichlet", "periodic"):
            raise ConfigError(f"grid.boundary: unknown value {self.grid.boundary!r}")
        if self.potential.kind not in ("power", "step", "rapid"):
            raise ConfigError(f"potential.kind: unknown value {self.potential.kind!r}")
        for key, val in (("grid.n", self.grid.n), ("mc.batch_size", self.mc.batch_size), ("fk.n", self.fk.n)):
            if val < 8:
                raise ConfigError(f"{key}: must be >= 8, got {val}")
        for key, val in (("grid.L", self.grid.L), ("potential.kappa", self.potential.kappa)):
            if not val > 0:
                raise ConfigError(f"{key}: must be positive, got {val}")
        if not 0 < self.potential.gamma < 1:
            raise ConfigError(f"potential.gamma: must lie in (0, 1), got {self.potential.gamma}")
        if self.mc.workers < 1:
            raise ConfigError("mc.workers: must be >= 1")
        return self


def _check_type(key: str, tp, val):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if val is None:
            return None
        return _check_type(key, args[0], val)
    if tp is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {val!r}")
        return float(val)
    if tp is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key}: expected an integer, got {val!r}")
        return val
    if tp is str:
        if not isinstance(val, str):
            raise ConfigError(f"{key}: expected a string, got {val!r}")
        return val
    if tp is list:
        if not isinstance(val, list):
            raise ConfigError(f"{key}: expected a list, got {val!r}")
        return val
    return val


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"{prefix}{k}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        tp = hints[f.name]
        key = prefix + f.name
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], key + ".")
        else:
            kwargs[f.name] = _check_type(key, tp, data[f.name])
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return config_from_dict(data)
