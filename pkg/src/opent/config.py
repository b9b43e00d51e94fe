"""Run configuration: a single canonical JSON document.

The canonical form (sorted keys, two-space indent, trailing newline) makes
parse -> serialize -> parse the identity byte for byte, so configs can be
diffed and hashed.  Sector values, times and tolerances are plain JSON
numbers; all validation errors name the offending field.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .impdo import STATE_KINDS
from .lindblad import ModelParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass
class OracleConfig:
    n_sites: int = 6
    tol: float = 1e-10

    def validate(self):
        if not 2 <= self.n_sites <= 8:
            raise ConfigError(f"oracle.n_sites must be in 2..8, got {self.n_sites}")
        if not 0 < self.tol <= 1e-2:
            raise ConfigError(f"oracle.tol must be in (0, 1e-2], got {self.tol}")


@dataclass
class AnalysisConfig:
    power_law_window: list | None = None  # [t_lo, t_hi]
    decay_window: list | None = None
    tangent_bond: int = 1

    def validate(self):
        for name in ("power_law_window", "decay_window"):
            win = getattr(self, name)
            if win is not None:
                if len(win) != 2 or not win[0] < win[1]:
                    raise ConfigError(f"analysis.{name} must be [t_lo, t_hi] with t_lo < t_hi")
        if self.tangent_bond not in (0, 1):
            raise ConfigError(f"analysis.tangent_bond must be 0 or 1, got {self.tangent_bond}")


@dataclass
class RunConfig:
    J: float = 1.0
    gamma: float = 0.25
    dt: float = 0.5
    state: str = "singlet_pairs"
    chi_max: int = 256
    eps_trunc: float = 1e-12
    t_max: float = 10.0
    observe_every: int = 1
    bonds: list = field(default_factory=lambda: [0, 1])
    checkpoint_interval: int = 0  # full steps between checkpoints; 0 disables
    oracle: OracleConfig = field(default_factory=OracleConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {self.schema_version}")
        if not self.J > 0:
            raise ConfigError(f"J must be positive, got {self.J}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.state not in STATE_KINDS:
            raise ConfigError(f"state must be one of {STATE_KINDS}, got {self.state!r}")
        if self.chi_max < 1:
            raise ConfigError(f"chi_max must be >= 1, got {self.chi_max}")
        if not 0 <= self.eps_trunc < 1:
            raise ConfigError(f"eps_trunc must be in [0, 1), got {self.eps_trunc}")
        if not self.t_max > 0:
            raise ConfigError(f"t_max must be positive, got {self.t_max}")
        if self.observe_every < 1:
            raise ConfigError(f"observe_every must be >= 1, got {self.observe_every}")
        if not self.bonds or any(b not in (0, 1) for b in self.bonds):
            raise ConfigError(f"bonds must be a non-empty subset of [0, 1], got {self.bonds}")
        if self.checkpoint_interval < 0:
            raise ConfigError(f"checkpoint_interval must be >= 0, got {self.checkpoint_interval}")
        self.oracle.validate()
        self.analysis.validate()
        return self

    def params(self) -> ModelParams:
        return ModelParams(J=self.J, gamma=self.gamma, dt=self.dt)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        doc = dict(doc)
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "oracle" in doc and isinstance(doc["oracle"], dict):
            doc["oracle"] = OracleConfig(**doc["oracle"])
        if "analysis" in doc and isinstance(doc["analysis"], dict):
            doc["analysis"] = AnalysisConfig(**doc["analysis"])
        try:
            cfg = RunConfig(**doc)
        except TypeError as err:
            raise ConfigError(str(err)) from err
        return cfg.validate()

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from err
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        return RunConfig.from_dict(doc)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
