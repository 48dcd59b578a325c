"""
Training configuration and its TOML file format.

A config file has the sections [network], [data], [train], [schedule],
[lbfgs] and [symbolic]; every key is optional. Unset budgets and learning
rates resolve to per-family, per-target defaults.
"""

import tomllib
from dataclasses import asdict, dataclass, fields, replace
from typing import Final

from kan_compact.device import FIELDS, SUPPORTED_STEPS
from kan_compact.errors import ConfigError
from kan_compact.networks import KINDS, PRESETS, NetworkSpec, preset

# --- Defaults ---
DEFAULT_PRESET: Final = {"MLP": "MLP1", "KAN": "KAN1", "FKAN": "FKAN1"}

DESK_EPOCHS: Final = {"MLP": 5_000, "KAN": 1_500, "FKAN": 10_000}
"""Epoch budgets that run in minutes"""

FULL_EPOCHS: Final = {"MLP": 40_000, "KAN": 1_500, "FKAN": 60_000}
"""Published budgets (the MLP value is a cap; its schedule usually stops it earlier)"""

CURRENT_LR: Final = {"MLP": 0.005, "KAN": 0.1, "FKAN": 0.002}
CHARGE_LR: Final = {"MLP": 0.01, "KAN": 1.0, "FKAN": 0.002}

KAN_LADDER: Final = (2, 4, 8, 12, 16)
"""Grid sizes visited by KAN refinement"""

FKAN_DECAY_EVERY: Final = 2_000
"""FKAN step-decay interval at the full 60,000-epoch budget [epochs]"""

SECTIONS: Final = {
    "network": ("family", "preset", "target"),
    "data": ("step",),
    "train": ("seed", "a", "epochs", "lr", "weight_decay", "full_budget", "log_every"),
    "schedule": (
        "plateau_window",
        "plateau_threshold",
        "plateau_factor",
        "min_lr",
        "decay_factor",
        "decay_every",
    ),
    "lbfgs": ("ladder", "history"),
    "symbolic": ("k", "retrain_fraction"),
}


@dataclass(frozen=True)
class TrainConfig:
    """
    Everything one training run depends on.

    Parameters:
    - family: MLP, KAN or FKAN
    - preset: named architecture; the family default when unset
    - target: I_D, Q_D, Q_S or Q_G
    - step: train sub-grid spacing [mV]
    - seed: the only source of randomness
    - a: weight of the linear-current loss term
    - epochs: epoch budget; KAN budgets are split evenly over the ladder
    - lr: initial learning rate
    - weight_decay: MLP L2 coefficient
    - full_budget: use the published budgets instead of the desk ones
    - ladder: KAN grid sizes, strictly increasing
    - k: edges fixed per symbolic-regression round
    - retrain_fraction: share of the original budget spent retraining per round
    """

    family: str = "MLP"
    preset: str | None = None
    target: str = "Q_S"
    step: int = 10
    seed: int = 0
    a: float = 100.0
    epochs: int | None = None
    lr: float | None = None
    weight_decay: float = 1e-5
    full_budget: bool = False
    log_every: int = 500
    plateau_window: int = 500
    plateau_threshold: float = 1e-3
    plateau_factor: float = 0.5
    min_lr: float = 1e-5
    decay_factor: float = 0.85
    decay_every: int | None = None
    ladder: tuple[int, ...] = KAN_LADDER
    history: int = 10
    k: int = 3
    retrain_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(self.ladder))
        if self.family not in KINDS:
            raise ConfigError(f"family must be one of {KINDS}, got {self.family!r}")
        if self.target not in FIELDS:
            raise ConfigError(f"target must be one of {FIELDS}, got {self.target!r}")
        if self.step not in SUPPORTED_STEPS:
            raise ConfigError(f"step must be one of {SUPPORTED_STEPS} mV, got {self.step}")
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}")
            if preset(self.preset, self.target).kind != self.family:
                raise ConfigError(f"preset {self.preset} is not a {self.family} network")
        if not self.a > 0:
            raise ConfigError("loss weight a must be positive")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("epoch budget must be non-negative")
        if self.lr is not None and not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not self.ladder or any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ConfigError(f"ladder must be strictly increasing, got {self.ladder}")
        if min(self.ladder) < 1:
            raise ConfigError("ladder grid sizes must be positive")
        if self.k < 1:
            raise ConfigError("symbolic k must be at least 1")
        if not 0.0 <= self.retrain_fraction <= 1.0:
            raise ConfigError("retrain_fraction must lie in [0, 1]")
        if self.history < 1 or self.log_every < 1 or self.plateau_window < 1:
            raise ConfigError("history, log_every and plateau_window must be positive")

    # --- Resolved values ---
    @property
    def preset_name(self) -> str:
        return self.preset or DEFAULT_PRESET[self.family]

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return (FULL_EPOCHS if self.full_budget else DESK_EPOCHS)[self.family]

    @property
    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return (CURRENT_LR if self.target == "I_D" else CHARGE_LR)[self.family]

    @property
    def stage_epochs(self) -> int:
        """L-BFGS iterations per KAN grid stage."""
        return self.resolved_epochs // len(self.ladder)

    @property
    def resolved_decay_every(self) -> int:
        """FKAN decay interval, proportional to the budget so the final lr is budget-independent."""
        if self.decay_every is not None:
            return self.decay_every
        return max(1, round(FKAN_DECAY_EVERY * self.resolved_epochs / FULL_EPOCHS["FKAN"]))

    def network(self, G: int | None = None) -> NetworkSpec:
        return preset(self.preset_name, self.target, G if G is not None else self.ladder[-1])

    def to_dict(self) -> dict:
        data = asdict(self)
        data["ladder"] = list(self.ladder)
        return data

    def resolved(self) -> dict:
        """The config with every default filled in, for manifests."""
        return {
            **self.to_dict(),
            "preset": self.preset_name,
            "epochs": self.resolved_epochs,
            "lr": self.resolved_lr,
            "decay_every": self.resolved_decay_every,
        }

    def with_overrides(self, **changes) -> "TrainConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def config_from_mapping(document: dict) -> TrainConfig:
    """Build a config from the nested TOML structure."""
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for section, entries in document.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(entries, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in entries.items():
            if key not in SECTIONS[section] or key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = value
    try:
        return TrainConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str) -> TrainConfig:
    try:
        with open(path, "rb") as f:
            document = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_mapping(document)
