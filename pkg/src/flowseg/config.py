"""JSON run configuration with strict key checking.

Every section maps onto one of the package's config dataclasses; missing keys
take the dataclass defaults and unknown keys are rejected.
"""

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path

from .capnet import HandcraftedParams, NetConfig, OptimConfig
from .losses import FlowLossForm, HuberParams
from .solver import SolverConfig
from .synthdata import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 30
    shuffle_seed: int = 0
    loss_form: FlowLossForm = FlowLossForm.DEVIATION
    normalize_energy: bool = True
    flow_weight: float = 1.0
    source_ceiling: float = 10.0
    train_fraction: float = 0.8
    split_seed: int = 0
    checkpoint_every: int = 5

    def __post_init__(self):
        object.__setattr__(self, "loss_form", FlowLossForm(self.loss_form))


@dataclass(frozen=True)
class RunConfig:
    solver: SolverConfig = field(default_factory=SolverConfig)
    net: NetConfig = field(default_factory=NetConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainSection = field(default_factory=TrainSection)
    huber: HuberParams = field(default_factory=HuberParams)
    synth: SynthConfig = field(default_factory=SynthConfig)
    handcrafted: HandcraftedParams = field(default_factory=HandcraftedParams)
    level: float = 0.5
    hausdorff_variant: str = "max"

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ConfigError("level must lie in [0, 1]")
        if self.hausdorff_variant not in ("max", "p95"):
            raise ConfigError("hausdorff_variant must be 'max' or 'p95'")

    def train_config(self):
        from .trainer import TrainConfig

        return TrainConfig(
            optim=self.optim,
            solver=self.solver,
            huber=self.huber,
            loss_form=self.train.loss_form,
            epochs=self.train.epochs,
            shuffle_seed=self.train.shuffle_seed,
            normalize_energy=self.train.normalize_energy,
            flow_weight=self.train.flow_weight,
            source_ceiling=self.train.source_ceiling,
            level=self.level,
        )


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'config'}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def parse_config(data):
    return _build(RunConfig, data, "")


def config_to_dict(cfg):
    return _plain(asdict(cfg))


def load_config(path=None):
    """Read a JSON run config; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(data)


def dump_config(cfg, path=None):
    text = json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
