"""Run configuration loaded from JSON. Unknown keys are rejected at every level."""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .architecture import MOBILENET_V2_TABLE, VARIANTS, ArchitectureConfig
from .errors import ConfigError
from .federated import FederatedConfig
from .harness import OptimizerConfig, TrainConfig


@dataclass
class ModelSection:
    variant: str = "DeepMediX"
    width_multiplier: float = 1.0
    input_size: tuple = (224, 224, 3)
    num_classes: int = 4
    table: tuple = MOBILENET_V2_TABLE

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        self.input_size = tuple(self.input_size)
        self.table = tuple(tuple(r) for r in self.table)

    def architecture(self, variant=None):
        return ArchitectureConfig(variant or self.variant, self.width_multiplier, self.input_size,
                                  self.num_classes, self.table)


@dataclass
class TrainSection:
    max_epochs: int = 50
    batch_size: int = 32
    patience: int = 15
    lr_factor: float = 3.0
    lr_window: int = 3


@dataclass
class FederatedSection:
    clients: int = 4
    fraction: float = 1.0
    local_epochs: int = 1
    lr: float = 0.1
    method: str = "sgd"
    rounds: int = 10
    batch_size: int = 32
    local_mode: str = "epochs"
    aggregation: str = "model"
    partitioner: str = "iid"
    shards_per_client: int = 2

    def __post_init__(self):
        FederatedConfig(**dataclasses.asdict(self))


@dataclass
class SyntheticSection:
    num_samples: int = 400
    image_size: tuple = (32, 32)
    num_classes: int = 2
    blob_sigma: float = 2.5  # or one value per class
    blob_intensity: float = 0.6
    background: float = 0.1
    noise: float = 0.05

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        for name in ("blob_sigma", "blob_intensity"):
            if isinstance(getattr(self, name), list):
                setattr(self, name, tuple(getattr(self, name)))


@dataclass
class DataSection:
    manifest: str = None
    synthetic: SyntheticSection = None
    fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        self.fractions = tuple(self.fractions)
        if self.manifest is None and self.synthetic is None:
            self.synthetic = SyntheticSection()


@dataclass
class EvalSection:
    checkpoint: str = None
    split: str = "test"


@dataclass
class AnalyzeSection:
    checkpoint: str = None
    split: str = "val"
    num_points: int = 1
    top_k: int = 5


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainSection = field(default_factory=TrainSection)
    federated: FederatedSection = field(default_factory=FederatedSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)
    output_dir: str = "runs/default"
    seed: int = 0
    precision: str = "f64"
    threads: int = 1

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def train_config(self):
        t = self.train
        return TrainConfig(t.max_epochs, t.batch_size, t.patience, t.lr_factor, t.lr_window,
                           self.seed, self.optimizer)

    def federated_config(self):
        return FederatedConfig(seed=self.seed, **dataclasses.asdict(self.federated))

    def to_dict(self):
        def conv(v):
            if isinstance(v, tuple):
                return [conv(x) for x in v]
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            return v
        return conv(dataclasses.asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


_NESTED = {
    RunConfig: {"model": ModelSection, "optimizer": OptimizerConfig, "train": TrainSection,
                "federated": FederatedSection, "data": DataSection, "eval": EvalSection,
                "analyze": AnalyzeSection},
    DataSection: {"synthetic": SyntheticSection},
}


def _build(cls, raw, where):
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in raw.items():
        sub = _NESTED.get(cls, {}).get(k)
        kwargs[k] = _build(sub, v, f"{where}.{k}" if where else k) if sub else v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where or 'config'}: {e}") from e


def config_from_dict(raw):
    return _build(RunConfig, raw, "")


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from e
    return config_from_dict(raw)
