"""Experiment configuration: strict JSON <-> dataclasses.

Unknown keys are rejected, every field is range-checked before a run, and
errors carry the dotted path of the offending field so callers can point at
the line in the source file.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import types
import typing
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .models import KINDS, LOSSES


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class ModelConfig:
    kind: str = "logistic-regression"
    hidden_dim: int = 0
    loss: str | None = None
    bias: bool = True


@dataclass
class DatasetConfig:
    kind: str = "synthetic-classification"
    n_samples: int = 2000
    input_dim: int = 10
    class_count: int = 10
    cluster_spread: float = 1.0
    output_dim: int = 1
    noise: float = 0.1
    images: str | None = None
    labels: str | None = None
    test_fraction: float = 0.1


@dataclass
class PartitionConfig:
    n_clients: int = 10
    label_alpha: float = 0.5
    size_alpha: float = 1.0


@dataclass
class OptimizerConfig:
    eta: float = 0.05
    server_eta: float | None = None
    eta_decay: float = 0.0
    lam: float = 0.0
    beta: float = 0.0
    nag_mode: str = "eq8"
    compensation: str = "aggregate"
    E: int = 5
    E_max: int = 5
    fraction_C: float = 1.0
    batch_size: int | None = None


@dataclass
class NetworkConfig:
    latency: float = 0.0
    bandwidth: float | None = None  # bytes/s, None = unlimited
    jitter_frac: float = 0.0


@dataclass
class ComputeConfig:
    t_train: float = 1.0
    t_train_per_client: list[float] | None = None


@dataclass
class SeedConfig:
    data: int = 0
    partition: int = 0
    init: int = 0
    sampling: int = 0
    jitter: int = 0


@dataclass
class ExperimentConfig:
    strategy: str = "overlap"
    rounds: int = 10
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    compute: ComputeConfig = field(default_factory=ComputeConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["lambda"] = d["optimizer"].pop("lam")
        return d

    def fingerprint(self) -> str:
        return _digest(self.to_dict())

    def problem_fingerprint(self) -> str:
        """Hash of what defines the learning problem, independent of the
        strategy, optimizer, and timing model."""
        d = self.to_dict()
        key = {k: d[k] for k in ("rounds", "model", "dataset", "partition")}
        key["seeds"] = {k: d["seeds"][k] for k in ("data", "partition", "init")}
        return _digest(key)

    def validate(self) -> "ExperimentConfig":
        _validate(self)
        return self


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# JSON key -> dataclass attribute where they differ
_RENAMED = {"lambda": "lam"}


def _check_type(value, hint, path):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_type(value, inner[0], path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, "expected a list")
        return [_check_type(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    raise ConfigError(path, f"unsupported field type {hint}")


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        attr = _RENAMED.get(key, key)
        sub = f"{path}.{key}" if path else key
        if attr not in names or key in _RENAMED.values():
            raise ConfigError(sub, "unknown key")
        kwargs[attr] = _check_type(value, hints[attr], sub)
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data).validate()


def _need(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def _finite(x):
    return x is not None and math.isfinite(x)


def _validate(c: ExperimentConfig) -> None:
    _need(c.strategy in ("fedavg", "overlap"), "strategy", "must be 'fedavg' or 'overlap'")
    _need(c.rounds >= 1, "rounds", "must be >= 1")

    m = c.model
    _need(m.kind in KINDS, "model.kind", f"must be one of {', '.join(KINDS)}")
    _need(m.loss is None or m.loss in LOSSES, "model.loss", f"must be one of {', '.join(LOSSES)}")
    if m.kind == "mlp-1hidden":
        _need(m.hidden_dim >= 1, "model.hidden_dim", "must be >= 1 for mlp-1hidden")
    else:
        _need(m.hidden_dim == 0, "model.hidden_dim", "only applies to mlp-1hidden")

    d = c.dataset
    kinds = ("synthetic-classification", "synthetic-regression", "idx")
    _need(d.kind in kinds, "dataset.kind", f"must be one of {', '.join(kinds)}")
    _need(0 <= d.test_fraction < 1, "dataset.test_fraction", "must lie in [0, 1)")
    if d.kind == "idx":
        _need(d.images is not None, "dataset.images", "required for idx datasets")
        _need(d.labels is not None, "dataset.labels", "required for idx datasets")
    else:
        _need(d.n_samples >= 1, "dataset.n_samples", "must be >= 1")
        _need(d.input_dim >= 1, "dataset.input_dim", "must be >= 1")
        _need(d.class_count >= 1, "dataset.class_count", "must be >= 1")
        _need(d.output_dim >= 1, "dataset.output_dim", "must be >= 1")
        _need(_finite(d.cluster_spread) and d.cluster_spread >= 0,
              "dataset.cluster_spread", "must be >= 0")
        _need(_finite(d.noise) and d.noise >= 0, "dataset.noise", "must be >= 0")
    regression = d.kind == "synthetic-regression"
    if regression:
        _need(m.kind == "linear-regression" or (m.kind == "mlp-1hidden" and m.loss == "mse"),
              "model.kind", "regression data needs linear-regression or mlp-1hidden with loss mse")
    else:
        _need(m.kind != "linear-regression" and m.loss in (None, "cross-entropy"),
              "model.kind", "classification data needs a cross-entropy model")

    p = c.partition
    _need(p.n_clients >= 1, "partition.n_clients", "must be >= 1")
    _need(_finite(p.label_alpha) and p.label_alpha > 0, "partition.label_alpha", "must be > 0")
    _need(_finite(p.size_alpha) and p.size_alpha > 0, "partition.size_alpha", "must be > 0")

    o = c.optimizer
    _need(_finite(o.eta) and o.eta > 0, "optimizer.eta", "must be > 0")
    _need(o.server_eta is None or (_finite(o.server_eta) and o.server_eta > 0),
          "optimizer.server_eta", "must be > 0")
    _need(_finite(o.eta_decay) and o.eta_decay >= 0, "optimizer.eta_decay", "must be >= 0")
    _need(_finite(o.lam) and o.lam >= 0, "optimizer.lambda", "must be >= 0")
    _need(_finite(o.beta) and 0 <= o.beta < 1, "optimizer.beta", "must lie in [0, 1)")
    _need(o.nag_mode in ("eq8", "alg3"), "optimizer.nag_mode", "must be 'eq8' or 'alg3'")
    _need(o.compensation in ("aggregate", "per-client"), "optimizer.compensation",
          "must be 'aggregate' or 'per-client'")
    _need(o.E >= 1, "optimizer.E", "must be >= 1")
    _need(o.E_max >= 1, "optimizer.E_max", "must be >= 1")
    _need(_finite(o.fraction_C) and 0 < o.fraction_C <= 1, "optimizer.fraction_C",
          "must lie in (0, 1]")
    if c.strategy == "overlap":
        _need(o.fraction_C == 1, "optimizer.fraction_C",
              "client subsampling is only supported by the fedavg strategy")
    _need(o.batch_size is None or o.batch_size >= 1, "optimizer.batch_size", "must be >= 1")

    n = c.network
    _need(_finite(n.latency) and n.latency >= 0, "network.latency", "must be >= 0")
    _need(n.bandwidth is None or (n.bandwidth > 0 and not math.isnan(n.bandwidth)),
          "network.bandwidth", "must be > 0 (or null for unlimited)")
    _need(_finite(n.jitter_frac) and 0 <= n.jitter_frac < 1, "network.jitter_frac",
          "must lie in [0, 1)")

    t = c.compute
    _need(_finite(t.t_train) and t.t_train > 0, "compute.t_train", "must be > 0")
    if t.t_train_per_client is not None:
        _need(len(t.t_train_per_client) == p.n_clients, "compute.t_train_per_client",
              "needs one entry per client")
        for i, x in enumerate(t.t_train_per_client):
            _need(_finite(x) and x > 0, f"compute.t_train_per_client[{i}]", "must be > 0")


def load_config(path) -> ExperimentConfig:
    """Read a config file, or a bundled preset by name."""
    text, _ = read_config_text(path)
    return parse_config_text(text)


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    return from_dict(data)


def preset_names() -> list[str]:
    root = resources.files("flsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_config_text(path) -> tuple[str, str]:
    """Return ``(text, label)``; ``path`` may also be a bundled preset name."""
    p = Path(path)
    if p.is_file():
        return p.read_text(), str(p)
    name = str(path)
    if name in preset_names():
        res = resources.files("flsim") / "presets" / f"{name}.json"
        return res.read_text(), f"preset:{name}"
    raise FileNotFoundError(f"no config file or preset named {path!r}")


def locate(text: str, path: str) -> int | None:
    """Best-effort 1-based line of the key named by dotted ``path``."""
    if not path:
        return None
    pos = 0
    for part in path.split("."):
        key = part.split("[")[0]
        i = text.find(f'"{key}"', pos)
        if i < 0:
            return None
        pos = i + 1
    return text.count("\n", 0, pos) + 1
