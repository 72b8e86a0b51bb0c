"""Experiment configuration: file format, overrides, and total validation.

Config files are flat key-value text with section headers and '#' comments
(INI-style, parsed with the stdlib). Command-line overrides of the form
--key=value shadow file values; a key may be bare (when unambiguous) or
qualified as section.key. Validation reports every violation in one pass.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import PartitionSpec
from .errors import ConfigError

SCHEMES = ("fedavg", "fedlp_homo", "fedlp_hetero")
PARTITION_SCHEMES = ("iid", "mixed_shard", "dirichlet")
DATA_SOURCES = ("synthetic", "idx")
WEIGHTINGS = ("datasize", "uniform")

DEFAULT_HIDDEN_DIMS = (128, 128, 128, 64)


@dataclass
class DataConfig:
    """Where samples come from and how the held-out test split is sized."""

    source: str = "synthetic"
    num_classes: int = 10
    samples_per_class: int = 200
    feature_dim: int = 32
    class_separation: float = 6.0
    test_fraction: float = 0.25
    images_path: str | None = None
    labels_path: str | None = None


@dataclass
class ExperimentConfig:
    """Full description of one run; everything a rerun needs except wall time."""

    master_seed: int
    num_clients: int = 20
    participation_rate: float = 0.25
    local_epochs: int = 5
    batch_size: int = 32
    lr: float = 0.05
    max_global_epochs: int = 50
    eval_every: int = 1
    scheme: str = "fedavg"
    lpr: tuple[float, ...] | None = None
    lc_distribution: tuple[float, ...] | str | None = None
    weighting: str = "datasize"
    workers: int = 1
    timing: bool = False
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionSpec = field(default_factory=PartitionSpec)

    @property
    def num_prunable_layers(self) -> int:
        return len(self.hidden_dims) + 1

    def participants_per_round(self) -> int:
        # round-half-up, fixed tie-break
        return int(self.participation_rate * self.num_clients + 0.5)

    def resolved_lpr(self) -> np.ndarray:
        if self.lpr is None:
            raise ConfigError(["lpr requested but not configured"])
        rates = np.asarray(self.lpr, dtype=np.float64)
        if rates.size == 1:
            rates = np.full(self.num_prunable_layers, float(rates[0]))
        return rates

    def resolved_lc_distribution(self) -> np.ndarray:
        from .pruning import lc_peaked, lc_uniform

        L = self.num_prunable_layers
        if self.lc_distribution is None:
            raise ConfigError(["lc_distribution requested but not configured"])
        if isinstance(self.lc_distribution, str):
            token = self.lc_distribution
            if token == "uniform":
                return lc_uniform(L)
            if token.startswith("peak:"):
                return lc_peaked(L, int(token.split(":", 1)[1]))
            raise ConfigError([f"unknown lc_distribution token {token!r}"])
        return np.asarray(self.lc_distribution, dtype=np.float64)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _parse_lc(text: str) -> tuple[float, ...] | str:
    stripped = text.strip()
    if stripped == "uniform" or stripped.startswith("peak:"):
        return stripped
    return _parse_float_list(stripped)


# (section, key) -> (parser, target attribute path)
_SCHEMA: dict[tuple[str, str], tuple] = {
    ("experiment", "master_seed"): (int, "master_seed"),
    ("experiment", "num_clients"): (int, "num_clients"),
    ("experiment", "participation_rate"): (float, "participation_rate"),
    ("experiment", "local_epochs"): (int, "local_epochs"),
    ("experiment", "batch_size"): (int, "batch_size"),
    ("experiment", "lr"): (float, "lr"),
    ("experiment", "max_global_epochs"): (int, "max_global_epochs"),
    ("experiment", "eval_every"): (int, "eval_every"),
    ("experiment", "scheme"): (str, "scheme"),
    ("experiment", "lpr"): (_parse_float_list, "lpr"),
    ("experiment", "lc_distribution"): (_parse_lc, "lc_distribution"),
    ("experiment", "weighting"): (str, "weighting"),
    ("experiment", "workers"): (int, "workers"),
    ("experiment", "timing"): (_parse_bool, "timing"),
    ("model", "hidden_dims"): (_parse_int_list, "hidden_dims"),
    ("data", "source"): (str, "data.source"),
    ("data", "num_classes"): (int, "data.num_classes"),
    ("data", "samples_per_class"): (int, "data.samples_per_class"),
    ("data", "feature_dim"): (int, "data.feature_dim"),
    ("data", "class_separation"): (float, "data.class_separation"),
    ("data", "test_fraction"): (float, "data.test_fraction"),
    ("data", "images_path"): (str, "data.images_path"),
    ("data", "labels_path"): (str, "data.labels_path"),
    ("partition", "scheme"): (str, "partition.scheme"),
    ("partition", "shard_size"): (int, "partition.shard_size"),
    ("partition", "shards_per_client"): (int, "partition.shards_per_client"),
    ("partition", "uniform_fraction"): (float, "partition.uniform_fraction"),
    ("partition", "alpha"): (float, "partition.alpha"),
    ("partition", "seed"): (int, "partition.seed"),
}

_BARE_KEYS: dict[str, list[tuple[str, str]]] = {}
for _sec, _key in _SCHEMA:
    _BARE_KEYS.setdefault(_key, []).append((_sec, _key))


def resolve_override_key(key: str) -> tuple[str, str]:
    """Map a --key or --section.key override to a schema entry."""
    if key in ("seed",):
        return ("experiment", "master_seed")
    if "." in key:
        sec, _, name = key.partition(".")
        if (sec, name) not in _SCHEMA:
            raise ConfigError([f"unknown config key {key!r}"])
        return (sec, name)
    hits = _BARE_KEYS.get(key, [])
    if not hits:
        raise ConfigError([f"unknown config key {key!r}"])
    if len(hits) > 1:
        raise ConfigError([f"ambiguous config key {key!r}; qualify as section.key"])
    return hits[0]


def _set_path(cfg: ExperimentConfig, path: str, value) -> None:
    if "." in path:
        head, _, tail = path.partition(".")
        setattr(getattr(cfg, head), tail, value)
    else:
        setattr(cfg, path, value)


def load_config_from_dict(
    raw: dict[str, dict[str, str]],
    overrides: dict[str, str] | None = None,
) -> ExperimentConfig:
    """Build and validate a config from {section: {key: text}} plus overrides."""
    errors: list[str] = []
    merged: dict[tuple[str, str], str] = {}
    for section, entries in raw.items():
        for key, text in entries.items():
            if (section, key) not in _SCHEMA:
                errors.append(f"unknown config key [{section}] {key}")
                continue
            merged[(section, key)] = text
    for key, text in (overrides or {}).items():
        try:
            merged[resolve_override_key(key)] = text
        except ConfigError as exc:
            errors.extend(exc.violations)

    cfg = ExperimentConfig(master_seed=0)
    seed_given = False
    for (section, key), text in sorted(merged.items()):
        parser, path = _SCHEMA[(section, key)]
        try:
            value = parser(text)
        except ValueError:
            errors.append(f"[{section}] {key}: cannot parse {text!r}")
            continue
        if path == "master_seed":
            seed_given = True
        _set_path(cfg, path, value)

    if not seed_given:
        errors.append("master_seed is required (set [experiment] master_seed or pass --seed)")
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError(errors)
    cfg.partition.num_clients = cfg.num_clients
    return cfg


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse a config file and apply overrides; raises ConfigError on any problem."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None
    )
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    return load_config_from_dict(raw, overrides)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Return every contract violation; empty list means the config is usable."""
    errs: list[str] = []
    if cfg.num_clients < 1:
        errs.append("num_clients must be >= 1")
    if not 0.0 < cfg.participation_rate <= 1.0:
        errs.append("participation_rate must lie in (0, 1]")
    elif cfg.num_clients >= 1 and cfg.participants_per_round() < 1:
        errs.append("participation_rate rounds to zero participants")
    if cfg.local_epochs < 0:
        errs.append("local_epochs must be >= 0")
    if cfg.batch_size < 1:
        errs.append("batch_size must be >= 1")
    if cfg.lr <= 0:
        errs.append("lr must be positive")
    if cfg.max_global_epochs < 1:
        errs.append("max_global_epochs must be >= 1")
    if cfg.eval_every < 1:
        errs.append("eval_every must be >= 1")
    if cfg.workers < 1:
        errs.append("workers must be >= 1")
    if cfg.weighting not in WEIGHTINGS:
        errs.append(f"weighting must be one of {WEIGHTINGS}")
    if not cfg.hidden_dims or any(h < 1 for h in cfg.hidden_dims):
        errs.append("hidden_dims must be a nonempty list of positive widths")

    L = cfg.num_prunable_layers
    if cfg.scheme not in SCHEMES:
        errs.append(f"scheme must be one of {SCHEMES}")
    if cfg.scheme == "fedlp_homo":
        if cfg.lpr is None:
            errs.append("scheme fedlp_homo requires lpr")
        else:
            rates = np.asarray(cfg.lpr, dtype=np.float64)
            if rates.size not in (1, L):
                errs.append(f"lpr must be a scalar or have {L} entries")
            if rates.size and (rates.min() < 0.0 or rates.max() > 1.0):
                errs.append("lpr rates must lie in [0, 1]")
    if cfg.scheme == "fedlp_hetero":
        if cfg.lc_distribution is None:
            errs.append("scheme fedlp_hetero requires lc_distribution")
        elif isinstance(cfg.lc_distribution, str):
            token = cfg.lc_distribution
            if token != "uniform" and not token.startswith("peak:"):
                errs.append(f"lc_distribution token must be 'uniform' or 'peak:<l>', got {token!r}")
            elif token.startswith("peak:"):
                try:
                    peak = int(token.split(":", 1)[1])
                    if not 1 <= peak <= L:
                        errs.append(f"lc_distribution peak layer must lie in 1..{L}")
                except ValueError:
                    errs.append(f"cannot parse lc_distribution token {token!r}")
        else:
            dist = np.asarray(cfg.lc_distribution, dtype=np.float64)
            if dist.size != L:
                errs.append(f"lc_distribution must have {L} entries")
            elif np.any(dist < 0) or abs(float(dist.sum()) - 1.0) > 1e-9:
                errs.append("lc_distribution must be nonnegative and sum to 1")

    d = cfg.data
    if d.source not in DATA_SOURCES:
        errs.append(f"data source must be one of {DATA_SOURCES}")
    if d.source == "synthetic":
        if d.num_classes < 2:
            errs.append("data num_classes must be >= 2")
        if d.samples_per_class < 1:
            errs.append("data samples_per_class must be >= 1")
        if d.feature_dim < 1:
            errs.append("data feature_dim must be >= 1")
        if d.class_separation <= 0:
            errs.append("data class_separation must be positive")
    if d.source == "idx":
        if not d.images_path:
            errs.append("data source idx requires images_path")
        if not d.labels_path:
            errs.append("data source idx requires labels_path")
    if not 0.0 <= d.test_fraction < 1.0:
        errs.append("data test_fraction must lie in [0, 1)")

    p = cfg.partition
    if p.scheme not in PARTITION_SCHEMES:
        errs.append(f"partition scheme must be one of {PARTITION_SCHEMES}")
    if p.scheme == "mixed_shard":
        if p.shard_size is None or p.shard_size < 1:
            errs.append("partition mixed_shard requires shard_size >= 1")
        if p.shards_per_client is None or p.shards_per_client < 1:
            errs.append("partition mixed_shard requires shards_per_client >= 1")
        if p.uniform_fraction is None or not 0.0 <= p.uniform_fraction <= 1.0:
            errs.append("partition mixed_shard requires uniform_fraction in [0, 1]")
    else:
        for name in ("shard_size", "shards_per_client", "uniform_fraction"):
            if getattr(p, name) is not None:
                errs.append(f"partition {name} only applies to scheme mixed_shard")
    if p.scheme == "dirichlet":
        if p.alpha is None or p.alpha <= 0:
            errs.append("partition dirichlet requires alpha > 0")
    elif p.alpha is not None:
        errs.append("partition alpha only applies to scheme dirichlet")
    return errs


def config_to_dict(cfg: ExperimentConfig) -> dict[str, dict[str, str]]:
    """Serialize to the {section: {key: text}} form the loader consumes."""

    def fmt(value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, (tuple, list)):
            return ",".join(str(v) for v in value)
        return str(value)

    out: dict[str, dict[str, str]] = {"experiment": {}, "model": {}, "data": {}, "partition": {}}
    for (section, key), (_, path) in _SCHEMA.items():
        if "." in path:
            head, _, tail = path.partition(".")
            value = getattr(getattr(cfg, head), tail)
        else:
            value = getattr(cfg, path)
        if value is None:
            continue
        if (section, key) == ("partition", "seed") and cfg.partition.seed is None:
            continue
        out[section][key] = fmt(value)
    return {sec: dict(sorted(entries.items())) for sec, entries in sorted(out.items()) if entries}
