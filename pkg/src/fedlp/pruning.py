"""Layer-preservation masks, heterogeneous sub-model assignment, and payloads.

The homogeneous scheme draws a fresh Bernoulli mask per client per round; the
heterogeneous scheme fixes a layer count per client at initialization and
attaches a personalized output head whenever the sub-model is shorter than
the template. Uploads are built here and structurally cannot contain a head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeMismatchError
from .model import LayeredModel, make_personal_head


@dataclass
class LprConfig:
    """Per-layer preservation probabilities, one entry per prunable layer."""

    rates: np.ndarray

    def __post_init__(self) -> None:
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if self.rates.ndim != 1:
            raise ContractError("rates must be a 1-D vector")
        if np.any(self.rates < 0.0) or np.any(self.rates > 1.0):
            raise ContractError("every layer-preserving rate must lie in [0, 1]")

    @classmethod
    def uniform(cls, p: float, num_layers: int) -> "LprConfig":
        return cls(np.full(num_layers, float(p)))


@dataclass
class LayerMask:
    """Binary keep/drop indicator per prunable layer."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.int64)
        if self.bits.ndim != 1 or not np.isin(self.bits, (0, 1)).all():
            raise ContractError("mask bits must be a 1-D vector over {0, 1}")

    @classmethod
    def ones(cls, num_layers: int) -> "LayerMask":
        return cls(np.ones(num_layers, dtype=np.int64))


def draw_mask(lpr: LprConfig, rng: np.random.Generator) -> LayerMask:
    """Sample one Bernoulli indicator per layer from the given stream."""
    return LayerMask((rng.random(lpr.rates.size) < lpr.rates).astype(np.int64))


@dataclass
class HeteroAssignment:
    """A client's fixed sub-model size, drawn once at initialization."""

    layer_count: int
    has_personal_head: bool
    lc_distribution: np.ndarray

    def __post_init__(self) -> None:
        self.lc_distribution = np.asarray(self.lc_distribution, dtype=np.float64)
        if self.layer_count < 1:
            raise ContractError("layer_count must be >= 1")
        expected_head = self.layer_count < self.lc_distribution.size
        if self.has_personal_head != expected_head:
            raise ContractError("has_personal_head must hold exactly when layer_count < L")


def lc_uniform(num_layers: int) -> np.ndarray:
    """Uniform layer-count distribution over {1..L}."""
    return np.full(num_layers, 1.0 / num_layers)


def lc_peaked(num_layers: int, peak_layer: int, peak_mass: float = 0.6) -> np.ndarray:
    """Distribution putting peak_mass on one layer count, the rest spread evenly."""
    if not 1 <= peak_layer <= num_layers:
        raise ContractError(f"peak_layer must lie in 1..{num_layers}")
    rest = (1.0 - peak_mass) / (num_layers - 1) if num_layers > 1 else 0.0
    dist = np.full(num_layers, rest)
    dist[peak_layer - 1] = peak_mass if num_layers > 1 else 1.0
    return dist


def assign_hetero(
    lc_distribution: np.ndarray,
    num_clients: int,
    num_layers: int,
    rng: np.random.Generator,
) -> list[HeteroAssignment]:
    """Draw one fixed layer count per client from the distribution over {1..L}."""
    dist = np.asarray(lc_distribution, dtype=np.float64)
    if dist.shape != (num_layers,):
        raise ContractError(f"lc_distribution must have length {num_layers}")
    if np.any(dist < 0.0):
        raise ContractError("lc_distribution entries must be nonnegative")
    if abs(float(dist.sum()) - 1.0) > 1e-9:
        raise ContractError(f"lc_distribution must sum to 1, got {dist.sum()!r}")
    draws = rng.choice(np.arange(1, num_layers + 1), size=num_clients, p=dist / dist.sum())
    return [HeteroAssignment(int(lc), int(lc) < num_layers, dist) for lc in draws]


@dataclass
class PrunedPayload:
    """Upload unit: the preserved layers' parameters, keyed by 1-based index."""

    layers: dict[int, tuple[np.ndarray, np.ndarray]]
    source_client: int
    round_index: int

    def param_count(self) -> int:
        return int(sum(w.size + b.size for w, b in self.layers.values()))

    def layer_indices(self) -> set[int]:
        return set(self.layers.keys())


def prune_model(
    model: LayeredModel,
    mask: LayerMask,
    source_client: int = 0,
    round_index: int = 0,
) -> PrunedPayload:
    """Copy the masked-in prunable layers into an upload payload.

    Only prunable layers are addressable, so a personalized head can never
    appear in a payload.
    """
    prunable = model.prunable_blocks
    if mask.bits.size != len(prunable):
        raise ShapeMismatchError(
            f"mask length {mask.bits.size} does not match model's {len(prunable)} prunable layers"
        )
    layers = {
        l + 1: (prunable[l].weights.copy(), prunable[l].bias.copy())
        for l in range(len(prunable))
        if mask.bits[l]
    }
    return PrunedPayload(layers=layers, source_client=source_client, round_index=round_index)


def build_hetero_model(
    global_template: LayeredModel,
    assignment: HeteroAssignment,
    rng: np.random.Generator,
) -> LayeredModel:
    """First layer_count prunable layers of the template, plus a fresh head
    mapping that layer's width to the class count whenever layer_count < L."""
    prunable = global_template.prunable_blocks
    total = len(prunable)
    lc = assignment.layer_count
    if lc > total:
        raise ContractError(f"layer_count {lc} exceeds template's {total} prunable layers")
    last_kept = prunable[lc - 1]
    blocks = []
    for blk in global_template.blocks:
        if blk.is_parameterized and blk.index > last_kept.index:
            break
        blocks.append(blk.copy())
    if lc < total:
        num_classes = prunable[-1].fan_out
        head = make_personal_head(last_kept.fan_out, num_classes, rng)
        blocks.append(head)
    return LayeredModel(blocks)
