"""Layer-wise aggregation of pruned uploads, with plain weighted averaging as
the all-layers-present special case.

Each layer is averaged independently over the clients that uploaded it, with
weights renormalized over that layer's contributors. A layer nobody uploaded
carries over unchanged from the previous global model. Reduction runs in
fixed (layer, client-id) order so results are bit-exact under payload
reordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ContractError, ShapeMismatchError
from .model import LayeredModel
from .pruning import LayerMask, PrunedPayload, prune_model

if TYPE_CHECKING:
    from .orchestrator import ClientState


@dataclass
class AggregationWeights:
    """Raw per-client weights; normalization happens per layer over contributors."""

    omega: np.ndarray

    def __post_init__(self) -> None:
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if np.any(self.omega < 0.0):
            raise ContractError("aggregation weights must be nonnegative")

    @classmethod
    def from_sizes(cls, sizes) -> "AggregationWeights":
        return cls(np.asarray(sizes, dtype=np.float64))

    @classmethod
    def uniform(cls, num_clients: int) -> "AggregationWeights":
        return cls(np.ones(num_clients))


@dataclass
class GlobalModelState:
    """The server's model together with the global epoch counter."""

    model: LayeredModel
    round_index: int = 0


def aggregate_layerwise(
    payloads: list[PrunedPayload],
    weights: AggregationWeights,
    current_global: GlobalModelState,
) -> GlobalModelState:
    """One aggregation step over the uploaded payloads.

    For every layer with at least one contributor the new value is the
    contributor-weighted mean; layers with no contributor keep their current
    parameters. Returns a fresh state with the round counter advanced.
    """
    template = current_global.model
    prunable = template.prunable_blocks
    ordered = sorted(payloads, key=lambda p: p.source_client)
    for p in ordered:
        if p.source_client < 0 or p.source_client >= weights.omega.size:
            raise ContractError(f"client {p.source_client} has no aggregation weight")

    new_model = template.copy()
    new_prunable = new_model.prunable_blocks
    for l in range(1, len(prunable) + 1):
        contribs = [p for p in ordered if l in p.layers]
        if not contribs:
            continue
        tmpl_blk = prunable[l - 1]
        for p in contribs:
            w, b = p.layers[l]
            if w.shape != tmpl_blk.weights.shape or b.shape != tmpl_blk.bias.shape:
                raise ShapeMismatchError(
                    f"client {p.source_client}, layer {l}: payload shape {w.shape}/{b.shape} "
                    f"does not match global {tmpl_blk.weights.shape}/{tmpl_blk.bias.shape}"
                )
        denom = 0.0
        for p in contribs:
            denom += float(weights.omega[p.source_client])
        if denom <= 0.0:
            raise ContractError(f"layer {l}: all contributing clients have zero weight")
        acc_w = np.zeros_like(tmpl_blk.weights)
        acc_b = np.zeros_like(tmpl_blk.bias)
        for p in contribs:
            coef = float(weights.omega[p.source_client]) / denom
            w, b = p.layers[l]
            acc_w += coef * w
            acc_b += coef * b
        new_prunable[l - 1].weights = acc_w
        new_prunable[l - 1].bias = acc_b
    return GlobalModelState(model=new_model, round_index=current_global.round_index + 1)


def fedavg_aggregate(
    full_models: list[tuple[int, LayeredModel]],
    weights: AggregationWeights,
    current_global: GlobalModelState | None = None,
) -> GlobalModelState:
    """Weighted average of full models: layer-wise aggregation with all-ones
    masks, so the two paths agree bit-for-bit by construction."""
    if not full_models:
        raise ContractError("fedavg_aggregate needs at least one model")
    if current_global is None:
        current_global = GlobalModelState(model=full_models[0][1].copy(), round_index=0)
    payloads = [
        prune_model(m, LayerMask.ones(m.num_prunable), source_client=cid)
        for cid, m in full_models
    ]
    return aggregate_layerwise(payloads, weights, current_global)


def distribute(global_state: GlobalModelState, client: "ClientState") -> "ClientState":
    """Overwrite a client's shared layers from the global model.

    Homogeneous clients take the full model; heterogeneous clients take only
    their layer_count leading layers, leaving the personalized head untouched.
    """
    if client.assignment is None:
        client.model = global_state.model.copy()
        return client
    src = global_state.model.prunable_blocks
    dst = client.model.prunable_blocks
    if len(dst) > len(src):
        raise ContractError("client sub-model has more prunable layers than the global template")
    for i, blk in enumerate(dst):
        blk.weights = src[i].weights.copy()
        blk.bias = src[i].bias.copy()
    return client
