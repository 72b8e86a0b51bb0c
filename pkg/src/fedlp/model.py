"""Layered feed-forward models with exact forward/backward passes and counters.

A model is an ordered list of blocks. Dense blocks carry a weight matrix,
a bias vector and a fused activation; activation-only blocks carry no
parameters. Pruning and aggregation address the parameterized blocks by
1-based layer index, skipping any client-local personalized head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, ShapeMismatchError

DENSE = "dense"
ACTIVATION_ONLY = "activation"

RELU = "relu"
SOFTMAX = "softmax"
IDENTITY = "identity"

_ACTIVATIONS = (RELU, SOFTMAX, IDENTITY)


@dataclass
class LayerBlock:
    """One block of a layered model.

    weights has shape (fan_in, fan_out) and bias shape (fan_out,); both are
    empty for activation-only blocks. personal_head marks a client-local
    output layer that is excluded from the prunable layer indexing.
    """

    index: int
    kind: str
    weights: np.ndarray
    bias: np.ndarray
    activation: str
    personal_head: bool = False

    def __post_init__(self) -> None:
        if self.kind not in (DENSE, ACTIVATION_ONLY):
            raise ContractError(f"block {self.index}: unknown kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"block {self.index}: unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kind == ACTIVATION_ONLY:
            if self.weights.size or self.bias.size:
                raise ContractError(f"block {self.index}: activation-only block must carry no parameters")
        else:
            if self.weights.ndim != 2:
                raise ShapeMismatchError(f"block {self.index}: weights must be 2-D")
            if self.bias.size and self.bias.shape != (self.weights.shape[1],):
                raise ShapeMismatchError(
                    f"block {self.index}: bias length {self.bias.shape[0]} "
                    f"!= fan_out {self.weights.shape[1]}"
                )
            if not self.bias.size:
                self.bias = np.zeros(self.weights.shape[1])

    @property
    def is_parameterized(self) -> bool:
        return self.kind == DENSE

    @property
    def fan_in(self) -> int:
        return int(self.weights.shape[0])

    @property
    def fan_out(self) -> int:
        return int(self.weights.shape[1])

    def param_count(self) -> int:
        return int(self.weights.size + self.bias.size)

    def copy(self) -> "LayerBlock":
        return LayerBlock(
            index=self.index,
            kind=self.kind,
            weights=self.weights.copy(),
            bias=self.bias.copy(),
            activation=self.activation,
            personal_head=self.personal_head,
        )


@dataclass
class LayeredModel:
    """Ordered block list; prunable layers are the non-head dense blocks, 1..L."""

    blocks: list[LayerBlock]

    def __post_init__(self) -> None:
        last_fan_out: int | None = None
        for pos, blk in enumerate(self.blocks):
            if blk.index != pos:
                blk.index = pos
            if blk.activation == SOFTMAX and pos != len(self.blocks) - 1:
                raise ContractError(f"block {pos}: softmax is only valid on the final block")
            if blk.is_parameterized:
                if last_fan_out is not None and blk.fan_in != last_fan_out:
                    raise ShapeMismatchError(
                        f"block {pos}: fan_in {blk.fan_in} != previous fan_out {last_fan_out}"
                    )
                last_fan_out = blk.fan_out

    @property
    def prunable_blocks(self) -> list[LayerBlock]:
        return [b for b in self.blocks if b.is_parameterized and not b.personal_head]

    @property
    def num_prunable(self) -> int:
        return len(self.prunable_blocks)

    def copy(self) -> "LayeredModel":
        return LayeredModel([b.copy() for b in self.blocks])


@dataclass
class GradientSet:
    """Per-block (dW, db) pairs aligned with a model's block list."""

    per_block: list[tuple[np.ndarray, np.ndarray] | None]


@dataclass
class ForwardCache:
    """Intermediate activations kept for the matching backward pass."""

    inputs: list[np.ndarray]
    pre_acts: list[np.ndarray | None]
    output: np.ndarray
    n_blocks: int


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == RELU:
        return kernels.relu_forward(z)
    if name == SOFTMAX:
        return kernels.softmax_forward(z)
    return z


def forward(model: LayeredModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the model on a (samples x features) batch.

    Returns the final block output (softmax probabilities for classifier
    models) and a cache sufficient for backward().
    """
    x = np.ascontiguousarray(np.asarray(batch, dtype=np.float64))
    if x.ndim != 2:
        raise ShapeMismatchError("input batch must be 2-D (samples x features)")
    inputs: list[np.ndarray] = []
    pre_acts: list[np.ndarray | None] = []
    out = x
    for i, blk in enumerate(model.blocks):
        inputs.append(out)
        if blk.is_parameterized:
            if out.shape[1] != blk.fan_in:
                raise ShapeMismatchError(
                    f"block {i}: input width {out.shape[1]} does not match fan_in {blk.fan_in}"
                )
            z = kernels.affine_forward(out, blk.weights, blk.bias)
            pre_acts.append(z)
            out = _apply_activation(blk.activation, z)
        else:
            pre_acts.append(None)
            out = _apply_activation(blk.activation, out)
    return out, ForwardCache(inputs=inputs, pre_acts=pre_acts, output=out, n_blocks=len(model.blocks))


def backward(model: LayeredModel, cache: ForwardCache, labels: np.ndarray) -> GradientSet:
    """Gradients of the mean cross-entropy loss w.r.t. every parameter.

    The cache must come from a forward() call on this model; the loss is
    cross-entropy over the softmax output block.
    """
    blocks = model.blocks
    if cache.n_blocks != len(blocks) or len(cache.inputs) != len(blocks):
        raise ContractError("cache does not match model: wrong block count")
    if blocks[-1].activation != SOFTMAX:
        raise ContractError("cross-entropy backward requires a softmax output block")
    labels = np.ascontiguousarray(np.asarray(labels, dtype=np.int64))
    n, width = cache.output.shape
    if labels.shape != (n,):
        raise ContractError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= width):
        raise ContractError(f"labels must be class indices in 0..{width - 1}")

    per_block: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(blocks)
    da: np.ndarray | None = None
    for i in reversed(range(len(blocks))):
        blk = blocks[i]
        x_in = cache.inputs[i]
        is_last = i == len(blocks) - 1
        if blk.is_parameterized:
            if x_in.ndim != 2 or x_in.shape[1] != blk.fan_in:
                raise ContractError(f"stale cache: block {i} input width does not match model")
            if is_last and blk.activation == SOFTMAX:
                dz = kernels.softmax_xent_grad(cache.output, labels)
            elif blk.activation == RELU:
                dz = kernels.relu_backward(cache.pre_acts[i], da)
            else:
                dz = da
            dx, dw, db = kernels.affine_backward(x_in, blk.weights, dz)
            per_block[i] = (dw, db)
            da = dx
        else:
            if is_last and blk.activation == SOFTMAX:
                da = kernels.softmax_xent_grad(cache.output, labels)
            elif blk.activation == RELU:
                da = kernels.relu_backward(x_in, da)
            # identity: gradient passes through unchanged
    return GradientSet(per_block)


def sgd_step(model: LayeredModel, grads: GradientSet, lr: float) -> LayeredModel:
    """In-place SGD update p <- p - lr * g; returns the model.

    lr = 0 is allowed and leaves the model unchanged; negative lr is refused.
    Non-finite gradients abort before any parameter is touched.
    """
    if lr < 0:
        raise ContractError(f"learning rate must be nonnegative, got {lr}")
    if len(grads.per_block) != len(model.blocks):
        raise ContractError("gradient set does not match model: wrong block count")
    updates: list[tuple[LayerBlock, np.ndarray, np.ndarray]] = []
    for i, blk in enumerate(model.blocks):
        g = grads.per_block[i]
        if not blk.is_parameterized:
            continue
        if g is None:
            raise ContractError(f"block {i}: missing gradient for parameterized block")
        dw, db = g
        if dw.shape != blk.weights.shape or db.shape != blk.bias.shape:
            raise ContractError(f"block {i}: gradient shape does not match parameters")
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise ContractError(
                f"block {i}: non-finite gradient "
                f"(|dw|_max={np.abs(dw).max():.3e}, |db|_max={np.abs(db).max():.3e})"
            )
        updates.append((blk, dw, db))
    for blk, dw, db in updates:
        kernels.sgd_update(blk.weights.ravel(), np.ascontiguousarray(dw).ravel(), lr)
        kernels.sgd_update(blk.bias, np.ascontiguousarray(db), lr)
    return model


def _resolve_layer_range(model: LayeredModel, layer_range) -> list[int]:
    n = model.num_prunable
    indices = sorted(set(int(i) for i in layer_range))
    for i in indices:
        if not 1 <= i <= n:
            raise IndexError(f"layer index {i} outside 1..{n}")
    return indices


def param_count(model: LayeredModel, layer_range=None) -> int:
    """Exact parameter count of the selected prunable layers (1-based).

    With no range, counts every parameterized block, including a personalized
    head if the model carries one.
    """
    if layer_range is None:
        return sum(b.param_count() for b in model.blocks if b.is_parameterized)
    prunable = model.prunable_blocks
    return sum(prunable[i - 1].param_count() for i in _resolve_layer_range(model, layer_range))


def flops_count(model: LayeredModel, layer_range=None) -> int:
    """Forward FLOPs per sample: 2*fan_in*fan_out per dense block (multiply +
    add), plus fan_out for the bias add and fan_out for the activation.

    Standalone activation-only blocks cost their input width and are counted
    only in full-model mode; a layer range selects prunable layers alone.
    """
    selected = None if layer_range is None else set(_resolve_layer_range(model, layer_range))
    total = 0
    width: int | None = None
    prunable_idx = 0
    for blk in model.blocks:
        if blk.is_parameterized:
            cost = 2 * blk.fan_in * blk.fan_out + 2 * blk.fan_out
            width = blk.fan_out
            if selected is None:
                total += cost
            elif not blk.personal_head:
                prunable_idx += 1
                if prunable_idx in selected:
                    total += cost
        elif selected is None:
            if width is None:
                raise ContractError(
                    f"block {blk.index}: activation-only block before any dense block has unknown width"
                )
            total += width
    return int(total)


def cross_entropy(output_probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of softmax outputs against integer labels."""
    return kernels.xent_loss(
        np.ascontiguousarray(output_probs), np.ascontiguousarray(np.asarray(labels, dtype=np.int64))
    )


def evaluate_accuracy(model: LayeredModel, features: np.ndarray, labels: np.ndarray, batch_size: int = 4096) -> float:
    """Fraction of samples whose argmax output matches the label."""
    n = features.shape[0]
    if n == 0:
        return 0.0
    hits = 0
    for start in range(0, n, batch_size):
        out, _ = forward(model, features[start : start + batch_size])
        hits += int((out.argmax(axis=1) == labels[start : start + batch_size]).sum())
    return hits / n


def _init_dense(fan_in: int, fan_out: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # uniform fan-in scaled, the usual default for dense layers
    s = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-s, s, size=(fan_in, fan_out))
    b = rng.uniform(-s, s, size=fan_out)
    return w, b


def make_mlp(
    input_dim: int,
    hidden_dims: tuple[int, ...],
    num_classes: int,
    rng: np.random.Generator,
) -> LayeredModel:
    """Fully-connected classifier: relu hidden layers, softmax output.

    Produces len(hidden_dims) + 1 prunable dense blocks.
    """
    dims = [int(input_dim), *[int(h) for h in hidden_dims], int(num_classes)]
    blocks = []
    for i in range(len(dims) - 1):
        act = SOFTMAX if i == len(dims) - 2 else RELU
        w, b = _init_dense(dims[i], dims[i + 1], rng)
        blocks.append(LayerBlock(index=i, kind=DENSE, weights=w, bias=b, activation=act))
    return LayeredModel(blocks)


def make_personal_head(fan_in: int, num_classes: int, rng: np.random.Generator) -> LayerBlock:
    """Client-local softmax output layer; never uploaded, never overwritten."""
    w, b = _init_dense(fan_in, num_classes, rng)
    return LayerBlock(index=0, kind=DENSE, weights=w, bias=b, activation=SOFTMAX, personal_head=True)
