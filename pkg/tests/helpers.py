"""Shared test utilities: independent oracles and fixture builders."""

from __future__ import annotations

import struct

import numpy as np

from fedlp.config import DataConfig, ExperimentConfig
from fedlp.data import PartitionSpec
from fedlp.model import (
    ACTIVATION_ONLY,
    DENSE,
    IDENTITY,
    RELU,
    SOFTMAX,
    LayerBlock,
    LayeredModel,
    cross_entropy,
    forward,
)


def finite_difference_grads(model: LayeredModel, X: np.ndarray, y: np.ndarray, h: float = 1e-6):
    """Central-difference gradient oracle, independent of backward().

    Perturbs every parameter in place and evaluates the cross-entropy loss on
    both sides: (L(w+h) - L(w-h)) / 2h.
    """
    grads = []
    for blk in model.blocks:
        if not blk.is_parameterized:
            grads.append(None)
            continue
        dw = np.zeros_like(blk.weights)
        db = np.zeros_like(blk.bias)
        for arr, out in ((blk.weights, dw), (blk.bias, db)):
            flat = arr.ravel()
            oflat = out.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                loss_plus = cross_entropy(forward(model, X)[0], y)
                flat[i] = orig - h
                loss_minus = cross_entropy(forward(model, X)[0], y)
                flat[i] = orig
                oflat[i] = (loss_plus - loss_minus) / (2.0 * h)
        grads.append((dw, db))
    return grads


def norm_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(np.ravel(a)))
    nb = float(np.linalg.norm(np.ravel(b)))
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b))) / max(na, nb, 1e-12)


def dense(index: int, weights, bias, activation=IDENTITY, personal_head=False) -> LayerBlock:
    return LayerBlock(
        index=index,
        kind=DENSE,
        weights=np.asarray(weights, dtype=np.float64),
        bias=np.asarray(bias, dtype=np.float64),
        activation=activation,
        personal_head=personal_head,
    )


def activation_block(index: int, activation) -> LayerBlock:
    return LayerBlock(
        index=index,
        kind=ACTIVATION_ONLY,
        weights=np.empty((0, 0)),
        bias=np.empty(0),
        activation=activation,
    )


def random_small_model(rng: np.random.Generator) -> tuple[LayeredModel, np.ndarray, np.ndarray]:
    """Random tiny classifier plus a matching batch, for gradient checks."""
    n_dense = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 6)) for _ in range(n_dense)]
    input_dim = int(rng.integers(1, 6))
    num_classes = int(rng.integers(2, 5))
    widths = [input_dim, *dims[:-1], num_classes] if n_dense > 1 else [input_dim, num_classes]
    blocks: list[LayerBlock] = []
    idx = 0
    for i in range(len(widths) - 1):
        is_last = i == len(widths) - 2
        w = rng.standard_normal((widths[i], widths[i + 1]))
        b = rng.standard_normal(widths[i + 1])
        if is_last and rng.random() < 0.3:
            # split output into identity dense + standalone softmax
            blocks.append(dense(idx, w, b, IDENTITY))
            idx += 1
            blocks.append(activation_block(idx, SOFTMAX))
        else:
            blocks.append(dense(idx, w, b, SOFTMAX if is_last else RELU))
            if not is_last and rng.random() < 0.25:
                idx += 1
                blocks.append(activation_block(idx, IDENTITY))
        idx += 1
    model = LayeredModel(blocks)
    batch = int(rng.integers(1, 5))
    X = rng.standard_normal((batch, input_dim))
    y = rng.integers(0, num_classes, size=batch)
    return model, X, y


def write_idx_pair(tmp_path, images: np.ndarray, labels: np.ndarray):
    """Write a well-formed big-endian IDX image/label file pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / "images.idx"
    lbl_path = tmp_path / "labels.idx"
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.tobytes())
    with open(lbl_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, labels.size))
        fh.write(labels.tobytes())
    return str(img_path), str(lbl_path)


def tiny_config(scheme: str = "fedavg", seed: int = 42, **kw) -> ExperimentConfig:
    """Small fast experiment used across orchestrator-level tests."""
    defaults = dict(
        master_seed=seed,
        num_clients=10,
        participation_rate=0.3,
        local_epochs=2,
        batch_size=16,
        lr=0.05,
        max_global_epochs=5,
        eval_every=1,
        scheme=scheme,
        hidden_dims=(16, 12, 10, 8),
        data=DataConfig(
            num_classes=4, samples_per_class=60, feature_dim=8, class_separation=6.0, test_fraction=0.25
        ),
        partition=PartitionSpec(scheme="iid"),
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)
