"""Communication/computation accounting, the Monte-Carlo verifier for the
masked-aggregation expectation identity, and metrics CSV output.

Accounting convention (matching the upload+download column of the reference
comparison table): upload is the exact parameter count of what each
participant sent; download is one model per participant, the full model for
homogeneous schemes and the client's leading layers for heterogeneous ones.
All counts are exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ContractError
from .pruning import PrunedPayload


@dataclass
class RoundMetrics:
    """Per-global-epoch record; test_accuracy is None on unevaluated rounds."""

    round_index: int
    test_accuracy: float | None
    upload_params: int
    download_params: int
    per_client_flops: list[int]
    wallclock_s: float = 0.0
    per_client_model_flops: list[int] = field(default_factory=list)

    @property
    def mean_flops(self) -> float:
        if not self.per_client_flops:
            return 0.0
        return sum(self.per_client_flops) / len(self.per_client_flops)


def comm_accounting(
    payloads: list[PrunedPayload],
    scheme: str,
    full_model_params: int,
    backbone_params: dict[int, int] | None = None,
) -> tuple[int, int]:
    """Exact (upload, download) parameter counts for one completed round.

    backbone_params maps participating hetero clients to the size of their
    leading-layer slice; it is required for (and only for) fedlp_hetero.
    """
    upload = sum(p.param_count() for p in payloads)
    if scheme == "fedlp_hetero":
        if backbone_params is None:
            raise ContractError("hetero accounting requires per-client backbone sizes")
        download = sum(backbone_params[p.source_client] for p in payloads)
    else:
        download = full_model_params * len(payloads)
    return int(upload), int(download)


@dataclass
class Prop1Report:
    """Empirical vs closed-form expected-gradient ratio under random masking."""

    k: int
    p: float
    trials: int
    empirical_ratio: float
    closed_form: float
    abs_error: float
    std_error: float


def verify_prop1(
    k: int,
    p: float,
    trials: int,
    rng: np.random.Generator,
    chunk: int = 1 << 17,
) -> Prop1Report:
    """Monte-Carlo check of the masked-mean gradient expectation.

    Draws k scalar gradients once from a unit-mean exponential, then per trial
    draws Bernoulli(p) keep-bits and averages the kept gradients (0 when all
    bits are zero, matching the empty-contributor rule). The mean over trials,
    relative to the plain mean of all k gradients, is compared against
    1 - (1-p)^k.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ContractError("p must lie in [0, 1]")
    if trials < 1:
        raise ContractError("trials must be >= 1")
    grads = rng.exponential(1.0, size=k)
    gbar = float(grads.sum() / k)

    total = 0.0
    total_sq = 0.0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        uniforms = rng.random((m, k))
        s, s2 = kernels.prop1_chunk(uniforms, grads, float(p))
        total += s
        total_sq += s2
        done += m

    mean_ghat = total / trials
    var_ghat = max(total_sq / trials - mean_ghat * mean_ghat, 0.0)
    empirical = mean_ghat / gbar
    std_error = float(np.sqrt(var_ghat / trials) / abs(gbar))
    closed = 1.0 - (1.0 - p) ** k
    return Prop1Report(
        k=k,
        p=float(p),
        trials=trials,
        empirical_ratio=float(empirical),
        closed_form=float(closed),
        abs_error=float(abs(empirical - closed)),
        std_error=std_error,
    )


CSV_HEADER = "round,test_accuracy,upload_params,download_params,mean_flops,wallclock_s"


def _fmt(value: float) -> str:
    return repr(float(value))


def emit_csv(metrics, path: str | Path) -> None:
    """Write evaluated rounds to CSV: header plus one row per evaluated round.

    Plain decimal formatting, no thousands separators, newline-terminated;
    byte-identical across reruns of the same seeded run.
    """
    path = Path(path)
    lines = [CSV_HEADER]
    for m in metrics:
        if m.test_accuracy is None:
            continue
        lines.append(
            f"{m.round_index},{_fmt(m.test_accuracy)},{m.upload_params},"
            f"{m.download_params},{_fmt(m.mean_flops)},{_fmt(m.wallclock_s)}"
        )
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV {path}: {exc}") from exc


def summary_table(scheme: str, metrics: list[RoundMetrics]) -> str:
    """Comparison-table style summary: accuracy, comm kparams, model MFLOPs."""
    evaluated = [m for m in metrics if m.test_accuracy is not None]
    final_acc = evaluated[-1].test_accuracy * 100.0 if evaluated else float("nan")
    comm = [(m.upload_params + m.download_params) / max(len(m.per_client_flops), 1) for m in metrics]
    mean_comm_k = float(np.mean(comm)) / 1e3 if comm else 0.0
    model_mflops = [f for m in metrics for f in m.per_client_model_flops]
    mean_mflops = float(np.mean(model_mflops)) / 1e6 if model_mflops else 0.0
    header = f"{'scheme':<16} {'test acc (%)':>12} {'comm #param (k)':>16} {'comp MFLOPs':>12}"
    row = f"{scheme:<16} {final_acc:>12.2f} {mean_comm_k:>16.2f} {mean_mflops:>12.4f}"
    return header + "\n" + row
