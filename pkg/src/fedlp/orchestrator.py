"""The federated round loop: select, train locally, prune, aggregate,
distribute, evaluate.

A FederatedSystem is fully determined by its config (which includes the
master seed): every random draw comes from a named substream, so serial and
worker-parallel execution produce bit-identical results.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregationWeights, GlobalModelState, aggregate_layerwise, distribute
from .config import ExperimentConfig, validate
from .data import Dataset, load_idx, generate_synthetic, run_partitioner, split_train_test
from .errors import ConfigError, ContractError
from .metrics import RoundMetrics, comm_accounting
from .model import LayeredModel, backward, evaluate_accuracy, flops_count, forward, make_mlp, param_count, sgd_step
from .pruning import HeteroAssignment, LayerMask, LprConfig, PrunedPayload, assign_hetero, build_hetero_model, draw_mask, prune_model
from .rng import derive_seed, substream

logger = logging.getLogger(__name__)


@dataclass
class ClientState:
    """One client: its data slice, its model, and its scheme-specific state."""

    id: int
    data_indices: np.ndarray
    model: LayeredModel
    lpr: LprConfig | None = None
    assignment: HeteroAssignment | None = None


@dataclass
class ExperimentResult:
    """Everything a run produces: per-round metrics and the final global model."""

    metrics: list[RoundMetrics]
    final_global: GlobalModelState
    full_model_params: int
    personalized_accuracy: dict[int, float] | None = None


def select_participants(num_clients: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of k distinct clients, returned in ascending id order."""
    if not 1 <= k <= num_clients:
        raise ContractError(f"participant count {k} must lie in 1..{num_clients}")
    return np.sort(rng.choice(num_clients, size=k, replace=False))


def local_train(
    model: LayeredModel,
    features: np.ndarray,
    labels: np.ndarray,
    local_epochs: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
) -> LayeredModel:
    """Mini-batch SGD over the client shard, local_epochs full passes."""
    n = features.shape[0]
    for _ in range(local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            out, cache = forward(model, features[idx])
            grads = backward(model, cache, labels[idx])
            sgd_step(model, grads, lr)
    return model


class FederatedSystem:
    """Steppable simulator; run_round() advances one global epoch."""

    def __init__(self, config: ExperimentConfig):
        errors = validate(config)
        if errors:
            raise ConfigError(errors)
        self.cfg = config
        seed = config.master_seed

        source = self._load_source()
        self.train, self.test = split_train_test(
            source, config.data.test_fraction, substream(seed, "test_split")
        )
        part_seed = (
            config.partition.seed
            if config.partition.seed is not None
            else derive_seed(seed, "partition")
        )
        config.partition.num_clients = config.num_clients
        self.partition = run_partitioner(self.train, config.partition, part_seed)

        self.template = make_mlp(
            self.train.features.shape[1],
            config.hidden_dims,
            self.train.num_classes,
            substream(seed, "model_init"),
        )
        self.full_model_params = param_count(self.template)
        self.global_state = GlobalModelState(model=self.template.copy(), round_index=0)
        self.clients = self._init_clients()
        self._client_data = [
            (self.train.features[c.data_indices], self.train.labels[c.data_indices])
            for c in self.clients
        ]
        if config.weighting == "uniform":
            self.weights = AggregationWeights.uniform(config.num_clients)
        else:
            self.weights = AggregationWeights.from_sizes(
                [c.data_indices.size for c in self.clients]
            )
        self.round_index = 0
        self.last_payloads: list[PrunedPayload] = []

    def _load_source(self) -> Dataset:
        d = self.cfg.data
        if d.source == "synthetic":
            return generate_synthetic(
                d.num_classes,
                d.samples_per_class,
                d.feature_dim,
                d.class_separation,
                derive_seed(self.cfg.master_seed, "data"),
            )
        return load_idx(d.images_path, d.labels_path)

    def _init_clients(self) -> list[ClientState]:
        cfg = self.cfg
        clients = []
        if cfg.scheme == "fedlp_hetero":
            assignments = assign_hetero(
                cfg.resolved_lc_distribution(),
                cfg.num_clients,
                self.template.num_prunable,
                substream(cfg.master_seed, "hetero_assign"),
            )
            for k in range(cfg.num_clients):
                model = build_hetero_model(
                    self.template, assignments[k], substream(cfg.master_seed, "head_init", k)
                )
                clients.append(
                    ClientState(
                        id=k,
                        data_indices=self.partition.assignments[k],
                        model=model,
                        assignment=assignments[k],
                    )
                )
        else:
            lpr = LprConfig(cfg.resolved_lpr()) if cfg.scheme == "fedlp_homo" else None
            for k in range(cfg.num_clients):
                clients.append(
                    ClientState(
                        id=k,
                        data_indices=self.partition.assignments[k],
                        model=self.template.copy(),
                        lpr=lpr,
                    )
                )
        return clients

    def _train_one(self, client_id: int, round_index: int) -> int:
        """Train one participant in place; returns its training FLOPs."""
        cfg = self.cfg
        client = self.clients[client_id]
        features, labels = self._client_data[client_id]
        local_train(
            client.model,
            features,
            labels,
            cfg.local_epochs,
            cfg.batch_size,
            cfg.lr,
            substream(cfg.master_seed, "shuffle", round_index, client_id),
        )
        samples_processed = cfg.local_epochs * features.shape[0]
        # forward + backward costed as 3x the forward pass
        return flops_count(client.model) * samples_processed * 3

    def run_round(self) -> RoundMetrics:
        cfg = self.cfg
        t = self.round_index + 1
        k = cfg.participants_per_round()
        selected = select_participants(cfg.num_clients, k, substream(cfg.master_seed, "select", t))
        active = []
        for cid in selected:
            if self.clients[cid].data_indices.size == 0:
                logger.warning("round %d: client %d has an empty shard, skipped", t, cid)
                continue
            active.append(int(cid))

        started = time.perf_counter() if cfg.timing else 0.0
        if cfg.workers > 1 and len(active) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                train_flops = list(pool.map(lambda cid: self._train_one(cid, t), active))
            flops_by_client = dict(zip(active, train_flops))
        else:
            flops_by_client = {cid: self._train_one(cid, t) for cid in active}

        payloads = []
        for cid in active:
            client = self.clients[cid]
            if cfg.scheme == "fedlp_homo":
                mask = draw_mask(client.lpr, substream(cfg.master_seed, "mask", t, cid))
            else:
                mask = LayerMask.ones(client.model.num_prunable)
            payloads.append(prune_model(client.model, mask, source_client=cid, round_index=t))
        self.last_payloads = payloads

        self.global_state = aggregate_layerwise(payloads, self.weights, self.global_state)
        for client in self.clients:
            distribute(self.global_state, client)

        backbone_params = None
        if cfg.scheme == "fedlp_hetero":
            backbone_params = {
                cid: param_count(
                    self.template, range(1, self.clients[cid].assignment.layer_count + 1)
                )
                for cid in active
            }
        upload, download = comm_accounting(
            payloads, cfg.scheme, self.full_model_params, backbone_params
        )

        accuracy = None
        if t % cfg.eval_every == 0 or t == cfg.max_global_epochs:
            accuracy = evaluate_accuracy(self.global_state.model, self.test.features, self.test.labels)
        wallclock = (time.perf_counter() - started) if cfg.timing else 0.0

        self.round_index = t
        return RoundMetrics(
            round_index=t,
            test_accuracy=accuracy,
            upload_params=upload,
            download_params=download,
            per_client_flops=[flops_by_client[cid] for cid in active],
            per_client_model_flops=[flops_count(self.clients[cid].model) for cid in active],
            wallclock_s=wallclock,
        )

    def personalized_accuracies(self) -> dict[int, float]:
        """Accuracy of each client's own model on the held-out test set."""
        return {
            c.id: evaluate_accuracy(c.model, self.test.features, self.test.labels)
            for c in self.clients
        }

    def run(self) -> ExperimentResult:
        metrics = [self.run_round() for _ in range(self.cfg.max_global_epochs)]
        personalized = (
            self.personalized_accuracies() if self.cfg.scheme == "fedlp_hetero" else None
        )
        return ExperimentResult(
            metrics=metrics,
            final_global=self.global_state,
            full_model_params=self.full_model_params,
            personalized_accuracy=personalized,
        )


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Validate, build, and run a complete experiment."""
    return FederatedSystem(config).run()
