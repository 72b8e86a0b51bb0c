"""Layer-wise aggregation, FedAvg equivalence, and distribution."""

import numpy as np
import pytest
from helpers import dense
from hypothesis import given, strategies as st

from fedlp.aggregation import AggregationWeights, GlobalModelState, aggregate_layerwise, distribute, fedavg_aggregate
from fedlp.errors import ContractError, ShapeMismatchError
from fedlp.model import IDENTITY, LayeredModel, make_mlp, param_count
from fedlp.orchestrator import ClientState
from fedlp.pruning import HeteroAssignment, LayerMask, PrunedPayload, build_hetero_model, lc_uniform, prune_model


def scalar_model(value: float) -> LayeredModel:
    return LayeredModel([dense(0, [[value]], [0.0], IDENTITY)])


def scalar_payload(client: int, value: float) -> PrunedPayload:
    return PrunedPayload({1: (np.array([[value]]), np.array([0.0]))}, source_client=client, round_index=1)


def empty_payload(client: int) -> PrunedPayload:
    return PrunedPayload({}, source_client=client, round_index=1)


class TestAggregateLayerwise:
    def test_plain_average_of_two_clients(self):
        state = GlobalModelState(scalar_model(0.0))
        out = aggregate_layerwise(
            [scalar_payload(0, 2.0), scalar_payload(1, 4.0)],
            AggregationWeights(np.array([0.5, 0.5])),
            state,
        )
        assert out.model.prunable_blocks[0].weights[0, 0] == 3.0
        assert out.round_index == state.round_index + 1

    def test_single_contributor_copies_exactly_regardless_of_weights(self):
        state = GlobalModelState(scalar_model(0.0))
        value = 0.1234567890123456789
        for omega in ([3.0, 5.0], [0.0017, 9.0], [1e-8, 1.0]):
            out = aggregate_layerwise(
                [scalar_payload(0, value), empty_payload(1)],
                AggregationWeights(np.array(omega)),
                state,
            )
            assert out.model.prunable_blocks[0].weights[0, 0] == np.float64(value)

    def test_hand_computed_weighted_mean(self):
        # sizes (100, 200, 300), layer masks (1, 0, 1): (100*1 + 300*2) / 400 = 1.75
        state = GlobalModelState(scalar_model(0.0))
        out = aggregate_layerwise(
            [scalar_payload(0, 1.0), empty_payload(1), scalar_payload(2, 2.0)],
            AggregationWeights(np.array([100.0, 200.0, 300.0])),
            state,
        )
        assert out.model.prunable_blocks[0].weights[0, 0] == 1.75

    def test_empty_contributor_layer_carries_over_bitwise(self):
        rng = np.random.default_rng(0)
        template = make_mlp(6, (5, 4), 3, rng)
        state = GlobalModelState(template.copy())
        locals_ = [(cid, template.copy()) for cid in range(3)]
        for cid, m in locals_:
            for blk in m.prunable_blocks:
                blk.weights += rng.standard_normal(blk.weights.shape)
        payloads = [
            prune_model(m, LayerMask(np.array([1, 0, 1])), source_client=cid) for cid, m in locals_
        ]
        out = aggregate_layerwise(payloads, AggregationWeights.uniform(3), state)
        np.testing.assert_array_equal(
            out.model.prunable_blocks[1].weights, template.prunable_blocks[1].weights
        )
        assert not np.array_equal(out.model.prunable_blocks[0].weights, template.prunable_blocks[0].weights)
        assert not np.array_equal(out.model.prunable_blocks[2].weights, template.prunable_blocks[2].weights)

    def test_shape_mismatch_names_client_and_layer(self):
        state = GlobalModelState(scalar_model(0.0))
        bad = PrunedPayload({1: (np.zeros((2, 2)), np.zeros(2))}, source_client=7, round_index=1)
        with pytest.raises(ShapeMismatchError, match=r"client 7, layer 1"):
            aggregate_layerwise([bad], AggregationWeights(np.full(8, 1.0)), state)

    def test_negative_weight_rejected(self):
        with pytest.raises(ContractError):
            AggregationWeights(np.array([1.0, -0.5]))

    def test_all_zero_weight_contributors_rejected(self):
        state = GlobalModelState(scalar_model(0.0))
        with pytest.raises(ContractError, match="layer 1"):
            aggregate_layerwise(
                [scalar_payload(0, 1.0)], AggregationWeights(np.array([0.0, 1.0])), state
            )

    def test_permutation_invariance_bit_exact(self):
        rng = np.random.default_rng(1)
        template = make_mlp(6, (5, 4), 3, rng)
        state = GlobalModelState(template.copy())
        payloads = []
        for cid in range(5):
            m = template.copy()
            for blk in m.prunable_blocks:
                blk.weights += rng.standard_normal(blk.weights.shape)
            mask = LayerMask((rng.random(3) < 0.7).astype(np.int64))
            payloads.append(prune_model(m, mask, source_client=cid))
        weights = AggregationWeights(rng.random(5) + 0.1)
        ref = aggregate_layerwise(payloads, weights, state)
        for perm_seed in range(3):
            shuffled = list(payloads)
            np.random.default_rng(perm_seed).shuffle(shuffled)
            out = aggregate_layerwise(shuffled, weights, state)
            for a, b in zip(out.model.prunable_blocks, ref.model.prunable_blocks):
                np.testing.assert_array_equal(a.weights, b.weights)
                np.testing.assert_array_equal(a.bias, b.bias)

    @given(st.integers(min_value=0, max_value=10_000))
    def test_convex_combination_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n_clients = int(rng.integers(1, 6))
        values = rng.standard_normal(n_clients) * 10.0
        omega = rng.random(n_clients) + 1e-3
        state = GlobalModelState(scalar_model(0.0))
        payloads = [scalar_payload(c, values[c]) for c in range(n_clients)]
        out = aggregate_layerwise(payloads, AggregationWeights(omega), state)
        got = out.model.prunable_blocks[0].weights[0, 0]
        slack = 1e-12 * max(1.0, np.abs(values).max())
        assert values.min() - slack <= got <= values.max() + slack

    def test_identical_inputs_are_a_fixed_point(self):
        rng = np.random.default_rng(2)
        template = make_mlp(6, (5,), 3, rng)
        state = GlobalModelState(template.copy())
        payloads = [
            prune_model(template, LayerMask.ones(2), source_client=cid) for cid in range(4)
        ]
        out = aggregate_layerwise(payloads, AggregationWeights.uniform(4), state)
        for a, b in zip(out.model.prunable_blocks, template.prunable_blocks):
            np.testing.assert_array_equal(a.weights, b.weights)


class TestFedavgAggregate:
    def test_identical_models_fixed_point(self):
        rng = np.random.default_rng(3)
        m = make_mlp(5, (4,), 3, rng)
        out = fedavg_aggregate([(0, m.copy()), (1, m.copy())], AggregationWeights.uniform(2))
        for a, b in zip(out.model.prunable_blocks, m.prunable_blocks):
            np.testing.assert_array_equal(a.weights, b.weights)

    def test_uniform_weights_give_midpoint(self):
        out = fedavg_aggregate(
            [(0, scalar_model(1.0)), (1, scalar_model(3.0))], AggregationWeights.uniform(2)
        )
        assert out.model.prunable_blocks[0].weights[0, 0] == 2.0

    def test_datasize_weights(self):
        # sizes (300, 700), params (0.0, 1.0) -> 0.7
        out = fedavg_aggregate(
            [(0, scalar_model(0.0)), (1, scalar_model(1.0))],
            AggregationWeights(np.array([300.0, 700.0])),
        )
        assert out.model.prunable_blocks[0].weights[0, 0] == 0.7

    def test_agrees_bitwise_with_layerwise_all_ones(self):
        rng = np.random.default_rng(4)
        template = make_mlp(6, (5, 4), 3, rng)
        models = []
        for cid in range(4):
            m = template.copy()
            for blk in m.prunable_blocks:
                blk.weights += rng.standard_normal(blk.weights.shape)
                blk.bias += rng.standard_normal(blk.bias.shape)
            models.append((cid, m))
        weights = AggregationWeights(rng.random(4) + 0.1)
        state = GlobalModelState(template.copy())
        via_fedavg = fedavg_aggregate(models, weights, state)
        payloads = [prune_model(m, LayerMask.ones(3), source_client=cid) for cid, m in models]
        via_layerwise = aggregate_layerwise(payloads, weights, state)
        for a, b in zip(via_fedavg.model.prunable_blocks, via_layerwise.model.prunable_blocks):
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.bias, b.bias)


class TestDistribute:
    def test_homo_client_bit_equals_global(self):
        rng = np.random.default_rng(5)
        template = make_mlp(6, (5,), 3, rng)
        state = GlobalModelState(template.copy())
        client = ClientState(id=0, data_indices=np.arange(3), model=make_mlp(6, (5,), 3, rng))
        distribute(state, client)
        for a, b in zip(client.model.blocks, state.model.blocks):
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.bias, b.bias)
        client.model.prunable_blocks[0].weights += 1.0  # must not alias global state
        assert not np.array_equal(
            client.model.prunable_blocks[0].weights, state.model.prunable_blocks[0].weights
        )

    def test_hetero_client_keeps_head_byte_identical(self):
        rng = np.random.default_rng(6)
        template = make_mlp(8, (6, 5, 4, 3), 2, rng)
        assignment = HeteroAssignment(2, True, lc_uniform(5))
        sub = build_hetero_model(template, assignment, rng)
        head_w = sub.blocks[-1].weights.copy()
        head_b = sub.blocks[-1].bias.copy()
        new_global = GlobalModelState(make_mlp(8, (6, 5, 4, 3), 2, np.random.default_rng(7)))
        client = ClientState(id=0, data_indices=np.arange(3), model=sub, assignment=assignment)
        distribute(new_global, client)
        for i in range(2):
            np.testing.assert_array_equal(
                client.model.prunable_blocks[i].weights, new_global.model.prunable_blocks[i].weights
            )
        np.testing.assert_array_equal(client.model.blocks[-1].weights, head_w)
        np.testing.assert_array_equal(client.model.blocks[-1].bias, head_b)

    def test_hetero_download_size_equals_backbone_param_count(self):
        rng = np.random.default_rng(8)
        template = make_mlp(8, (6, 5, 4, 3), 2, rng)
        assignment = HeteroAssignment(3, True, lc_uniform(5))
        sub = build_hetero_model(template, assignment, rng)
        downloaded = sum(b.param_count() for b in sub.prunable_blocks)
        assert downloaded == param_count(template, range(1, 4))
