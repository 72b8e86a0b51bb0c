"""Round loop: selection, local training, scheme dispatch, determinism."""

import numpy as np
import pytest
from helpers import tiny_config

from fedlp.errors import ConfigError, ContractError
from fedlp.metrics import emit_csv
from fedlp.model import cross_entropy, forward, make_mlp
from fedlp.orchestrator import FederatedSystem, local_train, run_experiment, select_participants
from fedlp.rng import substream


def models_equal(a, b) -> bool:
    return len(a.blocks) == len(b.blocks) and all(
        np.array_equal(x.weights, y.weights) and np.array_equal(x.bias, y.bias)
        for x, y in zip(a.blocks, b.blocks)
    )


class TestSelectParticipants:
    def test_full_participation(self):
        selected = select_participants(8, 8, substream(0, "select", 1))
        np.testing.assert_array_equal(selected, np.arange(8))

    def test_paper_scale_always_ten(self):
        for t in range(50):
            assert select_participants(100, 10, substream(1, "select", t)).size == 10

    def test_selection_frequencies_unbiased(self):
        rounds = 10_000
        counts = np.zeros(100)
        for t in range(rounds):
            counts[select_participants(100, 10, substream(2, "select", t))] += 1
        freqs = counts / rounds
        assert np.all(freqs >= 0.09) and np.all(freqs <= 0.11)

    def test_oversized_k_rejected(self):
        with pytest.raises(ContractError):
            select_participants(5, 6, substream(0, "select", 1))


class TestLocalTrain:
    def test_zero_epochs_leave_model_unchanged(self):
        rng = np.random.default_rng(0)
        model = make_mlp(4, (6,), 3, rng)
        before = [(b.weights.copy(), b.bias.copy()) for b in model.blocks]
        x = rng.standard_normal((20, 4))
        y = rng.integers(0, 3, 20)
        local_train(model, x, y, local_epochs=0, batch_size=8, lr=0.1, rng=substream(0, "shuffle", 1, 0))
        for blk, (w, b) in zip(model.blocks, before):
            np.testing.assert_array_equal(blk.weights, w)
            np.testing.assert_array_equal(blk.bias, b)

    def test_identical_inputs_train_identically(self):
        base = make_mlp(4, (6,), 3, np.random.default_rng(1))
        data_rng = np.random.default_rng(2)
        x = data_rng.standard_normal((30, 4))
        y = data_rng.integers(0, 3, 30)
        a, b = base.copy(), base.copy()
        local_train(a, x, y, 3, 8, 0.1, substream(5, "shuffle", 1, 0))
        local_train(b, x, y, 3, 8, 0.1, substream(5, "shuffle", 1, 0))
        assert models_equal(a, b)

    def test_five_epochs_do_not_increase_loss_on_separable_data(self):
        from fedlp.data import generate_synthetic

        ds = generate_synthetic(4, 40, 8, 6.0, seed=3)
        model = make_mlp(8, (16, 12), 4, np.random.default_rng(4))
        out, _ = forward(model, ds.features)
        before = cross_entropy(out, ds.labels)
        local_train(model, ds.features, ds.labels, 5, 16, 0.05, substream(6, "shuffle", 1, 0))
        out, _ = forward(model, ds.features)
        assert cross_entropy(out, ds.labels) <= before


class TestRunRound:
    def test_fedavg_and_homo_p1_trajectories_bit_identical(self):
        sys_a = FederatedSystem(tiny_config("fedavg", seed=9))
        sys_b = FederatedSystem(tiny_config("fedlp_homo", seed=9, lpr=(1.0,)))
        for _ in range(3):
            ma = sys_a.run_round()
            mb = sys_b.run_round()
            assert models_equal(sys_a.global_state.model, sys_b.global_state.model)
            assert (ma.test_accuracy, ma.upload_params, ma.download_params) == (
                mb.test_accuracy,
                mb.upload_params,
                mb.download_params,
            )

    def test_homo_expected_uploaded_layer_count(self):
        # K=10 participants, L=5 layers, p=0.5: ~25 uploaded layers per round
        cfg = tiny_config(
            "fedlp_homo",
            seed=10,
            lpr=(0.5,),
            num_clients=20,
            participation_rate=0.5,
            local_epochs=0,
            max_global_epochs=1,
        )
        system = FederatedSystem(cfg)
        rounds = 200
        total_layers = 0
        for _ in range(rounds):
            system.run_round()
            total_layers += sum(len(p.layers) for p in system.last_payloads)
        mean = total_layers / rounds
        sigma_mean = np.sqrt(50 * 0.25) / np.sqrt(rounds)
        assert abs(mean - 25.0) <= 5.0 * sigma_mean

    def test_hetero_payloads_never_contain_heads(self):
        cfg = tiny_config("fedlp_hetero", seed=11, lc_distribution="uniform", max_global_epochs=5, local_epochs=1)
        system = FederatedSystem(cfg)
        for _ in range(5):
            system.run_round()
            for payload in system.last_payloads:
                lc = system.clients[payload.source_client].assignment.layer_count
                assert payload.layer_indices() == set(range(1, lc + 1))

    def test_all_homo_clients_equal_global_after_round(self):
        system = FederatedSystem(tiny_config("fedlp_homo", seed=12, lpr=(0.5,)))
        system.run_round()
        for client in system.clients:
            assert models_equal(client.model, system.global_state.model)

    def test_upload_metric_equals_exact_payload_sum(self):
        system = FederatedSystem(tiny_config("fedlp_homo", seed=13, lpr=(0.4,)))
        metrics = system.run_round()
        assert metrics.upload_params == sum(p.param_count() for p in system.last_payloads)

    def test_round_metrics_round_index_advances(self):
        system = FederatedSystem(tiny_config("fedavg", seed=14))
        assert system.run_round().round_index == 1
        assert system.run_round().round_index == 2
        assert system.global_state.round_index == 2


class TestRunExperiment:
    def test_same_config_same_seed_byte_identical_csv(self, tmp_path):
        res_a = run_experiment(tiny_config("fedlp_homo", seed=15, lpr=(0.6,)))
        res_b = run_experiment(tiny_config("fedlp_homo", seed=15, lpr=(0.6,)))
        path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(res_a.metrics, path_a)
        emit_csv(res_b.metrics, path_b)
        assert path_a.read_bytes() == path_b.read_bytes()
        assert models_equal(res_a.final_global.model, res_b.final_global.model)

    def test_single_epoch_single_row(self):
        res = run_experiment(tiny_config("fedavg", seed=16, max_global_epochs=1))
        assert len(res.metrics) == 1
        assert res.metrics[0].test_accuracy is not None

    def test_parallel_workers_bit_identical_to_serial(self):
        serial = run_experiment(tiny_config("fedavg", seed=17, workers=1))
        parallel = run_experiment(tiny_config("fedavg", seed=17, workers=4))
        assert models_equal(serial.final_global.model, parallel.final_global.model)
        assert [m.test_accuracy for m in serial.metrics] == [m.test_accuracy for m in parallel.metrics]

    def test_eval_every_controls_rows(self):
        res = run_experiment(tiny_config("fedavg", seed=18, max_global_epochs=5, eval_every=2))
        evaluated = [m.round_index for m in res.metrics if m.test_accuracy is not None]
        assert evaluated == [2, 4, 5]  # final round always evaluated

    def test_invalid_config_rejected_before_compute(self):
        cfg = tiny_config("fedavg", seed=19)
        cfg.participation_rate = 0.0
        cfg.batch_size = 0
        with pytest.raises(ConfigError) as exc_info:
            run_experiment(cfg)
        text = str(exc_info.value)
        assert "participation_rate" in text and "batch_size" in text

    def test_hetero_personalized_accuracies_reported(self):
        res = run_experiment(
            tiny_config("fedlp_hetero", seed=20, lc_distribution="uniform", max_global_epochs=2)
        )
        assert res.personalized_accuracy is not None
        assert set(res.personalized_accuracy) == set(range(10))
        assert all(0.0 <= v <= 1.0 for v in res.personalized_accuracy.values())

    def test_hetero_download_accounting_uses_backbone_sizes(self):
        from fedlp.model import param_count

        cfg = tiny_config("fedlp_hetero", seed=21, lc_distribution="uniform", max_global_epochs=1)
        system = FederatedSystem(cfg)
        metrics = system.run_round()
        expected = sum(
            param_count(
                system.template, range(1, system.clients[p.source_client].assignment.layer_count + 1)
            )
            for p in system.last_payloads
        )
        assert metrics.download_params == expected
