import numpy as np
import pytest

from bsnn import train as train_mod
from bsnn.data import synthetic_blobs
from bsnn.errors import CheckpointError, ConfigError, ShapeError
from bsnn.gradcheck import fd_gradient, rel_err
from bsnn.network import build_network, make_network_config
from bsnn.ops import Parameter
from conftest import make_tiny_net


class TestCrossEntropy:
    def test_frozen_value(self):
        logits = np.array([[1.0, 2.0, 3.0]])
        loss, _ = train_mod.cross_entropy_loss(logits, np.array([2]))
        # -log softmax_2 = log(1 + e^-1 + e^-2) computed at high precision
        assert loss == pytest.approx(0.40760596444438079, abs=1e-14)

    def test_uniform_logits(self):
        loss, _ = train_mod.cross_entropy_loss(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
        assert loss == pytest.approx(np.log(5.0), abs=1e-14)

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.standard_normal((6, 4))
        labels = rng.integers(0, 4, 6)
        _, grad = train_mod.cross_entropy_loss(logits.copy(), labels)
        fd = fd_gradient(lambda v: train_mod.cross_entropy_loss(v, labels)[0], logits.copy())
        assert rel_err(grad, fd) < 1e-6

    def test_gradient_rows_sum_to_zero(self, rng):
        logits = rng.standard_normal((5, 3))
        _, grad = train_mod.cross_entropy_loss(logits, rng.integers(0, 3, 5))
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-15)

    def test_shift_invariance(self, rng):
        logits = rng.standard_normal((3, 4))
        labels = np.array([0, 1, 2])
        a, _ = train_mod.cross_entropy_loss(logits, labels)
        b, _ = train_mod.cross_entropy_loss(logits + 1000.0, labels)
        assert a == pytest.approx(b, abs=1e-10)

    def test_label_validation(self, rng):
        with pytest.raises(ShapeError):
            train_mod.cross_entropy_loss(rng.standard_normal((2, 3)), np.array([0, 3]))


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        assert train_mod.cosine_lr(0, 60, 0.4) == pytest.approx(0.4)
        assert train_mod.cosine_lr(30, 60, 0.4) == pytest.approx(0.2)
        assert train_mod.cosine_lr(60, 60, 0.4) == pytest.approx(0.0, abs=1e-17)

    def test_strictly_decreasing(self):
        vals = [train_mod.cosine_lr(e, 40, 0.1) for e in range(41)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_validation(self):
        with pytest.raises(ConfigError):
            train_mod.cosine_lr(5, 0, 0.1)
        with pytest.raises(ConfigError):
            train_mod.cosine_lr(7, 6, 0.1)


class TestSgd:
    def test_two_hand_computed_steps(self):
        p = Parameter("w", np.array([1.0]))
        opt = train_mod.SGD([p], momentum=0.9)
        p.grad[:] = 2.0
        opt.step(lr=0.1)
        # v = 2, w = 1 - 0.2
        assert p.data[0] == pytest.approx(0.8)
        p.grad[:] = 1.0
        opt.step(lr=0.1)
        # v = 0.9*2 + 1 = 2.8, w = 0.8 - 0.28
        assert p.data[0] == pytest.approx(0.52)

    def test_clamp_applied_after_step(self):
        p = Parameter("w", np.array([0.95]), clamp=(-1.0, 1.0))
        opt = train_mod.SGD([p], momentum=0.0)
        p.grad[:] = -10.0
        opt.step(lr=0.1)
        assert p.data[0] == 1.0

    def test_zero_momentum_is_plain_sgd(self, rng):
        w0 = rng.standard_normal(4)
        g = rng.standard_normal(4)
        p = Parameter("w", w0.copy())
        opt = train_mod.SGD([p], momentum=0.0)
        p.grad[:] = g
        opt.step(lr=0.05)
        assert np.allclose(p.data, w0 - 0.05 * g, atol=1e-15)


def tiny_train(variant="binary", epochs=2, seed=1, collect=True):
    tr = synthetic_blobs(n_classes=3, per_class=6, height=4, width=4, noise=0.2,
                         seed=10, prototype_seed=99)
    te = synthetic_blobs(n_classes=3, per_class=3, height=4, width=4, noise=0.2,
                         seed=20, prototype_seed=99)
    net = make_tiny_net(variant, seed=seed)
    settings = train_mod.TrainSettings(
        epochs=epochs, batch_size=6, lr=0.1, momentum=0.9,
        collect_gate_stats=collect, collect_layer_stats=collect,
    )
    return train_mod.train(net, tr, te, settings, seed), net


class TestTrainLoop:
    def test_produces_one_record_per_epoch(self):
        res, _ = tiny_train(epochs=3)
        assert len(res.records) == 3
        assert [r.epoch for r in res.records] == [1, 2, 3]
        for r in res.records:
            assert 0.0 <= r.train_acc <= 1.0
            assert 0.0 <= r.test_acc <= 1.0
            assert 0.0 <= r.flip_ratio <= 1.0
            assert r.variant == "binary"

    def test_lr_follows_cosine(self):
        res, _ = tiny_train(epochs=4)
        for r in res.records:
            assert r.lr == pytest.approx(train_mod.cosine_lr(r.epoch - 1, 4, 0.1))

    def test_deterministic_rerun(self):
        from dataclasses import replace

        a, _ = tiny_train(epochs=2, seed=3)
        b, _ = tiny_train(epochs=2, seed=3)
        strip = lambda rs: [replace(r, wall_seconds=0.0) for r in rs]
        assert strip(a.records) == strip(b.records)
        assert a.gate_rows == b.gate_rows
        assert a.layer_rows == b.layer_rows

    def test_seed_changes_trajectory(self):
        a, _ = tiny_train(epochs=2, seed=3)
        b, _ = tiny_train(epochs=2, seed=4)
        assert a.records != b.records

    def test_gate_rows_only_for_agmm(self):
        res_b, _ = tiny_train("binary", epochs=1)
        res_g, _ = tiny_train("binary-agmm", epochs=1)
        assert res_b.gate_rows == []
        assert len(res_g.gate_rows) == 2  # one gate layer x two timesteps
        for row in res_g.gate_rows:
            assert 0.0 < row.gate_mean < 1.0

    def test_layer_rows_cover_fire_layers(self):
        res, net = tiny_train("binary", epochs=2)
        fire_layers = [l.name for l in net.layers if l.kind == "lif"]
        assert len(res.layer_rows) == 2 * len(fire_layers)
        for row in res.layer_rows:
            assert 0.0 <= row.firing_rate <= 1.0

    def test_gate_records_present_only_for_agmm(self):
        res_b, _ = tiny_train("binary", epochs=1)
        res_g, _ = tiny_train("binary-agmm", epochs=1)
        assert all(r.gate_means is None for r in res_b.records)
        assert all(r.gate_means is not None and len(r.gate_means) == 2
                   for r in res_g.records)


class TestTelemetryCsv:
    def test_byte_identical_rewrites(self, tmp_path):
        res, _ = tiny_train(epochs=2)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        train_mod.write_telemetry_csv(p1, res.records, timesteps=2)
        train_mod.write_telemetry_csv(p2, res.records, timesteps=2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_without_gates(self, tmp_path):
        res, _ = tiny_train("binary", epochs=1)
        p = tmp_path / "t.csv"
        train_mod.write_telemetry_csv(p, res.records, timesteps=2)
        header = p.read_text().splitlines()[0]
        assert header == "epoch,variant,seed,train_acc,test_acc,loss,flip_ratio,grad_mean,grad_var,lr"

    def test_header_with_gates(self, tmp_path):
        res, _ = tiny_train("binary-agmm", epochs=1)
        p = tmp_path / "t.csv"
        train_mod.write_telemetry_csv(p, res.records, timesteps=2)
        header = p.read_text().splitlines()[0]
        assert header.endswith(",gate_t0,gate_t1")

    def test_values_roundtrip_through_text(self, tmp_path):
        res, _ = tiny_train(epochs=2)
        p = tmp_path / "t.csv"
        train_mod.write_telemetry_csv(p, res.records, timesteps=2)
        lines = p.read_text().splitlines()
        first = lines[1].split(",")
        assert float(first[3]) == res.records[0].train_acc
        assert float(first[6]) == res.records[0].flip_ratio

    def test_no_wall_clock_column(self, tmp_path):
        res, _ = tiny_train(epochs=1)
        p = tmp_path / "t.csv"
        train_mod.write_telemetry_csv(p, res.records, timesteps=2)
        assert "wall" not in p.read_text()


class TestCheckpoint:
    def test_roundtrip_restores_all_tensors(self, tmp_path):
        _, net = tiny_train("binary-agmm", epochs=1)
        p = tmp_path / "net.bsnn"
        train_mod.save_checkpoint(p, net)
        restored = train_mod.load_checkpoint(p, net.cfg)
        for (na, a), (nb, b) in zip(
            train_mod.checkpoint_tensors(net), train_mod.checkpoint_tensors(restored)
        ):
            assert na == nb
            assert np.array_equal(a, b), na

    def test_restored_network_predicts_identically(self, tmp_path, rng):
        _, net = tiny_train("binary", epochs=1)
        p = tmp_path / "net.bsnn"
        train_mod.save_checkpoint(p, net)
        restored = train_mod.load_checkpoint(p, net.cfg)
        x = rng.random((2, 5, 1, 4, 4))
        assert np.array_equal(net.forward(x, training=False),
                              restored.forward(x, training=False))

    def test_byte_identical_rewrites(self, tmp_path):
        _, net = tiny_train("binary", epochs=1)
        p1, p2 = tmp_path / "a.bsnn", tmp_path / "b.bsnn"
        train_mod.save_checkpoint(p1, net)
        train_mod.save_checkpoint(p2, net)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_guard(self, tmp_path):
        _, net = tiny_train(epochs=1)
        p = tmp_path / "net.bsnn"
        train_mod.save_checkpoint(p, net)
        raw = bytearray(p.read_bytes())
        raw[0] = ord(b"X")
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            train_mod.load_checkpoint(p, net.cfg)

    def test_config_digest_guard(self, tmp_path):
        _, net = tiny_train(epochs=1)
        p = tmp_path / "net.bsnn"
        train_mod.save_checkpoint(p, net)
        other = make_network_config("binary", input_shape=(1, 4, 4), n_classes=3,
                                    blocks=1, channels=2, seed=9)
        with pytest.raises(CheckpointError):
            train_mod.load_checkpoint(p, other)

    def test_truncation_guard(self, tmp_path):
        _, net = tiny_train(epochs=1)
        p = tmp_path / "net.bsnn"
        train_mod.save_checkpoint(p, net)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            train_mod.load_checkpoint(p, net.cfg)

    def test_trailing_bytes_guard(self, tmp_path):
        _, net = tiny_train(epochs=1)
        p = tmp_path / "net.bsnn"
        train_mod.save_checkpoint(p, net)
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            train_mod.load_checkpoint(p, net.cfg)

    def test_version_guard(self, tmp_path):
        _, net = tiny_train(epochs=1)
        p = tmp_path / "net.bsnn"
        train_mod.save_checkpoint(p, net)
        raw = bytearray(p.read_bytes())
        raw[4] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            train_mod.load_checkpoint(p, net.cfg)


class TestEvaluate:
    def test_perfect_separation_reaches_full_accuracy(self):
        ds = synthetic_blobs(n_classes=2, per_class=10, height=4, width=4,
                             noise=0.01, seed=0)
        net = make_tiny_net("fp", n_classes=2)
        settings = train_mod.TrainSettings(epochs=8, batch_size=10, lr=0.1)
        res = train_mod.train(net, ds, ds, settings, run_seed=0)
        assert res.records[-1].train_acc == 1.0
