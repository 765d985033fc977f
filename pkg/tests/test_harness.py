import csv

import numpy as np
import pytest

from deepmedix import rng
from deepmedix.errors import ConfigError
from deepmedix.graph import INPUT, GraphBuilder
from deepmedix.harness import (OptimizerConfig, PlateauSchedule, TrainConfig, accuracy, evaluate, train,
                               write_history_csv)
from deepmedix.layers import Dense, Softmax


def run_schedule(seq, lr=0.1, patience=15, window=3):
    sched = PlateauSchedule(lr, patience, 3.0, window)
    out = []
    for e, acc in enumerate(seq, 1):
        improved, reduced, stop = sched.update(e, acc)
        out.append((e, improved, reduced, stop, sched.lr))
        if stop:
            break
    return sched, out


class TestSchedule:
    def test_strictly_increasing(self):
        sched, out = run_schedule(np.linspace(0.1, 0.9, 30))
        assert not any(r for _, _, r, _, _ in out) and not any(s for *_, s, _ in out)
        assert len(out) == 30 and sched.best_epoch == 30 and sched.lr == 0.1

    def test_improve_once_then_flat(self):
        sched, out = run_schedule([0.5] + [0.5] * 40)
        assert [e for e, _, r, _, _ in out if r] == [4, 7, 10, 13]
        assert out[-1][0] == 16 and out[-1][3]
        assert sched.best_epoch == 1
        expected, lr = {}, 0.1
        for e in range(1, 17):
            if e in (4, 7, 10, 13):
                lr = lr / 3
            expected[e] = lr
        assert [x[4] for x in out] == [expected[e] for e in range(1, 17)]
        assert sched.lr == pytest.approx(0.1 / 3 ** 4, rel=1e-15)

    def test_stop_at_best_plus_patience(self):
        seq = [0.1, 0.2, 0.3, 0.6, 0.6, 0.7] + [0.65] * 30
        sched, out = run_schedule(seq)
        assert sched.best_epoch == 6 and out[-1][0] == 6 + 15

    def test_ties_do_not_improve_and_window_rearms(self):
        seq = [0.5, 0.4, 0.4, 0.4, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6]
        _, out = run_schedule(seq)
        assert [e for e, _, r, _, _ in out if r] == [4, 8, 11]
        assert [e for e, i, *_ in out if i] == [1, 5]

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(patience=2, lr_window=3)
        with pytest.raises(ConfigError):
            TrainConfig(optimizer=OptimizerConfig("svrg"))
        with pytest.raises(ConfigError):
            OptimizerConfig("rmsprop")


def toy_model():
    b = GraphBuilder((4,))
    b.add("dense", Dense(4, 2), INPUT)
    b.add("softmax", Softmax(), "dense")
    return b.build()


def toy_data(n=64, seed=0):
    x = rng.normal(seed, (n, 4))
    return x, (x[:, 0] + 0.5 * x[:, 1] > 0).astype(np.int64)


class TestTrain:
    def test_injected_flat_sequence(self):
        model = toy_model()
        split = toy_data()
        res = train(model, split, split, TrainConfig(max_epochs=50, optimizer=OptimizerConfig("sgd", 0.1)),
                    val_fn=lambda p, e: 0.5)
        assert len(res.history) == 16 and res.history[-1].stopped
        assert [r.epoch for r in res.history if r.reduced_lr] == [4, 7, 10, 13]
        assert res.history[-1].lr == 0.1 / 3 / 3 / 3 / 3
        assert res.best_epoch == 1

    def test_best_checkpoint_is_argmax(self):
        model = toy_model()
        split = toy_data()
        seq = [0.2, 0.7, 0.5, 0.7, 0.6]
        snaps = {}

        def val_fn(p, e):
            snaps[e] = {k: v.copy() for k, v in p.items()}
            return seq[e - 1]

        res = train(model, split, split, TrainConfig(max_epochs=5), val_fn=val_fn)
        assert res.best_epoch == 2 and res.best_val_accuracy == 0.7
        assert all(np.array_equal(res.best_params[k], snaps[2][k]) for k in snaps[2])

    def test_max_epochs_zero(self):
        model = toy_model()
        p0 = model.init_params(1)
        res = train(model, toy_data(), toy_data(), TrainConfig(max_epochs=0), params=p0)
        assert res.history == [] and all(np.array_equal(res.final_params[k], p0[k]) for k in p0)

    def test_learns_and_is_reproducible(self):
        model = toy_model()
        tr, va = toy_data(256, 1), toy_data(64, 2)
        cfg = TrainConfig(max_epochs=15, optimizer=OptimizerConfig("adam", 0.05))
        a = train(model, tr, va, cfg)
        b = train(model, tr, va, cfg)
        assert a.best_val_accuracy >= 0.9
        assert all(np.array_equal(a.final_params[k], b.final_params[k]) for k in a.final_params)
        assert a.history[-1].train_loss < a.history[0].train_loss

    def test_empty_splits(self):
        empty = (np.zeros((0, 4)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            train(toy_model(), empty, toy_data(), TrainConfig())
        with pytest.raises(ValueError):
            train(toy_model(), toy_data(), empty, TrainConfig())

    def test_evaluate(self):
        model = toy_model()
        p = model.init_params(3)
        x, y = toy_data(20)
        a, b = evaluate(model, p, x, y), evaluate(model, p, x, y)
        assert a == b or a.to_json() == b.to_json()
        assert evaluate(model, p, x[:1], y[:1]).accuracy in (0.0, 1.0)
        assert accuracy(model, p, x, y) == a.accuracy
        with pytest.raises(ValueError):
            evaluate(model, p, x[:0], y[:0])

    def test_history_csv(self, tmp_path):
        res = train(toy_model(), toy_data(), toy_data(), TrainConfig(max_epochs=2))
        write_history_csv(tmp_path / "h.csv", res.history)
        rows = list(csv.reader(open(tmp_path / "h.csv")))
        assert rows[0] == ["epoch", "lr", "train_loss", "val_accuracy", "improved", "reduced_lr", "stopped"]
        assert len(rows) == 3
