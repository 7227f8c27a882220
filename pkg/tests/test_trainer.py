import csv

import numpy as np
import pytest

from boxkg import trainer
from boxkg.config import TrainConfig
from boxkg.kgdata import split_kg
from boxkg.state import init_state
from boxkg.synth import make_synthetic_kg


@pytest.fixture(scope="module")
def toy():
    syn = make_synthetic_kg(roots=2, branching=(2, 2), n_entities=40, n_inst_triples=200,
                            n_inst_relations=3, seed=1)
    return syn.kg, split_kg(syn.kg, mode="linking", seed=0)


def config(**kw):
    base = dict(d_vec=8, d_box=8, beta=0.05, center_init=0.1, batch_size=32, seed=0,
                patience=0, max_epochs=3)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainEpoch:
    def test_losses_decrease(self, toy):
        kg, data = toy
        state = init_state(config(lr=0.02), kg)
        first = trainer.train_epoch(state, data)
        for _ in range(30):
            last = trainer.train_epoch(state, data)
        assert state.epoch == 31
        assert trainer.total_objective(*last, state.config) < 0.7 * trainer.total_objective(*first, state.config)
        assert all(np.isfinite(last))

    def test_adam_counts_three_views(self, toy):
        kg, data = toy
        state = init_state(config(), kg)
        trainer.train_epoch(state, data)
        n_steps = max(-(-len(data.inst["train"]) // 32), -(-len(data.onto["train"]) // 32),
                      -(-len(data.links["train"]) // 32))
        # the entity table gets one update from the instance view and one from the cross view per step
        assert state.steps["entity"] == 2 * n_steps
        assert state.steps["onto_rel_shift"] == n_steps

    def test_non_finite_raises(self, toy):
        kg, data = toy
        state = init_state(config(), kg)
        state.params["entity"][:] = np.nan
        with pytest.raises(FloatingPointError):
            trainer.train_epoch(state, data)

    def test_empty_partition(self, toy):
        kg, data = toy
        state = init_state(config(), kg)
        empty = split_kg(kg, mode="linking", seed=0)
        empty.links["train"] = empty.links["train"][:0]
        with pytest.raises(ValueError, match="links"):
            trainer.train_epoch(state, empty)


class TestFit:
    def test_metrics_csv_and_checkpoints(self, toy, tmp_path):
        kg, data = toy
        state = init_state(config(patience=5), kg)
        res = trainer.fit(state, data, metrics_path=tmp_path / "metrics.csv", checkpoint_dir=tmp_path)
        with open(tmp_path / "metrics.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == trainer.METRICS_HEADER
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
        assert all(r[4] for r in rows[1:])
        assert (tmp_path / "final.ckpt").exists() and (tmp_path / "best.ckpt").exists()
        assert res.best_metric is not None and not res.stopped_early

    def test_early_stop_restores_best(self, toy, monkeypatch):
        kg, data = toy
        values = iter([0.1, 0.5, 0.3, 0.2, 0.9])
        monkeypatch.setattr(trainer, "validation_metric", lambda *a, **k: next(values))
        snaps = {}
        state = init_state(config(patience=2, max_epochs=10), kg)
        res = trainer.fit(state, data, on_epoch=lambda s, row: snaps.__setitem__(
            s.epoch, {k: v.copy() for k, v in s.params.items()}))
        assert res.stopped_early and res.best_epoch == 2 and state.epoch == 4
        for k, v in snaps[2].items():
            np.testing.assert_array_equal(state.params[k], v)

    def test_max_epochs_override(self, toy):
        kg, data = toy
        state = init_state(config(max_epochs=5), kg)
        trainer.fit(state, data, max_epochs=2)
        assert state.epoch == 2 and len(state.history) == 2

    def test_same_seed_same_history(self, toy):
        kg, data = toy
        a = init_state(config(), kg)
        b = init_state(config(), kg)
        assert trainer.fit(a, data).history == trainer.fit(b, data).history
        c = init_state(config(seed=1), kg)
        assert trainer.fit(c, data).history != a.history


class TestGradCheck:
    def test_passes(self, toy):
        kg, data = toy
        state = init_state(config(d_vec=4, d_box=4, beta=0.5), kg)
        rep = trainer.check_gradients(state, data, n_points=50)
        assert rep.passed, list(rep.lines())
        assert all(n >= 50 for n in rep.n_coords.values())
        assert all("PASS" in line for line in rep.lines())

    def test_bridge_and_text_free(self, toy):
        kg, data = toy
        state = init_state(config(d_vec=6, d_box=4, beta=0.5), kg)
        assert trainer.check_gradients(state, data, n_points=30).passed

    def test_detects_corrupt_gradient(self, toy):
        kg, data = toy
        state = init_state(config(d_vec=4, d_box=4, beta=0.5), kg)

        def hook(view, grads):
            return {k: 1.5 * g for k, g in grads.items()}

        rep = trainer.check_gradients(state, data, n_points=20, grad_hook=hook)
        assert not rep.passed
        assert all(e > 0.1 for e in rep.max_error.values())

    def test_does_not_mutate_state(self, toy):
        kg, data = toy
        state = init_state(config(d_vec=4, d_box=4, beta=0.5), kg)
        before = {k: v.copy() for k, v in state.params.items()}
        trainer.check_gradients(state, data, n_points=10)
        for k, v in before.items():
            np.testing.assert_array_equal(state.params[k], v)

    def test_relative_error(self):
        assert trainer.relative_error(1.0, 1.0) == 0.0
        assert trainer.relative_error(2.0, 1.0) == pytest.approx(0.5)
        assert trainer.relative_error(0.0, 1e-9) == pytest.approx(1e-4)
