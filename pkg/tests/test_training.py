import json

import numpy as np
import pytest

from relfuse import gradcheck as gc
from relfuse import model as M
from relfuse.data_io import generate_synthetic, load_dataset
from relfuse.optim import GradientError, init_state, lr_at, rmsprop_step
from relfuse.rng import Rng
from relfuse.training import (TrainConfig, TrainingAbort, load_optimizer,
                              save_optimizer, train)


class TestRmsProp:
    def test_first_step_closed_form(self):
        # v = 0.1, update magnitude = 0.001 / (sqrt(0.1) + 1e-7)
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([1.0])}
        state = init_state(params)
        new_params, new_state = rmsprop_step(params, grads, state)
        assert np.isclose(new_state.v["w"][0], 0.1, rtol=1e-12)
        expected = 0.001 / (np.sqrt(0.1) + 1e-7)
        assert np.isclose(1.0 - new_params["w"][0], expected, rtol=1e-12)
        assert np.isclose(expected, 3.1623e-3, rtol=1e-4)
        assert new_state.t == 1

    def test_zero_gradient_leaves_params_and_decays_v(self):
        params = {"w": np.array([2.5, -1.0])}
        state = init_state(params)
        state.v["w"][:] = 0.4
        new_params, new_state = rmsprop_step(params, {"w": np.zeros(2)}, state)
        assert np.array_equal(new_params["w"], params["w"])
        assert np.allclose(new_state.v["w"], 0.36, rtol=1e-12)

    def test_zero_decay_keeps_lr_constant(self):
        params = {"w": np.array([0.0])}
        state = init_state(params, decay=0.0)
        state.t = 10**9
        assert lr_at(state) == 0.001

    def test_default_decay_schedule(self):
        params = {"w": np.array([0.0])}
        state = init_state(params)
        state.t = 10**6
        assert np.isclose(lr_at(state), 0.001 / (1.0 + 8e-9 * 10**6), rtol=1e-15)

    def test_nonfinite_gradient_names_parameter(self):
        params = {"fine": np.zeros(2), "broken": np.zeros(2)}
        grads = {"fine": np.zeros(2), "broken": np.array([1.0, np.nan])}
        with pytest.raises(GradientError, match="broken"):
            rmsprop_step(params, grads, init_state(params))

    def test_inputs_not_mutated(self):
        params = {"w": np.array([1.0])}
        state = init_state(params)
        rmsprop_step(params, {"w": np.array([2.0])}, state)
        assert params["w"][0] == 1.0
        assert state.t == 0 and state.v["w"][0] == 0.0


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest_path, _ = generate_synthetic(out, k=3, n_per_class=8,
                                          stream1_shape=(6, 4), stream2_shape=(6, 4),
                                          seed=5, amplitude=3.0)
    return load_dataset(manifest_path)


def tiny_train_config(**kw):
    base = dict(epochs=2, batch_size=4, lr=0.003, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_identical_seeds_give_bitwise_identical_runs(self, tiny_corpus, tmp_path):
        cfg = gc.tiny_config()
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        res_a = train(tiny_corpus, cfg, tiny_train_config(), out_dir=out_a)
        res_b = train(tiny_corpus, cfg, tiny_train_config(), out_dir=out_b)
        assert res_a.report.loss_curve() == res_b.report.loss_curve()
        assert (out_a / "final.rfck").read_bytes() == (out_b / "final.rfck").read_bytes()
        assert (out_a / "train_log.ndjson").read_bytes() == (out_b / "train_log.ndjson").read_bytes()

    def test_different_seeds_differ(self, tiny_corpus):
        cfg = gc.tiny_config()
        res_a = train(tiny_corpus, cfg, tiny_train_config(seed=0))
        res_b = train(tiny_corpus, cfg, tiny_train_config(seed=1))
        assert res_a.report.loss_curve() != res_b.report.loss_curve()

    def test_zero_epochs_returns_initialization(self, tiny_corpus, tmp_path):
        cfg = gc.tiny_config()
        res = train(tiny_corpus, cfg, tiny_train_config(epochs=0), out_dir=tmp_path)
        init_params, _ = M.init_model(cfg, Rng(0).child("init"))
        assert res.report.records == []
        for name in init_params:
            assert np.array_equal(res.params[name], init_params[name])
        assert (tmp_path / "final.rfck").exists() and (tmp_path / "best.rfck").exists()

    def test_empty_dataset_rejected(self, tiny_corpus):
        import copy
        ds = copy.copy(tiny_corpus)
        ds.samples = [s for s in tiny_corpus.samples if s.split == "test"]
        with pytest.raises(ValueError, match="no training samples"):
            train(ds, gc.tiny_config(), tiny_train_config())

    def test_descent_on_fixed_batch(self, tiny_corpus):
        # 50 small steps on one fixed batch must reduce the loss (5 pinned seeds)
        cfg = gc.tiny_config()
        from relfuse.data_io import stack_samples
        s1, s2, labels, _ = stack_samples(tiny_corpus.split("train")[:6])
        for seed in range(5):
            rng = Rng(100 + seed)
            params, state = M.init_model(cfg, rng.child("init"))
            opt = init_state(params, lr=0.001)
            first = None
            for step in range(50):
                res = M.forward(s1, s2, labels, params, state, cfg, "train",
                                rng.child("step", step))
                state = res.state
                if first is None:
                    first = res.loss
                grads = M.backward_full(res.caches, params)
                params, opt = rmsprop_step(params, grads, opt)
            res = M.forward(s1, s2, labels, params, state, cfg, "train", rng.child("end"))
            assert res.loss < first, f"seed {seed}: {res.loss} !< {first}"

    def test_resume_matches_uninterrupted(self, tiny_corpus, tmp_path):
        cfg = gc.tiny_config()
        full_dir = tmp_path / "full"
        res_full = train(tiny_corpus, cfg, tiny_train_config(epochs=4), out_dir=full_dir)

        part_dir = tmp_path / "part"
        train(tiny_corpus, cfg, tiny_train_config(epochs=2), out_dir=part_dir)
        resumed_dir = tmp_path / "resumed"
        res_resumed = train(tiny_corpus, cfg, tiny_train_config(epochs=4),
                            out_dir=resumed_dir, resume_from=part_dir)

        assert (full_dir / "final.rfck").read_bytes() == (resumed_dir / "final.rfck").read_bytes()
        assert (full_dir / "final.opt.rfck").read_bytes() == (resumed_dir / "final.opt.rfck").read_bytes()
        full_tail = [rec.step_losses for rec in res_full.report.records[2:]]
        resumed_all = [rec.step_losses for rec in res_resumed.report.records]
        assert full_tail == resumed_all

    def test_optimizer_state_roundtrip(self, tmp_path):
        params = {"a": np.array([1.0, 2.0], dtype=np.float32),
                  "b": np.ones((2, 2), dtype=np.float32)}
        state = init_state(params, lr=0.01, decay=1e-6)
        _, state = rmsprop_step(params, {k: np.ones_like(v) for k, v in params.items()}, state)
        path = tmp_path / "opt.rfck"
        save_optimizer(path, state, epochs_done=3, best_epoch=1, best_accuracy=0.5)
        loaded, epochs_done, best_epoch, best_acc = load_optimizer(path)
        assert loaded.t == state.t and loaded.lr == state.lr and loaded.decay == state.decay
        assert epochs_done == 3 and best_epoch == 1 and best_acc == 0.5
        for k in state.v:
            assert np.array_equal(loaded.v[k], state.v[k])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the blow-up is the point
    def test_nan_abort_reports_epoch_and_batch(self, tiny_corpus):
        cfg = gc.tiny_config()
        with pytest.raises(TrainingAbort, match="epoch 0 batch"):
            train(tiny_corpus, cfg, tiny_train_config(lr=1e25, epochs=1))

    def test_singleton_tail_batch_merged(self, tiny_corpus):
        # 12 train samples with batch 11 leaves a 1-sample tail that batch
        # norm cannot take; it must fold into the previous batch
        cfg = gc.tiny_config()
        res = train(tiny_corpus, cfg, tiny_train_config(batch_size=11, epochs=1))
        assert len(res.report.records[0].step_losses) == 1

    def test_log_lines_have_expected_schema(self, tiny_corpus, tmp_path):
        cfg = gc.tiny_config()
        train(tiny_corpus, cfg, tiny_train_config(epochs=1), out_dir=tmp_path)
        lines = [json.loads(l) for l in (tmp_path / "train_log.ndjson").read_text().splitlines()]
        assert {"epoch", "split", "metric", "value"} == set(lines[0])
        metrics = {(l["split"], l["metric"]) for l in lines}
        assert ("train", "loss") in metrics and ("test", "mcc") in metrics
