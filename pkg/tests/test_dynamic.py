import numpy as np
import pytest

from metaembed.dynamic import DynamicModel, TrainConfig, new_dynamic_model, train_dynamic
from metaembed.errors import NonFiniteLossError, ValidationError
from metaembed.optim import gradient_check


def small_model(kind, seed=7):
    return new_dynamic_model(kind, [3, 4], ("a", "b", "c"), proj_dim=5, enc_hidden=3,
                             att_hidden=(2 if kind == "cdme" else None), seed=seed)


def small_batch(seed=42):
    rng = np.random.default_rng(seed)

    def views(steps):
        return [rng.normal(size=(steps, 3)), rng.normal(size=(steps, 4))]

    return [(views(3), views(2), 0), (views(2), views(3), 1), (views(1), views(2), 2)]


def separable_task(seed, n_pairs):
    rng = np.random.default_rng(seed)
    examples = []
    for k in range(n_pairs):
        y = k % 2
        steps = int(rng.integers(1, 3))

        def sentence(sign):
            lead = np.zeros((steps, 3))
            lead[:, 0] = sign
            return [lead + 0.2 * rng.normal(size=(steps, 3)), rng.normal(size=(steps, 2))]

        examples.append((sentence(1.0), sentence(1.0 if y == 0 else -1.0), y))
    return examples


def task_model(kind, seed):
    return new_dynamic_model(kind, [3, 2], ("same", "diff"), proj_dim=6, enc_hidden=4,
                             att_hidden=(2 if kind == "cdme" else None), seed=seed)


def example_accuracy(model, examples):
    hits = sum(int(np.argmax(model.predict_proba(va, vb)) == y) for va, vb, y in examples)
    return hits / len(examples)


class TestConstruction:
    def test_same_seed_same_parameters(self):
        a = small_model("dme", seed=3)
        b = small_model("dme", seed=3)
        for key in a.params:
            assert a.params[key].tobytes() == b.params[key].tobytes()

    def test_different_seed_differs(self):
        a = small_model("dme", seed=3)
        b = small_model("dme", seed=4)
        assert a.params["p0"].tobytes() != b.params["p0"].tobytes()

    def test_attention_starts_at_zero(self):
        m = small_model("cdme")
        assert np.array_equal(m.params["att_a"], np.zeros_like(m.params["att_a"]))
        assert m.params["att_beta"][0] == 0.0

    def test_single_source_is_allowed(self):
        m = new_dynamic_model("dme", [3], ("a", "b"), proj_dim=4, enc_hidden=2, seed=0)
        assert m.dims == (3,)
        vec, _ = m.embed([np.ones((2, 3))])
        assert vec.shape == (m.dim,)

    def test_validation(self):
        with pytest.raises(ValidationError, match="kind"):
            new_dynamic_model("mean", [3, 4], ("a", "b"), 4, 2)
        with pytest.raises(ValidationError, match="at least one source"):
            new_dynamic_model("dme", [], ("a", "b"), 4, 2)
        with pytest.raises(ValidationError, match="at least one source"):
            new_dynamic_model("dme", [3, 0], ("a", "b"), 4, 2)
        with pytest.raises(ValidationError, match="att_hidden only applies"):
            new_dynamic_model("dme", [3, 4], ("a", "b"), 4, 2, att_hidden=2)
        with pytest.raises(ValidationError, match="duplicate class"):
            new_dynamic_model("dme", [3, 4], ("a", "a"), 4, 2)
        with pytest.raises(ValidationError, match="two class"):
            new_dynamic_model("dme", [3, 4], ("a",), 4, 2)


class TestAttention:
    def test_uniform_at_init(self):
        # a == 0 makes every token's logits equal, so the mixture starts
        # exactly uniform over sources
        for kind in ("dme", "cdme"):
            m = small_model(kind)
            views = [np.ones((4, 3)), np.arange(16.0).reshape(4, 4)]
            alpha = m.attention(views)
            assert alpha.shape == (4, 2)
            assert np.max(np.abs(alpha - 0.5)) <= 1e-15

    def test_rows_sum_to_one_after_training_step(self):
        rng = np.random.default_rng(0)
        for kind in ("dme", "cdme"):
            m = small_model(kind)
            train_dynamic(m, small_batch(), epochs=2, lr=0.05, batch_size=2, seed=0)
            views = [rng.normal(size=(5, 3)), rng.normal(size=(5, 4))]
            alpha = m.attention(views)
            assert np.max(np.abs(alpha.sum(axis=1) - 1.0)) <= 1e-12
            assert np.all(alpha >= 0.0)

    def test_cdme_attention_is_contextual(self):
        # with a off zero, changing the attention recurrence changes the
        # weights even though the projections are untouched
        m = small_model("cdme")
        m.params["att_a"] += 0.5
        views = [np.ones((3, 3)), np.ones((3, 4))]
        before = m.attention(views)
        m.params["att_w_fw"] += 0.3
        after = m.attention(views)
        assert np.max(np.abs(before - after)) > 1e-6

    def test_single_source_weights_are_one(self):
        for kind in ("dme", "cdme"):
            m = new_dynamic_model(kind, [3], ("a", "b"), proj_dim=4, enc_hidden=2,
                                  att_hidden=(2 if kind == "cdme" else None), seed=0)
            m.params["att_a"] += 0.7  # even off the zero init
            alpha = m.attention([np.arange(12.0).reshape(4, 3)])
            assert np.array_equal(alpha, np.ones((4, 1)))

    def test_dme_attention_ignores_other_tokens(self):
        # plain gating scores each token on its own: weights for a token are
        # unchanged when the rest of the sentence changes
        m = small_model("dme")
        m.params["att_a"] += np.linspace(-0.5, 0.5, 5)
        rng = np.random.default_rng(1)
        tok0 = [rng.normal(size=(1, 3)), rng.normal(size=(1, 4))]
        rest = [rng.normal(size=(2, 3)), rng.normal(size=(2, 4))]
        alone = m.attention(tok0)
        padded = m.attention([np.vstack([tok0[0], rest[0]]), np.vstack([tok0[1], rest[1]])])
        assert np.allclose(alone[0], padded[0], atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("kind", ["dme", "cdme"])
    def test_analytic_gradients_match_finite_differences(self, kind):
        m = small_model(kind)
        rng = np.random.default_rng(5)
        # move the attention off its zero init so every path carries signal
        m.params["att_a"] += 0.3 * rng.normal(size=m.params["att_a"].shape)
        m.params["att_beta"][0] = 0.1
        batch = small_batch()
        report = gradient_check(lambda: m.loss_and_grads(batch), m.params, epsilon=1e-5, seed=1)
        total = sum(p.size for p in m.params.values())
        assert report.max_rel_err <= 1e-4
        assert set(report.per_block) == set(m.params)
        assert report.n_checked >= min(total, 200)

    def test_gradient_keys_match_parameters(self):
        m = small_model("cdme")
        _, grads = m.loss_and_grads(small_batch())
        assert set(grads) == set(m.params)
        for key in grads:
            assert grads[key].shape == m.params[key].shape

    def test_unused_source_projection_gets_exact_zero_gradient(self):
        # a source whose token views are all zero contributes only through
        # its bias row; the projection matrix cannot influence the loss
        m = small_model("dme")
        rng = np.random.default_rng(8)

        def views(steps):
            return [rng.normal(size=(steps, 3)), np.zeros((steps, 4))]

        batch = [(views(2), views(3), 0), (views(1), views(2), 2)]
        loss, grads = m.loss_and_grads(batch)
        assert np.array_equal(grads["p1"], np.zeros_like(grads["p1"]))
        assert np.any(grads["bias"][1] != 0.0)
        m.params["p1"] += 17.0
        loss_shifted, _ = m.loss_and_grads(batch)
        assert loss_shifted == loss


class TestTraining:
    def test_loss_decreases_and_beats_chance(self):
        train = separable_task(100, 24)
        m = task_model("dme", seed=1)
        history = train_dynamic(m, train, epochs=8, lr=0.01, batch_size=8, seed=1)
        assert len(history) == 8
        assert history[-1] < history[0]
        assert example_accuracy(m, train) > 0.5

    def test_training_is_deterministic(self):
        train = separable_task(100, 12)
        runs = []
        for _ in range(2):
            m = task_model("cdme", seed=2)
            train_dynamic(m, train, epochs=3, lr=0.01, batch_size=4, seed=2)
            runs.append({k: v.tobytes() for k, v in m.params.items()})
        assert runs[0] == runs[1]

    def test_shuffle_seed_changes_trajectory(self):
        train = separable_task(100, 12)
        outs = []
        for seed in (0, 1):
            m = task_model("dme", seed=5)
            train_dynamic(m, train, epochs=2, lr=0.01, batch_size=4, seed=seed)
            outs.append(m.params["head_w"].tobytes())
        assert outs[0] != outs[1]

    def test_non_finite_loss_aborts(self):
        m = small_model("dme")
        m.params["head_w"][0, 0] = np.nan
        with pytest.raises(NonFiniteLossError) as exc:
            train_dynamic(m, small_batch(), epochs=2, lr=0.01, batch_size=4, seed=0)
        assert exc.value.epoch == 1 and exc.value.batch == 1
        assert "epoch 1" in str(exc.value)

    def test_empty_examples_rejected(self):
        with pytest.raises(ValidationError, match="no training examples"):
            train_dynamic(small_model("dme"), [], epochs=1)

    def test_config_object_matches_keywords(self):
        train = separable_task(100, 12)
        by_config = task_model("dme", seed=4)
        train_dynamic(by_config, train, TrainConfig(epochs=3, lr=0.01, batch_size=4, seed=4))
        by_kwargs = task_model("dme", seed=4)
        train_dynamic(by_kwargs, train, epochs=3, lr=0.01, batch_size=4, seed=4)
        for key in by_config.params:
            assert by_config.params[key].tobytes() == by_kwargs.params[key].tobytes()

    def test_config_and_keywords_are_exclusive(self):
        with pytest.raises(ValidationError, match="not both"):
            train_dynamic(small_model("dme"), small_batch(),
                          TrainConfig(epochs=1), lr=0.01)

    def test_zero_epochs_leaves_parameters_untouched(self):
        m = small_model("dme", seed=9)
        before = {k: v.tobytes() for k, v in m.params.items()}
        history = train_dynamic(m, small_batch(), epochs=0)
        assert history == []
        assert {k: v.tobytes() for k, v in m.params.items()} == before

    def test_patience_stops_on_loss_plateau(self):
        # an lr far below one ulp of every weight freezes the parameters
        # bitwise, so the first epoch is the only improvement and patience
        # non-improving epochs follow before the stop
        m = task_model("dme", seed=1)
        history = train_dynamic(
            m, separable_task(100, 8),
            TrainConfig(epochs=50, lr=1e-300, batch_size=4, patience=3, shuffle=False))
        assert len(history) == 4
        assert history[1:] == [history[0]] * 3

    def test_patience_zero_runs_every_epoch(self):
        m = task_model("dme", seed=1)
        history = train_dynamic(
            m, separable_task(100, 8),
            TrainConfig(epochs=6, lr=1e-300, batch_size=4, patience=0, shuffle=False))
        assert len(history) == 6

    def test_config_validation(self):
        m = small_model("dme")
        with pytest.raises(ValidationError, match="epochs"):
            train_dynamic(m, small_batch(), epochs=-1)
        with pytest.raises(ValidationError, match="learning rate"):
            train_dynamic(m, small_batch(), epochs=1, lr=0.0)
        with pytest.raises(ValidationError, match="batch"):
            train_dynamic(m, small_batch(), epochs=1, batch_size=0)
        with pytest.raises(ValidationError, match="beta"):
            train_dynamic(m, small_batch(), epochs=1, betas=(0.9, 1.0))


class TestPredict:
    def test_probabilities_sum_to_one(self):
        m = small_model("cdme")
        views_a, views_b, _ = small_batch()[0]
        p = m.predict_proba(views_a, views_b)
        assert p.shape == (3,)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p > 0)

    def test_label_is_argmax_class(self):
        m = small_model("dme")
        views_a, views_b, _ = small_batch()[0]
        p = m.predict_proba(views_a, views_b)
        assert m.predict_label(views_a, views_b) == m.classes[int(np.argmax(p))]

    def test_sentence_validation(self):
        m = small_model("dme")
        with pytest.raises(ValidationError, match="expects 2 sources"):
            m.embed([np.ones((2, 3))])
        with pytest.raises(ValidationError, match="width"):
            m.embed([np.ones((2, 4)), np.ones((2, 4))])
        with pytest.raises(ValidationError, match="sequence length"):
            m.embed([np.ones((2, 3)), np.ones((3, 4))])

    def test_label_index_validation(self):
        m = small_model("dme")
        views_a, views_b, _ = small_batch()[0]
        with pytest.raises(ValidationError, match="label index"):
            m.loss_and_grads([(views_a, views_b, 3)])


class TestSerialization:
    @pytest.mark.parametrize("kind", ["dme", "cdme"])
    def test_round_trip_bitwise(self, kind, tmp_path):
        m = small_model(kind, seed=11)
        train_dynamic(m, small_batch(), epochs=1, lr=0.01, batch_size=2, seed=11)
        path = tmp_path / "m.model"
        m.save(path)
        back = DynamicModel.load(path)
        assert back.kind == kind and back.dims == m.dims and back.classes == m.classes
        assert back.proj_dim == m.proj_dim and back.enc_hidden == m.enc_hidden
        assert back.att_hidden == m.att_hidden
        assert back.seed == m.seed
        for key in m.params:
            assert back.params[key].tobytes() == m.params[key].tobytes()
        views_a, views_b, _ = small_batch()[0]
        assert back.predict_proba(views_a, views_b).tobytes() == m.predict_proba(views_a, views_b).tobytes()

    def test_loaded_model_params_stay_aliased(self, tmp_path):
        # the encoder must see loaded weights, not its seed-0 init
        m = small_model("dme", seed=13)
        path = tmp_path / "m.model"
        m.save(path)
        back = DynamicModel.load(path)
        assert back.params["enc_w_fw"] is back.encoder.p["w_fw"]

    def test_header_magic_checked(self, tmp_path):
        path = tmp_path / "m.model"
        small_model("dme").save(path)
        text = path.read_text().replace("DME v1", "GLUE v1", 1)
        path.write_text(text)
        with pytest.raises(ValidationError, match="expected a DME or CDME"):
            DynamicModel.load(path)

    def test_hyper_line_records_shape_and_seed(self, tmp_path):
        path = tmp_path / "m.model"
        small_model("cdme", seed=21).save(path)
        assert path.read_text().splitlines()[1] == "n 2 dims 3 4 proj 5 att 2 enc 3 seed 21 classes a b c"

    def test_source_count_mismatch_detected(self, tmp_path):
        path = tmp_path / "m.model"
        small_model("dme").save(path)
        text = path.read_text().replace("n 2 dims 3 4", "n 3 dims 3 4", 1)
        path.write_text(text)
        with pytest.raises(ValidationError, match="claims 3 sources but lists 2 widths"):
            DynamicModel.load(path)

    def test_dme_must_record_zero_attention_width(self, tmp_path):
        path = tmp_path / "m.model"
        small_model("dme").save(path)
        text = path.read_text().replace("att 0", "att 2", 1)
        path.write_text(text)
        with pytest.raises(ValidationError, match="must record att 0"):
            DynamicModel.load(path)

    def test_missing_block_detected(self, tmp_path):
        path = tmp_path / "m.model"
        small_model("dme").save(path)
        lines = path.read_text().splitlines()
        cut = lines.index("head_b 1 3")
        path.write_text("\n".join(lines[:cut]) + "\n")
        with pytest.raises(ValidationError, match="missing block 'head_b'"):
            DynamicModel.load(path)
