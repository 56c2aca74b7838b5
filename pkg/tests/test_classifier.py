import numpy as np
import pytest

from oodgen import nn
from oodgen.classifier import (
    CnnClassifier,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
)
from oodgen.corpus import pad_batch
from oodgen.gradcheck import finite_diff_check, relative_error
from oodgen.synthetic import make_synthetic_task

from conftest import SEED, tiny_model


class LinearSoftmaxStub:
    """Bag-of-embeddings linear classifier exposing the model protocol the
    finite-difference checker expects; its gradient is exactly computable."""

    def __init__(self, table, num_classes, seed):
        rng = np.random.default_rng(seed)
        self.config = TrainConfig(dtype="float64")
        self.min_len = 1
        self.table = table.astype(np.float64)
        self.w = nn.Param(rng.normal(size=(table.shape[1], num_classes)), name="w")

    def params(self):
        return [self.w]

    def zero_grads(self):
        self.w.zero_grad()

    def forward_backward(self, ids, lengths, labels, reduction="mean", example_ids=None):
        x = self.table[ids].mean(axis=1)
        logits, cache = nn.dense_forward(x, self.w.value, None)
        loss, d_logits = nn.softmax_cross_entropy(logits, labels, reduction)
        _, d_w, _ = nn.dense_backward(d_logits, cache)
        self.w.accumulate(d_w)
        return loss, None


def unique_token_sentence(model, length, start=3):
    assert start + length <= model.vocab_size
    return list(range(start, start + length))


class TestGradientChecks:
    def test_full_cnn_passes(self):
        model, _ = tiny_model(num_words=14, dim=5, num_classes=3, kernel_widths=(2, 3, 4, 5))
        rng = np.random.default_rng(8)
        batch = [[int(rng.integers(3, 14)) for _ in range(int(rng.integers(5, 9)))]
                 for _ in range(6)]
        labels = rng.integers(0, 3, size=6)
        err = finite_diff_check(model, batch, labels, eps=1e-5, num_samples=250, seed=1)
        assert err < 1e-5

    def test_linear_softmax_stub_very_tight(self):
        rng = np.random.default_rng(3)
        stub = LinearSoftmaxStub(rng.normal(size=(10, 4)), 3, seed=5)
        batch = [[3, 4, 5], [6, 7, 8]]
        err = finite_diff_check(stub, batch, np.array([0, 2]), eps=1e-5, seed=2)
        assert err < 1e-7

    def test_frozen_embedding_excluded_and_zero(self):
        model, _ = tiny_model()  # embeddings frozen by default
        assert not model.embedding.trainable
        batch = [[3, 4, 5, 6, 7]]
        err = finite_diff_check(model, batch, np.array([1]), eps=1e-5, seed=3)
        assert err < 1e-5
        assert np.all(model.embedding.grad == 0.0)

    def test_requires_float64(self):
        model, _ = tiny_model(dtype="float32")
        with pytest.raises(ValueError):
            finite_diff_check(model, [[3, 4, 5]], np.array([0]))

    def test_trainable_embedding_checks_out(self):
        model, _ = tiny_model(embed_trainable=True)
        batch = [[3, 4, 5, 6], [7, 8, 9, 10, 11]]
        err = finite_diff_check(model, batch, np.array([0, 2]), eps=1e-5,
                                num_samples=250, seed=4)
        assert err < 1e-5


class TestInputGradient:
    def test_pad_rows_zero(self):
        model, _ = tiny_model()
        ids, lengths = pad_batch([[3, 4, 5]], model.min_len)
        model.zero_grads()
        _, grads = model.forward_backward(ids, lengths, np.array([0]))
        assert np.all(grads[0, 3:, :] == 0.0)
        assert np.any(grads[0, :3, :] != 0.0)

    def test_matches_embedding_perturbation(self):
        model, _ = tiny_model(num_words=16, dim=5)
        tokens = unique_token_sentence(model, 6)
        label = 1
        grad = model.input_gradient(tokens, label)
        eps = 1e-6
        for pos in range(len(tokens)):
            word = tokens[pos]
            for comp in range(model.dim):
                orig = model.embedding.value[word, comp]
                model.embedding.value[word, comp] = orig + eps
                up = self._loss(model, tokens, label)
                model.embedding.value[word, comp] = orig - eps
                down = self._loss(model, tokens, label)
                model.embedding.value[word, comp] = orig
                numeric = (up - down) / (2 * eps)
                assert relative_error(grad[pos, comp], numeric) < 1e-6

    @staticmethod
    def _loss(model, tokens, label):
        ids, lengths = pad_batch([tokens], model.min_len)
        model.zero_grads()
        loss, _ = model.forward_backward(ids, lengths, np.array([label]), reduction="sum")
        model.zero_grads()
        return loss

    def test_deterministic(self):
        model, _ = tiny_model()
        tokens = [3, 9, 4, 7, 5]
        a = model.input_gradient(tokens, 2)
        b = model.input_gradient(tokens, 2)
        np.testing.assert_array_equal(a, b)


class TestDirectionScore:
    def test_current_word_scores_zero(self):
        model, _ = tiny_model()
        tokens = [4, 5, 6, 7, 8]
        assert model.direction_score(tokens, 0, 2, tokens[2]) == 0.0

    def test_antisymmetry(self):
        model, _ = tiny_model()
        tokens = [4, 5, 6, 7, 8]
        grad = model.input_gradient(tokens, 1)
        fwd = model.direction_score(tokens, 1, 2, 9, input_grad=grad)
        swapped = list(tokens)
        swapped[2] = 9
        back = model.direction_score(swapped, 1, 2, 6, input_grad=grad)
        assert fwd == pytest.approx(-back, abs=1e-12)

    def test_chain_rule_identity(self):
        # identical to embedding the full-vocabulary score row and
        # subtracting the candidate and current entries
        for seed in range(5):
            model, _ = tiny_model(num_words=15, dim=6, seed=SEED + seed)
            rng = np.random.default_rng(seed)
            tokens = [int(t) for t in rng.integers(3, 15, size=6)]
            label = int(rng.integers(0, 3))
            pos = int(rng.integers(0, 6))
            grad = model.input_gradient(tokens, label)
            row = model.vocab_scores(tokens, label, pos, input_grad=grad)
            for cand in range(3, 15):
                direct = model.direction_score(tokens, label, pos, cand, input_grad=grad)
                assert abs(direct - (row[cand] - row[tokens[pos]])) < 1e-9

    def test_matches_relaxed_finite_difference(self):
        # move the fed embedding along e(candidate) - e(current)
        model, _ = tiny_model(num_words=18, dim=5)
        tokens = unique_token_sentence(model, 6)
        label = 2
        pos = 3
        word = tokens[pos]
        step = 1e-6
        for cand in (9, 12, 15):
            direction = (model.embedding.value[cand] - model.embedding.value[word]).copy()
            analytic = model.direction_score(tokens, label, pos, cand)
            orig = model.embedding.value[word].copy()
            model.embedding.value[word] = orig + step * direction
            up = TestInputGradient._loss(model, tokens, label)
            model.embedding.value[word] = orig - step * direction
            down = TestInputGradient._loss(model, tokens, label)
            model.embedding.value[word] = orig
            numeric = (up - down) / (2 * step)
            assert relative_error(analytic, numeric) < 1e-6


class TestPredict:
    def test_zero_head_gives_zero_logits(self):
        model, _ = tiny_model()
        model.head_w.value[...] = 0.0
        model.head_b.value[...] = 0.0
        logits = model.logits_for([[3, 4, 5]])
        np.testing.assert_array_equal(logits, np.zeros((1, 3)))

    def test_permuting_head_rows_permutes_logits(self):
        model, _ = tiny_model()
        base = model.logits_for([[3, 4, 5, 6]])[0]
        model.head_w.value[:, [0, 2]] = model.head_w.value[:, [2, 0]]
        model.head_b.value[[0, 2]] = model.head_b.value[[2, 0]]
        swapped = model.logits_for([[3, 4, 5, 6]])[0]
        np.testing.assert_allclose(swapped, base[[2, 1, 0]], rtol=1e-12)

    def test_empty_sentence_rejected(self):
        model, _ = tiny_model()
        with pytest.raises(ValueError):
            model.logits_for([[]])

    def test_no_gradient_side_effects(self):
        model, _ = tiny_model()
        model.zero_grads()
        model.logits_for([[3, 4, 5]])
        assert all(np.all(p.grad == 0.0) for p in model.params())


class TestTraining:
    def make_task(self, num_intents=2, per_intent=10, seed=SEED):
        return make_synthetic_task(num_intents, per_intent, seed=seed)

    def trained(self, task, **overrides):
        cfg = TrainConfig(seed=11, batch_size=8, learning_rate=0.003, **overrides)
        label_map = {lab: i for i, lab in enumerate(task.dataset.labels)}
        return train_classifier(
            task.dataset.train, task.dataset.dev, label_map,
            task.table.matrix_for_model(np.float32), cfg,
        )

    def test_separable_toy_reaches_full_dev_accuracy(self):
        task = self.make_task(2, 10)
        model, record = self.trained(task)
        assert record.best_dev_accuracy() == 1.0
        assert record.chosen_epoch < 30

    def test_trained_model_classifies_training_sentence(self):
        task = self.make_task(2, 10)
        model, _ = self.trained(task)
        label_map = {lab: i for i, lab in enumerate(task.dataset.labels)}
        ex = task.dataset.train[0]
        assert int(model.classify([ex.tokens])[0]) == label_map[ex.label]

    def test_patience_stops_five_epochs_after_best(self):
        task = self.make_task(2, 10)
        _, record = self.trained(task)
        assert record.stop_reason.startswith("dev accuracy flat")
        assert len(record.epochs) == record.chosen_epoch + 1 + 5

    def test_chosen_epoch_is_argmax(self):
        task = self.make_task(3, 8)
        _, record = self.trained(task)
        accs = [e.dev_accuracy for e in record.epochs]
        assert record.epochs[record.chosen_epoch].dev_accuracy == max(accs)

    def test_deterministic(self):
        task = self.make_task(2, 10)
        model_a, rec_a = self.trained(task)
        model_b, rec_b = self.trained(task)
        assert [e.dev_accuracy for e in rec_a.epochs] == [e.dev_accuracy for e in rec_b.epochs]
        assert [e.train_loss for e in rec_a.epochs] == [e.train_loss for e in rec_b.epochs]
        for pa, pb in zip(model_a.params(), model_b.params()):
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_frozen_embeddings_bitwise_unchanged(self):
        task = self.make_task(2, 10)
        before = task.table.matrix_for_model(np.float32)
        model, _ = self.trained(task)
        np.testing.assert_array_equal(model.embedding.value, before)

    def test_lr_follows_schedule(self):
        task = self.make_task(2, 10)
        _, record = self.trained(task)
        for e in record.epochs:
            assert e.lr == pytest.approx(0.003 * 0.8 ** (e.epoch // 2), rel=1e-12)

    def test_lmcl_training_runs(self):
        task = self.make_task(2, 10)
        model, record = self.trained(task, loss="lmcl")
        assert model.head_b is None
        assert record.best_dev_accuracy() > 0.8


class TestNonFiniteLoss:
    def test_error_carries_batch_ids(self):
        model, _ = tiny_model()
        model.head_w.value[...] = np.inf
        ids, lengths = pad_batch([[3, 4, 5]], model.min_len)
        with pytest.raises(RuntimeError, match="417"):
            model.forward_backward(ids, lengths, np.array([0]), example_ids=[417])


class TestAddClass:
    def test_zero_row_preserves_in_domain_logits(self):
        model, _ = tiny_model(num_classes=4)
        sentences = [[3, 4, 5, 6], [7, 8, 9, 10, 11]]
        before = model.logits_for(sentences)
        extended = model.add_class()
        after = extended.logits_for(sentences)
        assert extended.num_classes == 5
        np.testing.assert_array_equal(after[:, :4], before)
        np.testing.assert_array_equal(after[:, 4], np.zeros(2))
        assert (after[:, :4].argmax(axis=1) == before.argmax(axis=1)).all()


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        model, _ = tiny_model(dtype="float32")
        path = tmp_path / "model.npz"
        save_checkpoint(model, path, vocab_hash="abc123")
        loaded, meta = load_checkpoint(path)
        assert meta["vocab_hash"] == "abc123"
        assert meta["config"]["loss"] == "softmax_ce"
        for pa, pb in zip(model.params(), loaded.params()):
            assert pa.value.dtype == pb.value.dtype
            np.testing.assert_array_equal(pa.value, pb.value)
        sent = [[3, 4, 5, 6]]
        np.testing.assert_array_equal(model.logits_for(sent), loaded.logits_for(sent))
