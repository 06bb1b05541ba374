import math

import numpy as np
import pytest

from glitchtrace.data import Dataset, make_blobs, stratified_split
from glitchtrace.errors import TrainingDivergenceError, ValidationError
from glitchtrace.glitches import inject_far_ca, inject_near_ca
from glitchtrace.models import (
    Checkpoint,
    CheckpointTrail,
    ModelConfig,
    evaluate_accuracy,
    last_layer_gradient,
    last_layer_gradients,
    replay_trail,
    train,
)


def random_checkpoint(arch, d, k, h, rng, scale=1.0):
    if arch == "logistic":
        params = (scale * rng.normal(size=(k, d)), scale * rng.normal(size=k))
    else:
        params = (
            scale * rng.normal(size=(h, d)),
            scale * rng.normal(size=h),
            scale * rng.normal(size=(k, h)),
            scale * rng.normal(size=k),
        )
    return Checkpoint(epoch=0, architecture=arch, params=params, learning_rate=0.1,
                      batch_index=np.zeros(1, dtype=np.int64))


def loss_oracle(arch, params, x, y):
    """Cross-entropy loss recomputed with plain Python math."""
    if arch == "logistic":
        W, b = params
        a = list(x)
    else:
        W1, b1, W, b = params
        a = [max(0.0, sum(W1[i][j] * x[j] for j in range(len(x))) + b1[i]) for i in range(len(b1))]
    logits = [sum(W[c][j] * a[j] for j in range(len(a))) + b[c] for c in range(len(b))]
    zmax = max(logits)
    denom = sum(math.exp(z - zmax) for z in logits)
    return -(logits[y] - zmax - math.log(denom))


def finite_difference_gradient(arch, params, x, y, h=1e-4):
    """Central differences w.r.t. the final layer's weights and bias."""
    W = np.array(params[-2], dtype=np.float64)
    b = np.array(params[-1], dtype=np.float64)
    k, width = W.shape
    grad = np.zeros((k, width + 1))

    def rebuild(Wp, bp):
        return params[:-2] + (Wp, bp)

    for c in range(k):
        for j in range(width):
            Wp, Wm = W.copy(), W.copy()
            Wp[c, j] += h
            Wm[c, j] -= h
            grad[c, j] = (
                loss_oracle(arch, rebuild(Wp, b), x, y) - loss_oracle(arch, rebuild(Wm, b), x, y)
            ) / (2 * h)
        bp, bm = b.copy(), b.copy()
        bp[c] += h
        bm[c] -= h
        grad[c, width] = (
            loss_oracle(arch, rebuild(W, bp), x, y) - loss_oracle(arch, rebuild(W, bm), x, y)
        ) / (2 * h)
    return grad


class TestModelConfig:
    def test_valid(self):
        ModelConfig(architecture="mlp", learning_rate=0.1, epochs=3, batch_size=8, seed=0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(architecture="cnn", learning_rate=0.1, epochs=3, batch_size=8, seed=0),
            dict(architecture="logistic", learning_rate=0.0, epochs=3, batch_size=8, seed=0),
            dict(architecture="logistic", learning_rate=0.1, epochs=0, batch_size=8, seed=0),
            dict(architecture="logistic", learning_rate=0.1, epochs=3, batch_size=0, seed=0),
            dict(architecture="mlp", learning_rate=0.1, epochs=3, batch_size=8, seed=0, hidden_units=0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            ModelConfig(**kwargs)


class TestTraining:
    def test_vanishing_step_keeps_initial_params(self, blob_300):
        cfg = ModelConfig(architecture="logistic", learning_rate=1e-12, epochs=1, batch_size=32, seed=3)
        trail = train(blob_300, cfg)
        for p0, pT in zip(trail.checkpoints[0].params, trail.final_params):
            assert np.max(np.abs(pT - p0)) <= 1e-9

    def test_separable_blobs_fit(self):
        ds = make_blobs(n=200, d=2, k=2, separation=10.0, seed=5)
        cfg = ModelConfig(architecture="logistic", learning_rate=0.5, epochs=20, batch_size=32, seed=0)
        trail = train(ds, cfg)
        assert evaluate_accuracy(trail, ds) >= 0.99

    def test_bit_identical_reruns(self, blob_300):
        cfg = ModelConfig(architecture="mlp", hidden_units=16, learning_rate=0.1, epochs=5,
                          batch_size=16, seed=11)
        t1 = train(blob_300, cfg)
        t2 = train(blob_300, cfg)
        for a, b in zip(t1.final_params, t2.final_params):
            assert np.array_equal(a, b)
        for c1, c2 in zip(t1.checkpoints, t2.checkpoints):
            assert np.array_equal(c1.batch_index, c2.batch_index)
            for a, b in zip(c1.params, c2.params):
                assert np.array_equal(a, b)

    def test_checkpoint_epochs_and_batches(self, blob_300):
        cfg = ModelConfig(architecture="logistic", learning_rate=0.1, epochs=7, batch_size=32, seed=2)
        trail = train(blob_300, cfg)
        assert [c.epoch for c in trail.checkpoints] == list(range(7))
        for cp in trail.checkpoints:
            assert cp.learning_rate > 0
            sizes = cp.batch_sizes()
            assert sizes.sum() == blob_300.n  # each sample in exactly one batch
            assert sizes.max() <= 32

    def test_batch_size_above_n_rejected(self, tiny_dataset):
        cfg = ModelConfig(architecture="logistic", learning_rate=0.1, epochs=1, batch_size=10, seed=0)
        with pytest.raises(ValidationError, match="batch_size"):
            train(tiny_dataset, cfg)

    def test_divergence_names_epoch(self, blob_300):
        cfg = ModelConfig(architecture="mlp", hidden_units=8, learning_rate=1e200, epochs=5,
                          batch_size=300, seed=0)
        with pytest.raises(TrainingDivergenceError, match="epoch 1"):
            train(blob_300, cfg)

    def test_lr_decay_schedule(self, blob_300):
        cfg = ModelConfig(architecture="logistic", learning_rate=0.4, epochs=3, batch_size=64,
                          seed=0, lr_decay=0.5)
        trail = train(blob_300, cfg)
        assert [c.learning_rate for c in trail.checkpoints] == [0.4, 0.2, 0.1]

    @pytest.mark.parametrize("arch", ["logistic", "mlp"])
    def test_replay_reproduces_final_params(self, blob_300, arch):
        cfg = ModelConfig(architecture=arch, hidden_units=8, learning_rate=0.2, epochs=6,
                          batch_size=24, seed=4)
        trail = train(blob_300, cfg)
        replayed = replay_trail(trail, blob_300)
        for a, b in zip(replayed, trail.final_params):
            assert np.array_equal(a, b)


class TestLastLayerGradient:
    def test_uniform_softmax_two_classes(self):
        # equal logits, k=2, single unit feature: error vector is +/-0.5
        cp = Checkpoint(epoch=0, architecture="logistic",
                        params=(np.zeros((2, 1)), np.zeros(2)),
                        learning_rate=0.1, batch_index=np.zeros(1, dtype=np.int64))
        g = last_layer_gradient(cp, np.array([1.0]), 0)
        assert np.allclose(g, np.array([[-0.5, -0.5], [0.5, 0.5]]))

    def test_confident_correct_prediction_vanishes(self):
        W = np.array([[30.0], [-30.0]])
        cp = Checkpoint(epoch=0, architecture="logistic", params=(W, np.zeros(2)),
                        learning_rate=0.1, batch_index=np.zeros(1, dtype=np.int64))
        g = last_layer_gradient(cp, np.array([1.0]), 0)
        assert np.linalg.norm(g) < 1e-10

    @pytest.mark.parametrize("arch", ["logistic", "mlp"])
    def test_matches_finite_differences(self, arch):
        rng = np.random.default_rng(0)
        for case in range(20):
            d = int(rng.integers(2, 6))
            k = int(rng.integers(2, 5))
            h = int(rng.integers(2, 6))
            cp = random_checkpoint(arch, d, k, h, rng, scale=0.5)
            x = rng.normal(size=d)
            y = int(rng.integers(k))
            g = last_layer_gradient(cp, x, y)
            fd = finite_difference_gradient(arch, cp.params, x, y)
            denom = max(np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(g - fd) / denom <= 1e-5, f"{arch} case {case}"

    def test_class_rows_sum_to_zero(self, blob_300):
        cfg = ModelConfig(architecture="mlp", hidden_units=12, learning_rate=0.1, epochs=3,
                          batch_size=32, seed=9)
        trail = train(blob_300, cfg)
        for cp in trail.checkpoints:
            g = last_layer_gradients(trail.architecture, cp.params, blob_300.features, blob_300.labels)
            sums = g.sum(axis=1)
            assert np.max(np.abs(sums)) <= 1e-9


class TestEvaluateAccuracy:
    def test_single_correct_sample_scores_one(self):
        ds = make_blobs(n=100, d=2, k=2, separation=10.0, seed=1)
        cfg = ModelConfig(architecture="logistic", learning_rate=0.5, epochs=15, batch_size=20, seed=0)
        trail = train(ds, cfg)
        correct = None
        from glitchtrace.models import predict_logits

        preds = np.argmax(predict_logits(trail.architecture, trail.final_params, ds.features), axis=1)
        correct = int(ds.sample_ids[np.flatnonzero(preds == ds.labels)[0]])
        assert evaluate_accuracy(trail, ds, subset={correct}) == 1.0

    def test_empty_subset_rejected(self, blob_300):
        cfg = ModelConfig(architecture="logistic", learning_rate=0.1, epochs=1, batch_size=64, seed=0)
        trail = train(blob_300, cfg)
        with pytest.raises(ValidationError):
            evaluate_accuracy(trail, blob_300, subset=set())
        with pytest.raises(ValidationError):
            evaluate_accuracy(trail, blob_300, subset={99999})

    def test_near_ca_samples_stay_unlearned(self):
        # downsampled minority in heavily overlapping blobs: the model should
        # essentially never predict the rare class
        accs = []
        for seed in range(5):
            base = make_blobs(n=300, d=2, k=3, separation=0.75, seed=seed)
            pair = stratified_split(base, 0.8, seed=seed)
            glitched, table = inject_near_ca(pair.train, 0.10, victim_class=0, seed=seed)
            cfg = ModelConfig(architecture="logistic", learning_rate=0.1, epochs=10,
                              batch_size=32, seed=seed)
            trail = train(glitched, cfg)
            accs.append(evaluate_accuracy(trail, glitched, subset=set(table.glitched_ids().tolist())))
        assert sum(a <= 0.2 for a in accs) >= 3

    def test_far_ca_samples_get_learned(self):
        # a tight far cluster under one consistent label is fit essentially
        # perfectly after enough epochs
        accs = []
        for seed in range(5):
            base = make_blobs(n=300, d=4, k=3, separation=6.0, seed=seed)
            pair = stratified_split(base, 0.8, seed=seed)
            raw = make_blobs(n=150, d=4, k=2, separation=6.0, seed=seed + 100)
            foreign = Dataset(raw.features * 0.3 + 25.0, raw.labels, raw.sample_ids, 2)
            glitched, table = inject_far_ca(pair.train, foreign, 0, 0.10, seed=seed, id_floor=300)
            cfg = ModelConfig(architecture="logistic", learning_rate=0.1, epochs=40,
                              batch_size=32, seed=seed)
            trail = train(glitched, cfg)
            accs.append(evaluate_accuracy(trail, glitched, subset=set(table.glitched_ids().tolist())))
        assert sum(a >= 0.9 for a in accs) >= 3


class TestTrailPersistence:
    @pytest.mark.parametrize("arch", ["logistic", "mlp"])
    def test_roundtrip_bit_exact(self, tmp_path, blob_300, arch):
        cfg = ModelConfig(architecture=arch, hidden_units=8, learning_rate=0.3, epochs=4,
                          batch_size=50, seed=21)
        trail = train(blob_300, cfg)
        path = tmp_path / "trail.bin"
        trail.to_file(path)
        back = CheckpointTrail.from_file(path)
        assert back.architecture == trail.architecture
        assert np.array_equal(back.train_ids, trail.train_ids)
        assert back.num_epochs == trail.num_epochs
        for c1, c2 in zip(trail.checkpoints, back.checkpoints):
            assert c1.learning_rate == c2.learning_rate
            assert np.array_equal(c1.batch_index, c2.batch_index)
            for a, b in zip(c1.params, c2.params):
                assert np.array_equal(a, b)
        for a, b in zip(trail.final_params, back.final_params):
            assert np.array_equal(a, b)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValidationError):
            CheckpointTrail.from_file(path)

    def test_batch_assignment_map(self, blob_300):
        cfg = ModelConfig(architecture="logistic", learning_rate=0.1, epochs=2, batch_size=100, seed=0)
        trail = train(blob_300, cfg)
        mapping = trail.batch_assignment_map(0)
        assert set(mapping) == set(blob_300.sample_ids.tolist())
        assert set(mapping.values()) == {0, 1, 2}
