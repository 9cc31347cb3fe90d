import numpy as np
import pytest

from dnndif import store
from dnndif.corpus import generate_corpus
from dnndif.dnn import (Architecture, TrainConfig, backward, bce_loss, forward, init_network, predict,
                        predict_batched, sgd_nesterov_step, split_indices, train)
from dnndif.errors import ConfigError, ShapeError
from dnndif.evaluation import auroc
from dnndif.simgen import DesignMatrix, SimulationConfig, generate_responses
from helpers import finite_difference_check, relative_errors


def tiny(rng, dims=(6, 5, 5, 5, 4)):
    return init_network(Architecture(dims[0], dims[-1], dims[1:4]), rng)


class TestInit:
    def test_glorot_bound(self, rng, oracle):
        net = init_network(Architecture(100, 3, (200, 4, 4)), rng)
        w = net.weights[0]
        assert np.abs(w).max() <= oracle["glorot_100_200"]
        # the bound is nearly attained, so the limit is not too small either
        assert np.abs(w).max() > 0.99 * oracle["glorot_100_200"]

    def test_batch_norm_identity(self, rng):
        net = tiny(rng)
        assert np.all(net.bn_gamma == 1) and np.all(net.bn_beta == 0)
        assert np.all(net.bn_mean == 0) and np.all(net.bn_var == 1)

    def test_seeded(self):
        a = tiny(np.random.default_rng(4))
        b = tiny(np.random.default_rng(4))
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))

    def test_architecture_validation(self):
        with pytest.raises(ConfigError):
            Architecture(10, 2, (5, 5))
        with pytest.raises(ConfigError):
            Architecture(10, 2, (5, 0, 5))
        with pytest.raises(ConfigError):
            Architecture.for_profile("huge", 10, 2)
        assert Architecture.for_profile("paper", 8000, 20).hidden_widths == (8000, 8000, 8000)


class TestForward:
    def test_zero_batch_gives_half(self, rng):
        out, _ = forward(tiny(rng), np.zeros((3, 6)))
        np.testing.assert_array_equal(out, 0.5)

    def test_infer_deterministic(self, rng):
        net = tiny(rng)
        x = rng.normal(size=(4, 6))
        np.testing.assert_array_equal(forward(net, x)[0], forward(net, x)[0])

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            forward(tiny(rng), np.zeros((2, 7)))

    def test_dropout_preserves_expectation(self):
        rng = np.random.default_rng(8)
        net = tiny(rng, (3, 4, 1, 1, 1))
        # a single-row batch normalizes to beta; positive beta and weights keep the unit active
        net.bn_beta[:] = 1.0
        net.weights[1] = np.abs(net.weights[1])
        x = rng.normal(size=(1, 3))
        runs = 10_000
        vals = np.empty(runs)
        for k in range(runs):
            _, cache = forward(net, x, "train", rng=rng, update_stats=False)
            vals[k] = cache.d2[0, 0]
        undropped = max(cache.z2[0, 0], 0.0)
        assert undropped > 0
        se = vals.std() / np.sqrt(runs)
        assert abs(vals.mean() - undropped) < 3 * se

    def test_batch_norm_standardizes(self, rng):
        net = tiny(rng, (6, 50, 5, 5, 4))
        _, cache = forward(net, rng.normal(size=(64, 6)), "train", rng=rng)
        active = cache.inv_std < 1 / np.sqrt(net.bn_eps) - 1e-9
        xh = cache.xhat[:, active]
        np.testing.assert_allclose(xh.mean(axis=0), 0, atol=1e-10)
        # variance is var / (var + eps): slightly below one
        assert np.all(xh.var(axis=0) <= 1) and np.all(xh.var(axis=0) > 0.5)

    def test_running_stats_update(self, rng):
        net = tiny(rng)
        x = rng.normal(size=(16, 6))
        _, cache = forward(net, x, "train", rng=rng)
        a1 = np.maximum(x @ net.weights[0], 0)
        np.testing.assert_allclose(net.bn_mean, 0.01 * a1.mean(axis=0))
        np.testing.assert_allclose(net.bn_var, 0.99 + 0.01 * a1.var(axis=0))


class TestLoss:
    def test_values(self, oracle):
        assert bce_loss([1, 0], [1, 0]) < 1e-6
        assert bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(oracle["bce_half_half"], abs=1e-12)
        assert bce_loss([0.9], [0]) == pytest.approx(oracle["bce_zero_vs_0.9"], abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            bce_loss([], [])


class TestBackward:
    def test_finite_differences_tiny(self, rng):
        net = tiny(rng)
        from dnndif.dnn import dropout_masks

        masks = dropout_masks(net, 8, rng)
        x = rng.normal(size=(8, 6))
        y = (rng.random((8, 4)) < 0.5).astype(float)
        analytic, numeric = finite_difference_check(net, x, y, masks)
        assert relative_errors(analytic, numeric).max() < 1e-4

    def test_output_gradient_vanishes_at_targets(self, rng):
        net = tiny(rng)
        x = rng.normal(size=(5, 6))
        out, cache = forward(net, x, "train", rng=rng, update_stats=False)
        grads = backward(net, cache, out)
        assert np.abs(grads[3]).max() < 1e-15

    def test_saturated_outputs_get_no_gradient(self, rng):
        # the loss is flat beyond the clip bounds, so the gradient must be too
        net = tiny(rng)
        net.weights[3][:] = 1e4
        x = rng.normal(size=(5, 6))
        out, cache = forward(net, x, "train", rng=rng, update_stats=False)
        saturated = (out <= 1e-7) | (out >= 1 - 1e-7)
        assert saturated.any()
        grads = backward(net, cache, np.zeros_like(out))
        assert np.all(grads[3][:, saturated.all(axis=0)] == 0)

    def test_row_duplication_invariance(self, rng):
        net = tiny(rng)
        from dnndif.dnn import dropout_masks

        x = rng.normal(size=(6, 6))
        y = (rng.random((6, 4)) < 0.5).astype(float)
        masks = dropout_masks(net, 6, rng)
        _, c1 = forward(net, x, "train", masks=masks, update_stats=False)
        g1 = backward(net, c1, y)
        masks2 = tuple(np.vstack([m, m]) for m in masks)
        _, c2 = forward(net, np.vstack([x, x]), "train", masks=masks2, update_stats=False)
        g2 = backward(net, c2, np.vstack([y, y]))
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)

    def test_rejects_infer_cache_and_wrong_targets(self, rng):
        net = tiny(rng)
        x = rng.normal(size=(3, 6))
        _, infer_cache = forward(net, x)
        with pytest.raises(ValueError):
            backward(net, infer_cache, np.zeros((3, 4)))
        _, cache = forward(net, x, "train", rng=rng)
        with pytest.raises(ShapeError):
            backward(net, cache, np.zeros((4, 4)))


class TestOptimizer:
    def one_param_net(self):
        net = init_network(Architecture(1, 1, (1, 1, 1)), np.random.default_rng(0))
        for p in net.parameters():
            p[...] = 0.0
        return net

    def test_two_steps(self, oracle):
        net = self.one_param_net()
        grads = [np.ones_like(p) for p in net.parameters()]
        net, v = sgd_nesterov_step(net, grads, None, 0.1, 0.8)
        (v1, w1), (v2, w2) = oracle["nesterov_two_steps"]
        assert v[0].item() == pytest.approx(v1) and net.weights[0].item() == pytest.approx(w1)
        net, v = sgd_nesterov_step(net, grads, v, 0.1, 0.8)
        assert v[0].item() == pytest.approx(v2) and net.weights[0].item() == pytest.approx(w2)

    def test_zero_gradient_fixed_point(self):
        net = self.one_param_net()
        grads = [np.zeros_like(p) for p in net.parameters()]
        net, v = sgd_nesterov_step(net, grads, None, 0.1, 0.8)
        assert all(np.all(p == 0) for p in net.parameters())

    def test_shape_mismatch(self):
        net = self.one_param_net()
        with pytest.raises(ShapeError):
            sgd_nesterov_step(net, [np.zeros(3)] * 6, None, 0.1, 0.8)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.momentum, cfg.batch_size) == (0.1, 0.8, 256)
        assert cfg.epochs_for("thresholds") == 3 and cfg.epochs_for("loadings") == 8
        assert cfg.split == (0.8, 0.1, 0.1)

    @pytest.mark.parametrize("kw", [{"momentum": 1.5}, {"momentum": 1.0}, {"learning_rate": 0},
                                    {"batch_size": 0}, {"split": (0.5, 0.2, 0.2)}, {"nesterov": False}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_round_trip(self):
        cfg = TrainConfig(epochs=4, seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"lr": 0.1})

    def test_contiguous_split(self):
        tr, va, te = split_indices(10, (0.8, 0.1, 0.1))
        assert tr.tolist() == list(range(8)) and va.tolist() == [8] and te.tolist() == [9]


def planted_corpus(tmp_path, n_reps, seed, shuffle_labels=False):
    """Corpus where cell (group 0, item 1) carries a +1.0 threshold bias in a random half.

    With ``shuffle_labels`` the labels are permuted within each 0.6/0.2/0.2
    segment separately; one permutation over the whole pool would tie the
    held-out labels to the training ones and bias AUROC below one half.
    """
    from dnndif.corpus import Corpus

    root = tmp_path / f"planted{seed}{shuffle_labels}"
    (root / "rep").mkdir(parents=True)
    (root / "out").mkdir()
    rng = np.random.default_rng(seed)
    cfg = SimulationConfig(n_groups=2, n_items=3, n_per_group=100)
    base = DesignMatrix.invariant([2.0, 2.0, 2.0], [-0.5, 0.0, 0.5], [0.0, 0.0], [1.0, 1.0])
    labels = []
    files = []
    for i in range(1, n_reps + 1):
        d = base.with_bias(0, 1, 1.0) if rng.random() < 0.5 else base
        data, y = generate_responses(d, 100, rng)
        store.write_response_file(data, root / f"rep/rep{i}.csv")
        labels.append(y)
        files.append({"responses": f"rep/rep{i}.csv", "labels": f"out/out{i}.csv"})
    if shuffle_labels:
        order = np.concatenate([seg[rng.permutation(len(seg))]
                                for seg in split_indices(n_reps, (0.6, 0.2, 0.2))])
        labels = [labels[k] for k in order]
    for i, y in enumerate(labels, start=1):
        store.write_label_file(y, root / f"out/out{i}.csv")
    corpus = Corpus(root, cfg, seed, files)
    corpus.write_manifest()
    return corpus


class TestTraining:
    arch = Architecture(600, 6, (32, 32, 32))

    def held_out_auroc(self, net, corpus, cell=1):
        X, labels = corpus.load_arrays()
        _, _, te = split_indices(len(X), (0.6, 0.2, 0.2))
        scores = predict_batched(net, X[te])[:, cell]
        return auroc(scores, store.split_labels(labels[te], "thresholds")[:, cell])

    def test_learns_planted_cell(self, tmp_path):
        corpus = planted_corpus(tmp_path, 200, 1)
        cfg = TrainConfig(epochs=40, batch_size=16, split=(0.6, 0.2, 0.2))
        net, hist = train(corpus, "thresholds", self.arch, cfg, np.random.default_rng(2))
        assert self.held_out_auroc(net, corpus) > 0.9
        assert len(hist.train_loss) == 40
        assert np.mean(hist.last_epoch_batch_losses) <= np.mean(hist.first_epoch_batch_losses)

    def test_shuffled_labels_no_signal(self, tmp_path):
        cfg = TrainConfig(epochs=20, batch_size=16, split=(0.6, 0.2, 0.2))
        scores = []
        for seed in range(5):
            corpus = planted_corpus(tmp_path, 1000, 10 + seed, shuffle_labels=True)
            net, _ = train(corpus, "thresholds", self.arch, cfg, np.random.default_rng(seed))
            scores.append(self.held_out_auroc(net, corpus))
        assert 0.45 <= np.mean(scores) <= 0.55

    def test_deterministic(self, tmp_path):
        corpus = planted_corpus(tmp_path, 40, 3)
        cfg = TrainConfig(epochs=2, batch_size=8)
        a, ha = train(corpus, "thresholds", self.arch, cfg, np.random.default_rng(5))
        b, hb = train(corpus, "thresholds", self.arch, cfg, np.random.default_rng(5))
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
        assert ha.to_dict() == hb.to_dict()

    def test_mismatch_rejected(self, tmp_path):
        corpus = planted_corpus(tmp_path, 5, 4)
        with pytest.raises(ShapeError):
            train(corpus, "thresholds", Architecture(601, 6, (4, 4, 4)), TrainConfig(epochs=1))
        with pytest.raises(ConfigError):
            train(corpus, "items", self.arch, TrainConfig(epochs=1))

    def test_beats_chance_on_generated_corpus(self, tmp_path):
        cfg = SimulationConfig(n_groups=4, n_items=3, n_per_group=50)
        corpus = generate_corpus(cfg, 3000, tmp_path / "gen", 21)
        net, hist = train(corpus, "thresholds", Architecture(600, 12, (64, 64, 64)),
                          TrainConfig(epochs=10, batch_size=32), np.random.default_rng(0))
        X, labels = corpus.load_arrays()
        _, _, te = split_indices(len(X), (0.8, 0.1, 0.1))
        scores = predict_batched(net, X[te])
        assert auroc(scores.ravel(), store.split_labels(labels[te], "thresholds").ravel()) >= 0.6


class TestPredict:
    def test_range_and_rows(self, rng):
        net = tiny(rng)
        X = rng.integers(0, 2, (7, 6))
        batch = predict(net, X)
        assert np.all((batch > 0) & (batch < 1))
        np.testing.assert_array_equal(predict(net, X[2]), batch[2])
        np.testing.assert_array_equal(predict_batched(net, X, batch_size=3), batch)
        with pytest.raises(ShapeError):
            predict(net, np.zeros(5))

    def test_model_round_trip_is_bit_identical(self, rng, tmp_path):
        net = tiny(rng)
        net.bn_mean[:] = rng.random(5)
        net.bn_var[:] = rng.random(5)
        store.write_model(net, tmp_path / "m.json", {"target": "thresholds"}, cutpoint=0.123456789012345678)
        loaded, meta, cut = store.read_model(tmp_path / "m.json")
        x = rng.integers(0, 2, (9, 6))
        np.testing.assert_array_equal(predict(net, x), predict(loaded, x))
        assert meta["target"] == "thresholds" and cut == 0.123456789012345678
