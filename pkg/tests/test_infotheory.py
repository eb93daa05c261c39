import math

import numpy as np
import pytest

from qixai.infotheory import (
    digitize,
    entropy,
    layer_mi,
    mutual_information,
    pairwise_feature_map_mi,
)


def loop_mi(x, y):
    n = len(x.bin_index)
    joint = {}
    for a, b in zip(x.bin_index, y.bin_index):
        joint[(a, b)] = joint.get((a, b), 0) + 1
    px = {}
    py = {}
    for (a, b), c in joint.items():
        px[a] = px.get(a, 0) + c
        py[b] = py.get(b, 0) + c
    total = 0.0
    for (a, b), c in joint.items():
        pxy = c / n
        total += pxy * math.log(pxy / ((px[a] / n) * (py[b] / n)))
    return total


class TestDigitize:
    def test_endpoints(self):
        d = digitize(np.array([0.0, 1.0]), 2)
        assert d.bin_index.tolist() == [0, 1]
        assert d.edges.tolist() == [0.0, 0.5, 1.0]

    def test_constant_input(self):
        d = digitize(np.full(5, 3.0), 4)
        assert (d.bin_index == 0).all()

    def test_uniform_counts(self):
        d = digitize(np.arange(100.0), 20)
        counts = np.bincount(d.bin_index, minlength=20)
        assert (counts == 5).all()

    def test_max_lands_in_last_bin(self):
        d = digitize(np.array([0.0, 0.5, 1.0]), 2)
        assert d.bin_index[-1] == 1

    def test_monotone(self, rng):
        values = rng.normal(size=200)
        d = digitize(values, 7)
        order = np.argsort(values, kind="stable")
        assert (np.diff(d.bin_index[order]) >= 0).all()

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            digitize(np.array([]), 4)
        with pytest.raises(ValueError, match="n_bins"):
            digitize(np.array([1.0]), 1)
        with pytest.raises(ValueError, match="finite"):
            digitize(np.array([np.nan]), 4)


class TestEntropy:
    def test_single_bin(self):
        assert entropy(digitize(np.full(10, 2.0), 5)) == 0.0

    def test_two_equiprobable(self):
        h = entropy(digitize(np.array([0.0, 0.0, 1.0, 1.0]), 2))
        assert h == pytest.approx(math.log(2), abs=1e-12)

    def test_twenty_equiprobable(self):
        h = entropy(digitize(np.arange(20.0), 20))
        assert h == pytest.approx(math.log(20), abs=1e-12)


class TestMutualInformation:
    def test_product_distribution_exact_zero(self):
        idx = np.arange(16)
        x = digitize((idx % 4).astype(float), 4)
        y = digitize((idx // 4 % 4).astype(float), 4)
        assert mutual_information(x, y) == 0.0

    def test_self_mi_is_entropy(self):
        d = digitize(np.arange(20.0), 20)
        assert mutual_information(d, d) == pytest.approx(math.log(20), abs=1e-12)

    def test_loop_oracle(self, rng):
        x = digitize(rng.normal(size=300), 6)
        y = digitize(rng.normal(size=300) + 0.3 * x.bin_index, 8)
        assert mutual_information(x, y) == pytest.approx(loop_mi(x, y), abs=1e-12)

    def test_symmetry_and_nonnegativity(self, rng):
        for _ in range(20):
            x = digitize(rng.normal(size=120), 5)
            y = digitize(rng.normal(size=120), 9)
            mxy = mutual_information(x, y)
            myx = mutual_information(y, x)
            assert mxy == pytest.approx(myx, abs=1e-12)
            assert mxy >= 0.0

    def test_bin_relabeling_invariance(self, rng):
        from qixai.infotheory import Digitization

        x = digitize(rng.normal(size=150), 6)
        y = digitize(rng.normal(size=150), 6)
        perm = rng.permutation(6)
        x2 = Digitization(bin_index=perm[x.bin_index], edges=x.edges, n_bins=6)
        assert mutual_information(x2, y) == pytest.approx(
            mutual_information(x, y), abs=1e-12
        )

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError, match="lengths"):
            mutual_information(digitize(np.arange(4.0), 2), digitize(np.arange(5.0), 2))


class TestLayerMi:
    def test_self_equals_entropy(self, rng):
        pooled = rng.normal(size=(30, 4))
        assert layer_mi(pooled, pooled, 10) == pytest.approx(
            entropy(digitize(pooled.ravel(), 10)), abs=1e-12
        )

    def test_permutation_null(self, rng):
        pooled = rng.normal(size=(2500, 4))  # 10^4 points
        shuffled = pooled.ravel()[rng.permutation(pooled.size)].reshape(pooled.shape)
        assert layer_mi(pooled, shuffled, 20) < 0.05

    def test_matches_manual_flatten(self, smallcnn, batch64):
        from qixai.model import forward
        from qixai.reduce import global_average_pool

        _, acts = forward(smallcnn, batch64[:16])
        a = global_average_pool(acts["conv1"])
        b = global_average_pool(acts["conv2"])[:, :8]
        direct = mutual_information(digitize(a.ravel(), 20), digitize(b.ravel(), 20))
        assert layer_mi(a, b, 20) == direct

    def test_unequal_channels_error_mentions_truncation(self, rng):
        with pytest.raises(ValueError, match="truncate"):
            layer_mi(rng.normal(size=(4, 3)), rng.normal(size=(4, 5)))


class TestPairwiseFeatureMapMi:
    def test_cloned_channel_ranks_first(self, rng):
        a = rng.normal(size=(40, 3, 3, 4))
        b = rng.normal(size=(40, 3, 3, 3))
        b[:, :, :, 2] = a[:, :, :, 1]
        top = pairwise_feature_map_mi(a, b, n_bins=6, top_k=1)
        assert top[0].map_a[1] == 1
        assert top[0].map_b[1] == 2
        pooled = a[:, :, :, 1].mean(axis=(1, 2))
        assert top[0].mi_nats == pytest.approx(
            entropy(digitize(pooled, 6)), abs=1e-12
        )

    def test_constant_channels_lexicographic(self):
        a = np.ones((5, 2, 2, 3))
        b = np.ones((5, 2, 2, 2))
        pairs = pairwise_feature_map_mi(a, b, n_bins=4, top_k=6)
        assert [(p.map_a[1], p.map_b[1]) for p in pairs] == [
            (0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)
        ]
        assert all(p.mi_nats == 0.0 for p in pairs)

    def test_full_ranking_matches_exhaustive_oracle(self, rng):
        a = rng.normal(size=(32, 4, 4, 4))
        b = rng.normal(size=(32, 4, 4, 4))
        pairs = pairwise_feature_map_mi(a, b, n_bins=5, top_k=16, layer_names=("x", "y"))
        scores = {}
        for i in range(4):
            for j in range(4):
                scores[(i, j)] = mutual_information(
                    digitize(a[:, :, :, i].mean(axis=(1, 2)), 5),
                    digitize(b[:, :, :, j].mean(axis=(1, 2)), 5),
                )
        expected = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        assert [
            ((p.map_a[1], p.map_b[1]), p.mi_nats) for p in pairs
        ] == expected

    def test_top_k_validation(self, rng):
        a = rng.normal(size=(4, 2, 2, 1))
        with pytest.raises(ValueError, match="top_k"):
            pairwise_feature_map_mi(a, a, top_k=0)

    def test_thread_cap_env(self, rng, monkeypatch):
        a = rng.normal(size=(16, 2, 2, 3))
        b = rng.normal(size=(16, 2, 2, 3))
        serial = pairwise_feature_map_mi(a, b, n_bins=4, top_k=9)
        monkeypatch.setenv("QIXAI_THREADS", "4")
        threaded = pairwise_feature_map_mi(a, b, n_bins=4, top_k=9)
        assert serial == threaded
        monkeypatch.setenv("QIXAI_THREADS", "banana")
        with pytest.raises(ValueError, match="QIXAI_THREADS"):
            pairwise_feature_map_mi(a, b, n_bins=4, top_k=1)
