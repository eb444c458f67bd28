"""Synthetic labelled feature sets."""

import numpy as np
import pytest

from battention import io
from battention.errors import ParameterError
from battention.graph import avg_enr, build_knn_graph, l2_normalize
from battention.synthetic import gen_synthetic


class TestGenSynthetic:
    def test_noise_free_classes_are_collinear(self):
        x, labels = gen_synthetic(2, 50, noise=0.0, seed=1)
        xn = l2_normalize(x).data
        for c in (0, 1):
            block = xn[labels.labels == c]
            np.testing.assert_allclose(block @ block.T, 1.0, atol=1e-12)

    def test_shapes_and_order(self):
        x, labels = gen_synthetic(3, 4, dim=5, seed=0)
        assert (x.rows, x.cols) == (12, 5)
        assert labels.labels.tolist() == [0] * 4 + [1] * 4 + [2] * 4

    def test_seeded(self):
        a, _ = gen_synthetic(3, 10, seed=7)
        b, _ = gen_synthetic(3, 10, seed=7)
        c, _ = gen_synthetic(3, 10, seed=8)
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_more_noise_more_edge_noise(self):
        noises = np.linspace(0.2, 2.0, 10)
        rates = []
        for noise in noises:
            x, labels = gen_synthetic(5, 40, dim=16, noise=noise, seed=0)
            rates.append(avg_enr(build_knn_graph(x, 10), labels))
        smooth = np.convolve(rates, np.ones(3) / 3, mode="valid")
        assert np.all(np.diff(smooth) >= 0)
        assert rates[-1] > rates[0]

    def test_feat_round_trip(self, tmp_path):
        x, _ = gen_synthetic(2, 5, seed=0)
        io.write_feat(tmp_path / "x.feat", x)
        back = io.read_feat(tmp_path / "x.feat").data
        np.testing.assert_array_equal(back, x.data.astype(np.float32).astype(np.float64))

    @pytest.mark.parametrize("args", [(0, 5), (2, 0), (2, 5, 0)])
    def test_counts_must_be_positive(self, args):
        with pytest.raises(ParameterError):
            gen_synthetic(*args)
