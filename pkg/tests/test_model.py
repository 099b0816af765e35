import numpy as np
import pytest

from bwsembed.model import (
    EncoderConfig,
    MarginConfig,
    encode,
    encode_items,
    init_params,
    margins,
    pool,
)

from conftest import random_items


def reference_encoder(params, features):
    """Plain numpy forward pass used as an oracle."""
    x = features.mean(axis=0)
    depth = sum(1 for k in params if k.startswith("enc.W"))
    for k in range(depth):
        x = x @ params[f"enc.W{k}"] + params[f"enc.b{k}"]
        if k < depth - 1:
            x = np.tanh(x)
    return x


class TestInit:
    def test_layout_and_shapes(self):
        p = init_params(EncoderConfig(feature_dim=7, hidden_dims=[5, 4], d=3), MarginConfig(hidden_dims=[6]))
        assert p.shapes() == {
            "enc.W0": (7, 5), "enc.b0": (5,), "enc.W1": (5, 4), "enc.b1": (4,), "enc.W2": (4, 3), "enc.b2": (3,),
            "margin.W0": (9, 6), "margin.b0": (6,), "margin.W1": (6, 1), "margin.b1": (1,),
        }  # fmt: skip

    def test_glorot_bounds_and_zero_biases(self):
        p = init_params(EncoderConfig(feature_dim=80), MarginConfig())
        for name, value in p.items():
            if ".b" in name:
                assert not value.any()
            else:
                limit = np.sqrt(6.0 / sum(value.shape))
                assert np.abs(value).max() <= limit
                assert np.abs(value).max() > 0.9 * limit

    def test_seed_determinism(self):
        a = init_params(EncoderConfig(4, seed=3), MarginConfig())
        b = init_params(EncoderConfig(4, seed=3), MarginConfig())
        c = init_params(EncoderConfig(4, seed=4), MarginConfig())
        assert a.equals(b)
        assert not a.equals(c)

    @pytest.mark.parametrize("kwargs", [{"d": 0}, {"feature_dim": 0}])
    def test_bad_encoder_config(self, kwargs):
        with pytest.raises(ValueError):
            EncoderConfig(**{"feature_dim": 4, **kwargs})

    @pytest.mark.parametrize("mu, delta", [(0.0, 0.0), (1.0, 1.5), (1.0, -0.1)])
    def test_bad_margin_config(self, mu, delta):
        with pytest.raises(ValueError):
            MarginConfig(mu=mu, delta=delta)


class TestEncoder:
    def test_matches_numpy_reference(self, rng):
        p = init_params(EncoderConfig(5, hidden_dims=[8, 6], d=4), MarginConfig())
        for it in random_items(rng, 6, frames=7):
            np.testing.assert_allclose(encode(p, it.features), reference_encoder(p, it.features), rtol=1e-13)

    def test_batch_equals_single(self, rng):
        p = init_params(EncoderConfig(5, d=4), MarginConfig())
        items = random_items(rng, 5)
        H = encode_items(p, items)
        for k, it in enumerate(items):
            np.testing.assert_allclose(H[k], encode(p, it.features), rtol=1e-13)

    def test_frame_order_is_irrelevant(self, rng):
        p = init_params(EncoderConfig(5, d=4), MarginConfig())
        f = rng.standard_normal((9, 5))
        np.testing.assert_allclose(encode(p, f), encode(p, f[::-1]), rtol=1e-12)

    def test_pool_rejects_empty(self):
        with pytest.raises(ValueError):
            pool(np.zeros((0, 4)))

    def test_width_mismatch(self):
        p = init_params(EncoderConfig(5, d=4), MarginConfig())
        with pytest.raises(ValueError):
            encode(p, np.ones((2, 6)))


class TestMargins:
    def test_count_and_range(self, rng):
        cfg = MarginConfig(mu=1.0, delta=0.5, hidden_dims=[4])
        p = init_params(EncoderConfig(3, d=3), cfg)
        for n in (3, 4, 6):
            m = margins(p, 5 * rng.standard_normal((n, 3)), cfg)
            assert m.shape == (2 * (n - 2),)
            assert np.all((m >= 0.5) & (m <= 1.5))

    def test_zero_delta_pins_margins_to_mu(self, rng):
        cfg = MarginConfig(mu=0.7, delta=0.0)
        p = init_params(EncoderConfig(3, d=2), cfg)
        np.testing.assert_array_equal(margins(p, rng.standard_normal((5, 2)), cfg), np.full(6, 0.7))

    def test_best_and_worst_anchors_get_different_margins(self, rng):
        cfg = MarginConfig()
        p = init_params(EncoderConfig(3, d=4, seed=1), cfg)
        m = margins(p, rng.standard_normal((4, 4)), cfg)
        assert not np.allclose(m[:2], m[2:])

    def test_matches_numpy_reference(self, rng):
        cfg = MarginConfig(mu=1.0, delta=1.0, hidden_dims=[5])
        p = init_params(EncoderConfig(3, d=2, seed=2), cfg)
        emb = rng.standard_normal((4, 2))
        b, w, n1, n2 = emb
        rows = [np.r_[b, w, n1], np.r_[b, w, n2], np.r_[w, b, n1], np.r_[w, b, n2]]
        expected = []
        for x in rows:
            h = np.tanh(x @ p["margin.W0"] + p["margin.b0"])
            expected.append(1.0 + np.tanh((h @ p["margin.W1"] + p["margin.b1"])[0]))
        np.testing.assert_allclose(margins(p, emb, cfg), expected, rtol=1e-13)
