import numpy as np
import pytest

from rgbdgaze.errors import ShapeMismatch
from rgbdgaze.fusion import layers as L
from rgbdgaze.fusion import finite_diff_grad, max_relative_error


def loop_mhsa(x, wq, wk, wv, wo, n_heads):
    """Scalar-loop multi-head attention for a single sequence."""
    l, d = x.shape
    dk = d // n_heads
    q, k, v = x @ wq, x @ wk, x @ wv
    concat = np.zeros((l, d))
    for h in range(n_heads):
        cols = slice(h * dk, (h + 1) * dk)
        for i in range(l):
            scores = []
            for j in range(l):
                s = 0.0
                for c in range(dk):
                    s += q[i, cols][c] * k[j, cols][c]
                scores.append(s / np.sqrt(dk))
            m = max(scores)
            e = [np.exp(s - m) for s in scores]
            z = sum(e)
            for j in range(l):
                concat[i, cols] += e[j] / z * v[j, cols]
    out = np.zeros((l, d))
    for i in range(l):
        for a in range(d):
            out[i, a] = sum(concat[i, b] * wo[b, a] for b in range(d))
    return out


def test_mhsa_single_token_identity(rng):
    x = rng.normal(size=(1, 1, 8))
    I = np.eye(8)
    out, _ = L.mhsa_forward(x, I, I, I, I, 2)
    np.testing.assert_allclose(out, x, atol=1e-15)


def test_mhsa_identical_rows(rng):
    row = rng.normal(size=8)
    x = np.tile(row, (1, 4, 1))
    ws = [rng.normal(size=(8, 8)) for _ in range(4)]
    out, _ = L.mhsa_forward(x, *ws, 2)
    np.testing.assert_allclose(out[0], np.tile(out[0, 0], (4, 1)), atol=1e-12)


def test_mhsa_matches_loop_oracle(rng):
    x = rng.normal(size=(5, 4))
    ws = [rng.normal(size=(4, 4)) for _ in range(4)]
    out, cache = L.mhsa_forward(x[None], *ws, 2)
    np.testing.assert_allclose(out[0], loop_mhsa(x, *ws, 2), atol=1e-10)
    p = cache[4]
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


def test_mhsa_shape_errors(rng):
    x = rng.normal(size=(1, 3, 6))
    with pytest.raises(ShapeMismatch):
        L.mhsa_forward(x, *[np.eye(6)] * 4, 4)
    with pytest.raises(ShapeMismatch):
        L.mhsa_forward(x, np.eye(5), np.eye(6), np.eye(6), np.eye(6), 2)


def block_params(rng, d=8, f=16):
    p = {k: rng.normal(scale=0.4, size=(d, d)) for k in ("wq", "wk", "wv", "wo")}
    for ln in ("ln1", "ln2"):
        p[ln + ".g"] = 1 + 0.1 * rng.normal(size=d)
        p[ln + ".b"] = 0.1 * rng.normal(size=d)
    p.update({"ff.w1": rng.normal(scale=0.3, size=(d, f)), "ff.b1": rng.normal(size=f) * 0.1,
              "ff.w2": rng.normal(scale=0.3, size=(f, d)), "ff.b2": rng.normal(size=d) * 0.1})
    return p


def test_variants_differ_and_are_deterministic(rng):
    x = rng.normal(size=(2, 4, 8))
    p = block_params(rng)
    outs = {v: L.encoder_block_forward(x, p, v, n_heads=2)[0] for v in L.VARIANTS}
    for a in L.VARIANTS:
        for b in L.VARIANTS:
            if a < b:
                assert np.max(np.abs(outs[a] - outs[b])) > 0
    again = L.encoder_block_forward(x, p, "B2T", n_heads=2, rate_attn=0.5, rate_ff=0.5)[0]
    np.testing.assert_array_equal(again, outs["B2T"])
    with pytest.raises(ValueError):
        L.encoder_block_forward(x, p, "Sandwich", n_heads=2)


def test_b2t_is_postln_plus_input(rng):
    x = rng.normal(size=(1, 3, 8))
    p = block_params(rng)
    _, c = L.encoder_block_forward(x, p, "PostLN", n_heads=2)
    x1 = c["x1"]
    f, _ = L.ff_forward(x1, p["ff.w1"], p["ff.b1"], p["ff.w2"], p["ff.b2"])
    expected, _ = L.layer_norm_forward(f + x1 + x, p["ln2.g"], p["ln2.b"])
    np.testing.assert_allclose(L.encoder_block_forward(x, p, "B2T", n_heads=2)[0], expected,
                               atol=1e-14)


def test_preln_composition(rng):
    x = rng.normal(size=(1, 3, 8))
    p = block_params(rng)
    n1, _ = L.layer_norm_forward(x, p["ln1.g"], p["ln1.b"])
    a, _ = L.mhsa_forward(n1, p["wq"], p["wk"], p["wv"], p["wo"], 2)
    x1 = a + x
    n2, _ = L.layer_norm_forward(x1, p["ln2.g"], p["ln2.b"])
    f, _ = L.ff_forward(n2, p["ff.w1"], p["ff.b1"], p["ff.w2"], p["ff.b2"])
    np.testing.assert_allclose(L.encoder_block_forward(x, p, "PreLN", n_heads=2)[0], f + x1,
                               atol=1e-14)


def test_dropout_train_and_replay(rng):
    x = np.ones((2, 3, 1000))
    y, mask = L.dropout_forward(x, 0.25, np.random.default_rng(0), train=True)
    assert set(np.unique(mask)) <= {0.0, 1 / 0.75}
    assert abs((mask == 0).mean() - 0.25) < 0.02
    y2, _ = L.dropout_forward(x, 0.25, mask=mask)
    np.testing.assert_array_equal(y, y2)
    same, none = L.dropout_forward(x, 0.25, train=False)
    assert none is None and same is x


@pytest.mark.parametrize("variant", L.VARIANTS)
def test_block_gradients_with_dropout_masks(variant):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 8))
    p = block_params(rng)
    _, c = L.encoder_block_forward(x, p, variant, n_heads=2, rate_attn=0.3, rate_ff=0.3,
                                   rng=np.random.default_rng(1), train=True)
    masks = {"drop1": c["drop1"], "drop2": c["drop2"]}
    target = rng.normal(size=x.shape)

    def loss(params, xin=x):
        y, _ = L.encoder_block_forward(xin, params, variant, n_heads=2, masks=masks)
        return 0.5 * np.sum((y - target) ** 2)

    y, c = L.encoder_block_forward(x, p, variant, n_heads=2, masks=masks)
    dx, g = L.encoder_block_backward(y - target, c)
    num = finite_diff_grad(loss, p)
    err, where = max_relative_error(g, num)
    assert err < 1e-5, where
    num_x = finite_diff_grad(lambda d: loss(p, d["x"]), {"x": x.copy()})["x"]
    assert max_relative_error({"x": dx}, {"x": num_x})[0] < 1e-5


def test_layer_norm_of_zeros_is_bias():
    y, _ = L.layer_norm_forward(np.zeros((2, 4)), np.ones(4), np.arange(4.0))
    np.testing.assert_array_equal(y, np.tile(np.arange(4.0), (2, 1)))


def test_sinusoidal_encoding():
    pe = L.sinusoidal_encoding(5, 8)
    assert pe.shape == (5, 8)
    np.testing.assert_array_equal(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])
    assert abs(pe[1, 0] - np.sin(1)) < 1e-15
    assert abs(pe[3, 3] - np.cos(3 / 10000 ** (2 / 8))) < 1e-15
