"""Forward/backward pairs for the building blocks of the fusion transformer.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns input gradient(s)
followed by a dict of parameter gradients where the layer has parameters.
Activations are batched as ``(batch, tokens, features)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

LN_EPS = 1e-5


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    red = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=red)
    dbias = dy.sum(axis=red)
    dxhat = dy * gain
    n = xhat.shape[-1]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dgain, dbias


def softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def dropout_forward(x, rate, rng=None, train=False, mask=None):
    """Inverted dropout. ``mask`` (already scaled) may be supplied to replay a draw."""
    if mask is not None:
        return x * mask, mask
    if not train or rate <= 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def mhsa_forward(x, wq, wk, wv, wo, n_heads):
    """Multi-head scaled dot-product self-attention.

    Head ``i`` uses columns ``i*d_k:(i+1)*d_k`` of the input projections; the
    concatenated heads are mapped back through ``wo``.
    """
    B, L, D = x.shape
    if D % n_heads:
        raise ShapeMismatch(f"d_model={D} not divisible by n_heads={n_heads}")
    for w in (wq, wk, wv, wo):
        if w.shape != (D, D):
            raise ShapeMismatch(f"projection shape {w.shape}, expected {(D, D)}")
    dk = D // n_heads

    def heads(t):
        return t.reshape(B, L, n_heads, dk).transpose(0, 2, 1, 3)

    q, k, v = heads(x @ wq), heads(x @ wk), heads(x @ wv)
    scale = 1.0 / np.sqrt(dk)
    p = softmax(q @ k.transpose(0, 1, 3, 2) * scale)
    o = (p @ v).transpose(0, 2, 1, 3).reshape(B, L, D)
    return o @ wo, (x, q, k, v, p, o, scale, wq, wk, wv, wo)


def mhsa_backward(dout, cache):
    x, q, k, v, p, o, scale, wq, wk, wv, wo = cache
    B, L, D = x.shape
    H, dk = q.shape[1], q.shape[3]
    dwo = np.einsum("bld,ble->de", o, dout)
    do = (dout @ wo.T).reshape(B, L, H, dk).transpose(0, 2, 1, 3)
    dp = do @ v.transpose(0, 1, 3, 2)
    dv = p.transpose(0, 1, 3, 2) @ do
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dq = ds @ k * scale
    dk_ = ds.transpose(0, 1, 3, 2) @ q * scale

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, L, D)

    dq, dk_, dv = merge(dq), merge(dk_), merge(dv)
    grads = {
        "wq": np.einsum("bld,ble->de", x, dq),
        "wk": np.einsum("bld,ble->de", x, dk_),
        "wv": np.einsum("bld,ble->de", x, dv),
        "wo": dwo,
    }
    dx = dq @ wq.T + dk_ @ wk.T + dv @ wv.T
    return dx, grads


def _flat(t):
    return t.reshape(-1, t.shape[-1])


def ff_forward(x, w1, b1, w2, b2):
    h = x @ w1 + b1
    a = np.maximum(h, 0.0)
    return a @ w2 + b2, (x, h, a, w1, w2)


def ff_backward(dy, cache):
    x, h, a, w1, w2 = cache
    red = tuple(range(dy.ndim - 1))
    dw2 = _flat(a).T @ _flat(dy)
    db2 = dy.sum(axis=red)
    dh = (dy @ w2.T) * (h > 0)
    dw1 = _flat(x).T @ _flat(dh)
    db1 = dh.sum(axis=red)
    return dh @ w1.T, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


VARIANTS = ("PreLN", "PostLN", "B2T")


def encoder_block_forward(x, p, variant, *, rate_attn=0.0, rate_ff=0.0, rng=None,
                          train=False, n_heads=1, masks=None):
    """One encoder block. ``p`` maps local names (wq, ln1.g, ff.w1, ...) to arrays.

    PreLN:  x' = drop(MHSA(LN1(x))) + x;   y = drop(FF(LN2(x'))) + x'
    PostLN: x' = LN1(drop(MHSA(x)) + x);   y = LN2(drop(FF(x')) + x')
    B2T:    x' = LN1(drop(MHSA(x)) + x);   y = LN2(drop(FF(x')) + x' + x)
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown encoder variant {variant!r}")
    masks = masks or {}
    c = {"variant": variant}
    if variant == "PreLN":
        n1, c["ln1"] = layer_norm_forward(x, p["ln1.g"], p["ln1.b"])
        a, c["attn"] = mhsa_forward(n1, p["wq"], p["wk"], p["wv"], p["wo"], n_heads)
        a, c["drop1"] = dropout_forward(a, rate_attn, rng, train, masks.get("drop1"))
        x1 = a + x
        n2, c["ln2"] = layer_norm_forward(x1, p["ln2.g"], p["ln2.b"])
        f, c["ff"] = ff_forward(n2, p["ff.w1"], p["ff.b1"], p["ff.w2"], p["ff.b2"])
        f, c["drop2"] = dropout_forward(f, rate_ff, rng, train, masks.get("drop2"))
        y = f + x1
    else:
        a, c["attn"] = mhsa_forward(x, p["wq"], p["wk"], p["wv"], p["wo"], n_heads)
        a, c["drop1"] = dropout_forward(a, rate_attn, rng, train, masks.get("drop1"))
        x1, c["ln1"] = layer_norm_forward(a + x, p["ln1.g"], p["ln1.b"])
        f, c["ff"] = ff_forward(x1, p["ff.w1"], p["ff.b1"], p["ff.w2"], p["ff.b2"])
        f, c["drop2"] = dropout_forward(f, rate_ff, rng, train, masks.get("drop2"))
        pre = f + x1 + x if variant == "B2T" else f + x1
        y, c["ln2"] = layer_norm_forward(pre, p["ln2.g"], p["ln2.b"])
    c["x1"] = x1
    return y, c


def encoder_block_backward(dy, c):
    g = {}
    variant = c["variant"]
    if variant == "PreLN":
        dx1 = dy.copy()
        df = dropout_backward(dy, c["drop2"])
        dn2, fg = ff_backward(df, c["ff"])
        dx1_ln, g["ln2.g"], g["ln2.b"] = layer_norm_backward(dn2, c["ln2"])
        dx1 += dx1_ln
        dx = dx1.copy()
        da = dropout_backward(dx1, c["drop1"])
        dn1, ag = mhsa_backward(da, c["attn"])
        dx_ln, g["ln1.g"], g["ln1.b"] = layer_norm_backward(dn1, c["ln1"])
        dx += dx_ln
    else:
        dpre, g["ln2.g"], g["ln2.b"] = layer_norm_backward(dy, c["ln2"])
        df = dropout_backward(dpre, c["drop2"])
        dx1_ff, fg = ff_backward(df, c["ff"])
        dx1 = dpre + dx1_ff
        dsum, g["ln1.g"], g["ln1.b"] = layer_norm_backward(dx1, c["ln1"])
        da = dropout_backward(dsum, c["drop1"])
        dx_attn, ag = mhsa_backward(da, c["attn"])
        dx = dsum + dx_attn
        if variant == "B2T":
            dx = dx + dpre
    g.update(ag)
    g.update({f"ff.{k}": v for k, v in fg.items()})
    return dx, g


def sinusoidal_encoding(n_positions, d_model):
    pos = np.arange(n_positions)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
