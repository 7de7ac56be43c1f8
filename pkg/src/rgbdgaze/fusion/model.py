"""Feature-fusion transformer, its MLP ablation substitute, and subject bias.

Parameters are flat ``dict[str, ndarray]`` so that the optimizer, the finite
difference checker and serialization can treat every tensor uniformly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch, TokenCountMismatch
from . import layers as L

LAYER_KEYS = ("wq", "wk", "wv", "wo", "ln1.g", "ln1.b", "ln2.g", "ln2.b",
              "ff.w1", "ff.b1", "ff.w2", "ff.b2")


@dataclass(frozen=True)
class HyperParams:
    d_model: int = 1024
    d_ff: int = 2048
    n_heads: int = 8
    n_layers: int = 6
    n_tokens: int = 5
    dropout_attn: float = 0.1
    dropout_ff: float = 0.1
    variant: str = "B2T"
    positional: str = "Learned"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_tokens < 2:
            raise ValueError("n_tokens counts the class token and must be >= 2")
        if self.variant not in L.VARIANTS:
            raise ValueError(f"variant must be one of {L.VARIANTS}")
        if self.positional not in ("Learned", "Sinusoidal"):
            raise ValueError("positional must be 'Learned' or 'Sinusoidal'")

    @property
    def n_features(self) -> int:
        """Number of feature tokens (everything but the class token)."""
        return self.n_tokens - 1

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform(rng, fan_in, shape):
    b = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-b, b, size=shape)


def init_fusion_params(hp: HyperParams, seed=0, max_tokens=None) -> dict:
    """Fresh transformer parameters.

    ``max_tokens`` lets the positional table hold more rows than ``hp.n_tokens``
    (e.g. one table shared by RGB and RGBD configurations); extra rows stay unused.
    """
    rng = np.random.default_rng(seed)
    d, f = hp.d_model, hp.d_ff
    p = {"cls": np.zeros(d)}
    if hp.positional == "Learned":
        p["pos"] = _uniform(rng, d, (max_tokens or hp.n_tokens, d))
    for i in range(hp.n_layers):
        pre = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = _uniform(rng, d, (d, d))
        for ln in ("ln1", "ln2"):
            p[pre + ln + ".g"] = np.ones(d)
            p[pre + ln + ".b"] = np.zeros(d)
        p[pre + "ff.w1"] = _uniform(rng, d, (d, f))
        p[pre + "ff.b1"] = _uniform(rng, d, (f,))
        p[pre + "ff.w2"] = _uniform(rng, f, (f, d))
        p[pre + "ff.b2"] = _uniform(rng, f, (d,))
    p["head.w"] = _uniform(rng, d, (d, 2))
    p["head.b"] = _uniform(rng, d, (2,))
    return p


def _layer(params, i):
    pre = f"layers.{i}."
    return {k: params[pre + k] for k in LAYER_KEYS}


def _as_batch(tokens):
    t = np.asarray(tokens, dtype=float)
    single = t.ndim == 2
    return (t[None] if single else t), single


def _positional(params, hp: HyperParams):
    if hp.positional == "Sinusoidal":
        return L.sinusoidal_encoding(hp.n_tokens, hp.d_model)
    pos = params["pos"]
    if pos.shape[0] < hp.n_tokens:
        raise ShapeMismatch(f"positional table has {pos.shape[0]} rows, need {hp.n_tokens}")
    return pos[:hp.n_tokens]


def fusion_forward_cached(tokens, params, hp: HyperParams, mode="eval", rng=None, masks=None):
    """Forward pass keeping everything the backward pass needs.

    ``tokens`` is ``(n_features, d_model)`` or ``(batch, n_features, d_model)``.
    """
    t, single = _as_batch(tokens)
    if t.shape[1] != hp.n_features:
        raise TokenCountMismatch(f"expected {hp.n_features} feature tokens, got {t.shape[1]}")
    if t.shape[2] != hp.d_model:
        raise ShapeMismatch(f"token width {t.shape[2]} != d_model {hp.d_model}")
    train = mode == "train"
    if train and rng is None and masks is None:
        raise ValueError("training mode needs a seeded generator")
    B = t.shape[0]
    z = np.concatenate([np.broadcast_to(params["cls"], (B, 1, hp.d_model)), t], axis=1)
    z = z + _positional(params, hp)
    caches = []
    masks = masks or [None] * hp.n_layers
    for i in range(hp.n_layers):
        z, c = L.encoder_block_forward(z, _layer(params, i), hp.variant,
                                       rate_attn=hp.dropout_attn, rate_ff=hp.dropout_ff,
                                       rng=rng, train=train, n_heads=hp.n_heads,
                                       masks=masks[i])
        caches.append(c)
    cls_out = z[:, 0]
    out = cls_out @ params["head.w"] + params["head.b"]
    return out, {"caches": caches, "cls_out": cls_out, "batch": B, "single": single,
                 "seq": z.shape[1]}


def fusion_forward(tokens, params, hp: HyperParams, mode="eval", rng=None) -> np.ndarray:
    """Subject-independent gaze angles ``(pitch, yaw)`` from the feature tokens.

    A class token is prepended, positional encodings are added, ``n_layers``
    encoder blocks run, and a linear head reads the class token out. No final
    activation.
    """
    out, cache = fusion_forward_cached(tokens, params, hp, mode, rng)
    return out[0] if cache["single"] else out


def mse_loss(pred, target) -> float:
    """Mean over samples of the squared 2-norm of the angle error."""
    diff = np.asarray(pred) - np.asarray(target)
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def fusion_backward(tokens, targets, params, hp: HyperParams, mode="eval", rng=None,
                    loss_scale=1.0):
    """Loss and exact gradients of ``loss_scale * MSE`` for every parameter.

    Dropout masks drawn in training mode are reused by the backward pass, so
    the gradients belong to the same stochastic forward graph.
    """
    out, cache = fusion_forward_cached(tokens, params, hp, mode, rng)
    y = np.asarray(targets, dtype=float).reshape(out.shape)
    B = cache["batch"]
    loss = loss_scale * mse_loss(out, y)
    dout = loss_scale * 2.0 * (out - y) / B
    grads = {"head.w": cache["cls_out"].T @ dout, "head.b": dout.sum(axis=0)}
    dz = np.zeros((B, cache["seq"], hp.d_model))
    dz[:, 0] = dout @ params["head.w"].T
    for i in reversed(range(hp.n_layers)):
        dz, g = L.encoder_block_backward(dz, cache["caches"][i])
        for k, v in g.items():
            grads[f"layers.{i}.{k}"] = v
    grads["cls"] = dz[:, 0].sum(axis=0)
    if hp.positional == "Learned":
        gpos = np.zeros_like(params["pos"])
        gpos[:hp.n_tokens] = dz.sum(axis=0)
        grads["pos"] = gpos
    return loss, grads


def attention_maps(tokens, params, hp: HyperParams) -> list:
    """Per-layer attention probabilities ``(batch, heads, seq, seq)`` in eval mode."""
    _, cache = fusion_forward_cached(tokens, params, hp)
    return [c["attn"][4] for c in cache["caches"]]


# MLP substitute -------------------------------------------------------------

def init_mlp_params(hp: HyperParams, seed=0) -> dict:
    rng = np.random.default_rng(seed)
    n_in = hp.n_features * hp.d_model
    f = hp.d_ff
    return {
        "mlp.w1": _uniform(rng, n_in, (n_in, f)), "mlp.b1": _uniform(rng, n_in, (f,)),
        "mlp.ln1.g": np.ones(f), "mlp.ln1.b": np.zeros(f),
        "mlp.w2": _uniform(rng, f, (f, f)), "mlp.b2": _uniform(rng, f, (f,)),
        "mlp.ln2.g": np.ones(f), "mlp.ln2.b": np.zeros(f),
        "mlp.w3": _uniform(rng, f, (f, 2)), "mlp.b3": _uniform(rng, f, (2,)),
    }


def mlp_forward_cached(tokens, params, hp: HyperParams, mode="eval", rng=None):
    t, single = _as_batch(tokens)
    n_in = params["mlp.w1"].shape[0]
    x = t.reshape(t.shape[0], -1)
    if x.shape[1] != n_in:
        raise ShapeMismatch(f"flattened tokens have {x.shape[1]} values, layer expects {n_in}")
    train = mode == "train"
    if train and rng is None:
        raise ValueError("training mode needs a seeded generator")
    r = hp.dropout_ff
    c = {}
    x0, c["d0"] = L.dropout_forward(x, r, rng, train)
    h1 = x0 @ params["mlp.w1"] + params["mlp.b1"]
    n1, c["ln1"] = L.layer_norm_forward(h1, params["mlp.ln1.g"], params["mlp.ln1.b"])
    a1 = np.maximum(n1, 0.0)
    x1, c["d1"] = L.dropout_forward(a1, r, rng, train)
    h2 = x1 @ params["mlp.w2"] + params["mlp.b2"]
    n2, c["ln2"] = L.layer_norm_forward(h2, params["mlp.ln2.g"], params["mlp.ln2.b"])
    x2, c["d2"] = L.dropout_forward(n2, r, rng, train)
    out = x2 @ params["mlp.w3"] + params["mlp.b3"]
    c.update(x0=x0, n1=n1, x1=x1, x2=x2, single=single, shape=t.shape)
    return out, c


def mlp_substitute_forward(tokens, params, hp: HyperParams, mode="eval", rng=None):
    """Ablation replacement for the transformer: flattened tokens -> 2 angles.

    dropout -> linear -> LN -> ReLU -> dropout -> linear -> LN -> dropout -> linear.
    No class token and no positional encoding.
    """
    out, c = mlp_forward_cached(tokens, params, hp, mode, rng)
    return out[0] if c["single"] else out


def mlp_backward(tokens, targets, params, hp: HyperParams, mode="eval", rng=None,
                 loss_scale=1.0):
    out, c = mlp_forward_cached(tokens, params, hp, mode, rng)
    y = np.asarray(targets, dtype=float).reshape(out.shape)
    B = out.shape[0]
    loss = loss_scale * mse_loss(out, y)
    dout = loss_scale * 2.0 * (out - y) / B
    g = {"mlp.w3": c["x2"].T @ dout, "mlp.b3": dout.sum(axis=0)}
    dn2 = L.dropout_backward(dout @ params["mlp.w3"].T, c["d2"])
    dh2, g["mlp.ln2.g"], g["mlp.ln2.b"] = L.layer_norm_backward(dn2, c["ln2"])
    g["mlp.w2"] = c["x1"].T @ dh2
    g["mlp.b2"] = dh2.sum(axis=0)
    da1 = L.dropout_backward(dh2 @ params["mlp.w2"].T, c["d1"])
    dn1 = da1 * (c["n1"] > 0)
    dh1, g["mlp.ln1.g"], g["mlp.ln1.b"] = L.layer_norm_backward(dn1, c["ln1"])
    g["mlp.w1"] = c["x0"].T @ dh1
    g["mlp.b1"] = dh1.sum(axis=0)
    return loss, g


# token projection and subject bias ------------------------------------------

def project_to_token(features, weights, bias) -> np.ndarray:
    """ReLU(W x + b): flat feature vector(s) ``(..., d_in)`` -> token(s) ``(..., d_model)``.

    ``weights`` has shape ``(d_model, d_in)``.
    """
    x = np.asarray(features, dtype=float)
    W = np.asarray(weights, dtype=float)
    b = np.asarray(bias, dtype=float)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeMismatch(f"features {x.shape}, weights {W.shape}, bias {b.shape}")
    return np.maximum(x @ W.T + b, 0.0)


@dataclass(frozen=True)
class SubjectBias:
    """Per-subject offset (rad) and zero-centered scale for (pitch, yaw).

    The effective scale is ``1 + scale_centered``; an unknown subject keeps
    all four values at zero, which makes the bias the identity.
    """

    offset: tuple = (0.0, 0.0)
    scale_centered: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        object.__setattr__(self, "scale_centered", tuple(float(v) for v in self.scale_centered))
        if not np.all(np.isfinite(self.offset + self.scale_centered)):
            raise ValueError("subject bias must be finite")

    @property
    def scale(self) -> np.ndarray:
        return 1.0 + np.asarray(self.scale_centered)


def apply_subject_bias(pred, bias: SubjectBias) -> np.ndarray:
    """``g = i * (1 + s) + o`` per axis for ``(..., 2)`` predictions."""
    return np.asarray(pred, dtype=float) * bias.scale + np.asarray(bias.offset)
