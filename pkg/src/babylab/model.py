"""Transformer encoder with a tied masked-token prediction head, in numpy.

Pre-layer-norm blocks, learned absolute position embeddings, GELU feed
forward, scaled dot-product attention with additive masking of PAD keys.
Gradients are exact hand-written reverse mode; dropout (attention weights
and FFN output) is active only when train=True and draws its masks from an
explicit generator so training stays reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tokenizer import PAD_ID

PRESETS: dict[str, tuple[int, int, int, int]] = {
    "xs": (64, 256, 4, 4),
    "s": (128, 512, 4, 4),
    "base": (256, 1024, 8, 8),
    "l": (512, 2048, 8, 8),
    "xl": (768, 3072, 12, 12),
}

IGNORE_LABEL = -100
LN_EPS = 1e-5
INIT_STD = 0.02
DEFAULT_DROPOUT = 0.1
CHECKPOINT_VERSION = 1

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int
    intermediate_size: int
    num_heads: int
    num_layers: int
    vocab_size: int
    max_context: int = 128
    preset_name: str = "custom"

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.preset_name != "custom":
            expected = PRESETS.get(self.preset_name)
            if expected is None:
                raise ValueError(f"unknown preset {self.preset_name!r}")
            actual = (self.hidden_size, self.intermediate_size, self.num_heads, self.num_layers)
            if actual != expected:
                raise ValueError(f"preset {self.preset_name!r} requires dims {expected}, got {actual}")

    @classmethod
    def from_preset(cls, name: str, vocab_size: int, max_context: int = 128) -> "ModelConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        h, i, a, l = PRESETS[name]
        return cls(h, i, a, l, vocab_size, max_context, preset_name=name)

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "intermediate_size": self.intermediate_size,
            "num_heads": self.num_heads,
            "num_layers": self.num_layers,
            "vocab_size": self.vocab_size,
            "max_context": self.max_context,
            "preset_name": self.preset_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Named tensor declaration order; checkpoints serialize in exactly this order."""
    h, i = config.hidden_size, config.intermediate_size
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (config.vocab_size, h)),
        ("pos_emb", (config.max_context, h)),
    ]
    for l in range(config.num_layers):
        shapes += [
            (f"layer{l}.ln1_g", (h,)),
            (f"layer{l}.ln1_b", (h,)),
            (f"layer{l}.wq", (h, h)),
            (f"layer{l}.wk", (h, h)),
            (f"layer{l}.wv", (h, h)),
            (f"layer{l}.wo", (h, h)),
            (f"layer{l}.ln2_g", (h,)),
            (f"layer{l}.ln2_b", (h,)),
            (f"layer{l}.w1", (h, i)),
            (f"layer{l}.b1", (i,)),
            (f"layer{l}.w2", (i, h)),
            (f"layer{l}.b2", (h,)),
        ]
    shapes += [("ln_f_g", (h,)), ("ln_f_b", (h,)), ("out_bias", (config.vocab_size,))]
    return shapes


@dataclass
class Parameters:
    """Named weight arrays in declaration order; the MLM head is tok_emb itself."""

    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def dtype(self) -> np.dtype:
        return self.arrays["tok_emb"].dtype

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})


def count_parameters(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


def _trunc_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) > bound
        if not bad.any():
            break
        x[bad] = rng.standard_normal(int(bad.sum()))
    return x * std


def init(config: ModelConfig, seed: int, dtype=np.float32) -> Parameters:
    """Truncated-normal weights (std 0.02), zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("ln1_g", "ln2_g", "ln_f_g"):
            arr = np.ones(shape)
        elif leaf in ("ln1_b", "ln2_b", "ln_f_b", "b1", "b2", "out_bias"):
            arr = np.zeros(shape)
        else:
            arr = _trunc_normal(rng, shape, INIT_STD)
        arrays[name] = arr.astype(dtype)
    return Parameters(config=config, arrays=arrays)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, xhat, inv


def _layer_norm_backward(dy, xhat, inv, g):
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tanh-approximation GELU; returns (value, tanh term) so backward can reuse it."""
    t = np.tanh(_GELU_C * (u + _GELU_A * (u * u * u)))
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u: np.ndarray, t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * (u * u))


def _mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(..., a) @ (a, b) through one 2-D BLAS call."""
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[-1])


def _outer_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Weight gradient for y = x @ w: sum over leading axes of x^T dy."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    b, l, h = x.shape
    return x.reshape(b, l, num_heads, h // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, a, l, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, a * d)


def _dropout_mask(rng: np.random.Generator, shape, p: float, dtype) -> np.ndarray:
    return (rng.random(shape) >= p).astype(dtype) / dtype.type(1.0 - p)


def forward(
    params: Parameters,
    input_ids: np.ndarray,
    attention_mask: np.ndarray | None = None,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
    dropout: float = DEFAULT_DROPOUT,
    cache: dict | None = None,
) -> np.ndarray:
    """Return logits of shape (batch, length, vocab).

    attention_mask is True at real tokens; PAD keys receive -inf attention
    scores. When cache is a dict, the intermediates needed for backward are
    stored into it.
    """
    cfg = params.config
    ids = np.asarray(input_ids)
    if ids.ndim != 2:
        raise ValueError("input_ids must be (batch, length)")
    b, l = ids.shape
    if l > cfg.max_context:
        raise ValueError(f"sequence length {l} exceeds max_context {cfg.max_context}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token ids must lie in [0, {cfg.vocab_size})")
    if attention_mask is None:
        attention_mask = ids != PAD_ID
    mask = np.asarray(attention_mask, dtype=bool)
    if train and dropout > 0.0 and dropout_rng is None:
        raise ValueError("train=True with dropout requires a dropout_rng")

    dtype = params.dtype
    scale = 1.0 / math.sqrt(cfg.hidden_size // cfg.num_heads)
    x = params["tok_emb"][ids] + params["pos_emb"][:l][None, :, :]
    key_mask = mask[:, None, None, :]
    layers_cache: list[dict] = []

    for i in range(cfg.num_layers):
        p = lambda leaf: params[f"layer{i}.{leaf}"]  # noqa: E731
        h1, xhat1, inv1 = _layer_norm(x, p("ln1_g"), p("ln1_b"))
        q = _split_heads(_mm(h1, p("wq")), cfg.num_heads)
        k = _split_heads(_mm(h1, p("wk")), cfg.num_heads)
        v = _split_heads(_mm(h1, p("wv")), cfg.num_heads)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores = np.where(key_mask, scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        if train and dropout > 0.0:
            attn_keep = _dropout_mask(dropout_rng, attn.shape, dropout, np.dtype(dtype))
            attn_d = attn * attn_keep
        else:
            attn_keep = None
            attn_d = attn
        ctx = _merge_heads(attn_d @ v)
        x_attn = x + _mm(ctx, p("wo"))

        h2, xhat2, inv2 = _layer_norm(x_attn, p("ln2_g"), p("ln2_b"))
        u = _mm(h2, p("w1")) + p("b1")
        act, act_t = _gelu(u)
        f = _mm(act, p("w2")) + p("b2")
        if train and dropout > 0.0:
            ffn_keep = _dropout_mask(dropout_rng, f.shape, dropout, np.dtype(dtype))
            f = f * ffn_keep
        else:
            ffn_keep = None
        x_out = x_attn + f
        if cache is not None:
            layers_cache.append(
                dict(
                    x_in=x, h1=h1, xhat1=xhat1, inv1=inv1, q=q, k=k, v=v, attn=attn,
                    attn_keep=attn_keep, attn_d=attn_d, ctx=ctx, x_attn=x_attn,
                    h2=h2, xhat2=xhat2, inv2=inv2, u=u, act=act, act_t=act_t,
                    ffn_keep=ffn_keep,
                )
            )
        x = x_out

    xf, xhatf, invf = _layer_norm(x, params["ln_f_g"], params["ln_f_b"])
    logits = _mm(xf, params["tok_emb"].T) + params["out_bias"]
    if cache is not None:
        cache.update(
            ids=ids, mask=mask, layers=layers_cache, x_last=x, xf=xf, xhatf=xhatf, invf=invf
        )
    return logits


def _labeled_softmax(logits: np.ndarray, labels: np.ndarray):
    """Softmax restricted to labeled positions; returns (rows, cols, probs, losses)."""
    lab = np.asarray(labels)
    sel = lab != IGNORE_LABEL
    if not sel.any():
        raise ValueError("batch has no labeled positions to score")
    rows = logits[sel]
    targets = lab[sel]
    m = rows.max(axis=-1, keepdims=True)
    e = np.exp(rows - m)
    z = e.sum(axis=-1, keepdims=True)
    probs = e / z
    logp = (rows - m) - np.log(z)
    losses = -logp[np.arange(len(targets)), targets]
    return sel, targets, probs, losses


def mlm_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood (natural log) over non-ignored positions."""
    _, _, _, losses = _labeled_softmax(logits, labels)
    return float(losses.mean())


def backward(
    params: Parameters,
    input_ids: np.ndarray,
    labels: np.ndarray,
    attention_mask: np.ndarray | None = None,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
    dropout: float = DEFAULT_DROPOUT,
    grad_scale: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward + exact reverse-mode gradients of grad_scale * mlm_loss."""
    cfg = params.config
    cache: dict = {}
    logits = forward(
        params, input_ids, attention_mask, train=train,
        dropout_rng=dropout_rng, dropout=dropout, cache=cache,
    )
    sel, targets, probs, losses = _labeled_softmax(logits, labels)
    loss = float(losses.mean())

    grads = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    dtype = params.dtype
    n_lab = len(targets)
    drows = probs.copy()
    drows[np.arange(n_lab), targets] -= 1.0
    drows *= dtype.type(grad_scale / n_lab)
    dlogits = np.zeros_like(logits)
    dlogits[sel] = drows

    xf = cache["xf"]
    grads["tok_emb"] += _outer_grad(dlogits, xf)
    grads["out_bias"] += dlogits.sum(axis=(0, 1))
    dxf = _mm(dlogits, params["tok_emb"])
    dx, dg, db = _layer_norm_backward(dxf, cache["xhatf"], cache["invf"], params["ln_f_g"])
    grads["ln_f_g"] += dg
    grads["ln_f_b"] += db

    scale = 1.0 / math.sqrt(cfg.hidden_size // cfg.num_heads)
    for i in reversed(range(cfg.num_layers)):
        c = cache["layers"][i]
        p = lambda leaf: params[f"layer{i}.{leaf}"]  # noqa: E731
        g = lambda leaf: grads[f"layer{i}.{leaf}"]  # noqa: E731

        df = dx if c["ffn_keep"] is None else dx * c["ffn_keep"]
        g("b2")[...] += df.sum(axis=(0, 1))
        g("w2")[...] += _outer_grad(c["act"], df)
        dact = _mm(df, p("w2").T)
        du = dact * _gelu_grad(c["u"], c["act_t"])
        g("b1")[...] += du.sum(axis=(0, 1))
        g("w1")[...] += _outer_grad(c["h2"], du)
        dh2 = _mm(du, p("w1").T)
        dx_ffn, dg2, db2 = _layer_norm_backward(dh2, c["xhat2"], c["inv2"], p("ln2_g"))
        g("ln2_g")[...] += dg2
        g("ln2_b")[...] += db2
        dx = dx + dx_ffn

        dctx_o = dx
        g("wo")[...] += _outer_grad(c["ctx"], dctx_o)
        dctx = _split_heads(_mm(dctx_o, p("wo").T), cfg.num_heads)
        dattn_d = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["attn_d"].transpose(0, 1, 3, 2) @ dctx
        dattn = dattn_d if c["attn_keep"] is None else dattn_d * c["attn_keep"]
        dscores = c["attn"] * (dattn - (dattn * c["attn"]).sum(axis=-1, keepdims=True))
        dq = (dscores @ c["k"]) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ c["q"]) * scale
        dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        h1 = c["h1"]
        g("wq")[...] += _outer_grad(h1, dq_m)
        g("wk")[...] += _outer_grad(h1, dk_m)
        g("wv")[...] += _outer_grad(h1, dv_m)
        dh1 = _mm(dq_m, p("wq").T) + _mm(dk_m, p("wk").T) + _mm(dv_m, p("wv").T)
        dx_attn, dg1, db1 = _layer_norm_backward(dh1, c["xhat1"], c["inv1"], p("ln1_g"))
        g("ln1_g")[...] += dg1
        g("ln1_b")[...] += db1
        dx = dx + dx_attn

    ids = cache["ids"]
    grads["pos_emb"][: ids.shape[1]] += dx.sum(axis=0)
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, cfg.hidden_size))
    return loss, grads


def save_checkpoint(params: Parameters, path: str | Path, seed: int, step: int) -> None:
    """Single binary file: one JSON header line, then raw <f4 tensors in order."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "seed": seed,
        "step": step,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name, _ in param_shapes(params.config):
            f.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[Parameters, dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {header.get('version')!r}")
        config = ModelConfig.from_dict(header["config"])
        arrays: dict[str, np.ndarray] = {}
        for name, shape in param_shapes(config):
            count = int(np.prod(shape))
            buf = f.read(count * 4)
            if len(buf) != count * 4:
                raise ValueError(f"checkpoint truncated while reading {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return Parameters(config=config, arrays=arrays), header
