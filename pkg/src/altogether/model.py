"""Desk-scale captioner: a mapping network turns one image embedding into a
fixed-length visual-token prefix, a causal decoder runs over the
``[visual | alt | caption]`` layout, and the training loss is restricted to
caption positions only.

Everything is float64 numpy with hand-written backward passes, so analytic
gradients can be checked against finite differences and determinism holds
bitwise. No GPU kernels, no KV cache, no beam search.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, FormatError, ShapeError, ValidationError
from .textproc import BOS_ID, EMPTY_ALT_ID, EOS_ID, PAD_ID

ROLE_VISUAL = 0
ROLE_ALT = 1
ROLE_CAPTION = 2
ROLE_PAD = 3

MODEL_MAGIC = b"ALTM"
MODEL_VERSION = 1

_LN_EPS = 1e-5
_GELU_K = 0.7978845608028654  # sqrt(2/pi)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_heads: int
    n_decoder_layers: int
    n_mapping_layers: int
    vocab_size: int
    image_embed_dim: int
    n_visual: int = 40
    m_alt: int = 128
    max_gen: int = 256

    def __post_init__(self):
        fields = {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_decoder_layers": self.n_decoder_layers,
            "n_mapping_layers": self.n_mapping_layers,
            "vocab_size": self.vocab_size,
            "image_embed_dim": self.image_embed_dim,
            "n_visual": self.n_visual,
            "m_alt": self.m_alt,
            "max_gen": self.max_gen,
        }
        for name, value in fields.items():
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.vocab_size <= EMPTY_ALT_ID:
            raise ConfigError(f"vocab_size {self.vocab_size} too small for reserved tokens")
        if self.max_gen < 3:
            raise ConfigError("max_gen must fit BOS, one token and EOS")

    @property
    def total_len(self) -> int:
        return self.n_visual + self.m_alt + self.max_gen

    @property
    def caption_start(self) -> int:
        return self.n_visual + self.m_alt

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_decoder_layers": self.n_decoder_layers,
            "n_mapping_layers": self.n_mapping_layers,
            "vocab_size": self.vocab_size,
            "image_embed_dim": self.image_embed_dim,
            "n_visual": self.n_visual,
            "m_alt": self.m_alt,
            "max_gen": self.max_gen,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in obj.items()})

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


def _block_param_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    h = 4 * d
    return [
        (f"{prefix}ln1_g", (d,)),
        (f"{prefix}ln1_b", (d,)),
        (f"{prefix}attn_wq", (d, d)),
        (f"{prefix}attn_wk", (d, d)),
        (f"{prefix}attn_wv", (d, d)),
        (f"{prefix}attn_wo", (d, d)),
        (f"{prefix}attn_bq", (d,)),
        (f"{prefix}attn_bk", (d,)),
        (f"{prefix}attn_bv", (d,)),
        (f"{prefix}attn_bo", (d,)),
        (f"{prefix}ln2_g", (d,)),
        (f"{prefix}ln2_b", (d,)),
        (f"{prefix}mlp_w1", (d, h)),
        (f"{prefix}mlp_b1", (h,)),
        (f"{prefix}mlp_w2", (h, d)),
        (f"{prefix}mlp_b2", (d,)),
    ]


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declaration-ordered parameter names and shapes; the single source of
    truth for initialization, serialization, and counting."""
    d = config.d_model
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (config.vocab_size, d)),
        ("pos_emb", (config.total_len, d)),
        ("map_queries", (config.n_visual, d)),
        ("img_proj_w", (config.image_embed_dim, d)),
        ("img_proj_b", (d,)),
    ]
    for i in range(config.n_mapping_layers):
        shapes.extend(_block_param_shapes(f"map{i}_", d))
    for i in range(config.n_decoder_layers):
        shapes.extend(_block_param_shapes(f"dec{i}_", d))
    shapes.extend(
        [
            ("final_ln_g", (d,)),
            ("final_ln_b", (d,)),
            ("out_w", (d, config.vocab_size)),
            ("out_b", (config.vocab_size,)),
        ]
    )
    return shapes


class ModelParams:
    """Config plus the ordered name -> float64 array mapping."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self.tensors = tensors
        for name, shape in param_shapes(config):
            if name not in tensors:
                raise ConfigError(f"missing parameter tensor {name!r}")
            if tensors[name].shape != shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {tensors[name].shape}, expected {shape}"
                )

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def allclose(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic init: variance-preserving normal matrices
    (std ``1/sqrt(d_model)``), zero biases, unit LN gains.

    Draw order follows the declaration order, so identical (config, seed)
    pairs produce bitwise-identical parameters.
    """
    rng = np.random.default_rng(seed)
    std = 1.0 / np.sqrt(config.d_model)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config):
        if name.endswith("_g"):
            tensors[name] = np.ones(shape, dtype=np.float64)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            tensors[name] = rng.normal(0.0, std, size=shape)
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------


@dataclass
class SequenceBatch:
    """Token-side view of one or more layout rows plus their image vectors.

    ``loss_mask`` marks the caption-region positions whose next-token target
    is real (the caption tokens and the position predicting EOS);
    ``attn_valid`` marks positions usable as attention keys.
    """

    tokens: np.ndarray
    targets: np.ndarray
    roles: np.ndarray
    loss_mask: np.ndarray
    attn_valid: np.ndarray
    image_vecs: np.ndarray
    alt_truncated: np.ndarray
    caption_truncated: np.ndarray
    _allowed: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def length(self) -> int:
        return self.tokens.shape[1]

    def allowed(self) -> np.ndarray:
        """Attention permission tensor [B, 1, L, L]: causal and key-valid."""
        if self._allowed is None or self._allowed.shape[0] != self.size:
            length = self.length
            causal = np.tril(np.ones((length, length), dtype=bool))
            self._allowed = causal[None, None, :, :] & self.attn_valid[:, None, None, :]
        return self._allowed


def layout_sequence(
    image_vec: np.ndarray,
    alt_ids: Sequence[int],
    caption_ids: Sequence[int],
    config: ModelConfig,
) -> SequenceBatch:
    """Assemble a single layout row.

    The alt region is right-padded to ``m_alt`` (empty alt becomes the single
    EMPTY_ALT token); the caption is wrapped as ``BOS .. EOS`` inside the
    ``max_gen`` region, so at most ``max_gen - 2`` caption tokens are kept.
    Overlong inputs are head-truncated and flagged.

    The raw image embedding rides along on the row; the mapping network is
    applied inside the forward pass so its parameters receive gradients.
    """
    image_vec = np.asarray(image_vec, dtype=np.float64).ravel()
    if image_vec.shape[0] != config.image_embed_dim:
        raise ShapeError(
            f"image embedding has dim {image_vec.shape[0]}, expected {config.image_embed_dim}"
        )
    if not np.all(np.isfinite(image_vec)):
        raise DomainError("image embedding contains non-finite values")

    alt = [int(t) for t in alt_ids]
    if not alt:
        alt = [EMPTY_ALT_ID]
    alt_truncated = len(alt) > config.m_alt
    alt = alt[: config.m_alt]

    caption = [int(t) for t in caption_ids]
    cap_limit = config.max_gen - 2
    caption_truncated = len(caption) > cap_limit
    caption = caption[:cap_limit]
    k = len(caption)

    length = config.total_len
    tokens = np.full((1, length), PAD_ID, dtype=np.int64)
    targets = np.full((1, length), PAD_ID, dtype=np.int64)
    roles = np.full((1, length), ROLE_PAD, dtype=np.uint8)
    loss_mask = np.zeros((1, length), dtype=bool)
    attn_valid = np.zeros((1, length), dtype=bool)

    nv = config.n_visual
    roles[0, :nv] = ROLE_VISUAL
    attn_valid[0, :nv] = True

    roles[0, nv : nv + config.m_alt] = ROLE_ALT
    tokens[0, nv : nv + len(alt)] = alt
    attn_valid[0, nv : nv + len(alt)] = True

    cs = config.caption_start
    cap_tokens = [BOS_ID] + caption + [EOS_ID]
    tokens[0, cs : cs + len(cap_tokens)] = cap_tokens
    roles[0, cs : cs + len(cap_tokens)] = ROLE_CAPTION
    attn_valid[0, cs : cs + len(cap_tokens)] = True
    # predict caption tokens and the closing EOS: k + 1 positions
    loss_mask[0, cs : cs + k + 1] = True
    targets[0, cs : cs + k + 1] = cap_tokens[1:]

    return SequenceBatch(
        tokens=tokens,
        targets=targets,
        roles=roles,
        loss_mask=loss_mask,
        attn_valid=attn_valid,
        image_vecs=image_vec[None, :],
        alt_truncated=np.array([alt_truncated]),
        caption_truncated=np.array([caption_truncated]),
    )


def concat_rows(rows: Sequence[SequenceBatch]) -> SequenceBatch:
    if not rows:
        raise ValidationError("cannot build a batch from zero rows")
    return SequenceBatch(
        tokens=np.concatenate([r.tokens for r in rows], axis=0),
        targets=np.concatenate([r.targets for r in rows], axis=0),
        roles=np.concatenate([r.roles for r in rows], axis=0),
        loss_mask=np.concatenate([r.loss_mask for r in rows], axis=0),
        attn_valid=np.concatenate([r.attn_valid for r in rows], axis=0),
        image_vecs=np.concatenate([r.image_vecs for r in rows], axis=0),
        alt_truncated=np.concatenate([r.alt_truncated for r in rows], axis=0),
        caption_truncated=np.concatenate([r.caption_truncated for r in rows], axis=0),
    )


# ---------------------------------------------------------------------------
# Primitive forward/backward passes
# ---------------------------------------------------------------------------


def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _gelu_fwd(x):
    u = _GELU_K * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_bwd(dy, cache):
    x, t = cache
    du = _GELU_K * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _heads(x, n_heads):
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _unheads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def _attn_fwd(x, p, prefix, n_heads, allowed):
    q = x @ p[f"{prefix}attn_wq"] + p[f"{prefix}attn_bq"]
    k = x @ p[f"{prefix}attn_wk"] + p[f"{prefix}attn_bk"]
    v = x @ p[f"{prefix}attn_wv"] + p[f"{prefix}attn_bv"]
    qh, kh, vh = (_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if allowed is not None:
        scores = np.where(allowed, scores, -np.inf)
    shift = scores.max(axis=-1, keepdims=True)
    expd = np.exp(scores - shift)
    attn = expd / expd.sum(axis=-1, keepdims=True)
    o = _unheads(attn @ vh)
    out = o @ p[f"{prefix}attn_wo"] + p[f"{prefix}attn_bo"]
    return out, (x, qh, kh, vh, attn, o, scale)


def _attn_bwd(dout, cache, p, prefix, n_heads, grads):
    x, qh, kh, vh, attn, o, scale = cache
    grads[f"{prefix}attn_wo"] += np.einsum("bld,ble->de", o, dout)
    grads[f"{prefix}attn_bo"] += dout.sum(axis=(0, 1))
    doh = _heads(dout @ p[f"{prefix}attn_wo"].T, n_heads)
    dvh = attn.transpose(0, 1, 3, 2) @ doh
    dattn = doh @ vh.transpose(0, 1, 3, 2)
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dqh = (dscores @ kh) * scale
    dkh = (dscores.transpose(0, 1, 3, 2) @ qh) * scale
    dx = np.zeros_like(x)
    for name, grad_h in (("q", dqh), ("k", dkh), ("v", dvh)):
        flat = _unheads(grad_h)
        grads[f"{prefix}attn_w{name}"] += np.einsum("bld,ble->de", x, flat)
        grads[f"{prefix}attn_b{name}"] += flat.sum(axis=(0, 1))
        dx += flat @ p[f"{prefix}attn_w{name}"].T
    return dx


def _block_fwd(x, p, prefix, n_heads, allowed):
    h1, c_ln1 = _ln_fwd(x, p[f"{prefix}ln1_g"], p[f"{prefix}ln1_b"])
    attn_out, c_attn = _attn_fwd(h1, p, prefix, n_heads, allowed)
    x2 = x + attn_out
    h2, c_ln2 = _ln_fwd(x2, p[f"{prefix}ln2_g"], p[f"{prefix}ln2_b"])
    m1 = h2 @ p[f"{prefix}mlp_w1"] + p[f"{prefix}mlp_b1"]
    act, c_gelu = _gelu_fwd(m1)
    out = x2 + (act @ p[f"{prefix}mlp_w2"] + p[f"{prefix}mlp_b2"])
    return out, (c_ln1, c_attn, c_ln2, h2, act, c_gelu)


def _block_bwd(dout, cache, p, prefix, n_heads, grads):
    c_ln1, c_attn, c_ln2, h2, act, c_gelu = cache
    grads[f"{prefix}mlp_w2"] += np.einsum("blf,bld->fd", act, dout)
    grads[f"{prefix}mlp_b2"] += dout.sum(axis=(0, 1))
    dact = dout @ p[f"{prefix}mlp_w2"].T
    dm1 = _gelu_bwd(dact, c_gelu)
    grads[f"{prefix}mlp_w1"] += np.einsum("bld,blf->df", h2, dm1)
    grads[f"{prefix}mlp_b1"] += dm1.sum(axis=(0, 1))
    dh2 = dm1 @ p[f"{prefix}mlp_w1"].T
    dx2_ln, dg2, db2 = _ln_bwd(dh2, c_ln2)
    grads[f"{prefix}ln2_g"] += dg2
    grads[f"{prefix}ln2_b"] += db2
    dx2 = dout + dx2_ln
    dh1 = _attn_bwd(dx2, c_attn, p, prefix, n_heads, grads)
    dx_ln, dg1, db1 = _ln_bwd(dh1, c_ln1)
    grads[f"{prefix}ln1_g"] += dg1
    grads[f"{prefix}ln1_b"] += db1
    return dx2 + dx_ln


def _mapping_fwd(params: ModelParams, image_vecs: np.ndarray):
    cfg = params.config
    p = params.tensors
    batch = image_vecs.shape[0]
    img = image_vecs @ p["img_proj_w"] + p["img_proj_b"]
    z = np.concatenate(
        [np.broadcast_to(p["map_queries"], (batch, cfg.n_visual, cfg.d_model)), img[:, None, :]],
        axis=1,
    )
    caches = []
    for i in range(cfg.n_mapping_layers):
        z, cache = _block_fwd(z, p, f"map{i}_", cfg.n_heads, None)
        caches.append(cache)
    return z[:, : cfg.n_visual, :], caches


def _mapping_bwd(dvis, caches, params: ModelParams, image_vecs, grads):
    cfg = params.config
    p = params.tensors
    batch = dvis.shape[0]
    dz = np.zeros((batch, cfg.n_visual + 1, cfg.d_model), dtype=np.float64)
    dz[:, : cfg.n_visual, :] = dvis
    for i in reversed(range(cfg.n_mapping_layers)):
        dz = _block_bwd(dz, caches[i], p, f"map{i}_", cfg.n_heads, grads)
    grads["map_queries"] += dz[:, : cfg.n_visual, :].sum(axis=0)
    dimg = dz[:, cfg.n_visual, :]
    grads["img_proj_w"] += np.einsum("bi,bd->id", image_vecs, dimg)
    grads["img_proj_b"] += dimg.sum(axis=0)


def map_embedding(params: ModelParams, image_vec: np.ndarray) -> np.ndarray:
    """Transform one image embedding into the ``[n_visual, d_model]``
    visual-token matrix."""
    image_vec = np.asarray(image_vec, dtype=np.float64).ravel()
    if image_vec.shape[0] != params.config.image_embed_dim:
        raise ShapeError(
            f"image embedding has dim {image_vec.shape[0]}, "
            f"expected {params.config.image_embed_dim}"
        )
    if not np.all(np.isfinite(image_vec)):
        raise DomainError("image embedding contains non-finite values")
    vis, _ = _mapping_fwd(params, image_vec[None, :])
    return vis[0]


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def softmax_xent(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Masked next-token cross entropy.

    Returns (mean loss over masked positions, per-position losses that are
    exactly zero off-mask, gradient w.r.t. logits).
    """
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValidationError("degenerate batch: no masked positions to compute loss over")
    shift = logits.max(axis=-1, keepdims=True)
    expd = np.exp(logits - shift)
    total = expd.sum(axis=-1, keepdims=True)
    logp = logits - shift - np.log(total)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    per_pos = np.where(mask, -picked, 0.0)
    loss = float(per_pos.sum() / n_masked)
    dlogits = expd / total
    np.put_along_axis(
        dlogits,
        targets[..., None],
        np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0,
        axis=-1,
    )
    dlogits *= (mask / n_masked)[..., None]
    return loss, per_pos, dlogits


def _check_batch(params: ModelParams, batch: SequenceBatch) -> None:
    cfg = params.config
    if batch.length != cfg.total_len:
        raise ShapeError(f"batch length {batch.length} != configured total {cfg.total_len}")
    if batch.image_vecs.shape != (batch.size, cfg.image_embed_dim):
        raise ShapeError(
            f"image_vecs shape {batch.image_vecs.shape} inconsistent with "
            f"batch {batch.size} and image_embed_dim {cfg.image_embed_dim}"
        )
    if batch.tokens.min() < 0 or batch.tokens.max() >= cfg.vocab_size:
        raise ValidationError("token ids out of vocabulary range")


def _decoder_fwd(params: ModelParams, batch: SequenceBatch):
    cfg = params.config
    p = params.tensors
    vis, map_caches = _mapping_fwd(params, batch.image_vecs)
    x = p["tok_emb"][batch.tokens].copy()
    x[:, : cfg.n_visual, :] = vis
    x = x + p["pos_emb"][None, : batch.length, :]
    allowed = batch.allowed()
    block_caches = []
    for i in range(cfg.n_decoder_layers):
        x, cache = _block_fwd(x, p, f"dec{i}_", cfg.n_heads, allowed)
        block_caches.append(cache)
    hfin, c_fin = _ln_fwd(x, p["final_ln_g"], p["final_ln_b"])
    return hfin, (map_caches, block_caches, c_fin)


def forward_loss(params: ModelParams, batch: SequenceBatch) -> tuple[float, np.ndarray]:
    """Mean cross entropy over loss-masked positions plus the per-position
    loss matrix (zero outside the mask)."""
    _check_batch(params, batch)
    hfin, _ = _decoder_fwd(params, batch)
    logits = hfin @ params.tensors["out_w"] + params.tensors["out_b"]
    loss, per_pos, _ = softmax_xent(logits, batch.targets, batch.loss_mask)
    return loss, per_pos


def loss_and_grads(
    params: ModelParams, batch: SequenceBatch
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """Forward plus full analytic backward pass."""
    _check_batch(params, batch)
    cfg = params.config
    p = params.tensors
    hfin, (map_caches, block_caches, c_fin) = _decoder_fwd(params, batch)
    logits = hfin @ p["out_w"] + p["out_b"]
    loss, per_pos, dlogits = softmax_xent(logits, batch.targets, batch.loss_mask)

    grads = {name: np.zeros_like(t) for name, t in p.items()}
    grads["out_w"] += np.einsum("bld,blv->dv", hfin, dlogits)
    grads["out_b"] += dlogits.sum(axis=(0, 1))
    dh = dlogits @ p["out_w"].T
    dx, dg, db = _ln_bwd(dh, c_fin)
    grads["final_ln_g"] += dg
    grads["final_ln_b"] += db
    for i in reversed(range(cfg.n_decoder_layers)):
        dx = _block_bwd(dx, block_caches[i], p, f"dec{i}_", cfg.n_heads, grads)
    grads["pos_emb"][: batch.length] += dx.sum(axis=0)
    np.add.at(grads["tok_emb"], batch.tokens[:, cfg.n_visual :], dx[:, cfg.n_visual :, :])
    _mapping_bwd(dx[:, : cfg.n_visual, :], map_caches, params, batch.image_vecs, grads)
    return loss, per_pos, grads


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float = 0.2
    top_p: float = 0.7
    max_tokens: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")


def nucleus_filter(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Zero out everything outside the smallest probability-sorted set whose
    cumulative mass reaches ``top_p``, then renormalize. Rows of a [B, V]
    matrix are filtered independently; the top token always survives."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    order = np.argsort(-probs, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=-1)
    cum = np.cumsum(sorted_p, axis=-1)
    keep_sorted = np.empty_like(sorted_p, dtype=bool)
    keep_sorted[:, 0] = True
    keep_sorted[:, 1:] = cum[:, :-1] < top_p
    keep = np.zeros_like(keep_sorted)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    filtered = np.where(keep, probs, 0.0)
    return filtered / filtered.sum(axis=-1, keepdims=True)


def _prefix_logits(params: ModelParams, tokens, valid, vis):
    cfg = params.config
    p = params.tensors
    length = tokens.shape[1]
    x = p["tok_emb"][tokens].copy()
    x[:, : cfg.n_visual, :] = vis
    x = x + p["pos_emb"][None, :length, :]
    causal = np.tril(np.ones((length, length), dtype=bool))
    allowed = causal[None, None, :, :] & valid[:, None, None, :]
    for i in range(cfg.n_decoder_layers):
        x, _ = _block_fwd(x, p, f"dec{i}_", cfg.n_heads, allowed)
    last, _ = _ln_fwd(x[:, -1, :], p["final_ln_g"], p["final_ln_b"])
    return last @ p["out_w"] + p["out_b"]


def generate_batch(
    params: ModelParams,
    image_vecs: np.ndarray,
    alt_ids_list: Sequence[Sequence[int]],
    decode_cfg: DecodeConfig,
    alt_region_len: int | None = None,
    stop_at_eos: bool = True,
) -> list[list[int]]:
    """Autoregressive nucleus sampling over the caption region for a batch
    of rows; temperature 0 means greedy argmax. Each call owns its seeded
    generator, so results are independent of thread placement."""
    cfg = params.config
    image_vecs = np.asarray(image_vecs, dtype=np.float64).reshape(-1, cfg.image_embed_dim)
    if not np.all(np.isfinite(image_vecs)):
        raise DomainError("image embeddings contain non-finite values")
    batch = image_vecs.shape[0]
    if len(alt_ids_list) != batch:
        raise ShapeError(f"{len(alt_ids_list)} alt sequences for {batch} image vectors")
    region = cfg.m_alt if alt_region_len is None else int(alt_region_len)
    if region < 0 or cfg.n_visual + region + cfg.max_gen > cfg.total_len:
        raise ConfigError(f"alt region {region} does not fit the {cfg.total_len} layout")
    if decode_cfg.max_tokens is not None and decode_cfg.max_tokens > cfg.max_gen:
        raise ConfigError(
            f"max_tokens {decode_cfg.max_tokens} exceeds caption region {cfg.max_gen}"
        )
    max_new = min(decode_cfg.max_tokens or (cfg.max_gen - 1), cfg.max_gen - 1)

    width = cfg.n_visual + region + 1
    tokens = np.full((batch, width), PAD_ID, dtype=np.int64)
    valid = np.zeros((batch, width), dtype=bool)
    valid[:, : cfg.n_visual] = True
    for row, alt in enumerate(alt_ids_list):
        alt = [int(t) for t in alt]
        if not alt and region >= 1:
            alt = [EMPTY_ALT_ID]
        alt = alt[:region]
        tokens[row, cfg.n_visual : cfg.n_visual + len(alt)] = alt
        valid[row, cfg.n_visual : cfg.n_visual + len(alt)] = True
    tokens[:, width - 1] = BOS_ID
    valid[:, width - 1] = True

    vis, _ = _mapping_fwd(params, image_vecs)
    rng = np.random.default_rng(decode_cfg.seed)
    done = np.zeros(batch, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(batch)]

    for _ in range(max_new):
        logits = _prefix_logits(params, tokens, valid, vis)
        if decode_cfg.temperature == 0.0:
            nxt = logits.argmax(axis=-1)
        else:
            scaled = logits / decode_cfg.temperature
            scaled -= scaled.max(axis=-1, keepdims=True)
            probs = np.exp(scaled)
            probs /= probs.sum(axis=-1, keepdims=True)
            kept = nucleus_filter(probs, decode_cfg.top_p)
            draw = rng.random((batch, 1))
            sel = np.minimum(
                (np.cumsum(kept, axis=-1) < draw).sum(axis=-1), kept.shape[1] - 1
            )
            nxt = sel
        newly_done = (~done) & (nxt == EOS_ID) & stop_at_eos
        for row in range(batch):
            if not done[row] and not newly_done[row]:
                outputs[row].append(int(nxt[row]))
        col_tokens = np.where(done, PAD_ID, nxt)
        col_valid = ~done
        tokens = np.concatenate([tokens, col_tokens[:, None]], axis=1)
        valid = np.concatenate([valid, col_valid[:, None]], axis=1)
        done = done | newly_done
        if stop_at_eos and done.all():
            break
    return outputs


def generate(
    params: ModelParams,
    image_vec: np.ndarray,
    alt_ids: Sequence[int],
    decode_cfg: DecodeConfig,
) -> list[int]:
    """Sample one caption (token ids without BOS/EOS) for one image."""
    return generate_batch(params, np.asarray(image_vec)[None, :], [alt_ids], decode_cfg)[0]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_model(params: ModelParams, path: str | Path) -> None:
    """Magic ``ALTM``, u32 version, length-prefixed config JSON, then all
    tensors in declaration order as little-endian float64."""
    from .corpus import write_atomic

    cfg_blob = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(cfg_blob)), cfg_blob]
    for name, _ in param_shapes(params.config):
        parts.append(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())
    write_atomic(path, b"".join(parts))


def load_model(path: str | Path, expected_config: ModelConfig | None = None) -> ModelParams:
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise FormatError(f"model file too short ({len(blob)} bytes)")
    if blob[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MODEL_MAGIC!r}")
    version, cfg_len = struct.unpack_from("<II", blob, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model file version {version}")
    if len(blob) < 12 + cfg_len:
        raise FormatError("model file truncated inside config block")
    try:
        cfg = ModelConfig.from_dict(json.loads(blob[12 : 12 + cfg_len]))
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise FormatError(f"unreadable model config: {exc}") from None
    if expected_config is not None:
        for key, expected in expected_config.to_dict().items():
            found = cfg.to_dict()[key]
            if found != expected:
                raise FormatError(
                    f"model file {key}={found} does not match expected {key}={expected}"
                )
    shapes = param_shapes(cfg)
    expected_bytes = sum(int(np.prod(shape)) for _, shape in shapes) * 8
    payload = blob[12 + cfg_len :]
    if len(payload) != expected_bytes:
        raise FormatError(
            f"parameter payload is {len(payload)} bytes but config "
            f"(vocab_size={cfg.vocab_size}, d_model={cfg.d_model}) requires {expected_bytes}"
        )
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        tensors[name] = (
            np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += size * 8
    params = ModelParams(cfg, tensors)
    for name, tensor in tensors.items():
        if not np.all(np.isfinite(tensor)):
            raise FormatError(f"parameter {name!r} contains non-finite values")
    return params
