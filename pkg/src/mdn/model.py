"""Configurable encoder-decoder transformer.

Every structural efficiency trick is an independent config knob: decoder
depth, decoder head count and width, decoder FFN on/off, and a low-rank
factorized output projection (logits computed as (h@B)@A^T, never by
materializing A@B^T). The ``mdn`` preset combines all of them; the
``baseline`` preset is the standard 6+6 post-norm base model.

Dropout knobs each gate exactly the component they name: dropout_attn the
attention probabilities, dropout_ffn the FFN hidden layer, dropout_embed
the embedding sum. ``decoder_dropout_override``, when set, replaces all
three inside the decoder (0.0 disables decoder dropout entirely).

Parameter accounting: ``decoder_fraction`` is the decoder *stack*
(attention + FFN + norms) over the total; target embeddings and the
output projection are reported as their own components.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace

import numpy as np

from .errors import DataError
from .tensor import (
    Tensor, ShapeError, add, mul, matmul, transpose, reshape, embedding,
    softmax, layer_norm, relu,
)

NEG_INF = -1e9
LAYER_NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ModelConfig:
    hidden: int = 512
    ffn_dim: int = 2048
    enc_layers: int = 6
    dec_layers: int = 6
    enc_heads: int = 8
    dec_heads: int = 8
    dec_head_dim: int = 64
    dec_ffn_enabled: bool = True
    output_rank: int | None = None
    norm_placement: str = "post"
    vocab_src: int = 32000
    vocab_tgt: int = 32000
    dropout_attn: float = 0.1
    dropout_ffn: float = 0.1
    dropout_embed: float = 0.1
    decoder_dropout_override: float | None = None
    label_smoothing: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.hidden <= 0 or self.ffn_dim <= 0:
            raise DataError("hidden and ffn_dim must be positive")
        if self.enc_layers < 0 or self.dec_layers < 0:
            raise DataError("layer counts must be >= 0")
        if self.enc_layers > 0 and self.hidden % self.enc_heads != 0:
            raise DataError(f"enc_heads={self.enc_heads} must divide hidden={self.hidden}")
        if self.dec_heads * self.dec_head_dim > self.hidden:
            raise DataError("dec_heads * dec_head_dim must not exceed hidden")
        if self.norm_placement not in ("pre", "post"):
            raise DataError("norm_placement must be 'pre' or 'post'")
        if self.output_rank is not None and self.output_rank < 1:
            raise DataError("output_rank must be >= 1 when set")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise DataError("label_smoothing must be in [0, 1)")

    @classmethod
    def baseline(cls, vocab_src: int, vocab_tgt: int, **kw) -> "ModelConfig":
        """Standard base setup: 6+6 layers, 8 heads, FFN on, full projection."""
        args = dict(hidden=512, ffn_dim=2048, enc_layers=6, dec_layers=6,
                    enc_heads=8, dec_heads=8, dec_ffn_enabled=True,
                    output_rank=None, norm_placement="post",
                    vocab_src=vocab_src, vocab_tgt=vocab_tgt)
        args.update(kw)
        args.setdefault("dec_head_dim", args["hidden"] // args["dec_heads"])
        return cls(**args)

    @classmethod
    def mdn(cls, vocab_src: int, vocab_tgt: int, enc_layers: int | None = None,
            **kw) -> "ModelConfig":
        """Mini-decoder setup: 1-layer single-head FFN-free decoder, rank-64
        output, pre-norm, decoder regularization off. When ``enc_layers`` is
        omitted the encoder is deepened until the total parameter count
        matches the same-width baseline."""
        args = dict(hidden=512, ffn_dim=2048, dec_layers=1, dec_heads=1,
                    dec_ffn_enabled=False, output_rank=64, norm_placement="pre",
                    enc_heads=8, vocab_src=vocab_src, vocab_tgt=vocab_tgt,
                    decoder_dropout_override=0.0, label_smoothing=0.0)
        args.update(kw)
        args.setdefault("dec_head_dim", args["hidden"] // 8)
        if enc_layers is None:
            ref = cls.baseline(vocab_src, vocab_tgt, hidden=args["hidden"],
                               ffn_dim=args["ffn_dim"], enc_heads=args["enc_heads"])
            cfg = cls(enc_layers=1, **args)
            return match_encoder_depth(cfg, count_params(ref).total)
        return cls(enc_layers=enc_layers, **args)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(asdict(self), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class ParamCounts:
    """Closed-form per-component parameter counts for a config."""

    embed_src: int
    embed_tgt: int
    encoder_attention: int
    encoder_ffn: int
    encoder_norms: int
    decoder_attention: int
    decoder_ffn: int
    decoder_norms: int
    output_projection: int

    @property
    def encoder_total(self) -> int:
        return self.encoder_attention + self.encoder_ffn + self.encoder_norms

    @property
    def decoder_total(self) -> int:
        return self.decoder_attention + self.decoder_ffn + self.decoder_norms

    @property
    def total(self) -> int:
        return (self.embed_src + self.embed_tgt + self.encoder_total
                + self.decoder_total + self.output_projection)

    @property
    def decoder_fraction(self) -> float:
        return self.decoder_total / self.total

    def as_dict(self) -> dict:
        d = asdict(self)
        d["encoder_total"] = self.encoder_total
        d["decoder_total"] = self.decoder_total
        d["total"] = self.total
        d["decoder_fraction"] = self.decoder_fraction
        return d


def count_params(cfg: ModelConfig) -> ParamCounts:
    h, f = cfg.hidden, cfg.ffn_dim
    pre = cfg.norm_placement == "pre"
    # encoder attention is full-width: heads * head_dim == hidden
    enc_attn = cfg.enc_layers * (3 * (h * h + h) + (h * h + h))
    enc_ffn = cfg.enc_layers * (2 * h * f + f + h)
    enc_norms = cfg.enc_layers * 2 * 2 * h + (2 * h if pre and cfg.enc_layers > 0 else 0)
    kv = cfg.dec_heads * cfg.dec_head_dim
    dec_attn = cfg.dec_layers * 2 * (3 * (h * kv + kv) + (kv * h + h))
    dec_ffn = cfg.dec_layers * (2 * h * f + f + h) if cfg.dec_ffn_enabled else 0
    norms_per_layer = 3 if cfg.dec_ffn_enabled else 2
    dec_norms = cfg.dec_layers * norms_per_layer * 2 * h + (2 * h if pre else 0)
    if cfg.output_rank is None:
        out = cfg.vocab_tgt * h
    else:
        out = cfg.vocab_tgt * cfg.output_rank + h * cfg.output_rank
    return ParamCounts(
        embed_src=cfg.vocab_src * h,
        embed_tgt=cfg.vocab_tgt * h,
        encoder_attention=enc_attn,
        encoder_ffn=enc_ffn,
        encoder_norms=enc_norms,
        decoder_attention=dec_attn,
        decoder_ffn=dec_ffn,
        decoder_norms=dec_norms,
        output_projection=out,
    )


def match_encoder_depth(cfg: ModelConfig, target_total: int,
                        max_layers: int = 96) -> ModelConfig:
    """Deepen (or shrink) the encoder until the total parameter count is as
    close as possible to ``target_total``; depth is the only knob touched."""
    best = None
    best_err = None
    for n in range(1, max_layers + 1):
        total = count_params(replace(cfg, enc_layers=n)).total
        err = abs(total - target_total)
        if best_err is None or err < best_err:
            best, best_err = n, err
    return replace(cfg, enc_layers=best)


# ---------------------------------------------------------------------------
# parameters and layers


def _xavier(rng, fan_in, fan_out, dtype):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def positional_encoding(length: int, hidden: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal table: sin on even channels, cos on odd."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, hidden, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / hidden)
    pe = np.zeros((length, hidden), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : hidden // 2])
    return pe.astype(dtype)


def padding_mask(ids: np.ndarray, pad_id: int, dtype) -> np.ndarray:
    """Additive key mask (B, 1, 1, L): 0 on real tokens, -1e9 on pads."""
    return np.where(ids == pad_id, NEG_INF, 0.0).astype(dtype)[:, None, None, :]


def causal_mask(length: int, dtype) -> np.ndarray:
    m = np.triu(np.full((length, length), NEG_INF, dtype=dtype), k=1)
    return m[None, None, :, :]


@dataclass
class _RunCtx:
    """Per-side dropout context for one training forward pass."""

    training: bool
    rng: np.random.Generator | None
    draws: dict
    side: str
    p_attn: float
    p_ffn: float
    p_embed: float


def _dropout(x: Tensor, p: float, ctx: _RunCtx) -> Tensor:
    if not ctx.training or p <= 0.0:
        return x
    if ctx.rng is None:
        raise DataError("training forward pass needs an rng for dropout")
    keep = (ctx.rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    ctx.draws[ctx.side] += 1
    return mul(x, keep)


_INFER_CTX = _RunCtx(False, None, {"encoder": 0, "decoder": 0}, "encoder", 0, 0, 0)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None,
              heads: int, head_dim: int, attn_dropout: float = 0.0,
              ctx: _RunCtx = _INFER_CTX) -> Tensor:
    """Scaled dot-product attention over ``heads`` parallel slices.

    q/k/v are (B, T, heads*head_dim); the additive mask broadcasts against
    (B, heads, Tq, Tk). Heads are concatenated on return; the caller owns
    the output projection.
    """
    b, tq, width = q.shape
    if width != heads * head_dim:
        raise ShapeError(f"q width {width} != heads*head_dim {heads * head_dim}")
    if k.shape != v.shape or k.shape[-1] != width:
        raise ShapeError(f"k/v shapes {k.shape}/{v.shape} incompatible with q {q.shape}")
    tk = k.shape[1]
    qh = transpose(reshape(q, (b, tq, heads, head_dim)), (0, 2, 1, 3))
    kh = transpose(reshape(k, (b, tk, heads, head_dim)), (0, 2, 3, 1))
    vh = transpose(reshape(v, (b, tk, heads, head_dim)), (0, 2, 1, 3))
    scores = mul(matmul(qh, kh), 1.0 / math.sqrt(head_dim))
    if mask is not None:
        scores = add(scores, mask.astype(scores.dtype, copy=False))
    probs = softmax(scores, axis=-1)
    probs = _dropout(probs, attn_dropout, ctx)
    out = matmul(probs, vh)
    return reshape(transpose(out, (0, 2, 1, 3)), (b, tq, width))


class MultiHeadAttention:
    """Projections around :func:`attention`; width may be below hidden."""

    def __init__(self, hidden, heads, head_dim, rng, dtype):
        kv = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.wq = _xavier(rng, hidden, kv, dtype)
        self.bq = _zeros(kv, dtype)
        self.wk = _xavier(rng, hidden, kv, dtype)
        self.bk = _zeros(kv, dtype)
        self.wv = _xavier(rng, hidden, kv, dtype)
        self.bv = _zeros(kv, dtype)
        self.wo = _xavier(rng, kv, hidden, dtype)
        self.bo = _zeros(hidden, dtype)

    def __call__(self, q_in, kv_in, mask, ctx):
        q = add(matmul(q_in, self.wq), self.bq)
        k = add(matmul(kv_in, self.wk), self.bk)
        v = add(matmul(kv_in, self.wv), self.bv)
        mixed = attention(q, k, v, mask, self.heads, self.head_dim,
                          ctx.p_attn, ctx)
        return add(matmul(mixed, self.wo), self.bo)

    def params(self, prefix):
        return [(f"{prefix}.wq", self.wq), (f"{prefix}.bq", self.bq),
                (f"{prefix}.wk", self.wk), (f"{prefix}.bk", self.bk),
                (f"{prefix}.wv", self.wv), (f"{prefix}.bv", self.bv),
                (f"{prefix}.wo", self.wo), (f"{prefix}.bo", self.bo)]


class FeedForward:
    def __init__(self, hidden, ffn_dim, rng, dtype):
        self.w1 = _xavier(rng, hidden, ffn_dim, dtype)
        self.b1 = _zeros(ffn_dim, dtype)
        self.w2 = _xavier(rng, ffn_dim, hidden, dtype)
        self.b2 = _zeros(hidden, dtype)

    def __call__(self, x, ctx):
        h = relu(add(matmul(x, self.w1), self.b1))
        h = _dropout(h, ctx.p_ffn, ctx)
        return add(matmul(h, self.w2), self.b2)

    def params(self, prefix):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


class Norm:
    def __init__(self, hidden, dtype):
        self.gain = _ones(hidden, dtype)
        self.bias = _zeros(hidden, dtype)

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias, LAYER_NORM_EPS)

    def params(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]


def _sublayer(x, fn, norm, placement):
    if placement == "pre":
        return add(x, fn(norm(x)))
    return norm(add(x, fn(x)))


class EncoderLayer:
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.attn = MultiHeadAttention(cfg.hidden, cfg.enc_heads,
                                       cfg.hidden // cfg.enc_heads, rng, dtype)
        self.norm1 = Norm(cfg.hidden, dtype)
        self.ffn = FeedForward(cfg.hidden, cfg.ffn_dim, rng, dtype)
        self.norm2 = Norm(cfg.hidden, dtype)
        self.placement = cfg.norm_placement

    def __call__(self, x, mask, ctx):
        x = _sublayer(x, lambda h: self.attn(h, h, mask, ctx), self.norm1, self.placement)
        x = _sublayer(x, lambda h: self.ffn(h, ctx), self.norm2, self.placement)
        return x

    def params(self, prefix):
        return (self.attn.params(f"{prefix}.self_attn")
                + self.norm1.params(f"{prefix}.norm1")
                + self.ffn.params(f"{prefix}.ffn")
                + self.norm2.params(f"{prefix}.norm2"))


class DecoderLayer:
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.self_attn = MultiHeadAttention(cfg.hidden, cfg.dec_heads,
                                            cfg.dec_head_dim, rng, dtype)
        self.norm1 = Norm(cfg.hidden, dtype)
        self.cross_attn = MultiHeadAttention(cfg.hidden, cfg.dec_heads,
                                             cfg.dec_head_dim, rng, dtype)
        self.norm2 = Norm(cfg.hidden, dtype)
        if cfg.dec_ffn_enabled:
            self.ffn = FeedForward(cfg.hidden, cfg.ffn_dim, rng, dtype)
            self.norm3 = Norm(cfg.hidden, dtype)
        else:
            self.ffn = None
            self.norm3 = None
        self.placement = cfg.norm_placement

    def __call__(self, x, enc_out, self_mask, cross_mask, ctx):
        x = _sublayer(x, lambda h: self.self_attn(h, h, self_mask, ctx),
                      self.norm1, self.placement)
        x = _sublayer(x, lambda h: self.cross_attn(h, enc_out, cross_mask, ctx),
                      self.norm2, self.placement)
        if self.ffn is not None:
            x = _sublayer(x, lambda h: self.ffn(h, ctx), self.norm3, self.placement)
        return x

    def params(self, prefix):
        out = (self.self_attn.params(f"{prefix}.self_attn")
               + self.norm1.params(f"{prefix}.norm1")
               + self.cross_attn.params(f"{prefix}.cross_attn")
               + self.norm2.params(f"{prefix}.norm2"))
        if self.ffn is not None:
            out += self.ffn.params(f"{prefix}.ffn") + self.norm3.params(f"{prefix}.norm3")
        return out


class FullProjection:
    def __init__(self, vocab, hidden, rng, dtype):
        self.w = _xavier(rng, vocab, hidden, dtype)  # stored (V, H)

    def __call__(self, h):
        return matmul(h, transpose(self.w, (1, 0)))

    def params(self, prefix):
        return [(f"{prefix}.w", self.w)]


class FactorizedProjection:
    """Rank-E output projection W = A B^T; logits computed as (h@B)@A^T.

    The association order is the whole point: cost E*(H+V) per position
    instead of H*V.
    """

    def __init__(self, vocab, hidden, rank, rng, dtype):
        self.a = _xavier(rng, vocab, rank, dtype)
        self.b = _xavier(rng, hidden, rank, dtype)

    def __call__(self, h):
        return matmul(matmul(h, self.b), transpose(self.a, (1, 0)))

    def params(self, prefix):
        return [(f"{prefix}.a", self.a), (f"{prefix}.b", self.b)]


def output_logits(h: Tensor, proj) -> Tensor:
    """Hidden states to target-vocabulary logits (no bias)."""
    return proj(h)


# ---------------------------------------------------------------------------
# the model


class Model:
    """Weights plus the training-graph forward pass.

    Weights are float32 by default; pass dtype=np.float64 for gradient
    verification. The fast tape-free inference path lives in
    :mod:`mdn.infer` and reads these same arrays.
    """

    PAD_ID, BOS_ID, EOS_ID = 0, 1, 2

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        h = config.hidden
        scale = h ** -0.5
        self.src_embed = Tensor(
            (rng.standard_normal((config.vocab_src, h)) * scale).astype(dtype),
            requires_grad=True)
        self.tgt_embed = Tensor(
            (rng.standard_normal((config.vocab_tgt, h)) * scale).astype(dtype),
            requires_grad=True)
        self.enc_layers = [EncoderLayer(config, rng, dtype) for _ in range(config.enc_layers)]
        self.dec_layers = [DecoderLayer(config, rng, dtype) for _ in range(config.dec_layers)]
        if config.norm_placement == "pre":
            self.enc_norm = Norm(h, dtype) if config.enc_layers > 0 else None
            self.dec_norm = Norm(h, dtype)
        else:
            self.enc_norm = None
            self.dec_norm = None
        if config.output_rank is None:
            self.out_proj = FullProjection(config.vocab_tgt, h, rng, dtype)
        else:
            self.out_proj = FactorizedProjection(config.vocab_tgt, h,
                                                 config.output_rank, rng, dtype)
        self._params = dict(self._named_params())
        self.dropout_draws = {"encoder": 0, "decoder": 0}
        self._pos_cache = positional_encoding(256, h, dtype)

    def _named_params(self):
        out = [("src_embed.weight", self.src_embed), ("tgt_embed.weight", self.tgt_embed)]
        for i, layer in enumerate(self.enc_layers):
            out += layer.params(f"encoder.{i}")
        if self.enc_norm is not None:
            out += self.enc_norm.params("encoder.final_norm")
        for i, layer in enumerate(self.dec_layers):
            out += layer.params(f"decoder.{i}")
        if self.dec_norm is not None:
            out += self.dec_norm.params("decoder.final_norm")
        out += self.out_proj.params("out_proj")
        return out

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def num_params(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise DataError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise DataError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def _pos(self, length: int) -> np.ndarray:
        if length > self._pos_cache.shape[0]:
            self._pos_cache = positional_encoding(max(length, 2 * self._pos_cache.shape[0]),
                                                  self.config.hidden, self.dtype)
        return self._pos_cache[:length]

    def _ctx(self, side: str, training: bool, rng) -> _RunCtx:
        cfg = self.config
        if side == "decoder" and cfg.decoder_dropout_override is not None:
            o = cfg.decoder_dropout_override
            return _RunCtx(training, rng, self.dropout_draws, side, o, o, o)
        return _RunCtx(training, rng, self.dropout_draws, side,
                       cfg.dropout_attn, cfg.dropout_ffn, cfg.dropout_embed)

    def _embed(self, table: Tensor, ids: np.ndarray, ctx: _RunCtx) -> Tensor:
        scale = math.sqrt(self.config.hidden)
        x = add(mul(embedding(table, ids), scale), self._pos(ids.shape[1]))
        return _dropout(x, ctx.p_embed, ctx)

    def encode(self, src_ids: np.ndarray, training: bool = False, rng=None) -> Tensor:
        """Run the encoder stack; returns (B, L, hidden)."""
        src_ids = np.atleast_2d(np.asarray(src_ids))
        if src_ids.shape[1] == 0:
            raise ShapeError("encoder input is empty")
        ctx = self._ctx("encoder", training, rng)
        mask = padding_mask(src_ids, self.PAD_ID, self.dtype)
        x = self._embed(self.src_embed, src_ids, ctx)
        for layer in self.enc_layers:
            x = layer(x, mask, ctx)
        if self.enc_norm is not None:
            x = self.enc_norm(x)
        return x

    def decode_full(self, tgt_in_ids: np.ndarray, enc_out: Tensor,
                    src_mask: np.ndarray, training: bool = False, rng=None) -> Tensor:
        """Teacher-forced decoder pass over a whole prefix; returns hidden states."""
        tgt_in_ids = np.atleast_2d(np.asarray(tgt_in_ids))
        if tgt_in_ids.shape[1] == 0:
            raise ShapeError("decoder input is empty")
        ctx = self._ctx("decoder", training, rng)
        t = tgt_in_ids.shape[1]
        self_mask = causal_mask(t, self.dtype)
        x = self._embed(self.tgt_embed, tgt_in_ids, ctx)
        for layer in self.dec_layers:
            x = layer(x, enc_out, self_mask, src_mask, ctx)
        if self.dec_norm is not None:
            x = self.dec_norm(x)
        return x

    def forward(self, src_ids: np.ndarray, tgt_in_ids: np.ndarray,
                training: bool = False, rng=None) -> Tensor:
        """Full teacher-forced pass; returns logits (B, T, vocab_tgt)."""
        src_ids = np.atleast_2d(np.asarray(src_ids))
        enc = self.encode(src_ids, training, rng)
        src_mask = padding_mask(src_ids, self.PAD_ID, self.dtype)
        dec = self.decode_full(tgt_in_ids, enc, src_mask, training, rng)
        return output_logits(dec, self.out_proj)
