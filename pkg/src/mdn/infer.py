"""Batched beam-search inference with incremental decoder state.

The hot path is tape-free numpy reading the model's weight arrays
directly; Q/K/V projections are fused into single GEMMs at compile time.
Per source sentence the cross-attention keys/values are computed once and
then copied per beam; the self-attention cache grows by one position per
step and is gathered when beams reorder.

Sources are encoded as ``tokens + [EOS]``; hypotheses start from BOS and
finish on EOS. The per-sentence generation cap is
``len(src) * max_len_factor + max_len_extra``, enforced per sentence so a
sentence decodes identically alone or inside any batch.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import Model, NEG_INF
from .tensor import log_softmax_np, layer_norm_np

PAD_ID, BOS_ID, EOS_ID = Model.PAD_ID, Model.BOS_ID, Model.EOS_ID


def length_normalize(score: float, length: int, alpha_ln: float = 1.0) -> float:
    """score / length**alpha_ln; alpha_ln=0 keeps the raw score."""
    if length < 1:
        raise DataError("length must be >= 1")
    return score / (length ** alpha_ln)


def _softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


class _EncLayer:
    __slots__ = ("wqkv", "bqkv", "wo", "bo", "n1g", "n1b", "w1", "b1",
                 "w2", "b2", "n2g", "n2b", "heads", "head_dim")

    def __init__(self, layer):
        a = layer.attn
        self.heads, self.head_dim = a.heads, a.head_dim
        self.wqkv = np.concatenate([a.wq.data, a.wk.data, a.wv.data], axis=1)
        self.bqkv = np.concatenate([a.bq.data, a.bk.data, a.bv.data])
        self.wo, self.bo = a.wo.data, a.bo.data
        self.n1g, self.n1b = layer.norm1.gain.data, layer.norm1.bias.data
        self.w1, self.b1 = layer.ffn.w1.data, layer.ffn.b1.data
        self.w2, self.b2 = layer.ffn.w2.data, layer.ffn.b2.data
        self.n2g, self.n2b = layer.norm2.gain.data, layer.norm2.bias.data


class _DecLayer:
    __slots__ = ("w_sqkv", "b_sqkv", "wo_s", "bo_s", "n1g", "n1b",
                 "wq_c", "bq_c", "wkv_c", "bkv_c", "wo_c", "bo_c", "n2g", "n2b",
                 "w1", "b1", "w2", "b2", "n3g", "n3b", "heads", "head_dim")

    def __init__(self, layer):
        s, c = layer.self_attn, layer.cross_attn
        self.heads, self.head_dim = s.heads, s.head_dim
        self.w_sqkv = np.concatenate([s.wq.data, s.wk.data, s.wv.data], axis=1)
        self.b_sqkv = np.concatenate([s.bq.data, s.bk.data, s.bv.data])
        self.wo_s, self.bo_s = s.wo.data, s.bo.data
        self.n1g, self.n1b = layer.norm1.gain.data, layer.norm1.bias.data
        self.wq_c, self.bq_c = c.wq.data, c.bq.data
        self.wkv_c = np.concatenate([c.wk.data, c.wv.data], axis=1)
        self.bkv_c = np.concatenate([c.bk.data, c.bv.data])
        self.wo_c, self.bo_c = c.wo.data, c.bo.data
        self.n2g, self.n2b = layer.norm2.gain.data, layer.norm2.bias.data
        if layer.ffn is not None:
            self.w1, self.b1 = layer.ffn.w1.data, layer.ffn.b1.data
            self.w2, self.b2 = layer.ffn.w2.data, layer.ffn.b2.data
            self.n3g, self.n3b = layer.norm3.gain.data, layer.norm3.bias.data
        else:
            self.w1 = None


class DecoderState:
    """Per-beam incremental caches.

    Self-attention K/V grow by exactly one position per step; the
    cross-attention K/V were computed once per source sentence before the
    per-beam copy and never change afterwards.
    """

    def __init__(self, self_k, self_v, cross_k, cross_v, cross_mask):
        self.self_k = self_k          # per layer: (B, max_len, kv)
        self.self_v = self_v
        self.cross_k = cross_k        # per layer: (B, L, heads, head_dim)
        self.cross_v = cross_v
        self.cross_mask = cross_mask  # (B, 1, L) additive
        self.t = 0

    def reorder(self, rows: np.ndarray):
        """Gather all caches along the beam axis (hypothesis reshuffle)."""
        t = self.t
        for i in range(len(self.self_k)):
            self.self_k[i][:, :t] = self.self_k[i][rows, :t]
            self.self_v[i][:, :t] = self.self_v[i][rows, :t]
        # cross caches are identical across beams of one sentence, but a
        # gather keeps this correct for arbitrary row maps
        self.cross_k = [k[rows] for k in self.cross_k]
        self.cross_v = [v[rows] for v in self.cross_v]
        self.cross_mask = self.cross_mask[rows]


class CompiledModel:
    """Inference-only snapshot of a :class:`Model`.

    Construction reads structural fields only (never regularization
    settings); weight arrays are shared, fused projections are copies.
    """

    def __init__(self, model: Model, profiler=None):
        cfg = model.config
        self.hidden = cfg.hidden
        self.placement = cfg.norm_placement
        self.profiler = profiler
        self.src_embed = model.src_embed.data
        self.tgt_embed = model.tgt_embed.data
        self.embed_scale = math.sqrt(cfg.hidden)
        self.enc = [_EncLayer(l) for l in model.enc_layers]
        self.dec = [_DecLayer(l) for l in model.dec_layers]
        self.enc_norm = (model.enc_norm.gain.data, model.enc_norm.bias.data) \
            if model.enc_norm is not None else None
        self.dec_norm = (model.dec_norm.gain.data, model.dec_norm.bias.data) \
            if model.dec_norm is not None else None
        proj = model.out_proj
        if hasattr(proj, "w"):
            self.out_w, self.out_a, self.out_b = proj.w.data, None, None
        else:
            self.out_w, self.out_a, self.out_b = None, proj.a.data, proj.b.data
        self.vocab_tgt = (self.out_w if self.out_w is not None else self.out_a).shape[0]
        self._model = model
        self._pos = model._pos

    # -- encoder ------------------------------------------------------------

    def encode(self, src_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (enc_out (B,L,H), additive key mask (B,1,L))."""
        src_ids = np.atleast_2d(src_ids)
        b, L = src_ids.shape
        if L == 0:
            raise DataError("cannot encode an empty sentence")
        prof = self.profiler
        key_mask = np.where(src_ids == PAD_ID, NEG_INF, 0.0).astype(self.src_embed.dtype)
        mask4 = key_mask[:, None, None, :]
        x = self.src_embed[src_ids] * self.embed_scale + self._pos(L)
        pre = self.placement == "pre"
        for lay in self.enc:
            if prof:
                prof.start("encoder_attention")
            h = layer_norm_np(x, lay.n1g, lay.n1b) if pre else x
            qkv = h @ lay.wqkv + lay.bqkv
            w = lay.heads * lay.head_dim
            q, k, v = qkv[..., :w], qkv[..., w:2 * w], qkv[..., 2 * w:]
            q = q.reshape(b, L, lay.heads, lay.head_dim).transpose(0, 2, 1, 3)
            k = k.reshape(b, L, lay.heads, lay.head_dim).transpose(0, 2, 3, 1)
            v = v.reshape(b, L, lay.heads, lay.head_dim).transpose(0, 2, 1, 3)
            scores = q @ k / math.sqrt(lay.head_dim) + mask4
            ctx = _softmax_np(scores) @ v
            ctx = ctx.transpose(0, 2, 1, 3).reshape(b, L, w)
            x = x + ctx @ lay.wo + lay.bo
            if not pre:
                x = layer_norm_np(x, lay.n1g, lay.n1b)
            if prof:
                prof.stop()
                prof.start("encoder_ffn")
            h = layer_norm_np(x, lay.n2g, lay.n2b) if pre else x
            x = x + np.maximum(h @ lay.w1 + lay.b1, 0.0) @ lay.w2 + lay.b2
            if not pre:
                x = layer_norm_np(x, lay.n2g, lay.n2b)
            if prof:
                prof.stop()
        if self.enc_norm is not None:
            x = layer_norm_np(x, *self.enc_norm)
        return x, key_mask[:, None, :]

    # -- incremental decoder ------------------------------------------------

    def init_state(self, enc_out: np.ndarray, cross_mask: np.ndarray,
                   max_len: int, beams: int = 1) -> DecoderState:
        """Precompute cross K/V per sentence, then replicate per beam."""
        b = enc_out.shape[0]
        L = enc_out.shape[1]
        self_k, self_v, cross_k, cross_v = [], [], [], []
        for lay in self.dec:
            w = lay.heads * lay.head_dim
            kv = enc_out @ lay.wkv_c + lay.bkv_c
            ck = kv[..., :w].reshape(b, L, lay.heads, lay.head_dim)
            cv = kv[..., w:].reshape(b, L, lay.heads, lay.head_dim)
            if beams > 1:
                ck = np.repeat(ck, beams, axis=0)
                cv = np.repeat(cv, beams, axis=0)
            cross_k.append(np.ascontiguousarray(ck))
            cross_v.append(np.ascontiguousarray(cv))
            rows = b * beams
            self_k.append(np.zeros((rows, max_len, w), dtype=enc_out.dtype))
            self_v.append(np.zeros((rows, max_len, w), dtype=enc_out.dtype))
        mask = np.repeat(cross_mask, beams, axis=0) if beams > 1 else cross_mask
        return DecoderState(self_k, self_v, cross_k, cross_v, mask)

    def step(self, state: DecoderState, prev_tokens: np.ndarray) -> np.ndarray:
        """Advance every row one position; returns logits (rows, vocab_tgt)."""
        t = state.t
        rows = prev_tokens.shape[0]
        prof = self.profiler
        pre = self.placement == "pre"
        x = self.tgt_embed[prev_tokens] * self.embed_scale + self._pos(t + 1)[t]
        for i, lay in enumerate(self.dec):
            hd, heads = lay.head_dim, lay.heads
            w = heads * hd
            scale = 1.0 / math.sqrt(hd)
            if prof:
                prof.start("decoder_attention")
            h = layer_norm_np(x, lay.n1g, lay.n1b) if pre else x
            qkv = h @ lay.w_sqkv + lay.b_sqkv
            q, k, v = qkv[:, :w], qkv[:, w:2 * w], qkv[:, 2 * w:]
            state.self_k[i][:, t] = k
            state.self_v[i][:, t] = v
            keys = state.self_k[i][:, :t + 1].reshape(rows, t + 1, heads, hd)
            vals = state.self_v[i][:, :t + 1].reshape(rows, t + 1, heads, hd)
            qh = q.reshape(rows, heads, hd)
            scores = np.einsum("bhd,bthd->bht", qh, keys) * scale
            probs = _softmax_np(scores)
            ctx = np.einsum("bht,bthd->bhd", probs, vals).reshape(rows, w)
            x = x + ctx @ lay.wo_s + lay.bo_s
            if not pre:
                x = layer_norm_np(x, lay.n1g, lay.n1b)
            h = layer_norm_np(x, lay.n2g, lay.n2b) if pre else x
            qh = (h @ lay.wq_c + lay.bq_c).reshape(rows, heads, hd)
            scores = np.einsum("bhd,bthd->bht", qh, state.cross_k[i]) * scale
            scores = scores + state.cross_mask
            probs = _softmax_np(scores)
            ctx = np.einsum("bht,bthd->bhd", probs, state.cross_v[i]).reshape(rows, w)
            x = x + ctx @ lay.wo_c + lay.bo_c
            if not pre:
                x = layer_norm_np(x, lay.n2g, lay.n2b)
            if prof:
                prof.stop()
            if lay.w1 is not None:
                if prof:
                    prof.start("decoder_ffn")
                h = layer_norm_np(x, lay.n3g, lay.n3b) if pre else x
                x = x + np.maximum(h @ lay.w1 + lay.b1, 0.0) @ lay.w2 + lay.b2
                if not pre:
                    x = layer_norm_np(x, lay.n3g, lay.n3b)
                if prof:
                    prof.stop()
        if self.dec_norm is not None:
            x = layer_norm_np(x, *self.dec_norm)
        if prof:
            prof.start("output_projection")
        if self.out_w is not None:
            logits = x @ self.out_w.T
        else:
            logits = (x @ self.out_b) @ self.out_a.T
        if prof:
            prof.stop()
        state.t = t + 1
        return logits


# ---------------------------------------------------------------------------
# beam search


@dataclass
class Hypothesis:
    tokens: list[int]     # generated ids, BOS/EOS stripped
    score: float          # raw log-probability incl. the EOS step
    normalized: float


def translate_batch(src_sentences: list[list[int]], model: Model,
                    beam_width: int = 4, batch_size: int = 64,
                    max_len_factor: float = 1.5, max_len_extra: int = 10,
                    alpha_ln: float = 1.0, threads: int = 1,
                    compiled: CompiledModel | None = None,
                    profiler=None) -> list[Hypothesis]:
    """Translate sentences; each result is the best finished hypothesis
    under length-normalized log-probability. Deterministic."""
    if beam_width < 1:
        raise DataError("beam_width must be >= 1")
    if not src_sentences:
        return []
    cm = compiled if compiled is not None else CompiledModel(model)
    if profiler is not None:
        cm.profiler = profiler
        threads = 1
    chunks = [src_sentences[i:i + batch_size]
              for i in range(0, len(src_sentences), batch_size)]
    args = [(cm, c, beam_width, max_len_factor, max_len_extra, alpha_ln)
            for c in chunks]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _translate_chunk(*a), args))
    else:
        parts = [_translate_chunk(*a) for a in args]
    return [hyp for part in parts for hyp in part]


def _translate_chunk(cm: CompiledModel, chunk, beam_width, max_len_factor,
                     max_len_extra, alpha_ln):
    B, K = len(chunk), beam_width
    V = cm.vocab_tgt
    caps = [max(1, int(len(s) * max_len_factor) + max_len_extra) for s in chunk]
    max_steps = max(caps)
    L = max(len(s) for s in chunk) + 1
    src = np.full((B, L), PAD_ID, dtype=np.int64)
    for i, s in enumerate(chunk):
        src[i, :len(s)] = s
        src[i, len(s)] = EOS_ID
    enc_out, cross_mask = cm.encode(src)
    state = cm.init_state(enc_out, cross_mask, max_steps, beams=K)

    live = np.full((B, K), NEG_INF, dtype=np.float64)
    live[:, 0] = 0.0
    tokens = np.full((B, K, max_steps), PAD_ID, dtype=np.int64)
    prev = np.full(B * K, BOS_ID, dtype=np.int64)
    finished: list[list[tuple[float, float, list[int]]]] = [[] for _ in range(B)]
    done = [False] * B
    rows_base = np.arange(B)[:, None] * K

    for t in range(max_steps):
        logits = cm.step(state, prev)
        logp = log_softmax_np(logits.astype(np.float64), axis=-1)
        cand = (live[:, :, None] + logp.reshape(B, K, V)).reshape(B, K * V)
        width = min(2 * K, K * V)
        top = np.argpartition(-cand, width - 1, axis=1)[:, :width]

        new_live = np.full((B, K), NEG_INF, dtype=np.float64)
        new_tok = np.full((B, K), PAD_ID, dtype=np.int64)
        parents = np.zeros((B, K), dtype=np.int64)
        for b in range(B):
            if done[b]:
                continue
            sel = top[b]
            scores = cand[b, sel]
            order = np.lexsort((sel, -scores))
            slot = 0
            length = t + 1
            for j in order:
                flat = sel[j]
                score = scores[j]
                if score <= NEG_INF / 2:
                    break
                beam_i, tok = divmod(int(flat), V)
                if tok == EOS_ID:
                    norm = score / (length ** alpha_ln)
                    finished[b].append((score, norm, tokens[b, beam_i, :t].tolist()))
                elif slot < K:
                    new_live[b, slot] = score
                    new_tok[b, slot] = tok
                    parents[b, slot] = beam_i
                    slot += 1
            if t == caps[b] - 1:
                # length cap: close out whatever is still alive
                for k in range(slot):
                    score = new_live[b, k]
                    norm = score / (length ** alpha_ln)
                    toks = tokens[b, parents[b, k], :t].tolist() + [int(new_tok[b, k])]
                    finished[b].append((score, norm, toks))
                done[b] = True
                new_live[b] = NEG_INF
            elif finished[b]:
                best_norm = max(f[1] for f in finished[b])
                bound = new_live[b].max() / (caps[b] ** alpha_ln if alpha_ln > 0 else 1.0)
                if len(finished[b]) >= K and best_norm >= bound:
                    done[b] = True
                    new_live[b] = NEG_INF
        if all(done):
            break
        rows = (rows_base + parents).reshape(-1)
        state.reorder(rows)
        tokens = tokens[np.arange(B)[:, None], parents]
        tokens[:, :, t] = new_tok
        live = new_live
        prev = new_tok.reshape(-1)

    out = []
    for b in range(B):
        best = max(finished[b], key=lambda f: (f[1], f[0]))
        out.append(Hypothesis(tokens=best[2], score=float(best[0]),
                              normalized=float(best[1])))
    return out
