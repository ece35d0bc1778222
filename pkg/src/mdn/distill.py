"""Weight-distillation surgery and the knowledge-distillation loss.

Surgery maps a trained teacher onto a structurally smaller student:
encoder layers are reused round-robin, decoder attentions keep one
teacher head (column slices of Q/K/V, the matching row slice of the
output projection), and a factorized output projection starts from the
truncated SVD of the teacher's full projection. The teacher is never
modified. When student and teacher geometry coincide the surgery
degenerates to a plain copy, so such a student reproduces the teacher's
logits exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .model import Model, MultiHeadAttention
from .tensor import Tensor, add, mul, tsum, log_softmax, log_softmax_np, no_grad


@dataclass
class DistillConfig:
    alpha: float = 0.5          # gold-loss weight; 1.0 = plain CE
    temperature: float = 1.0
    head_selection: int | None = None  # explicit teacher head; None = seeded random
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError("alpha must be in [0, 1]")
        if self.temperature <= 0:
            raise DataError("temperature must be > 0")


def round_robin_mapping(teacher_depth: int, student_depth: int) -> list[int]:
    """student layer i takes teacher layer i mod teacher_depth."""
    if teacher_depth < 1:
        raise DataError("teacher has no layers to reuse")
    return [i % teacher_depth for i in range(student_depth)]


def select_head_init(teacher_attn: MultiHeadAttention, head_index: int) -> dict[str, np.ndarray]:
    """Single-head weights sliced out of a multi-head teacher attention.

    Q/K/V take the column block of the chosen head; the output projection
    takes the matching row block; its bias is shared and copied whole.
    """
    if not 0 <= head_index < teacher_attn.heads:
        raise DataError(f"head index {head_index} out of range "
                        f"(teacher has {teacher_attn.heads} heads)")
    hd = teacher_attn.head_dim
    lo, hi = head_index * hd, (head_index + 1) * hd
    return {
        "wq": teacher_attn.wq.data[:, lo:hi].copy(),
        "bq": teacher_attn.bq.data[lo:hi].copy(),
        "wk": teacher_attn.wk.data[:, lo:hi].copy(),
        "bk": teacher_attn.bk.data[lo:hi].copy(),
        "wv": teacher_attn.wv.data[:, lo:hi].copy(),
        "bv": teacher_attn.bv.data[lo:hi].copy(),
        "wo": teacher_attn.wo.data[lo:hi, :].copy(),
        "bo": teacher_attn.bo.data.copy(),
    }


def svd_factorize_output(w: np.ndarray, rank: int) -> tuple[np.ndarray, np.ndarray]:
    """Best rank-``rank`` factorization W ~ A B^T via truncated SVD.

    A = U_E S_E (V x E), B = V_E (H x E); by Eckart-Young no rank-E
    factorization has smaller Frobenius error.
    """
    v, h = w.shape
    if not 1 <= rank <= min(v, h):
        raise DataError(f"rank {rank} out of range for {w.shape}")
    try:
        u, s, vt = np.linalg.svd(w.astype(np.float64), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    a = (u[:, :rank] * s[:rank]).astype(w.dtype)
    b = vt[:rank].T.astype(w.dtype)
    return a, b


def _copy_attention(dst: MultiHeadAttention, src: MultiHeadAttention, head_index: int):
    if dst.heads == src.heads and dst.head_dim == src.head_dim:
        for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            getattr(dst, name).data = getattr(src, name).data.copy()
        return
    if dst.heads == 1 and dst.head_dim == src.head_dim:
        sliced = select_head_init(src, head_index)
        for name, arr in sliced.items():
            getattr(dst, name).data = arr
        return
    raise DataError(
        f"unsupported head geometry: student {dst.heads}x{dst.head_dim}, "
        f"teacher {src.heads}x{src.head_dim} (single head of teacher width only)")


def _copy_norm(dst, src):
    dst.gain.data = src.gain.data.copy()
    dst.bias.data = src.bias.data.copy()


def _copy_ffn(dst, src):
    for name in ("w1", "b1", "w2", "b2"):
        getattr(dst, name).data = getattr(src, name).data.copy()


@dataclass
class WdReport:
    encoder_mapping: list[int]
    decoder_mapping: list[int]
    head_indices: list[tuple[int, int]] = field(default_factory=list)  # (self, cross) per layer
    output_svd: bool = False


def round_robin_encoder_init(student: Model, teacher: Model) -> list[int]:
    """Copy teacher encoder layers onto the student round-robin."""
    mapping = round_robin_mapping(len(teacher.enc_layers), len(student.enc_layers))
    for i, j in enumerate(mapping):
        s, t = student.enc_layers[i], teacher.enc_layers[j]
        if s.attn.wq.data.shape != t.attn.wq.data.shape:
            raise DataError(f"encoder layer {i}: shape mismatch against teacher layer {j}")
        _copy_attention(s.attn, t.attn, 0)
        _copy_norm(s.norm1, t.norm1)
        _copy_ffn(s.ffn, t.ffn)
        _copy_norm(s.norm2, t.norm2)
    return mapping


def init_student_from_teacher(student: Model, teacher: Model,
                              cfg: DistillConfig | None = None) -> WdReport:
    """Full weight-distillation initialization; the teacher is read-only."""
    cfg = cfg or DistillConfig()
    if student.config.vocab_src != teacher.config.vocab_src or \
       student.config.vocab_tgt != teacher.config.vocab_tgt:
        raise DataError("student/teacher vocabulary sizes differ")
    if student.config.hidden != teacher.config.hidden:
        raise DataError("student/teacher hidden sizes differ")
    rng = np.random.default_rng(cfg.seed)

    student.src_embed.data = teacher.src_embed.data.copy()
    student.tgt_embed.data = teacher.tgt_embed.data.copy()

    enc_map = round_robin_encoder_init(student, teacher)

    dec_map = round_robin_mapping(max(len(teacher.dec_layers), 1),
                                  len(student.dec_layers)) if student.dec_layers else []
    heads = []
    for i, j in enumerate(dec_map):
        s, t = student.dec_layers[i], teacher.dec_layers[j]
        if cfg.head_selection is not None:
            h_self = h_cross = cfg.head_selection
        else:
            h_self = int(rng.integers(t.self_attn.heads))
            h_cross = int(rng.integers(t.cross_attn.heads))
        _copy_attention(s.self_attn, t.self_attn, h_self)
        _copy_norm(s.norm1, t.norm1)
        _copy_attention(s.cross_attn, t.cross_attn, h_cross)
        _copy_norm(s.norm2, t.norm2)
        if s.ffn is not None and t.ffn is not None:
            _copy_ffn(s.ffn, t.ffn)
            _copy_norm(s.norm3, t.norm3)
        heads.append((h_self, h_cross))

    if student.dec_norm is not None and teacher.dec_norm is not None:
        _copy_norm(student.dec_norm, teacher.dec_norm)
    if student.enc_norm is not None and teacher.enc_norm is not None:
        _copy_norm(student.enc_norm, teacher.enc_norm)

    used_svd = False
    s_proj, t_proj = student.out_proj, teacher.out_proj
    if hasattr(s_proj, "w") and hasattr(t_proj, "w"):
        s_proj.w.data = t_proj.w.data.copy()
    elif hasattr(s_proj, "a") and hasattr(t_proj, "w"):
        rank = s_proj.a.data.shape[1]
        a, b = svd_factorize_output(t_proj.w.data, rank)
        s_proj.a.data = a.astype(student.dtype)
        s_proj.b.data = b.astype(student.dtype)
        used_svd = True
    elif hasattr(s_proj, "a") and hasattr(t_proj, "a"):
        if s_proj.a.data.shape != t_proj.a.data.shape:
            raise DataError("factorized projections have different ranks")
        s_proj.a.data = t_proj.a.data.copy()
        s_proj.b.data = t_proj.b.data.copy()
    else:
        raise DataError("cannot initialize a full projection from a factorized teacher")

    return WdReport(enc_map, dec_map, heads, used_svd)


def kd_loss(student_logits: Tensor, teacher_logits: np.ndarray,
            gold_ids: np.ndarray, cfg: DistillConfig,
            pad_id: int | None = None) -> Tensor:
    """alpha * CE(gold) + (1-alpha) * T^2 * KL(teacher || student) at
    temperature T, averaged over non-pad positions. Differentiable with
    respect to the student logits only."""
    gold = np.asarray(gold_ids)
    v = student_logits.shape[-1]
    if teacher_logits.shape != student_logits.shape:
        raise DataError(f"teacher logits {teacher_logits.shape} != "
                        f"student {student_logits.shape}")
    mask = np.ones(gold.shape, dtype=student_logits.dtype) if pad_id is None \
        else (gold != pad_id).astype(student_logits.dtype)
    n = float(mask.sum())
    if n == 0:
        raise DataError("no unmasked positions in the batch")

    onehot = np.zeros(student_logits.shape, dtype=student_logits.dtype)
    np.put_along_axis(onehot, gold[..., None], 1.0, axis=-1)
    onehot *= mask[..., None]
    logp = log_softmax(student_logits, axis=-1)
    ce = mul(tsum(mul(logp, onehot)), -1.0 / n)
    if cfg.alpha == 1.0:
        return ce

    t = cfg.temperature
    with no_grad():
        p_t = np.exp(log_softmax_np(teacher_logits / t, axis=-1))
        logp_t = log_softmax_np(teacher_logits / t, axis=-1)
        entropy_term = float(((p_t * logp_t).sum(axis=-1) * mask).sum() / n)
    logp_s = log_softmax(mul(student_logits, 1.0 / t), axis=-1)
    cross = mul(tsum(mul(logp_s, p_t * mask[..., None])), -1.0 / n)
    kl = add(cross, entropy_term)
    return add(mul(ce, cfg.alpha), mul(kl, (1.0 - cfg.alpha) * t * t))
