"""Training loop: inverse-sqrt schedule, optional distillation, checkpoints.

All randomness (batch order, dropout) flows from TrainConfig.seed, so two
runs with identical config produce byte-identical checkpoints. The loop
aborts with a diagnostic on the first non-finite loss.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_model
from .distill import DistillConfig, kd_loss
from .errors import DataError, NumericError
from .model import Model
from .optim import Adam, AdamConfig
from .tensor import Tensor, log_softmax, mul, tsum, no_grad


@dataclass
class TrainConfig:
    max_steps: int = 1000
    batch_tokens: int = 2000
    peak_lr: float = 1e-3
    warmup_steps: int = 400
    label_smoothing: float = 0.1
    decoder_dropout_override: float | None = None  # copied onto the model config
    checkpoint_interval: int = 500
    checkpoint_dir: str | None = None
    seed: int = 0
    log_every: int = 100
    adam: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-3))

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise DataError("label_smoothing must be in [0, 1)")
        if self.max_steps < 1 or self.batch_tokens < 2:
            raise DataError("max_steps and batch_tokens must be positive")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Inverse-sqrt schedule with linear warmup to peak_lr."""
    return cfg.peak_lr * min(step / cfg.warmup_steps,
                             math.sqrt(cfg.warmup_steps / step))


def label_smoothed_ce(logits: Tensor, gold_ids: np.ndarray, eps: float,
                      pad_id: int | None = None) -> Tensor:
    """Cross entropy against (1-eps) on gold and eps/(V-1) on the rest,
    averaged over non-pad positions. eps=0 is plain cross entropy."""
    if not 0.0 <= eps < 1.0:
        raise DataError("eps must be in [0, 1)")
    gold = np.asarray(gold_ids)
    v = logits.shape[-1]
    mask = np.ones(gold.shape, dtype=logits.dtype) if pad_id is None \
        else (gold != pad_id).astype(logits.dtype)
    n = float(mask.sum())
    if n == 0:
        raise DataError("no unmasked positions in the batch")
    target = np.full(logits.shape, eps / (v - 1), dtype=logits.dtype)
    np.put_along_axis(target, gold[..., None], 1.0 - eps, axis=-1)
    target *= mask[..., None]
    logp = log_softmax(logits, axis=-1)
    return mul(tsum(mul(logp, target)), -1.0 / n)


@dataclass
class LossPoint:
    step: int
    loss: float
    tokens_per_sec: float


@dataclass
class TrainResult:
    losses: list[LossPoint]
    checkpoint_paths: list[str]
    final_step: int


def pack_batches(pairs, batch_tokens: int, rng: np.random.Generator):
    """Shuffle, then greedily pack examples until the token budget fills."""
    order = rng.permutation(len(pairs))
    batch = []
    tokens = 0
    for idx in order:
        src, tgt = pairs[idx]
        cost = len(src) + len(tgt) + 3  # bos/eos/src-eos
        if batch and tokens + cost > batch_tokens:
            yield batch
            batch, tokens = [], 0
        batch.append(pairs[idx])
        tokens += cost
    if batch:
        yield batch


def make_arrays(batch, pad_id: int, bos_id: int, eos_id: int):
    """Pad a batch of (src, tgt) id lists into model-ready arrays."""
    ls = max(len(s) for s, _ in batch) + 1
    lt = max(len(t) for _, t in batch) + 1
    b = len(batch)
    src = np.full((b, ls), pad_id, dtype=np.int64)
    tgt_in = np.full((b, lt), pad_id, dtype=np.int64)
    tgt_out = np.full((b, lt), pad_id, dtype=np.int64)
    for i, (s, t) in enumerate(batch):
        src[i, :len(s)] = s
        src[i, len(s)] = eos_id
        tgt_in[i, 0] = bos_id
        tgt_in[i, 1:len(t) + 1] = t
        tgt_out[i, :len(t)] = t
        tgt_out[i, len(t)] = eos_id
    return src, tgt_in, tgt_out


def train_loop(model: Model, data, cfg: TrainConfig,
               teacher: Model | None = None,
               distill: DistillConfig | None = None) -> TrainResult:
    """Run up to ``cfg.max_steps`` optimizer steps over ``data``.

    ``data`` is a list of (src_ids, tgt_ids) pairs without specials. With
    a teacher, the loss is :func:`mdn.distill.kd_loss`; otherwise
    label-smoothed cross entropy at ``cfg.label_smoothing``.
    """
    if not data:
        raise DataError("no training data")
    if teacher is not None and distill is None:
        distill = DistillConfig()
    if cfg.decoder_dropout_override is not None:
        model.config.decoder_dropout_override = cfg.decoder_dropout_override

    ss = np.random.SeedSequence(cfg.seed)
    order_rng, drop_rng = (np.random.default_rng(c) for c in ss.spawn(2))
    opt = Adam(model.parameters(), cfg.adam)

    losses: list[LossPoint] = []
    paths: list[str] = []
    pad, bos, eos = model.PAD_ID, model.BOS_ID, model.EOS_ID
    step = 0
    tokens_done = 0
    t_start = time.perf_counter()

    def checkpoint(tag_step):
        if cfg.checkpoint_dir is None:
            return
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
        path = os.path.join(cfg.checkpoint_dir, f"ckpt_{tag_step:07d}.mdn")
        save_model(path, model, step=tag_step)
        paths.append(path)

    while step < cfg.max_steps:
        for batch in pack_batches(data, cfg.batch_tokens, order_rng):
            step += 1
            src, tgt_in, tgt_out = make_arrays(batch, pad, bos, eos)
            logits = model.forward(src, tgt_in, training=True, rng=drop_rng)
            if teacher is not None:
                with no_grad():
                    t_logits = teacher.forward(src, tgt_in).data
                loss = kd_loss(logits, t_logits, tgt_out, distill, pad_id=pad)
            else:
                loss = label_smoothed_ce(logits, tgt_out, cfg.label_smoothing,
                                         pad_id=pad)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss {loss_val} at step {step} "
                    f"(batch of {len(batch)}, lr {lr_at(step, cfg):.3g})")
            loss.backward()
            opt.step(lr=lr_at(step, cfg))
            opt.zero_grad()
            tokens_done += int((tgt_out != pad).sum())
            if step % cfg.log_every == 0 or step == cfg.max_steps:
                rate = tokens_done / max(time.perf_counter() - t_start, 1e-9)
                losses.append(LossPoint(step, loss_val, rate))
            if cfg.checkpoint_interval > 0 and step % cfg.checkpoint_interval == 0:
                checkpoint(step)
            if step >= cfg.max_steps:
                break

    if not paths or paths[-1] != os.path.join(cfg.checkpoint_dir or "",
                                              f"ckpt_{step:07d}.mdn"):
        checkpoint(step)
    if cfg.checkpoint_dir is not None:
        curve = os.path.join(cfg.checkpoint_dir, "loss_curve.csv")
        with open(curve, "w", encoding="utf-8") as fh:
            fh.write("step,loss,tokens_per_sec\n")
            for p in losses:
                fh.write(f"{p.step},{p.loss:.6f},{p.tokens_per_sec:.1f}\n")
    return TrainResult(losses, paths, step)
