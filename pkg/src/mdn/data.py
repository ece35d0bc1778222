"""Synthetic corpora for competence checks, plus parallel-text helpers."""
from __future__ import annotations

import numpy as np

from .errors import DataError

N_SPECIALS = 4  # pad/bos/eos/unk occupy ids 0..3 everywhere


def make_copy_corpus(n: int, vocab_size: int = 50, min_len: int = 1,
                     max_len: int = 20, seed: int = 0):
    """(src, tgt) pairs with tgt == src; payload ids avoid the specials."""
    return _synthetic(n, vocab_size, min_len, max_len, seed, reverse=False)


def make_reversal_corpus(n: int, vocab_size: int = 50, min_len: int = 1,
                         max_len: int = 20, seed: int = 0):
    """(src, tgt) pairs with tgt == reversed(src)."""
    return _synthetic(n, vocab_size, min_len, max_len, seed, reverse=True)


def _synthetic(n, vocab_size, min_len, max_len, seed, reverse):
    if vocab_size <= N_SPECIALS:
        raise DataError(f"vocab_size must exceed {N_SPECIALS}")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        src = rng.integers(N_SPECIALS, vocab_size, size=length).tolist()
        tgt = src[::-1] if reverse else list(src)
        pairs.append((src, tgt))
    return pairs


def read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def write_lines(path: str, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
