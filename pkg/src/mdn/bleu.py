"""Corpus-level BLEU-4: clipped n-gram precision, brevity penalty.

Case-sensitive, no smoothing; if any order's modified precision is zero
the corpus score is 0.0. Inputs are token lists (strings are split on
whitespace first). One reference per hypothesis.
"""
from __future__ import annotations

import math
from collections import Counter

from .errors import DataError


def _tokens(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def _ngrams(tokens: list[str], n: int):
    return zip(*(tokens[i:] for i in range(n)))


def bleu_components(hypotheses, references, max_n: int = 4):
    """Per-order (matched, total) counts plus hypothesis/reference lengths."""
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise DataError("empty corpus")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = _tokens(hyp)
        r = _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            h_counts = Counter(_ngrams(h, n))
            if not h_counts:
                continue
            r_counts = Counter(_ngrams(r, n))
            total[n - 1] += sum(h_counts.values())
            matched[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())
    return matched, total, hyp_len, ref_len


def bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus BLEU as a percentage in [0, 100]."""
    matched, total, hyp_len, ref_len = bleu_components(hypotheses, references, max_n)
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for m, t in zip(matched, total):
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / max_n)
