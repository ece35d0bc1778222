"""Byte-pair encoding with a tunable merge-operation count.

Learning starts from characters (the word-final character carries a
``</w>`` marker) and greedily merges the most frequent adjacent symbol
pair; ties break lexicographically on the pair so tables are fully
reproducible. Application replays rules lowest-rank-first until no
learned pair remains, which reproduces the learn-time segmentation.

Vocabulary accounting: vocab = specials + sorted alphabet + distinct
merged symbols in rule order. Two rules can emit the same string; such a
rule occupies a merge slot but adds no vocabulary entry.

A deliberately simple tokenizer (whitespace split, punctuation separated
from word characters) stands in for heavyweight tokenizer scripts; it is
the only text segmentation this package performs before BPE.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

WORD_END = "</w>"
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

TABLE_HEADER = "#version: mdn-bpe-1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def simple_tokenize(text: str) -> list[str]:
    """Split on whitespace, then separate punctuation from word characters."""
    return _TOKEN_RE.findall(text)


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def word_frequencies(sentences: list[str]) -> dict[str, int]:
    freqs: Counter[str] = Counter()
    for line in sentences:
        freqs.update(simple_tokenize(line))
    return dict(freqs)


def _word_symbols(word: str) -> list[str]:
    return list(word[:-1]) + [word[-1] + WORD_END]


def _merge_symbols(syms: list[str], pair: tuple[str, str], merged: str) -> list[str]:
    # left-to-right, non-overlapping
    out = []
    i = 0
    n = len(syms)
    left, right = pair
    while i < n:
        if i + 1 < n and syms[i] == left and syms[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


@dataclass
class MergeTable:
    """Ordered merge rules plus the derived vocabulary."""

    merges: list[tuple[str, str]]
    alphabet: set[str]
    specials: tuple[str, ...] = SPECIALS
    num_merges: int = 0  # requested count; len(merges) is what was learnable

    _vocab: list[str] = field(default=None, repr=False, compare=False)
    _ranks: dict = field(default=None, repr=False, compare=False)
    _token_to_id: dict = field(default=None, repr=False, compare=False)
    _cache: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        vocab = list(self.specials) + sorted(self.alphabet)
        known = set(vocab)
        for left, right in self.merges:
            sym = left + right
            if sym not in known:
                known.add(sym)
                vocab.append(sym)
        self._vocab = vocab
        self._ranks = {}
        for i, pair in enumerate(self.merges):
            self._ranks.setdefault(pair, i)
        self._token_to_id = {tok: i for i, tok in enumerate(vocab)}
        self._cache = {}

    @property
    def vocab(self) -> list[str]:
        return self._vocab

    @property
    def vocab_size(self) -> int:
        return len(self._vocab)

    def token_id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def truncated(self, num_merges: int) -> "MergeTable":
        """Table using only the first ``num_merges`` rules (same alphabet)."""
        return MergeTable(self.merges[:num_merges], set(self.alphabet),
                          self.specials, num_merges)

    def segment(self, word: str) -> list[str]:
        """Split one word into subword units (last unit carries the marker)."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        syms = _word_symbols(word)
        ranks = self._ranks
        while len(syms) > 1:
            best_rank = None
            best_pair = None
            for i in range(len(syms) - 1):
                r = ranks.get((syms[i], syms[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank = r
                    best_pair = (syms[i], syms[i + 1])
            if best_pair is None:
                break
            syms = _merge_symbols(syms, best_pair, best_pair[0] + best_pair[1])
        self._cache[word] = syms
        return syms


def learn_bpe(word_freqs: dict[str, int], num_merges: int) -> MergeTable:
    """Learn ``num_merges`` pair-merge rules from a word-frequency map.

    Stops early once no pair occurs at least twice (weighted by word
    frequency). Equal counts break by lexicographic order on the pair.
    """
    if not word_freqs:
        raise DataError("cannot learn BPE from an empty corpus")
    if num_merges < 0:
        raise DataError("num_merges must be >= 0")

    words = [_word_symbols(w) for w in sorted(word_freqs)]
    freqs = [word_freqs[w] for w in sorted(word_freqs)]
    alphabet = {s for w in words for s in w}

    pair_counts: Counter[tuple[str, str]] = Counter()
    pair_words: dict[tuple[str, str], set[int]] = {}
    for idx, (syms, f) in enumerate(zip(words, freqs)):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += f
            pair_words.setdefault(pair, set()).add(idx)

    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        best_pair = None
        best_count = 1  # pairs must occur >= 2 times
        for pair, count in pair_counts.items():
            if count > best_count or (count == best_count and
                                      (best_pair is None or pair < best_pair)):
                if count >= 2:
                    best_pair = pair
                    best_count = count
        if best_pair is None:
            break
        merged = best_pair[0] + best_pair[1]
        merges.append(best_pair)
        for idx in sorted(pair_words.get(best_pair, ())):
            syms = words[idx]
            old = Counter(zip(syms, syms[1:]))
            if best_pair not in old:
                continue  # stale index entry
            new_syms = _merge_symbols(syms, best_pair, merged)
            new = Counter(zip(new_syms, new_syms[1:]))
            f = freqs[idx]
            for pair, c in (old - new).items():
                pair_counts[pair] -= c * f
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            for pair, c in (new - old).items():
                pair_counts[pair] += c * f
                pair_words.setdefault(pair, set()).add(idx)
            words[idx] = new_syms

    return MergeTable(merges, alphabet, SPECIALS, num_merges)


def apply_bpe(word: str, table: MergeTable) -> list[str]:
    """Segment one word; joining the units (marker removed) restores it."""
    return table.segment(word)


@dataclass
class TokenSequence:
    ids: list[int]
    tokens: list[str] | None = None


def segment_sentence(sentence: str, table: MergeTable) -> list[str]:
    units: list[str] = []
    for word in simple_tokenize(sentence):
        units.extend(table.segment(word))
    return units


def encode_corpus(sentences: list[str], table: MergeTable,
                  max_units: int = 250) -> tuple[list[TokenSequence], int]:
    """Encode sentences to id sequences, dropping any longer than ``max_units``."""
    out: list[TokenSequence] = []
    dropped = 0
    to_id = table._token_to_id
    for line in sentences:
        units = segment_sentence(line, table)
        if len(units) > max_units:
            dropped += 1
            continue
        out.append(TokenSequence([to_id.get(u, UNK_ID) for u in units], units))
    return out, dropped


def decode_units(units: list[str]) -> str:
    """Subword units back to space-joined words (inverse of segmentation)."""
    text = "".join(units)
    words = text.split(WORD_END)
    if words and words[-1] == "":
        words.pop()
    return " ".join(words)


@dataclass
class MergeSweepRow:
    num_merges: int
    vocab_size: int
    mean_units_per_sentence: float


def sweep_merge_ops(sentences: list[str], merge_counts: list[int]) -> list[MergeSweepRow]:
    """Sentence length vs vocabulary size across merge-operation budgets.

    One table is learned at the largest budget and truncated for the
    smaller ones (greedy learning is prefix-consistent), which makes the
    monotonicity of both columns exact rather than statistical.
    """
    if not sentences:
        raise DataError("cannot sweep an empty corpus")
    freqs = word_frequencies(sentences)
    full = learn_bpe(freqs, max(merge_counts))
    rows = []
    for c in merge_counts:
        table = full.truncated(c)
        total = sum(len(segment_sentence(s, table)) for s in sentences)
        rows.append(MergeSweepRow(c, table.vocab_size, total / len(sentences)))
    return rows


# ---------------------------------------------------------------------------
# persistence


def save_table(table: MergeTable, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TABLE_HEADER + "\n")
        for left, right in table.merges:
            fh.write(f"{left} {right}\n")


def save_vocab(table: MergeTable, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for i, tok in enumerate(table.vocab):
            fh.write(f"{tok}\t{i}\n")


def load_table(table_path: str, vocab_path: str | None = None) -> MergeTable:
    with open(table_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != TABLE_HEADER:
        raise DataError(f"{table_path}: missing '{TABLE_HEADER}' header")
    merges = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise DataError(f"{table_path}:{ln}: expected 'left right'")
        merges.append((parts[0], parts[1]))
    if vocab_path is None:
        # alphabet unknown; derive the minimal one implied by the rules
        alphabet = set()
        outputs = {l + r for l, r in merges}
        for l, r in merges:
            for side in (l, r):
                if side not in outputs:
                    alphabet.add(side)
        return MergeTable(merges, alphabet, SPECIALS, len(merges))
    vocab = _read_vocab(vocab_path)
    distinct_outputs = []
    seen = set()
    for l, r in merges:
        sym = l + r
        if sym not in seen:
            seen.add(sym)
            distinct_outputs.append(sym)
    n_alpha = len(vocab) - len(SPECIALS) - len(distinct_outputs)
    if n_alpha < 0 or vocab[:len(SPECIALS)] != list(SPECIALS):
        raise DataError(f"{vocab_path}: vocabulary does not match the merge table")
    alphabet = set(vocab[len(SPECIALS):len(SPECIALS) + n_alpha])
    return MergeTable(merges, alphabet, SPECIALS, len(merges))


def _read_vocab(path: str) -> list[str]:
    vocab = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh.read().splitlines(), start=1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{ln}: expected 'token<TAB>id'")
            tok, idx = parts
            if int(idx) != len(vocab):
                raise DataError(f"{path}:{ln}: ids must be dense and ordered")
            vocab.append(tok)
    return vocab
