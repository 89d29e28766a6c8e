"""Discrete design space: fixed-length token sequences over a small alphabet.

Sequences stand in for string-encoded molecules.  They serialize as the
token symbols joined without separators, so every token must be a single
character.  Position blocks of the flattened one-hot encoding are laid out
row-major: entry p*A + t is 1 when position p holds token t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

DEFAULT_TOKENS = "_ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class Alphabet:
    """Ordered distinct single-character tokens; index 0 is the PAD symbol."""

    tokens: tuple[str, ...]
    pad_index: int = 0

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("alphabet needs at least 2 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("alphabet tokens must be distinct")
        if any(len(t) != 1 for t in self.tokens):
            raise ValueError("alphabet tokens must be single characters")
        if not 0 <= self.pad_index < len(self.tokens):
            raise ValueError(f"pad_index {self.pad_index} out of range")

    @classmethod
    def default(cls, size: int = 12) -> "Alphabet":
        if not 2 <= size <= len(DEFAULT_TOKENS):
            raise ValueError(f"alphabet size must be in 2..{len(DEFAULT_TOKENS)}")
        return cls(tuple(DEFAULT_TOKENS[:size]))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def index_of(self, symbol: str) -> int:
        try:
            return self.tokens.index(symbol)
        except ValueError:
            raise ValueError(f"unknown token {symbol!r}") from None


@dataclass(frozen=True)
class Sequence:
    """A fixed-length tuple of token ids, all valid for `alphabet`."""

    token_ids: tuple[int, ...]
    alphabet: Alphabet

    def __post_init__(self):
        a = self.alphabet.size
        for t in self.token_ids:
            if not 0 <= t < a:
                raise ValueError(f"token id {t} out of range for alphabet of size {a}")

    def __len__(self) -> int:
        return len(self.token_ids)

    def to_string(self) -> str:
        return "".join(self.alphabet.tokens[t] for t in self.token_ids)

    @classmethod
    def from_string(cls, text: str, alphabet: Alphabet) -> "Sequence":
        return cls(tuple(alphabet.index_of(c) for c in text), alphabet)


def random_sequence(alphabet: Alphabet, length: int, rng: np.random.Generator) -> Sequence:
    ids = rng.integers(0, alphabet.size, size=length)
    return Sequence(tuple(int(t) for t in ids), alphabet)


def one_hot_array(x: Sequence) -> np.ndarray:
    """Flattened one-hot encoding, shape (L*A,)."""
    a = x.alphabet.size
    out = np.zeros(len(x) * a)
    for pos, tok in enumerate(x.token_ids):
        out[pos * a + tok] = 1.0
    return out


def encode_one_hot(x: Sequence) -> Tensor:
    return Tensor(one_hot_array(x))


def _logits_array(logits, alphabet: Alphabet) -> np.ndarray:
    arr = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    arr = arr.reshape(-1, alphabet.size)
    if np.isnan(arr).any():
        raise ValueError("decode: logits contain NaN")
    return arr


def decode_greedy(logits, alphabet: Alphabet) -> Sequence:
    """Argmax per position block."""
    arr = _logits_array(logits, alphabet)
    ids = arr.argmax(axis=1)
    return Sequence(tuple(int(t) for t in ids), alphabet)


def decode_sample(logits, alphabet: Alphabet, temperature: float,
                  rng: np.random.Generator) -> Sequence:
    """Sample per-position tokens from softmax(logits / temperature).

    Temperature 0 means argmax.  Given the same rng state the draw is
    reproducible.
    """
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        return decode_greedy(logits, alphabet)
    arr = _logits_array(logits, alphabet) / temperature
    arr -= arr.max(axis=1, keepdims=True)
    probs = np.exp(arr)
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.random(arr.shape[0])
    cumulative = probs.cumsum(axis=1)
    ids = (cumulative < u[:, None]).sum(axis=1)
    ids = np.minimum(ids, alphabet.size - 1)
    return Sequence(tuple(int(t) for t in ids), alphabet)


def bigram_set(x: Sequence) -> frozenset[tuple[int, int]]:
    ids = x.token_ids
    return frozenset(zip(ids[:-1], ids[1:]))


def fingerprint_similarity(a: Sequence, b: Sequence) -> float:
    """Jaccard similarity of the two sequences' token-bigram sets."""
    if a.alphabet != b.alphabet:
        raise ValueError("fingerprint_similarity: sequences use different alphabets")
    sa, sb = bigram_set(a), bigram_set(b)
    if not sa and not sb:
        return 1.0
    union = len(sa | sb)
    return len(sa & sb) / union


def mean_pairwise_similarity(seqs: list[Sequence]) -> float:
    """Average bigram-Jaccard over unordered distinct pairs; 0 for < 2 items."""
    n = len(seqs)
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += fingerprint_similarity(seqs[i], seqs[j])
    return total / (n * (n - 1) / 2)
