"""
Deterministic toy language models.

N-gram models with strict longest-suffix backoff stand in for both the target
LLM and the on-device draft model. Decoding is greedy everywhere, ties broken
by the lowest token id, so the same inputs always yield the same tokens.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

EOS_TOKEN = '</s>'

Context = Tuple[int, ...]


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token alphabet; token ids are dense integers 0..V-1."""
    tokens: Tuple[str, ...]
    eos_id: int
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError(f"Vocabulary needs at least 2 tokens, got {len(self.tokens)}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("Vocabulary tokens must be distinct")
        if not 0 <= self.eos_id < len(self.tokens):
            raise ValueError(f"eos_id {self.eos_id} is not a valid token id")
        object.__setattr__(self, '_index', {tok: i for i, tok in enumerate(self.tokens)})

    @classmethod
    def from_words(cls, words: Sequence[str], eos_token: str = EOS_TOKEN) -> 'Vocabulary':
        """Build a vocabulary in first-appearance order, appending EOS if absent."""
        ordered = list(dict.fromkeys(words))
        if eos_token not in ordered:
            ordered.append(eos_token)
        return cls(tokens=tuple(ordered), eos_id=ordered.index(eos_token))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str]) -> List[int]:
        try:
            return [self._index[w] for w in words]
        except KeyError as e:
            raise ValueError(f"Token {e.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


class NGramModel:
    """Count-based n-gram model with add-constant smoothing and backoff.

    ``count_tables[j]`` maps a length-j context tuple to per-token counts.
    The length-0 table always holds the unigram counts of the corpus.
    Instances are immutable after construction; distributions are memoized.
    """

    def __init__(self, vocab_size: int, order: int, count_tables: List[Dict[Context, np.ndarray]],
                 smoothing: float = 0.0, eos_id: Optional[int] = None):
        if order < 0:
            raise ValueError(f"order must be >= 0, got {order}")
        if smoothing < 0:
            raise ValueError(f"smoothing must be >= 0, got {smoothing}")
        if len(count_tables) != order + 1 or () not in count_tables[0]:
            raise ValueError("count tables must cover context lengths 0..order with a unigram table")
        self.vocab_size = vocab_size
        self.order = order
        self.count_tables = count_tables
        self.smoothing = smoothing
        self.eos_id = eos_id
        self._cache: Dict[Context, np.ndarray] = {}

    def _key(self, context: Sequence[int]) -> Context:
        if self.order == 0:
            return ()
        return tuple(context[-self.order:])

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        """Probability vector over the vocabulary for the token after ``context``."""
        key = self._key(context)
        cached = self._cache.get(key)
        if cached is not None:
            return cached

        counts = None
        for j in range(len(key), -1, -1):
            counts = self.count_tables[j].get(key[len(key) - j:])
            if counts is not None:
                break

        smoothed = counts + self.smoothing
        dist = smoothed / smoothed.sum()
        dist.setflags(write=False)
        self._cache[key] = dist
        return dist

    def greedy_next(self, context: Sequence[int]) -> Tuple[int, float]:
        """Argmax token and its probability; np.argmax keeps the lowest id on ties."""
        dist = self.next_distribution(context)
        token = int(np.argmax(dist))
        return token, float(dist[token])

    def top_k(self, context: Sequence[int], k: int) -> List[Tuple[int, float]]:
        """The k most probable next tokens, ordered by (-probability, token id)."""
        dist = self.next_distribution(context)
        order = np.lexsort((np.arange(len(dist)), -dist))
        return [(int(t), float(dist[t])) for t in order[:k]]


def build_ngram_model(corpus: Sequence[int], order: int, smoothing: float = 0.0,
                      vocab_size: Optional[int] = None, eos_id: Optional[int] = None) -> NGramModel:
    """Count every length-j context window of the corpus for j = 0..order.

    Args:
        corpus: Token id sequence
        order: Longest context length k
        smoothing: Add-constant applied to every count of a seen context
        vocab_size: Vocabulary size (default: max token id + 1)
        eos_id: Token that terminates decoding, if any

    Returns:
        NGramModel over the corpus
    """
    if len(corpus) == 0:
        raise ValueError("Cannot build an n-gram model from an empty corpus")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if order >= len(corpus):
        raise ValueError(f"order {order} must be smaller than the corpus length {len(corpus)}")
    if smoothing < 0:
        raise ValueError(f"smoothing must be >= 0, got {smoothing}")

    size = vocab_size if vocab_size is not None else max(corpus) + 1
    if min(corpus) < 0 or max(corpus) >= size:
        raise ValueError(f"corpus token ids must lie in [0, {size})")

    tokens = list(corpus)
    tables: List[Dict[Context, np.ndarray]] = []
    for j in range(order + 1):
        table: Dict[Context, np.ndarray] = {}
        for i in range(j, len(tokens)):
            ctx = tuple(tokens[i - j:i])
            counts = table.get(ctx)
            if counts is None:
                counts = table[ctx] = np.zeros(size, dtype=np.float64)
            counts[tokens[i]] += 1.0
        tables.append(table)

    logger.debug(f"Built order-{order} model over {len(tokens)} tokens, "
                 f"{sum(len(t) for t in tables)} contexts")
    return NGramModel(size, order, tables, smoothing, eos_id)


def next_distribution(model: NGramModel, context: Sequence[int]) -> np.ndarray:
    return model.next_distribution(context)


def greedy_next(model: NGramModel, context: Sequence[int]) -> Tuple[int, float]:
    return model.greedy_next(context)


def greedy_decode(model: NGramModel, prompt: Sequence[int], max_new: int) -> List[int]:
    """Autoregressive greedy continuation; EOS is emitted and then stops decoding."""
    if max_new < 0:
        raise ValueError(f"max_new must be >= 0, got {max_new}")
    context = list(prompt)
    output: List[int] = []
    while len(output) < max_new:
        token, _ = model.greedy_next(context)
        output.append(token)
        context.append(token)
        if token == model.eos_id:
            break
    return output


def synthetic_corpus(vocab_size: int, n_tokens: int, seed: int) -> Tuple[Vocabulary, List[int]]:
    """Sample a corpus from a seeded sparse Markov source.

    Most states have one dominant successor (p=0.85); roughly a third are
    ambiguous between two successors. EOS appears with small probability and
    restarts the chain, so target and draft models trained on the corpus agree
    on confident states and disagree on ambiguous ones.
    """
    if vocab_size < 3:
        raise ValueError(f"synthetic vocab_size must be >= 3, got {vocab_size}")
    if n_tokens < 2:
        raise ValueError(f"n_tokens must be >= 2, got {n_tokens}")

    rng = np.random.default_rng(seed)
    n_words = vocab_size - 1
    vocab = Vocabulary(tokens=tuple(f"w{i}" for i in range(n_words)) + (EOS_TOKEN,), eos_id=n_words)

    eos_p = 0.002
    transitions = np.zeros((n_words, vocab_size))
    for state in range(n_words):
        succ = rng.permutation(n_words)[:3]
        if rng.random() < 0.3:
            transitions[state, succ[0]] = 0.5
            transitions[state, succ[1]] = 0.5
        else:
            transitions[state, succ[0]] = 0.85
            transitions[state, succ[1]] = 0.1
            transitions[state, succ[2]] = 0.05
        transitions[state] *= 1.0 - eos_p
        transitions[state, vocab.eos_id] = eos_p
    cdf = np.cumsum(transitions, axis=1)
    cdf[:, -1] = 1.0

    draws = rng.random(n_tokens)
    corpus: List[int] = []
    state = int(rng.integers(n_words))
    for u in draws:
        corpus.append(state)
        nxt = int(np.searchsorted(cdf[state], u, side='right'))
        state = int(rng.integers(n_words)) if nxt == vocab.eos_id else nxt
        if nxt == vocab.eos_id:
            corpus.append(vocab.eos_id)
    return vocab, corpus[:n_tokens]
