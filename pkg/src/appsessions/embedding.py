"""word2vec-style CBOW app embeddings with negative sampling."""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .seeding import rng_for


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    apps: tuple[str, ...]
    counts: tuple[int, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {a: i for i, a in enumerate(self.apps)})

    def __len__(self):
        return len(self.apps)

    def __contains__(self, app):
        return app in self.index

    def count(self, app: str) -> int:
        return self.counts[self.index[app]]


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 50
    window: int = 3
    epochs: int = 15
    negatives: int = 5
    lr_start: float = 0.025
    lr_end: float = 0.0001
    min_count: int = 1
    seed: int = 0

    def validate(self) -> None:
        for name in ("dim", "window", "epochs"):
            if getattr(self, name) <= 0:
                raise EmbeddingError(f"{name} must be positive, got {getattr(self, name)}")
        if self.negatives < 0:
            raise EmbeddingError("negatives must be >= 0")
        if self.min_count < 1:
            raise EmbeddingError("min_count must be >= 1")
        if not self.lr_start > 0 or self.lr_end < 0:
            raise EmbeddingError("learning rates must satisfy lr_start > 0, lr_end >= 0")


@dataclass(frozen=True)
class EmbeddingModel:
    vocab: Vocab
    vectors: np.ndarray  # float32, |V| x dim
    config: EmbeddingConfig
    epoch_losses: tuple[float, ...] = field(default=(), compare=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


UNKNOWN = None


def build_vocab(corpora: Sequence[Sequence[str]], min_count: int = 1) -> Vocab:
    """Vocabulary in first-seen order, keeping apps seen at least ``min_count`` times."""
    if min_count < 1:
        raise EmbeddingError("min_count must be >= 1")
    counts: Counter = Counter()
    for sentence in corpora:
        counts.update(sentence)
    kept = [app for app in counts if counts[app] >= min_count]  # Counter keeps insertion order
    if not kept:
        raise EmbeddingError("empty vocabulary")
    return Vocab(tuple(kept), tuple(counts[a] for a in kept))


def lookup(model: EmbeddingModel, app_id: str):
    """Row for ``app_id``, or ``UNKNOWN`` (None) when out of vocabulary."""
    i = model.vocab.index.get(app_id)
    return UNKNOWN if i is None else model.vectors[i]


@numba.njit(cache=True)
def _log_sigmoid(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@numba.njit(cache=True)
def _cbow_epoch(tokens, bounds, syn0, syn1, negs, window, lr_start, lr_end,
                step0, total_steps):
    dim = syn0.shape[1]
    neu1 = np.zeros(dim)
    neu1e = np.zeros(dim)
    n_neg = negs.shape[1]
    loss = 0.0
    n_updates = 0
    step = step0
    for s in range(bounds.shape[0] - 1):
        lo = bounds[s]
        hi = bounds[s + 1]
        for pos in range(lo, hi):
            lr = lr_start - (lr_start - lr_end) * (step / total_steps)
            step += 1
            a = max(lo, pos - window)
            b = min(hi, pos + window + 1)
            cw = 0
            for k in range(dim):
                neu1[k] = 0.0
                neu1e[k] = 0.0
            for c in range(a, b):
                if c != pos:
                    t = tokens[c]
                    for k in range(dim):
                        neu1[k] += syn0[t, k]
                    cw += 1
            if cw == 0:
                continue
            for k in range(dim):
                neu1[k] /= cw
            center = tokens[pos]
            for d in range(n_neg + 1):
                if d == 0:
                    target = center
                    label = 1.0
                else:
                    target = negs[pos, d - 1]
                    if target == center:
                        continue
                    label = 0.0
                f = 0.0
                for k in range(dim):
                    f += neu1[k] * syn1[target, k]
                if label == 1.0:
                    loss -= _log_sigmoid(f)
                else:
                    loss -= _log_sigmoid(-f)
                if f >= 0:
                    sig = 1.0 / (1.0 + np.exp(-f))
                else:
                    ef = np.exp(f)
                    sig = ef / (1.0 + ef)
                g = (label - sig) * lr
                for k in range(dim):
                    neu1e[k] += g * syn1[target, k]
                    syn1[target, k] += g * neu1[k]
            for c in range(a, b):
                if c != pos:
                    t = tokens[c]
                    for k in range(dim):
                        syn0[t, k] += neu1e[k]
            n_updates += 1
    return loss, n_updates


def _encode(corpora, vocab):
    ids = []
    bounds = [0]
    for sentence in corpora:
        ids.extend(vocab.index[a] for a in sentence if a in vocab.index)
        bounds.append(len(ids))
    return np.asarray(ids, dtype=np.int64), np.asarray(bounds, dtype=np.int64)


def negative_table(vocab: Vocab, power: float = 0.75) -> np.ndarray:
    """Cumulative unigram^power distribution used to draw negatives."""
    p = np.asarray(vocab.counts, dtype=np.float64) ** power
    cdf = np.cumsum(p / p.sum())
    cdf[-1] = 1.0
    return cdf


def train_cbow(corpora: Sequence[Sequence[str]], config: EmbeddingConfig = EmbeddingConfig(),
               vocab: Vocab | None = None) -> EmbeddingModel:
    """Train CBOW embeddings with negative sampling.

    Each in-vocabulary token is predicted from the mean of the input vectors
    of up to ``window`` tokens on each side within its sentence. Tokens not
    in the vocabulary are removed before windowing. The learning rate decays
    linearly from ``lr_start`` to ``lr_end`` over ``epochs * n_tokens``
    updates, and updates are applied sequentially, so the result is a pure
    function of the corpora and the config (including its seed).

    Training runs in float64; the stored vectors are float32 so that a
    save/load round trip is lossless.
    """
    config.validate()
    if vocab is None:
        vocab = build_vocab(corpora, config.min_count)
    tokens, bounds = _encode(corpora, vocab)
    V, D = len(vocab), config.dim
    rng = rng_for(config.seed, "cbow")
    syn0 = (rng.random((V, D)) - 0.5) / D
    syn1 = np.zeros((V, D))
    cdf = negative_table(vocab)
    total = max(1, config.epochs * len(tokens))
    losses = []
    for epoch in range(config.epochs):
        negs = np.searchsorted(cdf, rng.random((len(tokens), config.negatives)), side="right")
        negs = np.minimum(negs, V - 1).astype(np.int64)
        loss, n = _cbow_epoch(tokens, bounds, syn0, syn1, negs, config.window,
                              config.lr_start, config.lr_end, epoch * len(tokens), total)
        losses.append(loss / n if n else 0.0)
    vectors = syn0.astype(np.float32)
    if not np.all(np.isfinite(vectors)):
        raise EmbeddingError("training diverged (non-finite vectors)")
    return EmbeddingModel(vocab, vectors, config, tuple(losses))


def permute_embeddings(model: EmbeddingModel, seed: int) -> EmbeddingModel:
    """Shuffle which app owns which row; the vocabulary order is unchanged."""
    perm = rng_for(seed, "permute").permutation(len(model.vocab))
    return EmbeddingModel(model.vocab, model.vectors[perm].copy(), model.config,
                          model.epoch_losses)


# -- persistence: 8-byte little-endian header length, JSON header, raw matrix --

def write_matrix_file(path, header: dict, matrix: np.ndarray, dtype: str) -> None:
    arr = np.ascontiguousarray(matrix, dtype=np.dtype(dtype).newbyteorder("<"))
    header = dict(header, dtype=dtype, shape=list(arr.shape))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes(order="C"))


def read_matrix_file(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise EmbeddingError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", data[:8])
    header = json.loads(data[8:8 + n].decode("utf-8"))
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    shape = tuple(header["shape"])
    body = data[8 + n:]
    if len(body) != int(np.prod(shape)) * dtype.itemsize:
        raise EmbeddingError(f"{path}: matrix body does not match shape {shape}")
    matrix = np.frombuffer(body, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return header, matrix


def save_embedding(model: EmbeddingModel, path) -> None:
    header = {"kind": "embedding", "config": asdict(model.config),
              "apps": list(model.vocab.apps), "counts": list(model.vocab.counts)}
    write_matrix_file(path, header, model.vectors, "float32")


def load_embedding(path) -> EmbeddingModel:
    header, matrix = read_matrix_file(path)
    if header.get("kind") != "embedding":
        raise EmbeddingError(f"{path}: not an embedding file")
    vocab = Vocab(tuple(header["apps"]), tuple(header["counts"]))
    config = EmbeddingConfig(**header["config"])
    if matrix.shape != (len(vocab), config.dim):
        raise EmbeddingError(
            f"{path}: matrix shape {matrix.shape} does not match vocab {len(vocab)} x dim {config.dim}")
    return EmbeddingModel(vocab, matrix, config)
