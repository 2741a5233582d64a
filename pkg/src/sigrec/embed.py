"""CBOW negative-sampling embeddings for instruction words."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .tokenize import PAD, PAD_ID, Vocabulary

log = logging.getLogger(__name__)

MAX_RESAMPLE = 8
_CHUNK = 1 << 15


@dataclass
class CbowConfig:
    dim: int = 128
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_lr_frac: float = 1e-4
    seed: int = 0
    subsample_threshold: float | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.dim < 1 or self.epochs < 0:
            raise ValueError("dim must be >= 1 and epochs >= 0")


@dataclass
class EmbeddingMatrix:
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def __len__(self):
        return self.input_vectors.shape[0]


def negative_sampling_distribution(counts):
    """Unigram^0.75 table. PAD (id 0 / the PAD token) never gets sampled.

    Accepts an id-indexed count array or a token -> count mapping and
    returns the same kind of object.
    """
    if isinstance(counts, Mapping):
        keys = list(counts)
        if not keys:
            raise ValueError("empty counts")
        w = np.array([0.0 if k == PAD else float(counts[k]) for k in keys]) ** 0.75
        total = w.sum()
        if total <= 0:
            raise ValueError("all counts are zero")
        return {k: p for k, p in zip(keys, w / total)}
    w = np.asarray(counts, dtype=np.float64).copy()
    if w.size == 0:
        raise ValueError("empty counts")
    w[PAD_ID] = 0.0
    w = np.maximum(w, 0.0) ** 0.75
    total = w.sum()
    if total <= 0:
        raise ValueError("all counts are zero")
    return w / total


# ---------------------------------------------------------------------------
# single update (reference path, exact gradients)

def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def cbow_loss(center: int, context, negatives, w_in, w_out) -> float:
    context = np.asarray(context, dtype=np.int64)
    if context.size == 0:
        raise ValueError("empty context")
    h = w_in[context].mean(axis=0)
    loss = -_log_sigmoid(w_out[center] @ h)
    for n in negatives:
        loss -= _log_sigmoid(-(w_out[n] @ h))
    return float(loss)


def cbow_gradients(center: int, context, negatives, w_in, w_out):
    """Loss and dense gradients (d w_in, d w_out) for one CBOW example."""
    context = np.asarray(context, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    if context.size == 0:
        raise ValueError("empty context")
    if np.any(negatives == center):
        raise ValueError("center token among its own negatives; resample first")
    h = w_in[context].mean(axis=0)
    targets = np.concatenate([[center], negatives]).astype(np.int64)
    labels = np.zeros(len(targets))
    labels[0] = 1.0
    scores = w_out[targets] @ h
    sig = 1.0 / (1.0 + np.exp(-scores))
    loss = float(-_log_sigmoid(scores[0]) - _log_sigmoid(-scores[1:]).sum())
    g = sig - labels
    d_out = np.zeros_like(w_out)
    np.add.at(d_out, targets, np.outer(g, h).astype(w_out.dtype))
    d_h = g @ w_out[targets]
    d_in = np.zeros_like(w_in)
    np.add.at(d_in, context, np.broadcast_to(d_h / len(context), (len(context), len(d_h))).astype(w_in.dtype))
    return loss, d_in, d_out


def cbow_step(center: int, context, negatives, w_in, w_out, lr: float):
    """One SGD step on the rows this example touches. Updates in place.

    Returns the loss measured before the update.
    """
    loss, d_in, d_out = cbow_gradients(center, context, negatives, w_in, w_out)
    w_in -= lr * d_in
    w_out -= lr * d_out
    return loss


# ---------------------------------------------------------------------------
# training

def _flatten(corpus: Sequence[Sequence[int]]):
    lens = np.array([len(s) for s in corpus], dtype=np.int64)
    tokens = np.concatenate([np.asarray(s, dtype=np.int64) for s in corpus]) if len(corpus) else np.zeros(0, np.int64)
    ends = np.cumsum(lens)
    starts = ends - lens
    lo = np.repeat(starts, lens)
    hi = np.repeat(ends, lens)
    return tokens, lo, hi


def _subsample(corpus, counts, threshold, rng):
    freq = counts / max(counts.sum(), 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        keep_p = np.where(freq > 0, (np.sqrt(freq / threshold) + 1) * threshold / freq, 1.0)
    out = []
    for sent in corpus:
        sent = np.asarray(sent, dtype=np.int64)
        keep = rng.random(len(sent)) < keep_p[sent]
        out.append(sent[keep])
    return out


def train_cbow(corpus: Sequence[Sequence[int]], vocab: Vocabulary, config: CbowConfig | None = None,
               dtype=np.float32) -> EmbeddingMatrix:
    """Train CBOW embeddings over per-function id sequences.

    Windows never cross sequence boundaries. Deterministic for a given seed
    and backend.
    """
    config = config or CbowConfig()
    total_tokens = sum(len(s) for s in corpus)
    if total_tokens < 2:
        raise ValueError("corpus needs at least two tokens")
    rng = np.random.default_rng(config.seed)
    V, d = len(vocab), config.dim
    w_in = ((rng.random((V, d)) - 0.5) / d).astype(dtype)
    w_out = np.zeros((V, d), dtype=dtype)

    cdf = np.cumsum(negative_sampling_distribution(vocab.counts))
    cdf /= cdf[-1]
    total_steps = max(config.epochs * total_tokens, 1)
    step = 0
    history = []
    for epoch in range(config.epochs):
        sents = corpus
        if config.subsample_threshold:
            sents = _subsample(corpus, vocab.counts.astype(np.float64), config.subsample_threshold, rng)
        tokens, lo, hi = _flatten(sents)
        loss_sum, n_upd = 0.0, 0
        for start in range(0, len(tokens), _CHUNK):
            positions = np.arange(start, min(start + _CHUNK, len(tokens)), dtype=np.int64)
            draws = rng.random((len(positions), config.negatives, 1 + MAX_RESAMPLE))
            cands = np.minimum(np.searchsorted(cdf, draws, side="right"), V - 1).astype(np.int64)
            loss, n = _kernels.cbow_sweep(
                w_in, w_out, tokens, lo, hi, positions, cands, config.window,
                config.learning_rate, step, total_steps, config.min_lr_frac,
            )
            step += len(positions)
            loss_sum += loss
            n_upd += n
        history.append(loss_sum / max(n_upd, 1))
        log.info("cbow epoch %d: mean loss %.5f", epoch + 1, history[-1])
    return EmbeddingMatrix(w_in, w_out, history)


# ---------------------------------------------------------------------------
# queries

def lookup(vocab: Vocabulary, matrix: EmbeddingMatrix, token: str) -> np.ndarray:
    return matrix.input_vectors[vocab.id(token)]


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# files

def _write_matrix(path, tokens, mat):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for tok, row in zip(tokens, mat.tolist()):
            fh.write(tok + " " + " ".join(repr(v) for v in row) + "\n")


def _read_matrix(path, dtype):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: expected '|V| d' header")
        n, d = int(header[0]), int(header[1])
        tokens = []
        mat = np.empty((n, d), dtype=dtype)
        for i in range(n):
            parts = fh.readline().split(" ")
            if len(parts) != d + 1:
                raise ValueError(f"{path}: row {i + 1} has {len(parts) - 1} values, expected {d}")
            tokens.append(parts[0])
            mat[i] = np.array([float(v) for v in parts[1:]], dtype=np.float64)
    return tokens, mat


def save_embeddings(matrix: EmbeddingMatrix, vocab: Vocabulary, path: str | Path) -> None:
    """Write input vectors to ``path`` and context vectors to ``path + '.ctx'``."""
    if len(vocab) != len(matrix):
        raise ValueError("vocabulary and matrix sizes differ")
    _write_matrix(path, vocab.itos, matrix.input_vectors)
    _write_matrix(str(path) + ".ctx", vocab.itos, matrix.output_vectors)


def load_embeddings(path: str | Path, vocab: Vocabulary | None = None, dtype=np.float32) -> EmbeddingMatrix:
    tokens, w_in = _read_matrix(path, dtype)
    if vocab is not None and tokens != vocab.itos:
        raise ValueError(f"{path}: token order does not match the vocabulary")
    ctx = Path(str(path) + ".ctx")
    w_out = _read_matrix(ctx, dtype)[1] if ctx.exists() else np.zeros_like(w_in)
    return EmbeddingMatrix(w_in, w_out)
