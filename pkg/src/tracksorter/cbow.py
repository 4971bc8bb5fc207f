"""Continuous bag-of-words embeddings trained with negative sampling."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"CBOW"
VERSION = 1


@dataclass(frozen=True)
class CbowConfig:
    dim: int = 64
    window: int = 20
    epochs: int = 100
    negatives: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.epochs < 0:
            raise ValueError("CbowConfig: dim, window, negatives must be >= 1 and epochs >= 0")


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    context_vectors: np.ndarray | None = None
    skipped_sentences: int = 0

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    def save(self, path) -> None:
        v = np.ascontiguousarray(self.vectors, dtype="<f4")
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<III", VERSION, *v.shape))
            fh.write(v.tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ValueError(f"{path}: not a CBOW embedding file")
        version, n, d = struct.unpack_from("<III", raw, 4)
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        body = raw[16:]
        if len(body) != 4 * n * d:
            raise ValueError(f"{path}: truncated embedding file")
        return cls(np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float32))


def cosine(e: EmbeddingMatrix, a: int, b: int) -> float:
    va, vb = e.vectors[a].astype(np.float64), e.vectors[b].astype(np.float64)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ValueError("cosine: zero vector")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def cbow_loss_and_grads(w_in, w_out, context, target, negatives):
    """Loss and gradients for one (context, target, negatives) example.

    Returns ``(loss, grad_h, grad_out_rows)`` where ``grad_h`` is the
    gradient w.r.t. the mean context vector and ``grad_out_rows`` lines up
    with ``[target, *negatives]``.
    """
    h = w_in[context].mean(axis=0)
    rows = np.concatenate([[target], negatives])
    labels = np.zeros(len(rows), dtype=w_in.dtype)
    labels[0] = 1
    scores = w_out[rows] @ h
    signs = 2 * labels - 1
    loss = -_log_sigmoid(signs * scores).sum()
    coef = _sigmoid(scores) - labels  # d loss / d score
    grad_h = coef @ w_out[rows]
    grad_out = coef[:, None] * h[None, :]
    return float(loss), grad_h, grad_out


def cbow_dense_grads(w_in, w_out, context, target, negatives):
    """Full-matrix gradients of :func:`cbow_loss_and_grads` (for checking)."""
    loss, grad_h, grad_out_rows = cbow_loss_and_grads(w_in, w_out, context, target, negatives)
    g_in = np.zeros_like(w_in)
    np.add.at(g_in, np.asarray(context), np.broadcast_to(grad_h / len(context), (len(context), w_in.shape[1])))
    g_out = np.zeros_like(w_out)
    np.add.at(g_out, np.concatenate([[target], negatives]), grad_out_rows)
    return loss, g_in, g_out


def noise_distribution(corpus: Sequence[Sequence[int]], vocab_size: int) -> np.ndarray:
    counts = np.zeros(vocab_size, dtype=np.float64)
    for s in corpus:
        np.add.at(counts, np.asarray(s, dtype=np.int64), 1)
    p = counts**0.75
    total = p.sum()
    return p / total if total > 0 else np.full(vocab_size, 1.0 / vocab_size)


def train_cbow(corpus: Sequence[Sequence[int]], vocab_size: int, cfg: CbowConfig = CbowConfig(),
               history: list | None = None) -> EmbeddingMatrix:
    """Train CBOW vectors; each sentence is one SGD step over all its positions.

    ``history``, when given, receives the mean per-example loss of each epoch.
    """
    if not corpus:
        raise ValueError("train_cbow: empty corpus")
    rng = np.random.default_rng(cfg.seed)
    w_in = ((rng.random((vocab_size, cfg.dim)) - 0.5) / cfg.dim).astype(np.float64)
    w_out = np.zeros((vocab_size, cfg.dim), dtype=np.float64)

    sentences = []
    skipped = 0
    for s in corpus:
        s = np.asarray(s, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= vocab_size):
            raise ValueError("train_cbow: token outside vocabulary")
        if s.size == 0:
            skipped += 1
        elif s.size > 1:
            sentences.append(s)
    if skipped:
        log.warning("train_cbow: skipped %d empty sentences", skipped)
    if not sentences:
        return EmbeddingMatrix(w_in.astype(np.float32), w_out.astype(np.float32), skipped)

    cum = np.cumsum(noise_distribution(corpus, vocab_size))
    cum[-1] = 1.0
    plans = [_context_plan(len(s), cfg.window) for s in sentences]
    total_positions = sum(len(s) for s in sentences) * max(cfg.epochs, 1)
    done = 0
    for epoch in range(cfg.epochs):
        epoch_loss, epoch_n = 0.0, 0
        for si in rng.permutation(len(sentences)):
            s = sentences[si]
            ctx_mat, ctx_counts = plans[si]
            lr = cfg.learning_rate * max(1e-4, 1.0 - done / total_positions)
            done += len(s)
            negs = np.searchsorted(cum, rng.random((len(s), cfg.negatives)), side="right")
            ctx_tokens = s[ctx_mat]  # [n, 2w]; -1 padding gets zero weight
            weights = (ctx_mat >= 0) / ctx_counts[:, None]
            h = np.einsum("nc,ncd->nd", weights, w_in[ctx_tokens])
            rows = np.concatenate([s[:, None], negs], axis=1)  # [n, 1+k]
            scores = np.einsum("nd,nkd->nk", h, w_out[rows])
            labels = np.zeros_like(scores)
            labels[:, 0] = 1
            epoch_loss += float(-_log_sigmoid((2 * labels - 1) * scores).sum())
            epoch_n += len(s)
            coef = _sigmoid(scores) - labels
            grad_h = np.einsum("nk,nkd->nd", coef, w_out[rows])
            grad_out = coef[:, :, None] * h[:, None, :]
            np.add.at(w_out, rows.reshape(-1), -lr * grad_out.reshape(-1, cfg.dim))
            grad_in = weights[:, :, None] * grad_h[:, None, :]
            np.add.at(w_in, ctx_tokens.reshape(-1), -lr * grad_in.reshape(-1, cfg.dim))
        if history is not None:
            history.append(epoch_loss / max(epoch_n, 1))
        log.debug("cbow epoch %d loss %.5f", epoch, epoch_loss / max(epoch_n, 1))
    return EmbeddingMatrix(w_in.astype(np.float32), w_out.astype(np.float32), skipped)


def _context_plan(n: int, window: int):
    """Context positions per target position, right-padded with -1, and their counts."""
    width = 2 * min(window, n - 1)
    mat = np.full((n, width), -1, dtype=np.int64)
    for t in range(n):
        ctx = [j for j in range(max(0, t - window), min(n, t + window + 1)) if j != t]
        mat[t, : len(ctx)] = ctx
    counts = (mat >= 0).sum(axis=1).astype(np.float64)
    return mat, counts
