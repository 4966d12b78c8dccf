"""Contrastive losses, the momentum parameter update, and negative queues.

The noise-contrastive loss pulls each online row toward its momentum twin
and pushes it away from a bank of momentum-encoded negatives; all negative
inputs are plain arrays, so gradients flow through the online rows only.
Queues hold previously processed batches with their momentum embeddings
cached at push time; a batch becomes a positive batch when it is dequeued.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConstraintError, ContractError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.08
    beta: float = 0.9

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConstraintError("temperature tau must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConstraintError("beta must lie in [0, 1]")


def _rowwise_logsumexp(logits: Tensor) -> Tensor:
    """Stable per-row logsumexp; the max shift is treated as a constant."""
    shift = logits.data.max(axis=1, keepdims=True)
    shifted = ad.sub(logits, Tensor(shift))
    summed = ad.tsum(ad.exp(shifted), axis=1)
    return ad.add(ad.log(summed), Tensor(shift.reshape(-1)))


def nce_loss(v, v_prime: np.ndarray, negatives: np.ndarray, tau: float,
             in_batch_negatives: bool = False) -> Tensor:
    """Mean InfoNCE over the batch.

    ``v`` holds online rows (the only differentiable input); ``v_prime``
    the momentum rows of the same entities; ``negatives`` a bank of
    momentum rows. With ``in_batch_negatives`` the other rows of
    ``v_prime`` join the denominator, which is how training composes the
    advertised per-anchor negative count from a dequeued batch.
    """
    if tau <= 0.0:
        raise ConstraintError("temperature tau must be > 0")
    v = ad.as_tensor(v)
    v_prime = np.asarray(v_prime)
    negatives = np.asarray(negatives)
    if v.shape != v_prime.shape:
        raise ShapeError(f"v {v.shape} and v_prime {v_prime.shape} differ")
    if negatives.size == 0 and not in_batch_negatives:
        raise ShapeError("nce_loss requires at least one negative")
    b = v.shape[0]
    inv_tau = 1.0 / tau

    pos = ad.mul(ad.tsum(ad.mul(v, Tensor(v_prime)), axis=1), inv_tau)
    blocks = []
    if in_batch_negatives:
        # (b, b) similarities; the positive sits on the diagonal
        blocks.append(ad.mul(ad.matmul(v, Tensor(v_prime.T.copy())), inv_tau))
    else:
        blocks.append(ad.reshape(pos, (b, 1)))
    if negatives.size:
        blocks.append(ad.mul(ad.matmul(v, Tensor(negatives.T.copy())), inv_tau))
    logits = ad.concat(blocks, axis=1) if len(blocks) > 1 else blocks[0]
    return ad.mean(ad.sub(_rowwise_logsumexp(logits), pos))


def icl_loss(v, v_pseudo: np.ndarray, same_kg_negatives: np.ndarray,
             cross_kg_negatives: np.ndarray, tau: float, beta: float,
             mask: np.ndarray) -> Tensor:
    """Pseudo-pair loss: beta-weighted blend of two NCE terms sharing the
    pseudo-partner positive, one with same-graph negatives and one with
    cross-graph negatives. Rows without a pseudo partner are masked out;
    if every row is masked the loss is exactly zero.
    """
    if tau <= 0.0:
        raise ConstraintError("temperature tau must be > 0")
    if not 0.0 <= beta <= 1.0:
        raise ConstraintError("beta must lie in [0, 1]")
    v = ad.as_tensor(v)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (v.shape[0],):
        raise ShapeError(f"mask shape {mask.shape} does not match batch {v.shape[0]}")
    active = int(mask.sum())
    if active == 0:
        return Tensor(np.zeros((), dtype=v.dtype))

    v_pseudo = np.asarray(v_pseudo)
    if v.shape != v_pseudo.shape:
        raise ShapeError(f"v {v.shape} and v_pseudo {v_pseudo.shape} differ")
    inv_tau = 1.0 / tau
    pos = ad.mul(ad.tsum(ad.mul(v, Tensor(v_pseudo)), axis=1), inv_tau)

    def per_row(negatives: np.ndarray) -> Tensor:
        negatives = np.asarray(negatives)
        if negatives.size == 0:
            # no bank yet: the denominator holds only the positive term
            return ad.sub(pos, pos)
        sims = ad.mul(ad.matmul(v, Tensor(negatives.T.copy())), inv_tau)
        logits = ad.concat([ad.reshape(pos, (v.shape[0], 1)), sims], axis=1)
        return ad.sub(_rowwise_logsumexp(logits), pos)

    rows = ad.add(ad.mul(per_row(same_kg_negatives), beta),
                  ad.mul(per_row(cross_kg_negatives), 1.0 - beta))
    mask_vec = Tensor(mask.astype(v.dtype))
    return ad.mul(ad.tsum(ad.mul(rows, mask_vec)), 1.0 / active)


def total_loss(nce: Tensor | float, icl: Tensor | float) -> Tensor:
    return ad.add(ad.as_tensor(nce), ad.as_tensor(icl))


def momentum_update(online, momentum, m: float) -> None:
    """In-place exponential moving average: momentum <- m*momentum + (1-m)*online.

    Accepts the parameter containers or bare name->Tensor dicts; the online
    side is never modified.
    """
    if not 0.0 <= m < 1.0:
        raise ConstraintError("momentum m must lie in [0, 1)")
    online_t = online.tensors if hasattr(online, "tensors") else online
    momentum_t = momentum.tensors if hasattr(momentum, "tensors") else momentum
    if online_t.keys() != momentum_t.keys():
        raise ContractError("online and momentum parameter names differ")
    for name, src in online_t.items():
        dst = momentum_t[name]
        if dst.data.shape != src.data.shape:
            raise ContractError(
                f"shape mismatch for {name}: {dst.data.shape} vs {src.data.shape}"
            )
        dst.data *= m
        dst.data += (1.0 - m) * src.data


def validate_queue_constraint(batch_size: int, queue_length: int,
                              num_entities_1: int, num_entities_2: int) -> None:
    """Capacity rule: (L+1)*B must not exceed the smaller entity set."""
    need = (queue_length + 1) * batch_size
    available = min(num_entities_1, num_entities_2)
    if need > available:
        raise ConstraintError(
            f"(L+1)*B = {need} exceeds min(|E1|,|E2|) = {available}; "
            "shrink the batch size or the queue"
        )


@dataclass
class QueuedBatch:
    ids: np.ndarray
    embeddings: np.ndarray


class NegativeQueue:
    """FIFO of batches with cached momentum embeddings, capacity L+1.

    ``push`` appends at the tail; the head is dequeued and returned as the
    positive batch exactly when the queue reaches L+1 entries. Until then
    pushes return ``None``, which is the warm-up phase.
    """

    def __init__(self, queue_length: int, batch_size: int, kg_tag: str = ""):
        if queue_length < 1:
            raise ConstraintError("queue length L must be >= 1")
        self.capacity = queue_length + 1
        self.batch_size = batch_size
        self.kg_tag = kg_tag
        self._batches: deque[QueuedBatch] = deque()

    def __len__(self) -> int:
        return len(self._batches)

    def push(self, ids, embeddings: np.ndarray) -> QueuedBatch | None:
        ids = np.asarray(ids, dtype=np.int64)
        embeddings = np.asarray(embeddings)
        if ids.shape[0] != self.batch_size:
            raise ShapeError(
                f"queue {self.kg_tag!r} expects batches of {self.batch_size}, got {ids.shape[0]}"
            )
        if embeddings.shape[0] != ids.shape[0]:
            raise ShapeError("ids and cached embeddings disagree on batch size")
        self._batches.append(QueuedBatch(ids=ids, embeddings=embeddings))
        if len(self._batches) == self.capacity:
            return self._batches.popleft()
        return None

    def negatives(self) -> np.ndarray:
        """Concatenated cached embeddings of every batch currently held."""
        if not self._batches:
            return np.zeros((0, 0), dtype=np.float32)
        return np.concatenate([b.embeddings for b in self._batches], axis=0)
