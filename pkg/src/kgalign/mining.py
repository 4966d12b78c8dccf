"""Pseudo-pair mining: thresholded top-1 cross-graph nearest neighbors.

Search is exact: blocked brute force over candidate chunks with float64
accumulation, parallelized over query chunks. Result assembly is ordered
by query id, so thread count never changes the output. The same pairwise
distance routine backs evaluation, keeping one definition of the metric.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

THREADS_ENV = "KGALIGN_THREADS"

_QUERY_BLOCK = 256
_CANDIDATE_BLOCK = 4096


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pairwise_sq_l2(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Exact squared L2 distances, float64, shape (len(queries), len(candidates))."""
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(candidates, dtype=np.float64)
    q2 = np.sum(q * q, axis=1)[:, None]
    c2 = np.sum(c * c, axis=1)[None, :]
    sq = q2 + c2 - 2.0 * (q @ c.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


@dataclass
class PseudoPairSet:
    """Top-1 matches below the distance threshold, keyed by source entity."""

    partners: dict[int, tuple[int, float]] = field(default_factory=dict)
    direction: str = ""
    epoch: int = 0

    def __len__(self) -> int:
        return len(self.partners)


def _nearest_block(queries: np.ndarray, candidates: np.ndarray):
    """Index and exact distance of the nearest candidate per query row.

    Ties go to the lowest candidate index. The winner's distance is
    recomputed by direct subtraction so it matches a naive scan bit for bit.
    """
    n = queries.shape[0]
    best_idx = np.zeros(n, dtype=np.int64)
    best_sq = np.full(n, np.inf)
    for start in range(0, candidates.shape[0], _CANDIDATE_BLOCK):
        chunk = candidates[start:start + _CANDIDATE_BLOCK]
        sq = pairwise_sq_l2(queries, chunk)
        idx = np.argmin(sq, axis=1)
        val = sq[np.arange(n), idx]
        better = val < best_sq
        best_sq[better] = val[better]
        best_idx[better] = idx[better] + start
    q64 = np.asarray(queries, dtype=np.float64)
    c64 = np.asarray(candidates, dtype=np.float64)[best_idx]
    diff = q64 - c64
    exact = np.sqrt(np.sum(diff * diff, axis=1))
    return best_idx, exact


def _search(queries: np.ndarray, candidates: np.ndarray):
    n = queries.shape[0]
    indices = np.zeros(n, dtype=np.int64)
    distances = np.zeros(n, dtype=np.float64)
    spans = [(s, min(s + _QUERY_BLOCK, n)) for s in range(0, n, _QUERY_BLOCK)]

    def work(span):
        s, e = span
        indices[s:e], distances[s:e] = _nearest_block(queries[s:e], candidates)

    workers = thread_count()
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, spans))
    else:
        for span in spans:
            work(span)
    return indices, distances


def mine(v1: np.ndarray, v2: np.ndarray, lam: float,
         epoch: int = 0) -> tuple[PseudoPairSet, PseudoPairSet]:
    """Both directions of thresholded top-1 search; a pair is kept only
    when its distance is strictly below ``lam``."""
    idx12, d12 = _search(v1, v2)
    idx21, d21 = _search(v2, v1)
    p12 = PseudoPairSet(direction="1->2", epoch=epoch)
    p21 = PseudoPairSet(direction="2->1", epoch=epoch)
    for src in np.flatnonzero(d12 < lam):
        p12.partners[int(src)] = (int(idx12[src]), float(d12[src]))
    for src in np.flatnonzero(d21 < lam):
        p21.partners[int(src)] = (int(idx21[src]), float(d21[src]))
    return p12, p21


class MergedPairs:
    """Bidirectional pseudo-partner lookup with a fixed precedence rule.

    An entity's own-direction match wins outright. An entity that has no
    own-direction match but is the target of exactly one reverse-direction
    match inherits that pair; with several competing reverse matches it
    stays unpaired.
    """

    def __init__(self, forward: dict[int, tuple[int, float]],
                 backward: dict[int, tuple[int, float]]):
        self._maps = {1: forward, 2: backward}

    def partner(self, kg: int, entity: int) -> tuple[int, float] | None:
        if kg not in (1, 2):
            raise ValueError("kg must be 1 or 2")
        return self._maps[kg].get(entity)

    def counts(self) -> tuple[int, int]:
        return len(self._maps[1]), len(self._maps[2])


def merge(p12: PseudoPairSet, p21: PseudoPairSet) -> MergedPairs:
    forward = dict(p12.partners)
    backward = dict(p21.partners)

    reverse_into_1: dict[int, list[tuple[int, float]]] = {}
    for src2, (dst1, dist) in p21.partners.items():
        reverse_into_1.setdefault(dst1, []).append((src2, dist))
    for e1, candidates in reverse_into_1.items():
        if e1 not in forward and len(candidates) == 1:
            forward[e1] = candidates[0]

    reverse_into_2: dict[int, list[tuple[int, float]]] = {}
    for src1, (dst2, dist) in p12.partners.items():
        reverse_into_2.setdefault(dst2, []).append((src1, dist))
    for e2, candidates in reverse_into_2.items():
        if e2 not in backward and len(candidates) == 1:
            backward[e2] = candidates[0]

    return MergedPairs(forward, backward)


def coverage_stats(merged: MergedPairs, kg_sizes: tuple[int, int]) -> dict:
    """Partner coverage per graph plus distance summary of resolved pairs."""
    n1, n2 = merged.counts()
    dists = [d for kg in (1, 2) for _, d in merged._maps[kg].values()]
    out = {
        "coverage_1": n1 / kg_sizes[0] if kg_sizes[0] else 0.0,
        "coverage_2": n2 / kg_sizes[1] if kg_sizes[1] else 0.0,
        "paired_1": n1,
        "paired_2": n2,
    }
    if dists:
        arr = np.asarray(dists)
        out["mean_distance"] = float(arr.mean())
        out["p50_distance"] = float(np.percentile(arr, 50))
        out["p90_distance"] = float(np.percentile(arr, 90))
    else:
        out["mean_distance"] = out["p50_distance"] = out["p90_distance"] = float("nan")
    return out


def dump_audit(path, epoch: int, p12: PseudoPairSet, p21: PseudoPairSet) -> None:
    """Append mined pairs as TSV rows: epoch, src_kg, src_id, dst_id, distance."""
    with open(path, "a", encoding="utf-8") as fh:
        for src, (dst, dist) in sorted(p12.partners.items()):
            fh.write(f"{epoch}\t1\t{src}\t{dst}\t{dist!r}\n")
        for src, (dst, dist) in sorted(p21.partners.items()):
            fh.write(f"{epoch}\t2\t{src}\t{dst}\t{dist!r}\n")
