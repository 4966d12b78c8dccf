"""Ranking evaluation: Hits@N over gold alignments, plus transfer runs.

Candidates are ranked by ascending L2 distance (the same metric and code
path mining uses); exact distance ties break toward the lower entity id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, load_checkpoint
from .errors import CheckpointError, IntegrityError
from .kg import AlignmentSet
from .mining import pairwise_sq_l2


@dataclass
class RankingResult:
    direction: str
    ranks: np.ndarray
    hits: dict[int, float]
    mean_rank: float
    mrr: float
    num_candidates: int

    @property
    def queries(self) -> int:
        return int(self.ranks.size)


def evaluate(v1: np.ndarray, v2: np.ndarray, gold: AlignmentSet,
             ns: tuple[int, ...] = (1, 10), candidate_ids=None,
             direction: str = "1->2") -> RankingResult:
    """Rank each gold pair's counterpart among all candidates.

    ``v1`` rows are indexed by left entity id. ``candidate_ids`` maps
    candidate rows to entity ids (defaults to row order); ranks depend
    only on distances and ids, never on row order.
    """
    v1 = np.asarray(v1)
    v2 = np.asarray(v2)
    if candidate_ids is None:
        candidate_ids = np.arange(v2.shape[0], dtype=np.int64)
    else:
        candidate_ids = np.asarray(candidate_ids, dtype=np.int64)
        if candidate_ids.shape[0] != v2.shape[0]:
            raise IntegrityError("candidate_ids must label every candidate row")
    id_to_row = {int(e): i for i, e in enumerate(candidate_ids)}

    queries = []
    gold_rows = []
    for e1, e2 in gold.pairs:
        if e1 < 0 or e1 >= v1.shape[0]:
            raise IntegrityError(f"gold pair references missing left row {e1}")
        if int(e2) not in id_to_row:
            raise IntegrityError(f"gold pair references missing candidate id {e2}")
        queries.append(e1)
        gold_rows.append(id_to_row[int(e2)])

    ranks = np.zeros(len(queries), dtype=np.int64)
    block = 512
    for start in range(0, len(queries), block):
        q_idx = queries[start:start + block]
        g_rows = gold_rows[start:start + block]
        sq = pairwise_sq_l2(v1[q_idx], v2)
        for i, g_row in enumerate(g_rows):
            d = sq[i]
            gold_d = d[g_row]
            gold_id = candidate_ids[g_row]
            closer = int(np.count_nonzero(d < gold_d))
            tied_lower = int(np.count_nonzero((d == gold_d) & (candidate_ids < gold_id)))
            ranks[start + i] = 1 + closer + tied_lower

    hits = {int(n): float(np.mean(ranks <= n)) if ranks.size else 0.0 for n in ns}
    return RankingResult(
        direction=direction,
        ranks=ranks,
        hits=hits,
        mean_rank=float(ranks.mean()) if ranks.size else float("nan"),
        mrr=float(np.mean(1.0 / ranks)) if ranks.size else float("nan"),
        num_candidates=int(v2.shape[0]),
    )


def load_transfer_params(checkpoint_path, dataset):
    """Online parameters from a checkpoint, checked against a dataset.

    Relation ids beyond the trained table (a transfer dataset can have a
    larger relation vocabulary) fall back to the mean trained embedding.
    """
    from .aggregator import AggregatorParams

    arrays = load_checkpoint(checkpoint_path)
    params = AggregatorParams.from_arrays(arrays, prefix="online.agg.")
    cfg = params.config
    if cfg.input_dim != dataset.input_dim:
        raise CheckpointError(
            f"checkpoint expects input dim {cfg.input_dim}, dataset has {dataset.input_dim}"
        )
    if cfg.include_relation_branches:
        if cfg.rel_name_dim != dataset.rel_name_dim:
            raise CheckpointError(
                f"checkpoint expects relation-name dim {cfg.rel_name_dim}, "
                f"dataset has {dataset.rel_name_dim}"
            )
        table = params.tensors["st.rel_embed"].data
        missing = dataset.num_relations_total - table.shape[0]
        if missing > 0:
            pad = np.broadcast_to(table.mean(axis=0), (missing, table.shape[1]))
            params.tensors["st.rel_embed"] = Tensor(
                np.concatenate([table, pad], axis=0), requires_grad=False
            )
    return params


def encode_dataset(params, dataset, neighbor_cap: int = 15) -> tuple[np.ndarray, np.ndarray]:
    from .aggregator import encode_entities

    v1 = encode_entities(params, dataset.kg1, dataset.fused1, dataset.rel_names1,
                         range(dataset.kg1.num_entities), neighbor_cap,
                         relation_offset=dataset.relation_offset(1))
    v2 = encode_entities(params, dataset.kg2, dataset.fused2, dataset.rel_names2,
                         range(dataset.kg2.num_entities), neighbor_cap,
                         relation_offset=dataset.relation_offset(2))
    return v1, v2


def evaluate_transfer(checkpoint_path, dataset, gold: AlignmentSet,
                      ns: tuple[int, ...] = (1, 10),
                      neighbor_cap: int = 15) -> RankingResult:
    """Apply a trained encoder to a dataset it may never have seen: load
    the online parameters, encode every entity, rank. No training."""
    params = load_transfer_params(checkpoint_path, dataset)
    v1, v2 = encode_dataset(params, dataset, neighbor_cap)
    return evaluate(v1, v2, gold, ns=ns)


def format_table(results: list[RankingResult]) -> str:
    lines = [f"{'direction':<10} {'N':>4} {'hits':>8} {'queries':>8}"]
    for res in results:
        for n in sorted(res.hits):
            lines.append(f"{res.direction:<10} {n:>4} {res.hits[n]:>8.4f} {res.queries:>8}")
    return "\n".join(lines)


def write_results_csv(path, results: list[RankingResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("direction,N,hits,queries\n")
        for res in results:
            for n in sorted(res.hits):
                fh.write(f"{res.direction},{n},{res.hits[n]!r},{res.queries}\n")


def dump_ranks(path, results: list[RankingResult], gold_sets: list[AlignmentSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("direction\tquery_id\tgold_id\trank\n")
        for res, gold in zip(results, gold_sets):
            for (e1, e2), rank in zip(gold.pairs, res.ranks):
                fh.write(f"{res.direction}\t{e1}\t{e2}\t{rank}\n")
