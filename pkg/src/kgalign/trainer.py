"""Training orchestration: per-epoch mining, alternating per-graph batches,
queue warm-up, loss computation, Adam steps, momentum updates, validation
Hits@1 early stopping, and checkpointing.

Each epoch starts by encoding every entity with the online encoder and
mining pseudo pairs; only then does the batch stream run. A batch pushed
to its graph's queue triggers a parameter update exactly when the push
dequeues a positive batch.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .aggregator import AggregatorConfig, EncoderPair, encode_batch, encode_entities
from .contrastive import (NegativeQueue, icl_loss, momentum_update, nce_loss,
                          total_loss, validate_queue_constraint)
from .dataset import DatasetPair
from .errors import ConstraintError
from .evaluation import evaluate
from .kg import AlignmentSet
from .mining import coverage_stats, merge, mine


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    queue_length: int = 32
    momentum: float = 0.9999
    tau: float = 0.08
    lam: float = 1.0
    beta: float = 0.9
    lr: float = 1e-6
    lr_decay: float = 1.0
    neighbor_cap: int = 15
    seed: int = 37
    patience: int = 20
    val_fraction: float = 0.05
    heads: int = 1
    head_dim: int = 0
    rel_embed_dim: int = 32
    gate_hidden_dim: int = 16
    fusion_dim: int = 0
    slope: float = 0.01
    neighbor_order: str = "id"
    no_icl: bool = False
    no_mcl: bool = False
    no_rel: bool = False
    no_desc: bool = False
    no_name: bool = False

    def validate(self, num_entities_1: int, num_entities_2: int) -> None:
        if self.epochs < 1:
            raise ConstraintError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConstraintError("batch size must be >= 2 for in-batch negatives")
        if self.tau <= 0.0:
            raise ConstraintError("temperature tau must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConstraintError("beta must lie in [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConstraintError("momentum m must lie in [0, 1)")
        if self.no_name and self.no_desc:
            raise ConstraintError("no_name and no_desc together leave no input signal")
        validate_queue_constraint(self.batch_size, self.queue_length,
                                  num_entities_1, num_entities_2)


def aggregator_config(config: TrainConfig, dataset: DatasetPair) -> AggregatorConfig:
    head_dim = config.head_dim or dataset.input_dim
    fusion_dim = config.fusion_dim or 5 * dataset.name_dim
    return AggregatorConfig(
        input_dim=dataset.input_dim,
        rel_name_dim=dataset.rel_name_dim,
        num_relations=dataset.num_relations_total,
        head_dim=head_dim,
        fusion_dim=fusion_dim,
        heads=config.heads,
        rel_embed_dim=config.rel_embed_dim,
        gate_hidden_dim=config.gate_hidden_dim,
        slope=config.slope,
        include_relation_branches=not config.no_rel,
    )


def apply_ablation(config: TrainConfig, dataset: DatasetPair) -> DatasetPair:
    """Zero out the ablated input blocks; architectural ablations are
    handled when the aggregator config is built."""
    if config.no_name and config.no_desc:
        raise ConstraintError("no_name and no_desc together leave no input signal")
    if not (config.no_name or config.no_desc):
        return dataset
    fused1 = dataset.fused1.copy()
    fused2 = dataset.fused2.copy()
    nd = dataset.name_dim
    if config.no_name:
        fused1[:, :nd] = 0.0
        fused2[:, :nd] = 0.0
    if config.no_desc:
        fused1[:, nd:] = 0.0
        fused2[:, nd:] = 0.0
    return replace(dataset, fused1=fused1, fused2=fused2)


@dataclass
class EpochMetrics:
    epoch: int
    steps: int
    mean_nce: float
    mean_icl: float
    mean_total: float
    lr: float
    coverage_1: float
    coverage_2: float
    val_hits1: float
    extra: float = float("nan")


@dataclass
class TrainState:
    pair: EncoderPair
    adam: ad.Adam
    queues: dict[int, NegativeQueue]
    rng: np.random.Generator
    epoch: int = 0
    merged: object | None = None
    coverage: dict = field(default_factory=dict)
    best_val: float = -math.inf
    best_epoch: int = -1
    best_arrays: dict | None = None


@dataclass
class TrainResult:
    history: list[EpochMetrics]
    best_epoch: int
    best_val_hits1: float
    best_arrays: dict
    final_arrays: dict
    loss_rows: list[str]
    checkpoint_path: str | None = None


def _snapshot(pair: EncoderPair) -> dict[str, np.ndarray]:
    arrays = {}
    arrays.update({k: v.copy() for k, v in pair.online.named_arrays("online.agg.").items()})
    arrays.update({k: v.copy() for k, v in pair.momentum.named_arrays("momentum.agg.").items()})
    return arrays


def _batches(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    perm = rng.permutation(n)
    full = (n // batch_size) * batch_size
    return [perm[s:s + batch_size] for s in range(0, full, batch_size)]


def validation_hits(pair: EncoderPair, dataset: DatasetPair,
                    validation: AlignmentSet, neighbor_cap: int,
                    neighbor_order: str = "id") -> float:
    """Hits@1 of the validation pairs, online encoder, direction G1 to G2."""
    if not validation.pairs:
        return float("nan")
    query_ids = sorted({e1 for e1, _ in validation.pairs})
    q = encode_entities(pair.online, dataset.kg1, dataset.fused1, dataset.rel_names1,
                        query_ids, neighbor_cap, dataset.relation_offset(1),
                        neighbor_order)
    v1 = np.zeros((dataset.kg1.num_entities, q.shape[1]), dtype=q.dtype)
    v1[query_ids] = q
    v2 = encode_entities(pair.online, dataset.kg2, dataset.fused2, dataset.rel_names2,
                         range(dataset.kg2.num_entities), neighbor_cap,
                         dataset.relation_offset(2), neighbor_order)
    return evaluate(v1, v2, validation, ns=(1,)).hits[1]


def run_epoch(state: TrainState, config: TrainConfig, dataset: DatasetPair,
              loss_rows: list[str]) -> tuple[int, float, float, float]:
    """One full pass: mine pseudo pairs, then stream shuffled batches
    alternating between the two graphs. Returns step count and loss sums."""
    epoch = state.epoch
    v1 = encode_entities(state.pair.online, dataset.kg1, dataset.fused1,
                         dataset.rel_names1, range(dataset.kg1.num_entities),
                         config.neighbor_cap, dataset.relation_offset(1),
                         config.neighbor_order)
    v2 = encode_entities(state.pair.online, dataset.kg2, dataset.fused2,
                         dataset.rel_names2, range(dataset.kg2.num_entities),
                         config.neighbor_cap, dataset.relation_offset(2),
                         config.neighbor_order)
    p12, p21 = mine(v1, v2, config.lam, epoch=epoch)
    state.merged = merge(p12, p21)
    state.coverage = coverage_stats(
        state.merged, (dataset.kg1.num_entities, dataset.kg2.num_entities))

    schedule = [(1, b) for b in _batches(state.rng, dataset.kg1.num_entities, config.batch_size)]
    schedule += [(2, b) for b in _batches(state.rng, dataset.kg2.num_entities, config.batch_size)]
    order = state.rng.permutation(len(schedule))

    steps = 0
    sum_nce = sum_icl = sum_total = 0.0
    for sched_idx in order:
        kg_idx, batch_ids = schedule[sched_idx]
        kg = dataset.kg(kg_idx)
        fused = dataset.fused(kg_idx)
        rel_names = dataset.rel_names(kg_idx)
        offset = dataset.relation_offset(kg_idx)

        cached = encode_entities(state.pair.momentum, kg, fused, rel_names,
                                 batch_ids, config.neighbor_cap, offset,
                                 config.neighbor_order)
        positive = state.queues[kg_idx].push(batch_ids, cached)
        if positive is None:
            continue

        v = encode_batch(state.pair, kg, fused, rel_names, positive.ids,
                         role="online", neighbor_cap=config.neighbor_cap,
                         relation_offset=offset, neighbor_order=config.neighbor_order)
        v_prime = encode_entities(state.pair.momentum, kg, fused, rel_names,
                                  positive.ids, config.neighbor_cap, offset,
                                  config.neighbor_order)

        other_idx = 3 - kg_idx
        mask = np.zeros(len(positive.ids), dtype=bool)
        partner_ids = np.zeros(len(positive.ids), dtype=np.int64)
        for i, e in enumerate(positive.ids):
            hit = state.merged.partner(kg_idx, int(e))
            if hit is not None:
                mask[i] = True
                partner_ids[i] = hit[0]
        v_pseudo = np.zeros_like(v_prime)
        if mask.any():
            v_pseudo[mask] = encode_entities(
                state.pair.momentum, dataset.kg(other_idx), dataset.fused(other_idx),
                dataset.rel_names(other_idx), partner_ids[mask],
                config.neighbor_cap, dataset.relation_offset(other_idx),
                config.neighbor_order)

        negs_same = state.queues[kg_idx].negatives()
        negs_cross = state.queues[other_idx].negatives()

        if config.no_mcl:
            nce = ad.Tensor(np.zeros((), dtype=v.dtype))
        else:
            nce = nce_loss(v, v_prime, negs_same, config.tau, in_batch_negatives=True)
        if config.no_icl:
            icl = ad.Tensor(np.zeros((), dtype=v.dtype))
        else:
            icl = icl_loss(v, v_pseudo, negs_same, negs_cross,
                           config.tau, config.beta, mask)
        loss = total_loss(nce, icl)
        ad.backward(loss)
        state.adam.step()
        momentum_update(state.pair.online, state.pair.momentum, config.momentum)

        steps += 1
        nce_v, icl_v = nce.item(), icl.item()
        total_v = nce_v + icl_v
        sum_nce += nce_v
        sum_icl += icl_v
        sum_total += total_v
        cov = state.coverage["coverage_1" if kg_idx == 1 else "coverage_2"]
        loss_rows.append(
            f"{epoch},{steps},{kg_idx},{nce_v!r},{icl_v!r},{total_v!r},"
            f"{state.adam.lr!r},{cov!r}"
        )
    return steps, sum_nce, sum_icl, sum_total


def train(config: TrainConfig, dataset: DatasetPair, validation: AlignmentSet,
          out_dir: str | None = None, on_epoch_end=None) -> TrainResult:
    """Run up to ``config.epochs`` epochs with validation-based early
    stopping; the best-validation parameter snapshot is kept and written.

    ``on_epoch_end(epoch, pair, metrics)`` may return a float recorded in
    the metrics history (used by studies that track held-out scores
    without handing them to the trainer).
    """
    config.validate(dataset.kg1.num_entities, dataset.kg2.num_entities)
    dataset = apply_ablation(config, dataset)

    rng = np.random.default_rng(config.seed)
    pair = EncoderPair.create(aggregator_config(config, dataset), rng)
    adam = ad.Adam(pair.online.tensors, lr=config.lr)
    state = TrainState(
        pair=pair,
        adam=adam,
        queues={
            1: NegativeQueue(config.queue_length, config.batch_size, "g1"),
            2: NegativeQueue(config.queue_length, config.batch_size, "g2"),
        },
        rng=rng,
    )

    history: list[EpochMetrics] = []
    loss_rows: list[str] = []
    stall = 0
    for epoch in range(config.epochs):
        state.epoch = epoch
        steps, sum_nce, sum_icl, sum_total = run_epoch(state, config, dataset, loss_rows)
        val = validation_hits(pair, dataset, validation, config.neighbor_cap,
                              config.neighbor_order)
        metrics = EpochMetrics(
            epoch=epoch,
            steps=steps,
            mean_nce=sum_nce / steps if steps else 0.0,
            mean_icl=sum_icl / steps if steps else 0.0,
            mean_total=sum_total / steps if steps else 0.0,
            lr=state.adam.lr,
            coverage_1=state.coverage.get("coverage_1", 0.0),
            coverage_2=state.coverage.get("coverage_2", 0.0),
            val_hits1=val,
        )
        if on_epoch_end is not None:
            extra = on_epoch_end(epoch, pair, metrics)
            if extra is not None:
                metrics.extra = float(extra)
        history.append(metrics)
        state.adam.lr *= config.lr_decay

        if math.isnan(val):
            # no validation split: keep the latest parameters as best
            state.best_val = val
            state.best_epoch = epoch
            state.best_arrays = _snapshot(pair)
        elif val > state.best_val:
            state.best_val = val
            state.best_epoch = epoch
            state.best_arrays = _snapshot(pair)
            stall = 0
        else:
            stall += 1
            if stall > config.patience:
                break

    result = TrainResult(
        history=history,
        best_epoch=state.best_epoch,
        best_val_hits1=state.best_val,
        best_arrays=state.best_arrays or _snapshot(pair),
        final_arrays=_snapshot(pair),
        loss_rows=loss_rows,
    )
    if out_dir is not None:
        result.checkpoint_path = write_outputs(out_dir, config, result)
    return result


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def metrics_csv(history: list[EpochMetrics]) -> str:
    lines = ["epoch,steps,mean_nce,mean_icl,mean_total,lr,coverage_1,coverage_2,val_hits1,extra"]
    for m in history:
        lines.append(
            f"{m.epoch},{m.steps},{m.mean_nce!r},{m.mean_icl!r},{m.mean_total!r},"
            f"{m.lr!r},{m.coverage_1!r},{m.coverage_2!r},{m.val_hits1!r},{m.extra!r}"
        )
    return "\n".join(lines) + "\n"


def config_echo(config: TrainConfig) -> str:
    return "\n".join(f"{f.name} = {getattr(config, f.name)}" for f in fields(config))


def write_outputs(out_dir: str, config: TrainConfig, result: TrainResult) -> str:
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write_text(os.path.join(out_dir, "metrics.csv"), metrics_csv(result.history))
    _atomic_write_text(
        os.path.join(out_dir, "loss_log.csv"),
        "epoch,step,kg,nce,icl,total,lr,pseudo_coverage\n" + "".join(
            row + "\n" for row in result.loss_rows),
    )
    checkpoint_path = os.path.join(out_dir, "checkpoint.iclc")
    tmp = checkpoint_path + ".tmp"
    ad.save_checkpoint(tmp, result.best_arrays)
    os.replace(tmp, checkpoint_path)
    sidecar = (
        config_echo(config)
        + f"\nbest_epoch = {result.best_epoch}"
        + f"\nbest_val_hits1 = {result.best_val_hits1!r}\n"
    )
    _atomic_write_text(checkpoint_path + ".manifest.txt", sidecar)
    return checkpoint_path
