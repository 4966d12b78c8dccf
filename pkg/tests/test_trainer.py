import numpy as np
import pytest

import kgalign.trainer as trainer_mod
from kgalign.cli import SynthConfig, generate_synthetic
from kgalign.contrastive import momentum_update
from kgalign.dataset import load_dataset
from kgalign.errors import ConstraintError
from kgalign.kg import split_validation
from kgalign.trainer import (TrainConfig, aggregator_config, apply_ablation,
                             metrics_csv, train)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthdata")
    generate_synthetic(SynthConfig(
        out_dir=str(out), entities=48, sigma=0.05, edge_dropout=0.1, seed=37,
        name_dim=12, desc_dim=12, relations=5, avg_degree=3.0,
    ))
    dataset, alignments = load_dataset(str(out))
    rest, val = split_validation(alignments, 0.1, seed=37)
    return dataset, rest, val


def small_config(**overrides) -> TrainConfig:
    base = dict(
        epochs=2, batch_size=8, queue_length=2, momentum=0.99, tau=0.08,
        lam=1.0, beta=0.9, lr=1e-3, neighbor_cap=15, seed=37, patience=20,
        head_dim=8, fusion_dim=16, rel_embed_dim=6, gate_hidden_dim=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


def parse_loss_rows(rows):
    out = []
    for row in rows:
        epoch, step, kg, nce, icl, total, lr, cov = row.split(",")
        out.append(dict(epoch=int(epoch), step=int(step), kg=int(kg),
                        nce=float(nce), icl=float(icl), total=float(total),
                        lr=float(lr), cov=float(cov)))
    return out


def test_warmup_skips_updates(small_data):
    dataset, _, val = small_data
    config = small_config(epochs=1)
    result = train(config, dataset, val)
    batches_per_kg = dataset.kg1.num_entities // config.batch_size
    total_pushes = 2 * batches_per_kg
    expected_steps = total_pushes - 2 * config.queue_length
    assert result.history[0].steps == expected_steps


def test_loss_rows_total_is_nce_plus_icl(small_data):
    dataset, _, val = small_data
    result = train(small_config(), dataset, val)
    rows = parse_loss_rows(result.loss_rows)
    assert rows, "no training steps happened"
    for row in rows:
        assert row["total"] == pytest.approx(row["nce"] + row["icl"], abs=1e-12)


def test_no_icl_drops_icl_term(small_data):
    dataset, _, val = small_data
    result = train(small_config(no_icl=True), dataset, val)
    rows = parse_loss_rows(result.loss_rows)
    assert all(row["icl"] == 0.0 for row in rows)
    assert any(row["nce"] != 0.0 for row in rows)


def test_no_mcl_keeps_icl_only(small_data):
    dataset, _, val = small_data
    result = train(small_config(no_mcl=True), dataset, val)
    rows = parse_loss_rows(result.loss_rows)
    assert all(row["nce"] == 0.0 for row in rows)


def test_deterministic_outputs(small_data, tmp_path):
    dataset, _, val = small_data
    config = small_config()
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    ra = train(config, dataset, val, out_dir=str(out_a))
    rb = train(config, dataset, val, out_dir=str(out_b))
    assert ra.loss_rows == rb.loss_rows
    assert metrics_csv(ra.history) == metrics_csv(rb.history)
    assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
    assert (out_a / "loss_log.csv").read_bytes() == (out_b / "loss_log.csv").read_bytes()
    assert (out_a / "checkpoint.iclc").read_bytes() == (out_b / "checkpoint.iclc").read_bytes()


def test_mining_once_per_epoch_before_batches(small_data, monkeypatch):
    dataset, _, val = small_data
    calls = []
    real_mine = trainer_mod.mine

    def spy(v1, v2, lam, epoch=0):
        calls.append(epoch)
        return real_mine(v1, v2, lam, epoch=epoch)

    monkeypatch.setattr(trainer_mod, "mine", spy)
    result = train(small_config(epochs=3, patience=1000), dataset, val)
    assert calls == [0, 1, 2]
    assert len(result.history) == 3


def test_single_epoch_single_sweep(small_data, monkeypatch):
    dataset, _, val = small_data
    calls = []
    real_mine = trainer_mod.mine
    monkeypatch.setattr(trainer_mod, "mine",
                        lambda *a, **k: (calls.append(1), real_mine(*a, **k))[1])
    result = train(small_config(epochs=1), dataset, val)
    assert len(calls) == 1
    assert len(result.history) == 1


def test_patience_zero_stops_at_first_non_improvement(small_data):
    dataset, _, val = small_data
    result = train(small_config(epochs=30, patience=0, lr=0.0), dataset, val)
    # zero learning rate: validation cannot improve after the first epoch
    assert len(result.history) == 2


def test_queue_constraint_checked_at_start(small_data):
    dataset, _, val = small_data
    config = small_config(batch_size=16, queue_length=4)  # 80 > 48
    with pytest.raises(ConstraintError):
        train(config, dataset, val)


def test_momentum_drift_bound():
    rng = np.random.default_rng(0)
    online = {"w": trainer_mod.ad.Tensor(rng.normal(size=(3, 3)))}
    momentum = {"w": trainer_mod.ad.Tensor(rng.normal(size=(3, 3)))}
    m = 0.99
    before = momentum["w"].data.copy()
    gap = np.max(np.abs(online["w"].data - before))
    momentum_update(online, momentum, m)
    drift = np.max(np.abs(momentum["w"].data - before))
    assert drift <= (1 - m) * gap + 1e-12


def test_momentum_params_start_as_exact_copy(small_data):
    dataset, _, _ = small_data
    config = small_config()
    from kgalign.aggregator import EncoderPair
    pair = EncoderPair.create(aggregator_config(config, dataset),
                              np.random.default_rng(config.seed))
    for name, t in pair.online.tensors.items():
        np.testing.assert_array_equal(t.data, pair.momentum.tensors[name].data)
        assert not pair.momentum.tensors[name].requires_grad


def test_apply_ablation_no_desc_zeroes_block(small_data):
    dataset, _, _ = small_data
    out = apply_ablation(small_config(no_desc=True), dataset)
    nd = dataset.name_dim
    assert np.all(out.fused1[:, nd:] == 0.0)
    assert np.array_equal(out.fused1[:, :nd], dataset.fused1[:, :nd])


def test_apply_ablation_no_name_zeroes_block(small_data):
    dataset, _, _ = small_data
    out = apply_ablation(small_config(no_name=True), dataset)
    nd = dataset.name_dim
    assert np.all(out.fused2[:, :nd] == 0.0)
    assert np.array_equal(out.fused2[:, nd:], dataset.fused2[:, nd:])


def test_apply_ablation_conflicting_flags(small_data):
    dataset, _, _ = small_data
    with pytest.raises(ConstraintError):
        apply_ablation(small_config(no_name=True, no_desc=True), dataset)


def test_no_rel_shrinks_fusion_input(small_data):
    dataset, _, _ = small_data
    full = aggregator_config(small_config(), dataset)
    bare = aggregator_config(small_config(no_rel=True), dataset)
    assert bare.fusion_input_dim == full.fusion_input_dim // 3
    assert not bare.include_relation_branches


def test_epoch_callback_records_extra(small_data):
    dataset, _, val = small_data
    seen = []

    def hook(epoch, pair, metrics):
        seen.append(epoch)
        return float(epoch)

    result = train(small_config(epochs=2, patience=100), dataset, val, on_epoch_end=hook)
    assert seen == [0, 1]
    assert [m.extra for m in result.history] == [0.0, 1.0]
