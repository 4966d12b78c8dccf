import numpy as np
import pytest

from kgalign import autodiff as ad
from kgalign.aggregator import AggregatorConfig, EncoderPair
from kgalign.dataset import DatasetPair
from kgalign.errors import CheckpointError, FormatError, IntegrityError
from kgalign.evaluation import evaluate, evaluate_transfer, write_results_csv
from kgalign.kg import AlignmentSet


def test_exact_match_hits_one():
    rng = np.random.default_rng(0)
    v2 = rng.normal(size=(8, 4)).astype(np.float32) * 10.0
    v1 = v2.copy()
    gold = AlignmentSet([(i, i) for i in range(8)])
    res = evaluate(v1, v2, gold, ns=(1, 10))
    assert res.hits[1] == 1.0
    assert res.hits[10] == 1.0
    assert res.mean_rank == 1.0


def test_adversarial_decoy_second_nearest():
    # per query: one decoy strictly closer than the true counterpart,
    # everything else much farther
    n = 6
    v1 = np.zeros((n, 2), dtype=np.float64)
    v2 = np.zeros((2 * n, 2), dtype=np.float64)
    gold = []
    for i in range(n):
        v1[i] = [10.0 * i, 0.0]
        v2[2 * i] = [10.0 * i + 0.1, 0.0]      # decoy, distance 0.1
        v2[2 * i + 1] = [10.0 * i + 0.5, 0.0]  # true counterpart, distance 0.5
        gold.append((i, 2 * i + 1))
    res = evaluate(v1, v2, AlignmentSet(gold), ns=(1, 10))
    assert res.hits[1] == 0.0
    assert res.hits[10] == 1.0
    assert np.all(res.ranks == 2)


def test_random_embeddings_hits_near_one_over_n():
    # Monte-Carlo oracle: with exchangeable random embeddings the true
    # counterpart lands at rank 1 with probability 1/n
    n, trials = 20, 400
    hits = []
    for seed in range(trials // n):
        rng = np.random.default_rng(seed)
        v1 = rng.normal(size=(n, 6))
        v2 = rng.normal(size=(n, 6))
        res = evaluate(v1, v2, AlignmentSet([(i, i) for i in range(n)]), ns=(1,))
        hits.append(res.hits[1])
    p = 1.0 / n
    total_queries = n * len(hits)
    sigma = np.sqrt(p * (1 - p) / total_queries)
    assert abs(np.mean(hits) - p) < 3 * sigma + 1e-9


def test_hits_monotone_and_saturates():
    rng = np.random.default_rng(3)
    v1 = rng.normal(size=(10, 3))
    v2 = rng.normal(size=(12, 3))
    gold = AlignmentSet([(i, i) for i in range(10)])
    res = evaluate(v1, v2, gold, ns=(1, 2, 5, 12))
    values = [res.hits[n] for n in (1, 2, 5, 12)]
    assert values == sorted(values)
    assert res.hits[12] == 1.0


def test_candidate_permutation_invariance():
    rng = np.random.default_rng(4)
    v1 = rng.normal(size=(6, 4))
    v2 = rng.normal(size=(9, 4))
    gold = AlignmentSet([(i, i) for i in range(6)])
    base = evaluate(v1, v2, gold, ns=(1, 3))
    perm = rng.permutation(9)
    shuffled = evaluate(v1, v2[perm], gold, ns=(1, 3), candidate_ids=perm)
    assert base.hits == shuffled.hits
    np.testing.assert_array_equal(base.ranks, shuffled.ranks)


def test_tie_break_prefers_lower_id():
    v1 = np.zeros((1, 2))
    v2 = np.array([[1.0, 0.0], [1.0, 0.0]])
    # gold counterpart is id 1 but id 0 sits at the same distance
    res = evaluate(v1, v2, AlignmentSet([(0, 1)]), ns=(1, 2))
    assert res.ranks[0] == 2


def test_missing_gold_row_is_error():
    v = np.zeros((2, 2))
    with pytest.raises(IntegrityError):
        evaluate(v, v, AlignmentSet([(0, 5)]))
    with pytest.raises(IntegrityError):
        evaluate(v, v, AlignmentSet([(7, 0)]))


def test_results_csv(tmp_path):
    rng = np.random.default_rng(5)
    v = rng.normal(size=(4, 3))
    res = evaluate(v, v, AlignmentSet([(i, i) for i in range(4)]), ns=(1,))
    path = tmp_path / "res.csv"
    write_results_csv(path, [res])
    text = path.read_text()
    assert text.splitlines()[0] == "direction,N,hits,queries"
    assert "1->2,1," in text


def _toy_transfer_setup(tmp_path):
    from test_kg import write_kg
    from kgalign.kg import load_kg

    paths1 = write_kg(tmp_path, [f"{i}\te{i}" for i in range(4)], ["0\tr"],
                      ["0\t0\t1", "1\t0\t2", "2\t0\t3"], tag="a")
    kg = load_kg(*paths1)
    rng = np.random.default_rng(6)
    fused = rng.normal(size=(4, 5)).astype(np.float32)
    rel = rng.normal(size=(1, 3)).astype(np.float32)
    dataset = DatasetPair(kg1=kg, kg2=kg, fused1=fused, fused2=fused,
                          rel_names1=rel, rel_names2=rel, name_dim=3, desc_dim=2)
    cfg = AggregatorConfig(input_dim=5, rel_name_dim=3, num_relations=2,
                           head_dim=4, fusion_dim=6)
    pair = EncoderPair.create(cfg, np.random.default_rng(7))
    return dataset, pair


def test_self_transfer_identity(tmp_path):
    dataset, pair = _toy_transfer_setup(tmp_path)
    arrays = {}
    arrays.update(pair.online.named_arrays("online.agg."))
    arrays.update(pair.momentum.named_arrays("momentum.agg."))
    ckpt = tmp_path / "model.iclc"
    ad.save_checkpoint(ckpt, arrays)

    gold = AlignmentSet([(i, i) for i in range(4)])
    res = evaluate_transfer(ckpt, dataset, gold, ns=(1,))
    # identical graphs and embeddings on both sides: exact self-match
    assert res.hits[1] == 1.0

    again = evaluate_transfer(ckpt, dataset, gold, ns=(1,))
    np.testing.assert_array_equal(res.ranks, again.ranks)


def test_transfer_dim_mismatch_raises(tmp_path):
    dataset, pair = _toy_transfer_setup(tmp_path)
    arrays = pair.online.named_arrays("online.agg.")
    ckpt = tmp_path / "model.iclc"
    ad.save_checkpoint(ckpt, arrays)
    import dataclasses
    bad = dataclasses.replace(dataset,
                              fused1=np.zeros((4, 9), dtype=np.float32),
                              fused2=np.zeros((4, 9), dtype=np.float32),
                              name_dim=7)
    gold = AlignmentSet([(0, 0)])
    with pytest.raises(CheckpointError):
        evaluate_transfer(ckpt, bad, gold)


def test_transfer_corrupt_checkpoint(tmp_path):
    dataset, _ = _toy_transfer_setup(tmp_path)
    bad = tmp_path / "bad.iclc"
    bad.write_bytes(b"WHAT" + b"\x00" * 32)
    with pytest.raises(FormatError):
        evaluate_transfer(bad, dataset, AlignmentSet([(0, 0)]))
