import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgalign.errors import IntegrityError, ParseError
from kgalign.kg import (AlignmentSet, load_alignments, load_kg, neighborhood,
                        preprocess_name, split_validation)


def write_kg(tmp_path, entities, relations, triples, tag="g"):
    e_path = tmp_path / f"{tag}.entities.tsv"
    r_path = tmp_path / f"{tag}.relations.tsv"
    t_path = tmp_path / f"{tag}.triples.tsv"
    e_path.write_text("\n".join(entities) + "\n", encoding="utf-8")
    r_path.write_text("\n".join(relations) + "\n", encoding="utf-8")
    t_path.write_text("\n".join(triples) + ("\n" if triples else ""), encoding="utf-8")
    return e_path, r_path, t_path


def test_uri_names_are_stripped(tmp_path):
    paths = write_kg(
        tmp_path,
        ["0\thttp://dbpedia.org/resource/Jay_Chou\tsinger", "1\tplain_name"],
        ["0\thttp://dbpedia.org/property/birthPlace"],
        ["0\t0\t1"],
    )
    kg = load_kg(*paths)
    assert kg.entities[0].name == "Jay Chou"
    assert kg.entities[0].description == "singer"
    assert kg.entities[1].name == "plain_name"
    assert kg.entities[1].description is None
    assert kg.relations[0].name == "birthPlace"


def test_preprocess_name_plain_passthrough():
    assert preprocess_name("Jay_Chou") == "Jay_Chou"
    assert preprocess_name("https://x.org/a/b/C_D") == "C D"


def test_empty_triples_file_gives_empty_neighborhoods(tmp_path):
    paths = write_kg(tmp_path, ["0\ta", "1\tb"], ["0\tr"], [])
    kg = load_kg(*paths)
    assert all(kg.neighborhoods[e] == [] for e in range(2))


def test_undirected_neighborhood_union(tmp_path):
    paths = write_kg(
        tmp_path,
        [f"{i}\te{i}" for i in range(3)],
        [f"{i}\tr{i}" for i in range(6)],
        ["0\t0\t1", "2\t5\t0"],
    )
    kg = load_kg(*paths)
    assert [n for n, _ in kg.neighborhoods[0]] == [1, 2]
    assert kg.neighborhoods[0][0][1] == (0,)
    assert kg.neighborhoods[0][1][1] == (5,)


def test_self_loops_kept_in_triples_not_neighborhoods(tmp_path):
    paths = write_kg(tmp_path, ["0\ta", "1\tb"], ["0\tr"], ["0\t0\t0", "0\t0\t1"])
    kg = load_kg(*paths)
    assert len(kg.triples) == 2
    assert [n for n, _ in kg.neighborhoods[0]] == [1]


def test_duplicate_triples_counted(tmp_path):
    paths = write_kg(tmp_path, ["0\ta", "1\tb"], ["0\tr"], ["0\t0\t1", "0\t0\t1"])
    kg = load_kg(*paths)
    assert kg.duplicate_triples == 1
    assert len(kg.triples) == 1


def test_malformed_line_reports_line_number(tmp_path):
    paths = write_kg(tmp_path, ["0\ta"], ["0\tr"], ["0\t0"])
    with pytest.raises(ParseError, match="3:|:1"):
        load_kg(*paths)


def test_dangling_id_is_integrity_error(tmp_path):
    paths = write_kg(tmp_path, ["0\ta", "1\tb"], ["0\tr"], ["0\t0\t5"])
    with pytest.raises(IntegrityError):
        load_kg(*paths)


def test_non_dense_ids_rejected(tmp_path):
    paths = write_kg(tmp_path, ["0\ta", "2\tb"], ["0\tr"], [])
    with pytest.raises(IntegrityError):
        load_kg(*paths)


def test_comment_lines_ignored(tmp_path):
    paths = write_kg(tmp_path, ["# header", "0\ta", "1\tb"], ["0\tr"], ["# c", "0\t0\t1"])
    kg = load_kg(*paths)
    assert kg.num_entities == 2 and len(kg.triples) == 1


def test_load_kg_idempotent(tmp_path):
    paths = write_kg(
        tmp_path,
        [f"{i}\te{i}\tdesc {i}" for i in range(4)],
        [f"{i}\tr{i}" for i in range(2)],
        ["0\t0\t1", "1\t1\t2", "3\t0\t1"],
    )
    a = load_kg(*paths)
    b = load_kg(*paths)
    assert a == b


def star_kg(tmp_path, n_neighbors):
    entities = [f"{i}\te{i}" for i in range(n_neighbors + 1)]
    relations = ["0\tr"]
    triples = [f"0\t0\t{i}" for i in range(1, n_neighbors + 1)]
    return load_kg(*write_kg(tmp_path, entities, relations, triples))


def test_neighborhood_cap_noop_when_small(tmp_path):
    kg = star_kg(tmp_path, 3)
    assert len(neighborhood(kg, 0, 15)) == 3


def test_neighborhood_cap_truncates_ascending(tmp_path):
    kg = star_kg(tmp_path, 20)
    got = neighborhood(kg, 0, 15)
    # oracle: sort the full neighbor list, take the prefix
    full = sorted(n for n, _ in kg.neighborhoods[0])
    assert [n for n, _ in got] == full[:15]


def test_neighborhood_cap_zero(tmp_path):
    kg = star_kg(tmp_path, 3)
    assert neighborhood(kg, 0, 0) == []


def test_neighborhood_invalid_entity(tmp_path):
    kg = star_kg(tmp_path, 2)
    with pytest.raises(IntegrityError):
        neighborhood(kg, 99, 5)


def test_neighborhood_degree_order(tmp_path):
    paths = write_kg(
        tmp_path,
        [f"{i}\te{i}" for i in range(5)],
        ["0\tr"],
        ["0\t0\t1", "0\t0\t2", "1\t0\t2", "2\t0\t3", "2\t0\t4"],
    )
    kg = load_kg(*paths)
    got = neighborhood(kg, 0, 1, order="degree")
    assert [n for n, _ in got] == [2]


def test_split_sizes():
    pairs = AlignmentSet([(i, i) for i in range(100)])
    rest, val = split_validation(pairs, 0.05, seed=37)
    assert (len(rest), len(val)) == (95, 5)
    assert set(rest.pairs).isdisjoint(val.pairs)


def test_split_zero_fraction():
    pairs = AlignmentSet([(i, i) for i in range(10)])
    rest, val = split_validation(pairs, 0.0, seed=1)
    assert len(rest) == 10 and len(val) == 0


def test_split_deterministic():
    pairs = AlignmentSet([(i, 2 * i) for i in range(50)])
    a = split_validation(pairs, 0.2, seed=11)
    b = split_validation(pairs, 0.2, seed=11)
    assert a[0].pairs == b[0].pairs and a[1].pairs == b[1].pairs


def test_load_alignments(tmp_path):
    path = tmp_path / "align.tsv"
    path.write_text("0\t3\n1\t2\n", encoding="utf-8")
    got = load_alignments(path)
    assert got.pairs == [(0, 3), (1, 2)]


@st.composite
def random_triples(draw):
    n = draw(st.integers(min_value=2, max_value=8))
    m = draw(st.integers(min_value=0, max_value=20))
    triples = [
        (draw(st.integers(0, n - 1)), draw(st.integers(0, 2)), draw(st.integers(0, n - 1)))
        for _ in range(m)
    ]
    return n, triples


@settings(max_examples=50, deadline=None)
@given(random_triples())
def test_neighborhood_symmetry_and_count(tmp_path_factory, data):
    n, triples = data
    tmp_path = tmp_path_factory.mktemp("kg")
    paths = write_kg(
        tmp_path,
        [f"{i}\te{i}" for i in range(n)],
        [f"{i}\tr{i}" for i in range(3)],
        [f"{h}\t{r}\t{t}" for h, r, t in triples],
    )
    kg = load_kg(*paths)
    neighbor_sets = [set(x for x, _ in kg.neighborhoods[e]) for e in range(n)]
    for e in range(n):
        for other in neighbor_sets[e]:
            assert e in neighbor_sets[other]
    # brute-force recount of distinct co-occurring entities
    for e in range(n):
        expected = {t for h, _, t in triples if h == e and t != e}
        expected |= {h for h, _, t in triples if t == e and h != e}
        assert neighbor_sets[e] == expected
