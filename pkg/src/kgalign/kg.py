"""Knowledge graph loading, indexing, and one-hop neighborhoods.

Input files are UTF-8 TSV. Entities: ``id<TAB>name<TAB>description`` with
the description column optional. Relations: ``id<TAB>name``. Triples:
``head<TAB>relation<TAB>tail``. Alignments: ``id_in_G1<TAB>id_in_G2``.
Lines starting with ``#`` are ignored everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError, ParseError


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass
class SideInfo:
    """Name plus optional free-text description."""

    name: str
    description: str | None = None


@dataclass
class KnowledgeGraph:
    """Immutable after load; neighborhoods are undirected and deduplicated.

    ``neighborhoods[e]`` lists ``(neighbor, relation_ids)`` sorted by
    neighbor id; ``relation_ids`` is the sorted set of all relations that
    connect the pair in either direction. Self-loops stay in ``triples``
    but never appear in a neighborhood.
    """

    entities: list[SideInfo]
    relations: list[SideInfo]
    triples: list[Triple]
    neighborhoods: list[list[tuple[int, tuple[int, ...]]]]
    duplicate_triples: int = 0

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def degree(self, e: int) -> int:
        return len(self.neighborhoods[e])


@dataclass
class AlignmentSet:
    """Gold cross-graph pairs; evaluation and validation only, never a
    training signal."""

    pairs: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def preprocess_name(raw: str) -> str:
    """Strip a URI down to its final path segment and de-underscore it.

    Only applies when the string looks like a URI (``scheme://...``);
    plain names pass through untouched since many datasets ship clean
    labels already.
    """
    stripped = raw.strip()
    scheme_end = stripped.find("://")
    if scheme_end <= 0 or " " in stripped:
        return stripped
    tail = stripped.rstrip("/").rsplit("/", 1)[-1]
    tail = tail.rsplit("#", 1)[-1]
    return tail.replace("_", " ").strip()


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_id(field_text: str, path, lineno: int, what: str) -> int:
    try:
        value = int(field_text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: {what} {field_text!r} is not an integer") from None
    if value < 0:
        raise ParseError(f"{path}:{lineno}: {what} must be non-negative")
    return value


def _load_side_info(path, with_description: bool, label: str) -> list[SideInfo]:
    rows: dict[int, SideInfo] = {}
    max_cols = 3 if with_description else 2
    for lineno, line in _data_lines(path):
        cols = line.split("\t")
        if len(cols) < 2 or len(cols) > max_cols:
            raise ParseError(
                f"{path}:{lineno}: expected 2..{max_cols} tab-separated columns, got {len(cols)}"
            )
        idx = _parse_id(cols[0], path, lineno, f"{label} id")
        if idx in rows:
            raise IntegrityError(f"{path}:{lineno}: duplicate {label} id {idx}")
        name = preprocess_name(cols[1])
        if not name:
            raise ParseError(f"{path}:{lineno}: empty {label} name after preprocessing")
        description = None
        if with_description and len(cols) == 3 and cols[2].strip():
            description = cols[2].strip()
        rows[idx] = SideInfo(name=name, description=description)
    if sorted(rows) != list(range(len(rows))):
        raise IntegrityError(f"{path}: {label} ids must be dense 0..{len(rows) - 1}")
    return [rows[i] for i in range(len(rows))]


def _build_neighborhoods(num_entities: int, triples: list[Triple]):
    link_relations: dict[tuple[int, int], set[int]] = {}
    for t in triples:
        if t.head == t.tail:
            continue
        key = (min(t.head, t.tail), max(t.head, t.tail))
        link_relations.setdefault(key, set()).add(t.relation)
    neighborhoods: list[list[tuple[int, tuple[int, ...]]]] = [[] for _ in range(num_entities)]
    for (a, b), rels in link_relations.items():
        rel_tuple = tuple(sorted(rels))
        neighborhoods[a].append((b, rel_tuple))
        neighborhoods[b].append((a, rel_tuple))
    for entries in neighborhoods:
        entries.sort(key=lambda item: item[0])
    return neighborhoods


def load_kg(entities_path, relations_path, triples_path) -> KnowledgeGraph:
    """Load and fully index one knowledge graph.

    Duplicate triples are dropped (counted in ``duplicate_triples``);
    any id referenced by a triple must exist.
    """
    entities = _load_side_info(entities_path, with_description=True, label="entity")
    relations = _load_side_info(relations_path, with_description=False, label="relation")

    triples: list[Triple] = []
    seen: set[tuple[int, int, int]] = set()
    duplicates = 0
    for lineno, line in _data_lines(triples_path):
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"{triples_path}:{lineno}: expected 3 columns, got {len(cols)}")
        h = _parse_id(cols[0], triples_path, lineno, "head id")
        r = _parse_id(cols[1], triples_path, lineno, "relation id")
        t = _parse_id(cols[2], triples_path, lineno, "tail id")
        if h >= len(entities) or t >= len(entities):
            raise IntegrityError(
                f"{triples_path}:{lineno}: entity id {max(h, t)} not in 0..{len(entities) - 1}"
            )
        if r >= len(relations):
            raise IntegrityError(
                f"{triples_path}:{lineno}: relation id {r} not in 0..{len(relations) - 1}"
            )
        key = (h, r, t)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        triples.append(Triple(h, r, t))

    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        triples=triples,
        neighborhoods=_build_neighborhoods(len(entities), triples),
        duplicate_triples=duplicates,
    )


def neighborhood(kg: KnowledgeGraph, e: int, cap: int,
                 order: str = "id") -> list[tuple[int, tuple[int, ...]]]:
    """At most ``cap`` neighbors of ``e``, deterministically truncated.

    ``order="id"`` keeps ascending entity ids; ``order="degree"`` keeps
    the highest-degree neighbors first (ties by id).
    """
    if e < 0 or e >= kg.num_entities:
        raise IntegrityError(f"entity id {e} not in 0..{kg.num_entities - 1}")
    if cap < 0:
        raise ValueError("cap must be >= 0")
    entries = kg.neighborhoods[e]
    if order == "id":
        return list(entries[:cap])
    if order == "degree":
        ranked = sorted(entries, key=lambda item: (-kg.degree(item[0]), item[0]))
        return ranked[:cap]
    raise ValueError(f"unknown neighbor order {order!r}")


def load_alignments(path) -> AlignmentSet:
    pairs: list[tuple[int, int]] = []
    for lineno, line in _data_lines(path):
        cols = line.split("\t")
        if len(cols) != 2:
            raise ParseError(f"{path}:{lineno}: expected 2 columns, got {len(cols)}")
        a = _parse_id(cols[0], path, lineno, "left id")
        b = _parse_id(cols[1], path, lineno, "right id")
        pairs.append((a, b))
    return AlignmentSet(pairs=pairs)


def split_validation(alignments: AlignmentSet, fraction: float,
                     seed: int) -> tuple[AlignmentSet, AlignmentSet]:
    """Disjoint (rest, validation) partition; validation gets
    ``floor(fraction * n)`` pairs, chosen by the seeded generator."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be within [0, 1]")
    n = len(alignments.pairs)
    k = int(fraction * n)
    rng = np.random.default_rng(seed)
    chosen = set(map(int, rng.permutation(n)[:k]))
    rest = [p for i, p in enumerate(alignments.pairs) if i not in chosen]
    val = [p for i, p in enumerate(alignments.pairs) if i in chosen]
    return AlignmentSet(rest), AlignmentSet(val)
