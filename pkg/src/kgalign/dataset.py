"""Two-graph dataset bundle and the on-disk directory convention.

A dataset directory holds, per graph g1/g2: ``<g>.entities.tsv``,
``<g>.relations.tsv``, ``<g>.triples.tsv``, ``<g>.name.icle``,
``<g>.relname.icle`` and optionally ``<g>.desc.icle``, plus a shared
``alignments.tsv``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingTable, fuse, read_embeddings
from .errors import ShapeError
from .kg import AlignmentSet, KnowledgeGraph, load_alignments, load_kg


@dataclass
class DatasetPair:
    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    fused1: np.ndarray
    fused2: np.ndarray
    rel_names1: np.ndarray
    rel_names2: np.ndarray
    name_dim: int
    desc_dim: int

    @property
    def input_dim(self) -> int:
        return self.name_dim + self.desc_dim

    @property
    def rel_name_dim(self) -> int:
        return int(self.rel_names1.shape[1])

    @property
    def num_relations_total(self) -> int:
        return self.kg1.num_relations + self.kg2.num_relations

    def relation_offset(self, kg_index: int) -> int:
        return 0 if kg_index == 1 else self.kg1.num_relations

    def kg(self, kg_index: int) -> KnowledgeGraph:
        return self.kg1 if kg_index == 1 else self.kg2

    def fused(self, kg_index: int) -> np.ndarray:
        return self.fused1 if kg_index == 1 else self.fused2

    def rel_names(self, kg_index: int) -> np.ndarray:
        return self.rel_names1 if kg_index == 1 else self.rel_names2


def _graph_paths(data_dir: str, tag: str) -> dict[str, str]:
    return {
        "entities": os.path.join(data_dir, f"{tag}.entities.tsv"),
        "relations": os.path.join(data_dir, f"{tag}.relations.tsv"),
        "triples": os.path.join(data_dir, f"{tag}.triples.tsv"),
        "name": os.path.join(data_dir, f"{tag}.name.icle"),
        "desc": os.path.join(data_dir, f"{tag}.desc.icle"),
        "relname": os.path.join(data_dir, f"{tag}.relname.icle"),
    }


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"required dataset file missing: {path}")
    return path


def assemble(kg1: KnowledgeGraph, kg2: KnowledgeGraph,
             name1: EmbeddingTable, name2: EmbeddingTable,
             rel1: EmbeddingTable, rel2: EmbeddingTable,
             desc1: EmbeddingTable | None = None,
             desc2: EmbeddingTable | None = None) -> DatasetPair:
    if name1.dim != name2.dim:
        raise ShapeError(f"name dims differ: {name1.dim} vs {name2.dim}")
    if rel1.dim != rel2.dim:
        raise ShapeError(f"relation name dims differ: {rel1.dim} vs {rel2.dim}")
    desc_dims = {t.dim for t in (desc1, desc2) if t is not None}
    if len(desc_dims) > 1:
        raise ShapeError(f"description dims differ: {sorted(desc_dims)}")
    desc_dim = desc_dims.pop() if desc_dims else 0
    for table, kg, label in ((name1, kg1, "g1 name"), (name2, kg2, "g2 name")):
        if table.count != kg.num_entities:
            raise ShapeError(f"{label} table has {table.count} rows for {kg.num_entities} entities")
    for table, kg, label in ((rel1, kg1, "g1 relname"), (rel2, kg2, "g2 relname")):
        if table.count != kg.num_relations:
            raise ShapeError(f"{label} table has {table.count} rows for {kg.num_relations} relations")
    fused1 = fuse(name1, desc1, desc_dim=desc_dim)
    fused2 = fuse(name2, desc2, desc_dim=desc_dim)
    return DatasetPair(
        kg1=kg1, kg2=kg2,
        fused1=fused1.data, fused2=fused2.data,
        rel_names1=rel1.data, rel_names2=rel2.data,
        name_dim=name1.dim, desc_dim=desc_dim,
    )


def load_dataset(data_dir: str) -> tuple[DatasetPair, AlignmentSet]:
    """Load both graphs, their embedding tables, and the gold alignments."""
    p1 = _graph_paths(data_dir, "g1")
    p2 = _graph_paths(data_dir, "g2")
    kg1 = load_kg(_require(p1["entities"]), _require(p1["relations"]), _require(p1["triples"]))
    kg2 = load_kg(_require(p2["entities"]), _require(p2["relations"]), _require(p2["triples"]))
    name1 = read_embeddings(_require(p1["name"]))
    name2 = read_embeddings(_require(p2["name"]))
    rel1 = read_embeddings(_require(p1["relname"]))
    rel2 = read_embeddings(_require(p2["relname"]))
    desc1 = read_embeddings(p1["desc"]) if os.path.exists(p1["desc"]) else None
    desc2 = read_embeddings(p2["desc"]) if os.path.exists(p2["desc"]) else None
    pair = assemble(kg1, kg2, name1, name2, rel1, rel2, desc1, desc2)
    alignments = load_alignments(_require(os.path.join(data_dir, "alignments.tsv")))
    return pair, alignments
