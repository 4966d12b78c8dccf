"""Command-line entry points: train, eval, mine-audit, synth,
inspect-embeddings.

Configuration lives in a flat ``key = value`` text file whose keys mirror
the training configuration; unknown keys are rejected so a typo cannot
silently fall back to a default. Exit codes: 0 ok, 2 input error,
3 compatibility error, 4 constraint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dataset import DatasetPair, load_dataset
from .embeddings import EmbeddingTable, fallback_encode, read_embeddings, write_embeddings
from .errors import (CheckpointError, ConstraintError, DataError, FormatError,
                     IntegrityError, ParseError, ShapeError)
from .evaluation import (dump_ranks, encode_dataset, evaluate, evaluate_transfer,
                         format_table, load_transfer_params, write_results_csv)
from .kg import AlignmentSet, load_alignments, split_validation
from .mining import coverage_stats, dump_audit, merge, mine
from .trainer import TrainConfig, config_echo, train

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_COMPAT = 3
EXIT_CONSTRAINT = 4

_BOOL_STRINGS = {"true": True, "1": True, "yes": True,
                 "false": False, "0": False, "no": False}


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("bool", bool):
        key = raw.strip().lower()
        if key not in _BOOL_STRINGS:
            raise ParseError(f"config key {field.name!r}: {raw!r} is not a boolean")
        return _BOOL_STRINGS[key]
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw.strip()


def parse_config_file(path: str) -> dict:
    """Flat key = value pairs; `#` starts a comment; unknown keys rejected."""
    known = {f.name: f for f in dataclasses.fields(TrainConfig)}
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ParseError(f"{path}:{lineno}: expected key = value")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in known:
                raise ParseError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                out[key] = _coerce(known[key], raw.strip())
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def build_train_config(args) -> TrainConfig:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ParseError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        known = {f.name: f for f in dataclasses.fields(TrainConfig)}
        if key not in known:
            raise ParseError(f"--set: unknown config key {key!r}")
        values[key] = _coerce(known[key], raw)
    for flag in ("no_icl", "no_mcl", "no_rel", "no_desc", "no_name"):
        if getattr(args, flag, False):
            values[flag] = True
    return TrainConfig(**values)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str, config: TrainConfig, data_dir: str,
                   elapsed: float) -> None:
    lines = ["[config]", config_echo(config), "", "[inputs]"]
    for name in sorted(os.listdir(data_dir)):
        full = os.path.join(data_dir, name)
        if os.path.isfile(full):
            lines.append(f"{name} = sha256:{_sha256(full)}")
    lines += [
        "",
        "[run]",
        f"kgalign_version = {__version__}",
        f"numpy_version = {np.__version__}",
        f"python_version = {sys.version.split()[0]}",
        f"elapsed_seconds = {elapsed:.3f}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# synth


@dataclass(frozen=True)
class SynthConfig:
    """Twin-graph generator settings.

    The clone graph shares entity names and structure with the base graph:
    entity ids are relabeled by a random permutation, each edge survives
    independently with probability ``1 - edge_dropout``, and every non-zero
    embedding row is Gaussian-perturbed then re-normalized per block.
    Names draw few words from a small vocabulary so some entities collide
    and need descriptions or structure to disambiguate; descriptions are
    drawn from an even smaller vocabulary and are missing for a fraction
    of entities, which keeps names the stronger signal.
    """

    out_dir: str
    entities: int = 200
    sigma: float = 0.05
    edge_dropout: float = 0.1
    seed: int = 37
    name_dim: int = 32
    desc_dim: int = 32
    relations: int = 12
    avg_degree: float = 4.0
    name_vocab: int = 40
    desc_vocab: int = 20
    name_words: int = 2
    desc_words: int = 3
    desc_missing: float = 0.3


def _make_words(rng: np.random.Generator, count: int) -> list[str]:
    letters = "abcdefghijklmnopqrstuvwxyz"
    words = set()
    while len(words) < count:
        length = int(rng.integers(3, 9))
        words.add("".join(letters[int(i)] for i in rng.integers(0, 26, size=length)))
    return sorted(words)


def _perturb_rows(rng: np.random.Generator, rows: np.ndarray, sigma: float) -> np.ndarray:
    out = rows.astype(np.float64).copy()
    for i in range(out.shape[0]):
        norm = np.linalg.norm(out[i])
        if norm == 0.0:
            continue
        if sigma > 0.0:
            out[i] += rng.normal(0.0, sigma, size=out.shape[1])
            new_norm = np.linalg.norm(out[i])
            if new_norm > 0.0:
                out[i] /= new_norm
    return out.astype(np.float32)


def generate_synthetic(cfg: SynthConfig) -> None:
    """Write a twin-graph dataset with gold alignments to ``cfg.out_dir``."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.entities

    name_vocab = _make_words(rng, cfg.name_vocab)
    desc_vocab = _make_words(rng, cfg.desc_vocab)
    rel_vocab = _make_words(rng, max(cfg.relations * 2, 8))

    names = [" ".join(rng.choice(name_vocab, size=cfg.name_words, replace=True))
             for _ in range(n)]
    has_desc = rng.random(n) >= cfg.desc_missing
    descs = [
        " ".join(rng.choice(desc_vocab, size=cfg.desc_words, replace=True)) if has_desc[i] else None
        for i in range(n)
    ]
    rel_names = [" ".join(rng.choice(rel_vocab, size=2, replace=False))
                 for _ in range(cfg.relations)]

    edges: set[tuple[int, int, int]] = set()
    target_edges = int(round(n * cfg.avg_degree / 2.0))
    while len(edges) < target_edges:
        h = int(rng.integers(0, n))
        t = int(rng.integers(0, n))
        if h == t:
            continue
        r = int(rng.integers(0, cfg.relations))
        edges.add((h, r, t))
    triples1 = sorted(edges)

    perm = rng.permutation(n)
    keep = rng.random(len(triples1)) >= cfg.edge_dropout
    triples2 = sorted(
        (int(perm[h]), r, int(perm[t]))
        for (h, r, t), k in zip(triples1, keep) if k
    )

    name_table1 = fallback_encode(names, cfg.name_dim, cfg.seed, kind="entity-name")
    desc_rows1 = np.zeros((n, cfg.desc_dim), dtype=np.float32)
    present = [i for i in range(n) if has_desc[i]]
    if present:
        encoded = fallback_encode([descs[i] for i in present], cfg.desc_dim,
                                  cfg.seed + 1, kind="entity-description")
        desc_rows1[present] = encoded.data
    rel_table1 = fallback_encode(rel_names, cfg.name_dim, cfg.seed + 2,
                                 kind="relation-name")

    name_rows2 = np.zeros_like(name_table1.data)
    desc_rows2 = np.zeros_like(desc_rows1)
    name_perturbed = _perturb_rows(rng, name_table1.data, cfg.sigma)
    desc_perturbed = _perturb_rows(rng, desc_rows1, cfg.sigma)
    for i in range(n):
        name_rows2[perm[i]] = name_perturbed[i]
        desc_rows2[perm[i]] = desc_perturbed[i]
    rel_rows2 = _perturb_rows(rng, rel_table1.data, cfg.sigma)

    def entity_lines(order):
        lines = []
        for new_id, src in order:
            desc = descs[src]
            if desc is None:
                lines.append(f"{new_id}\t{names[src]}")
            else:
                lines.append(f"{new_id}\t{names[src]}\t{desc}")
        return lines

    def write_lines(path, lines):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))

    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)

    write_lines(os.path.join(cfg.out_dir, "g1.entities.tsv"),
                entity_lines([(i, i) for i in range(n)]))
    write_lines(os.path.join(cfg.out_dir, "g2.entities.tsv"),
                entity_lines([(i, int(inv[i])) for i in range(n)]))
    rel_lines = [f"{i}\t{rel_names[i]}" for i in range(cfg.relations)]
    write_lines(os.path.join(cfg.out_dir, "g1.relations.tsv"), rel_lines)
    write_lines(os.path.join(cfg.out_dir, "g2.relations.tsv"), rel_lines)
    write_lines(os.path.join(cfg.out_dir, "g1.triples.tsv"),
                [f"{h}\t{r}\t{t}" for h, r, t in triples1])
    write_lines(os.path.join(cfg.out_dir, "g2.triples.tsv"),
                [f"{h}\t{r}\t{t}" for h, r, t in triples2])
    write_lines(os.path.join(cfg.out_dir, "alignments.tsv"),
                [f"{i}\t{int(perm[i])}" for i in range(n)])

    write_embeddings(os.path.join(cfg.out_dir, "g1.name.icle"), name_table1)
    write_embeddings(os.path.join(cfg.out_dir, "g2.name.icle"),
                     EmbeddingTable("entity-name", name_rows2))
    write_embeddings(os.path.join(cfg.out_dir, "g1.desc.icle"),
                     EmbeddingTable("entity-description", desc_rows1))
    write_embeddings(os.path.join(cfg.out_dir, "g2.desc.icle"),
                     EmbeddingTable("entity-description", desc_rows2))
    write_embeddings(os.path.join(cfg.out_dir, "g1.relname.icle"), rel_table1)
    write_embeddings(os.path.join(cfg.out_dir, "g2.relname.icle"),
                     EmbeddingTable("relation-name", rel_rows2))


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    config = build_train_config(args)
    print(config_echo(config))
    dataset, alignments = load_dataset(args.data_dir)
    rest, validation = split_validation(alignments, config.val_fraction, config.seed)
    started = time.perf_counter()
    result = train(config, dataset, validation, out_dir=args.out_dir)
    elapsed = time.perf_counter() - started
    write_manifest(os.path.join(args.out_dir, "manifest.txt"), config,
                   args.data_dir, elapsed)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; "
          f"best val hits@1 {result.best_val_hits1!r} at epoch {result.best_epoch}; "
          f"final mean loss {last.mean_total:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data_dir = args.transfer if args.transfer else args.data_dir
    dataset, alignments = load_dataset(data_dir)
    params = load_transfer_params(args.checkpoint, dataset)
    v1, v2 = encode_dataset(params, dataset, args.neighbor_cap)
    ns = tuple(int(x) for x in args.ns.split(","))
    res_fwd = evaluate(v1, v2, alignments, ns=ns, direction="1->2")
    reverse = AlignmentSet([(b, a) for a, b in alignments.pairs])
    res_bwd = evaluate(v2, v1, reverse, ns=ns, direction="2->1")
    print(format_table([res_fwd, res_bwd]))
    if args.out_csv:
        write_results_csv(args.out_csv, [res_fwd, res_bwd])
    if args.dump_ranks:
        dump_ranks(args.dump_ranks, [res_fwd, res_bwd], [alignments, reverse])
    return EXIT_OK


def cmd_mine_audit(args) -> int:
    dataset, _ = load_dataset(args.data_dir)
    params = load_transfer_params(args.checkpoint, dataset)
    v1, v2 = encode_dataset(params, dataset, args.neighbor_cap)
    p12, p21 = mine(v1, v2, args.lam, epoch=args.epoch_tag)
    merged = merge(p12, p21)
    stats = coverage_stats(merged, (dataset.kg1.num_entities, dataset.kg2.num_entities))
    if os.path.exists(args.out):
        os.remove(args.out)
    dump_audit(args.out, args.epoch_tag, p12, p21)
    for key in sorted(stats):
        print(f"{key} = {stats[key]}")
    print(f"audit written to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        out_dir=args.out_dir,
        entities=args.entities,
        sigma=args.sigma,
        edge_dropout=args.edge_dropout,
        seed=args.seed,
        name_dim=args.name_dim,
        desc_dim=args.desc_dim,
        relations=args.relations,
        avg_degree=args.avg_degree,
        name_vocab=args.name_vocab,
        desc_vocab=args.desc_vocab,
        name_words=args.name_words,
        desc_words=args.desc_words,
        desc_missing=args.desc_missing,
    )
    generate_synthetic(cfg)
    print(f"synthetic twin-graph dataset written to {cfg.out_dir}")
    return EXIT_OK


def cmd_inspect_embeddings(args) -> int:
    table = read_embeddings(args.path)
    norms = np.linalg.norm(table.data.astype(np.float64), axis=1)
    print(f"kind = {table.kind}")
    print(f"count = {table.count}")
    print(f"dim = {table.dim}")
    print(f"norm_min = {norms.min():.6f}")
    print(f"norm_max = {norms.max():.6f}")
    print(f"zero_rows = {int(np.sum(norms == 0.0))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgalign",
        description="Self-supervised entity alignment across two knowledge graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an alignment encoder")
    p_train.add_argument("--data-dir", required=True)
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--config", help="flat key = value config file")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE")
    for flag in ("no-icl", "no-mcl", "no-rel", "no-desc", "no-name"):
        p_train.add_argument(f"--{flag}", dest=flag.replace("-", "_"),
                             action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="rank gold alignments with a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data-dir", required=True)
    p_eval.add_argument("--transfer", metavar="OTHER_DATA_DIR",
                        help="evaluate on a different dataset than the checkpoint's")
    p_eval.add_argument("--ns", default="1,10")
    p_eval.add_argument("--neighbor-cap", type=int, default=15)
    p_eval.add_argument("--out-csv")
    p_eval.add_argument("--dump-ranks", metavar="PATH")
    p_eval.set_defaults(func=cmd_eval)

    p_audit = sub.add_parser("mine-audit", help="dump mined pseudo pairs as TSV")
    p_audit.add_argument("--checkpoint", required=True)
    p_audit.add_argument("--data-dir", required=True)
    p_audit.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_audit.add_argument("--out", required=True)
    p_audit.add_argument("--epoch-tag", type=int, default=0)
    p_audit.add_argument("--neighbor-cap", type=int, default=15)
    p_audit.set_defaults(func=cmd_mine_audit)

    p_synth = sub.add_parser("synth", help="generate a twin-graph test dataset")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--entities", type=int, default=200)
    p_synth.add_argument("--sigma", type=float, default=0.05)
    p_synth.add_argument("--edge-dropout", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=37)
    p_synth.add_argument("--name-dim", type=int, default=32)
    p_synth.add_argument("--desc-dim", type=int, default=32)
    p_synth.add_argument("--relations", type=int, default=12)
    p_synth.add_argument("--avg-degree", type=float, default=4.0)
    p_synth.add_argument("--name-vocab", type=int, default=40)
    p_synth.add_argument("--desc-vocab", type=int, default=20)
    p_synth.add_argument("--name-words", type=int, default=2)
    p_synth.add_argument("--desc-words", type=int, default=3)
    p_synth.add_argument("--desc-missing", type=float, default=0.3)
    p_synth.set_defaults(func=cmd_synth)

    p_inspect = sub.add_parser("inspect-embeddings",
                               help="validate and describe an embedding file")
    p_inspect.add_argument("path")
    p_inspect.set_defaults(func=cmd_inspect_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ParseError, IntegrityError, FormatError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CheckpointError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT


if __name__ == "__main__":
    sys.exit(main())
