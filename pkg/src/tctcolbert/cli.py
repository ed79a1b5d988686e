"""Command-line pipeline: data generation, training, indexing, retrieval, fusion, evaluation.

Every file written gets a ``<file>.config.json`` sidecar holding the
subcommand and its arguments, so any artifact can be traced and rebuilt.
Exit status: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .datagen import SynthConfig, generate
from .dense_index import DenseIndex, build, storage_report
from .distill import DistillConfig, DivergenceError, distill_student, train_teacher
from .encoder import (
    DEFAULT_H, DEFAULT_T, PASSAGE_MAX_LEN, QUERY_MAX_LEN, EmbeddingTable, Projection,
    encode_pooled_batch,
)
from .evaluation import METRICS, evaluate, format_report
from .fusion import ALPHA_GRID, FUSED_TAG, fuse, tune_alpha
from .pipeline import (
    STUDENT_LR, TEACHER_LR, bench, dense_run, make_table, make_triplets, sparse_run,
    tokenize_all,
)
from .sparse_index import B, K1, SparseIndex, build_sparse_from_text
from .trec import read_id_text, read_qrels, read_run, read_tsv, write_run

log = logging.getLogger("tctcolbert")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sidecar(out, args: argparse.Namespace, **extra) -> None:
    cfg = {"command": args.command, "version": __version__}
    cfg.update({k: v for k, v in vars(args).items() if k not in ("command", "func", "verbose")})
    cfg.update(extra)
    Path(f"{out}.config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _load_model(args):
    table = EmbeddingTable.load(args.table)
    proj = Projection.load(args.proj)
    if proj.t != table.t:
        raise ValueError(f"projection expects t={proj.t} but the table has t={table.t}")
    return table, proj


def _triples(path):
    return [tuple(r) for r in read_tsv(path, 3)]


# ---------------------------------------------------------------- subcommands


def cmd_datagen(args):
    kw = {f.name: getattr(args, f.name) for f in fields(SynthConfig) if f.name != "seed"}
    ds = generate(SynthConfig(seed=args.seed, **kw))
    paths = ds.save(args.out)
    for p in paths.values():
        _sidecar(p, args)
    print(f"wrote {len(ds.corpus)} passages, {len(ds.queries)} queries, "
          f"{len(ds.triples)} triples to {args.out}")


def cmd_train_teacher(args):
    triples = _triples(args.triples)
    if args.table:
        table = EmbeddingTable.load(args.table)
    else:
        if not args.table_out:
            raise UsageError("train-teacher needs --table or --table-out")
        texts = list(read_id_text(args.corpus).values()) if args.corpus else []
        for q in args.queries or []:
            texts += list(read_id_text(q).values())
        texts += [t for row in triples for t in row]
        table = make_table(texts, t=args.t, seed=args.seed)
        table.save(args.table_out)
        _sidecar(args.table_out, args, vocab_size=table.vocab.size)
    triplets = make_triplets(triples, table.vocab)
    init = Projection.random(table.t, args.h, seed=args.seed + 1)
    cfg = DistillConfig(learning_rate=args.lr, steps=args.steps, batch_size=args.batch_size, seed=args.seed)

    def report(step, value):
        if step % max(args.steps // 10, 1) == 0:
            log.info("teacher step %d loss %.4f", step, value)

    teacher = train_teacher(triplets, table, cfg, init, on_step=report)
    teacher.save(args.out)
    _sidecar(args.out, args)
    print(f"teacher projection {teacher.t}x{teacher.h} written to {args.out}")


def cmd_distill(args):
    table = EmbeddingTable.load(args.table)
    teacher = Projection.load(args.teacher)
    triplets = make_triplets(_triples(args.triples), table.vocab)
    cfg = DistillConfig(gamma=args.gamma, tau=args.tau, mode=args.mode, learning_rate=args.lr,
                        steps=args.steps, batch_size=args.batch_size, seed=args.seed)
    stream = open(args.loss_log, "w") if args.loss_log else None
    try:
        def emit(rec):
            if stream:
                stream.write(json.dumps(rec) + "\n")
        student, records = distill_student(triplets, table, teacher, cfg, on_step=emit)
    finally:
        if stream:
            stream.close()
    student.save(args.out)
    _sidecar(args.out, args)
    if args.loss_log:
        _sidecar(args.loss_log, args)
    if records:
        last = records[-1]
        print(f"step {last['step']}: total {last['total']:.4f} ce {last['ce_term']:.4f} kl {last['kl_term']:.4f}")
    print(f"student projection written to {args.out}")


def cmd_encode(args):
    table, proj = _load_model(args)
    texts = read_id_text(args.input)
    max_len = QUERY_MAX_LEN if args.kind == "query" else PASSAGE_MAX_LEN
    ids = tokenize_all(texts, table.vocab, max_len)
    vecs = encode_pooled_batch(list(ids.values()), table, proj)
    DenseIndex(list(ids), vecs).save(args.out)
    _sidecar(args.out, args)
    print(f"encoded {len(ids)} {args.kind} texts to {args.out}")


def cmd_index(args):
    table, proj = _load_model(args)
    corpus = tokenize_all(read_id_text(args.corpus), table.vocab, PASSAGE_MAX_LEN)
    index = build(corpus, table, proj)
    index.save(args.out)
    _sidecar(args.out, args)
    print(f"indexed {len(index)} passages (dim {index.dim}) to {args.out}")
    if args.storage_report:
        print(storage_report(index, corpus, table, token_dim=args.token_dim).format(), end="")


def cmd_search(args):
    index = DenseIndex.load(args.index)
    if args.query_vectors:
        qv = DenseIndex.load(args.query_vectors)
        run = {q: index.search(v, args.k).entries for q, v in zip(qv.doc_ids, qv.vectors)}
    else:
        if not (args.queries and args.table and args.proj):
            raise UsageError("search needs --query-vectors or --queries with --table and --proj")
        table, proj = _load_model(args)
        queries = tokenize_all(read_id_text(args.queries), table.vocab, QUERY_MAX_LEN)
        run = dense_run(index, queries, table, proj, args.k)
    write_run(run, args.out, args.tag)
    _sidecar(args.out, args)
    print(f"searched {len(run)} queries, k={args.k}, run written to {args.out}")


def cmd_sparse_index(args):
    index = build_sparse_from_text(read_id_text(args.corpus), k1=args.k1, b=args.b)
    index.save(args.out)
    _sidecar(args.out, args)
    print(f"BM25 index over {index.num_docs} passages written to {args.out}")


def cmd_sparse_search(args):
    index = SparseIndex.load(args.index)
    run = sparse_run(index, read_id_text(args.queries), args.k)
    empty = [q for q, r in run.items() if not r]
    if empty:
        log.warning("%d queries matched no indexed term", len(empty))
    write_run(run, args.out, args.tag)
    _sidecar(args.out, args)
    print(f"searched {len(run)} queries, run written to {args.out}")


def cmd_fuse(args):
    sparse, dense = read_run(args.sparse), read_run(args.dense)
    alpha = args.alpha
    if args.tune:
        if not args.qrels:
            raise UsageError("--tune needs --qrels")
        alpha = tune_alpha(sparse, dense, read_qrels(args.qrels), ALPHA_GRID, k=args.k)
        print(f"tuned alpha = {alpha:.2f}")
    if alpha is None:
        raise UsageError("give --alpha or --tune")
    write_run(fuse(sparse, dense, alpha, args.k), args.out, FUSED_TAG)
    _sidecar(args.out, args, alpha_used=alpha)
    print(f"fused run (alpha {alpha:.2f}) written to {args.out}")


def cmd_eval(args):
    results = evaluate(read_run(args.run), read_qrels(args.qrels), args.metrics)
    text = format_report(results)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text + "\n")
        _sidecar(args.out, args)


def cmd_bench(args):
    table, proj = _load_model(args)
    index = DenseIndex.load(args.index)
    queries = tokenize_all(read_id_text(args.queries), table.vocab, QUERY_MAX_LEN)
    sparse = read_run(args.sparse) if args.sparse else None
    timing = bench(index, queries, table, proj, sparse=sparse, alpha=args.alpha, k=args.k)
    print(f"{timing.queries} queries, {len(index)} passages, k={args.k}")
    print(timing.format(), end="")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tctcolbert", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0, help="single source of randomness")
        return sp

    def model_args(sp, required=True):
        sp.add_argument("--table", type=Path, required=required, help="embedding table (.tcte)")
        sp.add_argument("--proj", type=Path, required=required, help="projection (.tctp)")

    sp = cmd("datagen", cmd_datagen, "write a seeded synthetic collection")
    sp.add_argument("--out", type=Path, required=True, help="output directory")
    for f in fields(SynthConfig):
        if f.name != "seed":
            sp.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(f.default), default=f.default)

    sp = cmd("train-teacher", cmd_train_teacher, "fine-tune the MaxSim teacher projection")
    sp.add_argument("--triples", type=Path, required=True)
    sp.add_argument("--table", type=Path, help="existing embedding table")
    sp.add_argument("--table-out", type=Path, help="create a table from the given texts and save it here")
    sp.add_argument("--corpus", type=Path, help="corpus TSV added to the vocabulary")
    sp.add_argument("--queries", type=Path, nargs="*", help="query TSVs added to the vocabulary")
    sp.add_argument("--t", type=int, default=DEFAULT_T, help="embedding width")
    sp.add_argument("--h", type=int, default=DEFAULT_H, help="projected width")
    sp.add_argument("--lr", type=float, default=TEACHER_LR)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("distill", cmd_distill, "distill the teacher into the pooled student")
    sp.add_argument("--triples", type=Path, required=True)
    sp.add_argument("--table", type=Path, required=True)
    sp.add_argument("--teacher", type=Path, required=True)
    sp.add_argument("--mode", choices=("none", "triplet", "in_batch"), default="in_batch")
    sp.add_argument("--gamma", type=float, default=None,
                    help="hard-label weight (default 0.1, or 1.0 with --mode none)")
    sp.add_argument("--tau", type=float, default=0.25)
    sp.add_argument("--lr", type=float, default=STUDENT_LR)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--loss-log", type=Path, help="JSON-lines loss stream")
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("encode", cmd_encode, "pooled vectors for an id/text TSV")
    model_args(sp)
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--kind", choices=("query", "passage"), default="query")
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("index", cmd_index, "build the flat dense index")
    model_args(sp)
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--storage-report", action="store_true", help="print pooled vs per-token storage")
    sp.add_argument("--token-dim", type=int, default=None, help="per-token width for the report")

    sp = cmd("search", cmd_search, "dense top-k retrieval")
    sp.add_argument("--index", type=Path, required=True)
    model_args(sp, required=False)
    sp.add_argument("--queries", type=Path)
    sp.add_argument("--query-vectors", type=Path, help="output of encode --kind query")
    sp.add_argument("--k", type=int, default=1000)
    sp.add_argument("--tag", default="tct-dense")
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("sparse-index", cmd_sparse_index, "build the BM25 inverted index")
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--k1", type=float, default=K1)
    sp.add_argument("--b", type=float, default=B)
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("sparse-search", cmd_sparse_search, "BM25 top-k retrieval")
    sp.add_argument("--index", type=Path, required=True)
    sp.add_argument("--queries", type=Path, required=True)
    sp.add_argument("--k", type=int, default=1000)
    sp.add_argument("--tag", default="bm25")
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("fuse", cmd_fuse, "hybrid sparse + dense fusion")
    sp.add_argument("--sparse", type=Path, required=True)
    sp.add_argument("--dense", type=Path, required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--tune", action="store_true", help="grid-search alpha on --qrels")
    sp.add_argument("--qrels", type=Path)
    sp.add_argument("--k", type=int, default=1000)
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("eval", cmd_eval, "MRR@10, R@1000 and NDCG@10 of a run")
    sp.add_argument("--run", type=Path, required=True)
    sp.add_argument("--qrels", type=Path, required=True)
    sp.add_argument("--metrics", nargs="+", choices=sorted(METRICS), default=["mrr@10", "recall@1000", "ndcg@10"])
    sp.add_argument("--out", type=Path)

    sp = cmd("bench", cmd_bench, "per-query latency by stage")
    model_args(sp)
    sp.add_argument("--index", type=Path, required=True)
    sp.add_argument("--queries", type=Path, required=True)
    sp.add_argument("--sparse", type=Path, help="sparse run to time score combination")
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--k", type=int, default=1000)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "distill" and args.gamma is None:
        args.gamma = 1.0 if args.mode == "none" else 0.1
    try:
        args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, UnicodeDecodeError) as e:
        print(f"data error ({args.command}): {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
