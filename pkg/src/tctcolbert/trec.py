"""TREC-style run and qrels files plus the tab-separated text formats.

A run is ``{qid: [(docid, score), ...]}`` with each list in rank order.
Qrels are ``{qid: {docid: grade}}``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

Run = dict[str, list[tuple[str, float]]]
Qrels = dict[str, dict[str, int]]


def _data_lines(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line


def read_run(path) -> Run:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
        qid, _, docid, rank, score, _ = parts
        rows.setdefault(qid, []).append((int(rank), docid, float(score)))
    return {qid: [(d, s) for _, d, s in sorted(r)] for qid, r in rows.items()}


def format_run(run: Run, tag: str) -> str:
    out = []
    for qid, ranked in run.items():
        for rank, (docid, score) in enumerate(ranked, 1):
            out.append(f"{qid} Q0 {docid} {rank} {score:.6f} {tag}\n")
    return "".join(out)


def write_run(run: Run, path, tag: str) -> None:
    Path(path).write_text(format_run(run, tag), encoding="utf-8")


def read_qrels(path) -> Qrels:
    qrels: Qrels = {}
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
        qid, _, docid, grade = parts
        g = int(grade)
        if g < 0:
            raise ValueError(f"{path}:{lineno}: negative relevance grade")
        qrels.setdefault(qid, {})[docid] = g
    return qrels


def write_qrels(qrels: Qrels, path) -> None:
    lines = [
        f"{qid} 0 {docid} {grade}\n"
        for qid, judged in qrels.items()
        for docid, grade in judged.items()
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_tsv(path, ncols: int) -> list[list[str]]:
    """Read tab-separated records with exactly ``ncols`` fields."""
    rows = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != ncols:
            raise ValueError(f"{path}:{lineno}: expected {ncols} tab-separated fields, got {len(parts)}")
        rows.append(parts)
    return rows


def write_tsv(rows: Iterable[Iterable[str]], path) -> None:
    Path(path).write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")


def read_id_text(path) -> dict[str, str]:
    """``id TAB text`` records (corpus or queries); ids must be unique."""
    out: dict[str, str] = {}
    for docid, text in read_tsv(path, 2):
        if docid in out:
            raise ValueError(f"{path}: duplicate id {docid!r}")
        out[docid] = text
    return out
