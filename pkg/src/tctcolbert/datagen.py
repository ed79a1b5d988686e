"""Seeded synthetic retrieval collections.

Each topic owns a block of word types with Zipf-like frequencies. Passages
mix topic words with a shared background vocabulary and punctuation. A query
is sampled from one passage's topic words (with some substitution noise),
and that passage is its single relevant document. Training triplets pair a
query with its passage and a negative drawn from the BM25 top hits, which
tend to share topic words with the positive.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import trec
from .sparse_index import analyze, build_sparse_from_text, sample_bm25_negative

MIN_TOPIC_VOCAB = 5


@dataclass
class SynthConfig:
    num_topics: int = 20
    docs_per_topic: int = 50
    vocab_size: int = 2000
    topic_vocab_overlap: float = 0.2
    query_len: int = 6
    doc_len: int = 40
    num_queries: int = 200
    num_train_queries: int = 3000
    background_fraction: float = 0.1
    background_rate: float = 0.3
    query_noise: float = 0.2
    # share of topic words that queries may spell differently (lexical gap)
    synonym_fraction: float = 0.3
    # share of passages that are unjudged near-copies of a sibling (false negatives)
    duplicate_fraction: float = 0.5
    duplicate_noise: float = 0.3
    synonym_rate: float = 0.5
    zipf_exponent: float = 1.0
    # 1% of the default corpus, so hard negatives stay hard
    negative_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("num_topics", "docs_per_topic", "vocab_size", "query_len", "doc_len",
                     "num_queries", "num_train_queries", "negative_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("topic_vocab_overlap", "background_fraction", "background_rate", "query_noise",
                     "synonym_fraction", "synonym_rate", "duplicate_fraction", "duplicate_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def num_background(self) -> int:
        return int(round(self.vocab_size * self.background_fraction))

    @property
    def topic_block(self) -> int:
        return (self.vocab_size - self.num_background) // self.num_topics


@dataclass
class SynthDataset:
    config: SynthConfig
    corpus: dict[str, str]
    queries: dict[str, str]
    qrels: trec.Qrels
    train_queries: dict[str, str]
    train_qrels: trec.Qrels
    triples: list[tuple[str, str, str]]
    doc_topics: dict[str, int] = field(default_factory=dict, repr=False)
    topic_vocab: list[list[str]] = field(default_factory=list, repr=False)

    def save(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": out / "corpus.tsv",
            "queries": out / "queries.tsv",
            "qrels": out / "qrels.txt",
            "train_queries": out / "train_queries.tsv",
            "train_qrels": out / "train_qrels.txt",
            "triples": out / "triples.tsv",
        }
        trec.write_tsv(self.corpus.items(), paths["corpus"])
        trec.write_tsv(self.queries.items(), paths["queries"])
        trec.write_qrels(self.qrels, paths["qrels"])
        trec.write_tsv(self.train_queries.items(), paths["train_queries"])
        trec.write_qrels(self.train_qrels, paths["train_qrels"])
        trec.write_tsv(self.triples, paths["triples"])
        return paths


def _zipf(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _render(words: list[str], rng: np.random.Generator) -> str:
    out = []
    for i, w in enumerate(words, 1):
        out.append(w)
        if i == len(words):
            out.append(".")
        elif i % 12 == 0:
            out.append(".")
        elif rng.random() < 0.08:
            out.append(",")
    text = " ".join(out)
    return text.replace(" .", ".").replace(" ,", ",")


def generate(config: SynthConfig | None = None) -> SynthDataset:
    cfg = config or SynthConfig()
    if cfg.topic_block < MIN_TOPIC_VOCAB:
        raise ValueError(
            f"vocab_size={cfg.vocab_size} leaves {cfg.topic_block} words per topic "
            f"for {cfg.num_topics} topics (need >= {MIN_TOPIC_VOCAB})"
        )
    rng = np.random.default_rng(cfg.seed)
    width = len(str(cfg.vocab_size - 1))
    words = [f"w{i:0{width}d}" for i in range(cfg.vocab_size)]
    topic_words = words[cfg.num_background:cfg.num_background + cfg.num_topics * cfg.topic_block]
    n_syn = int(round(cfg.synonym_fraction * len(topic_words)))
    # query-only spellings: never emitted in passages
    synonyms = {topic_words[i]: f"s{j:0{width}d}"
                for j, i in enumerate(sorted(rng.choice(len(topic_words), size=n_syn, replace=False)))}
    background = words[:cfg.num_background]
    bg_set = set(background)
    m = cfg.topic_block
    blocks = [words[cfg.num_background + z * m: cfg.num_background + (z + 1) * m]
              for z in range(cfg.num_topics)]

    topic_vocab = []
    n_shared = int(round(cfg.topic_vocab_overlap * m)) if cfg.num_topics > 1 else 0
    for z, block in enumerate(blocks):
        vocab = list(block)
        if n_shared:
            others = [w for y, b in enumerate(blocks) if y != z for w in b]
            slots = rng.choice(m, size=n_shared, replace=False)
            borrowed = rng.choice(len(others), size=n_shared, replace=False)
            for s, o in zip(slots, borrowed):
                vocab[s] = others[o]
        rng.shuffle(vocab)
        topic_vocab.append(vocab)

    topic_p = _zipf(m, cfg.zipf_exponent)
    bg_p = _zipf(len(background), cfg.zipf_exponent) if background else None

    corpus: dict[str, str] = {}
    doc_words: dict[str, list[str]] = {}
    doc_topics: dict[str, int] = {}
    dwidth = len(str(cfg.num_topics * cfg.docs_per_topic - 1))
    for z in range(cfg.num_topics):
        topic_docs: list[list[str]] = []
        for _ in range(cfg.docs_per_topic):
            docid = f"D{len(corpus):0{dwidth}d}"
            topic_draw = rng.choice(m, size=cfg.doc_len, p=topic_p)
            if background:
                bg_draw = rng.choice(len(background), size=cfg.doc_len, p=bg_p)
                use_bg = rng.random(cfg.doc_len) < cfg.background_rate
            else:
                bg_draw = use_bg = np.zeros(cfg.doc_len, dtype=np.int64)
            ws = [background[b] if u else topic_vocab[z][t]
                  for t, b, u in zip(topic_draw, bg_draw, use_bg)]
            if topic_docs and rng.random() < cfg.duplicate_fraction:
                # near-duplicate of an earlier passage: relevant in spirit, never judged
                src = topic_docs[rng.integers(len(topic_docs))]
                keep = rng.random(cfg.doc_len) >= cfg.duplicate_noise
                ws = [a if k else b for a, b, k in zip(src, ws, keep)]
                rng.shuffle(ws)
            topic_docs.append(ws)
            corpus[docid] = _render(ws, rng)
            doc_words[docid] = [w for w in ws if w not in bg_set]
            doc_topics[docid] = z

    doc_ids = list(corpus)

    def make_query(docid: str) -> str:
        z = doc_topics[docid]
        pool = doc_words[docid] or topic_vocab[z]
        out = []
        for _ in range(cfg.query_len):
            if rng.random() < cfg.query_noise:
                out.append(topic_vocab[z][rng.choice(m, p=topic_p)])
            else:
                out.append(pool[rng.integers(len(pool))])
        out = [synonyms[w] if w in synonyms and rng.random() < cfg.synonym_rate else w for w in out]
        return " ".join(out)

    def make_queries(prefix: str, n: int):
        qwidth = len(str(n - 1))
        queries, qrels = {}, {}
        for i in range(n):
            docid = doc_ids[rng.integers(len(doc_ids))]
            qid = f"{prefix}{i:0{qwidth}d}"
            queries[qid] = make_query(docid)
            qrels[qid] = {docid: 1}
        return queries, qrels

    queries, qrels = make_queries("Q", cfg.num_queries)
    train_queries, train_qrels = make_queries("T", cfg.num_train_queries)

    sparse = build_sparse_from_text(corpus)
    triples = []
    for qid, text in train_queries.items():
        positives = set(train_qrels[qid])
        try:
            neg = sample_bm25_negative(sparse, analyze(text), positives, rng, cfg.negative_depth)
        except ValueError:
            # no lexical overlap with any other passage (e.g. all-synonym query)
            others = [d for d in doc_ids if d not in positives]
            neg = others[rng.integers(len(others))]
        (pos,) = positives
        triples.append((text, corpus[pos], corpus[neg]))

    return SynthDataset(cfg, corpus, queries, qrels, train_queries, train_qrels, triples,
                        doc_topics=doc_topics, topic_vocab=topic_vocab)


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
