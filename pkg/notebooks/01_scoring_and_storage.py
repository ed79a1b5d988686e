"""
Late interaction versus a single pooled vector
==============================================

Score one query against a few passages both ways, then look at what each
representation costs to store for a whole synthetic collection.
"""

import numpy as np

from tctcolbert.datagen import SynthConfig, generate
from tctcolbert.dense_index import build, storage_report
from tctcolbert.encoder import (
    EmbeddingTable, Projection, Vocabulary, encode_pooled, encode_teacher_doc,
    encode_teacher_query, tokenize,
)
from tctcolbert.pipeline import prepare
from tctcolbert.scoring import maxsim, pool_dot

# a tiny vocabulary, punctuation included
texts = ["red apples grow on trees.", "green apples, sour ones.", "trains run on rails."]
vocab = Vocabulary.from_texts(texts + ["which apples are red"])
table = EmbeddingTable.random(vocab, t=16, seed=0)
proj = Projection.random(16, 8, seed=1)

q_ids = tokenize("which apples are red", vocab, 32)
q_tok = encode_teacher_query(q_ids, table, proj)
q_pool = encode_pooled(q_ids, table, proj)

for text in texts:
    ids = tokenize(text, vocab, 150)
    d_tok = encode_teacher_doc(ids, table, proj)   # punctuation rows dropped
    d_pool = encode_pooled(ids, table, proj)
    print(f"{text:28s} maxsim {maxsim(q_tok.token_vectors, d_tok.token_vectors):6.3f}"
          f"   pooled dot {pool_dot(q_pool, d_pool):7.4f}"
          f"   rows kept {len(d_tok.kept_positions)}/{len(ids)}")

# MaxSim rewards exact token matches (each normalized row scores 1 with itself);
# the pooled score blurs all tokens into one mean vector.

# storage for the default synthetic corpus
ds = generate(SynthConfig(seed=0))
prep = prepare(ds, seed=0)
index = build(prep.corpus_ids, prep.table, Projection.random(64, 32, seed=1))
rep = storage_report(index, prep.corpus_ids, prep.table)
print()
print(rep.format())
print(f"one vector per passage is {rep.ratio:.1f}x smaller than one per token")
