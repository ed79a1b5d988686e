"""
Distillation strategies on the synthetic collection
===================================================

Train the MaxSim teacher, freeze it, then train three pooled students that
differ only in what the teacher supervises: nothing, each query's own
(positive, negative) pair, or every passage in the batch.
"""

import time

import numpy as np

from tctcolbert.datagen import SynthConfig, generate
from tctcolbert.distill import DistillConfig, distill_student, train_teacher
from tctcolbert.encoder import Projection
from tctcolbert.pipeline import (
    ABLATION_MODES, STUDENT_LR, TEACHER_LR, ablation_config, prepare, student_mrr, teacher_mrr,
)

SEED = 0
ds = generate(SynthConfig(seed=SEED))
prep = prepare(ds, seed=SEED)
print(f"{len(ds.corpus)} passages, {len(ds.queries)} held-out queries, {len(prep.triplets)} triplets")

init = Projection.random(prep.table.t, 32, seed=SEED + 1)
t0 = time.perf_counter()
teacher = train_teacher(prep.triplets, prep.table, DistillConfig(learning_rate=TEACHER_LR, seed=SEED), init)
print(f"teacher MRR@10: untrained {teacher_mrr(prep, init):.4f}, trained {teacher_mrr(prep, teacher):.4f}"
      f"  ({time.perf_counter() - t0:.1f}s)")
print(f"student initialized from the teacher, before training: {student_mrr(prep, teacher):.4f}")

curves = {}
for mode in ABLATION_MODES:
    cfg = ablation_config(DistillConfig(learning_rate=STUDENT_LR, seed=SEED), mode)
    t0 = time.perf_counter()
    student, records = distill_student(prep.triplets, prep.table, teacher, cfg)
    curves[mode] = np.array([r["total"] for r in records])
    print(f"{mode:9s} gamma={cfg.gamma:.1f}  MRR@10 {student_mrr(prep, student):.4f}"
          f"  ({time.perf_counter() - t0:.1f}s)")

# loss every 200 steps, averaged over 200-step blocks
print()
for mode, c in curves.items():
    print(mode.ljust(9), " ".join(f"{v:.3f}" for v in c.reshape(-1, 200).mean(axis=1)))
