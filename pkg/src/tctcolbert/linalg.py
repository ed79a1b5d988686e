"""Small dense kernels shared by the encoders and the trainer.

Everything is computed in float64. Inputs may be any array-like; outputs are
numpy arrays (or Python floats for scalar reductions).
"""

from __future__ import annotations

import numpy as np


def _vec(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return v


def dot(a, b) -> float:
    a = _vec(a, "a")
    b = _vec(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: len(a)={a.size}, len(b)={b.size}")
    return float(a @ b)


def l2_normalize(v) -> np.ndarray:
    v = _vec(v, "v")
    norm = np.linalg.norm(v)
    if not norm > 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def l2_normalize_rows(m) -> np.ndarray:
    """Row-wise :func:`l2_normalize`; raises naming the first zero row."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(~(norms > 0.0))
    if bad.size:
        raise ValueError(f"zero-norm row at position {int(bad[0])}")
    return m / norms[:, None]


def softmax(scores, temperature: float = 1.0) -> np.ndarray:
    """Tempered softmax, exp(s_i / T) / sum_j exp(s_j / T).

    Works on the last axis, so a 2-D input gives one distribution per row.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    s = np.asarray(scores, dtype=np.float64) / temperature
    if s.size == 0:
        raise ValueError("scores must be non-empty")
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    s = np.asarray(scores, dtype=np.float64) / temperature
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def kl_divergence(p_hat, p) -> float:
    """KL(p_hat || p) in nats, with 0 * log(0 / x) taken as 0."""
    p_hat = _vec(p_hat, "p_hat")
    p = _vec(p, "p")
    if p_hat.shape != p.shape:
        raise ValueError(f"dimension mismatch: {p_hat.size} vs {p.size}")
    for name, dist in (("p_hat", p_hat), ("p", p)):
        if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} is not a probability vector")
    support = p_hat > 0
    if np.any(p[support] == 0):
        raise ValueError("infinite divergence: p is zero where p_hat is positive")
    terms = p_hat[support] * (np.log(p_hat[support]) - np.log(p[support]))
    # Gibbs' inequality; clip the -1e-17 style rounding residue
    return max(float(terms.sum()), 0.0)
