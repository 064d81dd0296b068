"""Exact information-theoretic quantities for small discrete distributions.

Everything here works by direct enumeration over explicit probability
tables, so it is only meant for desk-scale vocabularies (dims of a few
dozen at most).  It serves as ground truth for the token-level gain
machinery in :mod:`ctxgain.scoring`:

* ``cmi_entropy_form`` / ``cmi_kl_form`` -- two equivalent definitions of
  the conditional mutual information I(T; E | S) over a joint p(s, e, t).
* ``one_sample_kl`` -- KL(p_long || p_short) between two next-token
  distributions, i.e. the gain of one observed (s, e) context pair.
* ``surrogate_term`` -- the single-token term p_long * ln(p_long / p_short)
  of that KL sum; summed over the vocabulary the terms reproduce
  ``one_sample_kl`` exactly.

All logarithms are natural, so results are in nats.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "InfiniteDivergenceError",
    "cmi_entropy_form",
    "cmi_kl_form",
    "one_sample_kl",
    "random_joint",
    "surrogate_term",
    "validate_joint",
]

#: absolute slack allowed on "sums to one" checks
_SUM_TOL = 1e-12

#: largest axis length accepted for a joint table; keeps enumeration instant
MAX_JOINT_DIM = 16


class InfiniteDivergenceError(ValueError):
    """KL divergence is +infinity: p_short assigns zero mass where p_long does not.

    Raised instead of returning ``float('inf')`` so that downstream
    aggregation can never silently absorb an infinite term.
    """

    def __init__(self, index: int):
        self.index = index
        super().__init__(
            f"infinite divergence: p_short[{index}] == 0 while p_long[{index}] > 0"
        )


def validate_joint(p) -> np.ndarray:
    """Check that ``p`` is a valid 3-axis joint table p(s, e, t) and return it.

    Requires non-negative entries summing to 1 within 1e-12 and every axis
    length in [1, 16].
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"joint table must have 3 axes (s, e, t), got {arr.ndim}")
    if any(d < 1 or d > MAX_JOINT_DIM for d in arr.shape):
        raise ValueError(f"joint axis lengths must be in [1, {MAX_JOINT_DIM}], got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("joint table has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > _SUM_TOL:
        raise ValueError(f"joint table sums to {total!r}, expected 1 within {_SUM_TOL}")
    return arr


def random_joint(dims: tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    """Draw a random joint table by normalizing independent positive variates."""
    raw = rng.random(dims) + 1e-3
    return raw / raw.sum()


def _xlogx(a: np.ndarray) -> np.ndarray:
    # a * ln(a) with the 0 * log 0 = 0 convention
    out = np.zeros_like(a)
    mask = a > 0
    out[mask] = a[mask] * np.log(a[mask])
    return out


def cmi_entropy_form(joint) -> float:
    """I(T; E | S) = H(T | S) - H(T | S, E), by exact enumeration.

    ``joint`` is a 3-axis table p(s, e, t); the result is in nats.
    """
    p = validate_joint(joint)
    p_set = p  # p(s, e, t)
    p_se = p.sum(axis=2)  # p(s, e)
    p_st = p.sum(axis=1)  # p(s, t)
    p_s = p.sum(axis=(1, 2))  # p(s)

    # H(T|S) = -sum_{s,t} p(s,t) ln p(t|s) = -sum xlogx(p_st) + sum xlogx(p_s)
    h_t_given_s = -float(_xlogx(p_st).sum()) + float(_xlogx(p_s).sum())
    # H(T|S,E) analogously over the full table
    h_t_given_se = -float(_xlogx(p_set).sum()) + float(_xlogx(p_se).sum())
    return h_t_given_s - h_t_given_se


def cmi_kl_form(joint) -> float:
    """I(T; E | S) = E_{p(s,e)}[ KL( p(T|s,e) || p(T|s) ) ], by exact enumeration."""
    p = validate_joint(joint)
    p_se = p.sum(axis=2)
    p_st = p.sum(axis=1)
    p_s = p.sum(axis=(1, 2))

    total = 0.0
    n_s, n_e, n_t = p.shape
    for s in range(n_s):
        if p_s[s] == 0.0:
            continue
        cond_t_s = p_st[s] / p_s[s]
        for e in range(n_e):
            w = p_se[s, e]
            if w == 0.0:
                continue
            cond_t_se = p[s, e] / w
            kl = 0.0
            for t in range(n_t):
                q = cond_t_se[t]
                if q > 0.0:
                    # cond_t_s[t] >= p(s,e,t)/p(s) > 0 whenever q > 0
                    kl += q * math.log(q / cond_t_s[t])
            total += w * kl
    return total


def one_sample_kl(p_long, p_short) -> float:
    """KL( p_long || p_short ) between two distributions on the same support.

    Zero-probability entries of ``p_long`` contribute 0.  If ``p_short`` has
    zero mass where ``p_long`` does not, the divergence is infinite and
    :class:`InfiniteDivergenceError` is raised.
    """
    pl = np.asarray(p_long, dtype=np.float64)
    ps = np.asarray(p_short, dtype=np.float64)
    if pl.shape != ps.shape or pl.ndim != 1:
        raise ValueError(f"support mismatch: {pl.shape} vs {ps.shape}")
    terms = []
    for t in range(pl.shape[0]):
        a = pl[t]
        if a == 0.0:
            continue
        b = ps[t]
        if b == 0.0:
            raise InfiniteDivergenceError(t)
        terms.append(a * math.log(a / b))
    return math.fsum(terms)


def surrogate_term(p_long_t: float, p_short_t: float) -> float:
    """Single-token gain term p_long * ln(p_long / p_short).

    Both probabilities must lie in (0, 1].  Summing this term over the whole
    vocabulary reproduces :func:`one_sample_kl`; keeping only the realized
    token's term is the practical per-token score.
    """
    if not (0.0 < p_long_t <= 1.0) or not (0.0 < p_short_t <= 1.0):
        raise ValueError(
            f"probabilities must be in (0, 1], got p_long={p_long_t!r} p_short={p_short_t!r}"
        )
    return p_long_t * math.log(p_long_t / p_short_t)
