"""Synthetic corpora with known dependency structure, plus exact providers.

Three document kinds, all emitted over a printable-ASCII alphabet so they
survive any text serialization:

* ``markov`` -- sampled from a seeded order-k transition table.  An exact
  provider for this source exists (:func:`true_markov_provider`); scoring
  its own documents with it yields gains of exactly zero wherever the
  short context is at least ``order`` tokens, which pins down the null
  behaviour of the whole scoring stack.
* ``recall`` -- key/value pairs defined near the start and queried
  verbatim much later (farther than the short context window), so only a
  long-context model can anticipate the values: a needle-in-a-haystack
  corpus in miniature.  Filler is drawn from the same uniform alphabet as
  keys and values, so any gain comes from copying, not vocabulary shift.
* ``repeat`` -- a short motif tiled for the whole document.  Locally
  predictable; extended context adds nothing once a single period is
  visible, so these should score near the floor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .corpus import Document
from .ngram import LogProbSlice

__all__ = [
    "PRINTABLE_OFFSET",
    "SynthSpec",
    "TrueMarkovModel",
    "generate",
    "true_markov_provider",
]

#: synthetic symbols s are emitted as byte value s + PRINTABLE_OFFSET
PRINTABLE_OFFSET = 33
MAX_ALPHABET = 94  # keeps every emitted byte printable ASCII

KINDS = ("markov", "recall", "repeat")

_DEFAULTS: dict[str, dict] = {
    "markov": {"alphabet": 94, "order": 2, "concentration": 3.0, "table_seed": 0},
    "recall": {
        "alphabet": 94,
        "n_keys": 4,
        "key_len": 8,
        "value_len": 32,
        "n_queries": 24,
        "min_distance": 640,
    },
    "repeat": {"alphabet": 94, "period": 64},
}


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    length: int
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}, expected one of {KINDS}")
        if self.length < 2:
            raise ValueError(f"length must be >= 2, got {self.length}")
        merged = dict(_DEFAULTS[self.kind])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        alphabet = int(merged["alphabet"])
        if not (2 <= alphabet <= MAX_ALPHABET):
            raise ValueError(f"alphabet must be in [2, {MAX_ALPHABET}], got {alphabet}")
        getattr(self, f"_check_{self.kind}")()

    def _check_markov(self):
        order = int(self.params["order"])
        alphabet = int(self.params["alphabet"])
        if order < 1:
            raise ValueError(f"markov order must be >= 1, got {order}")
        if alphabet**order > 1 << 20:
            raise ValueError(f"markov state space {alphabet}^{order} is too large")

    def _check_recall(self):
        p = self.params
        n_keys, key_len, value_len = int(p["n_keys"]), int(p["key_len"]), int(p["value_len"])
        n_queries, min_distance = int(p["n_queries"]), int(p["min_distance"])
        if min(n_keys, key_len, value_len, n_queries) < 1 or min_distance < 1:
            raise ValueError("recall parameters must all be >= 1")
        short_len = int(p.get("short_len", 0))
        if short_len and min_distance <= short_len:
            raise ValueError(
                f"recall min_distance {min_distance} must exceed the short context {short_len}"
            )
        event_len = key_len + value_len
        def_len = n_keys * event_len
        remaining = self.length - def_len - min_distance
        if remaining < n_queries * event_len:
            raise ValueError(
                f"recall doc of length {self.length} cannot fit {n_queries} queries "
                f"after {def_len} definition tokens and a {min_distance}-token gap"
            )

    def _check_repeat(self):
        period = int(self.params["period"])
        if not (1 <= period <= self.length // 2):
            raise ValueError(f"repeat period must be in [1, length/2], got {period}")


# ---------------------------------------------------------------------------
# markov source tables
# ---------------------------------------------------------------------------


def _markov_tables(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, int, int]:
    """(initial dist, transition rows, order, alphabet) for a markov spec.

    Rows are floored at 1e-12 and renormalized so the source assigns positive
    probability to every continuation; generator and provider share the
    exact same tables.
    """
    p = spec.params
    alphabet, order = int(p["alphabet"]), int(p["order"])
    rng = np.random.default_rng(int(p["table_seed"]))
    pi = rng.dirichlet(np.full(alphabet, 2.0))
    pi = np.maximum(pi, 1e-12)
    pi /= pi.sum()
    rows = rng.dirichlet(np.full(alphabet, float(p["concentration"])), size=alphabet**order)
    rows = np.maximum(rows, 1e-12)
    rows /= rows.sum(axis=1, keepdims=True)
    return pi, rows, order, alphabet


class TrueMarkovModel:
    """Exact logprob provider for documents sampled from a markov SynthSpec.

    Positions with fewer than ``order`` tokens of visible prefix use the
    initial distribution (matching how documents are sampled); all other
    positions use the transition row for the last ``order`` symbols.
    """

    def __init__(self, spec: SynthSpec):
        if spec.kind != "markov":
            raise ValueError(f"true_markov_provider requires a markov spec, got {spec.kind!r}")
        self._pi, self._rows, self.order, self.alphabet = _markov_tables(spec)
        self._log_pi = np.log(self._pi)
        self._log_rows = np.log(self._rows)
        self.vocab_size = 256
        self.tokenizer_id = "bytes-v1"

    def _symbols(self, tokens) -> np.ndarray:
        sym = np.asarray(tokens, dtype=np.int64) - PRINTABLE_OFFSET
        if sym.size and (int(sym.min()) < 0 or int(sym.max()) >= self.alphabet):
            raise ValueError("token outside the markov source alphabet")
        return sym

    def logprob_slice(self, tokens, eval_start: int, eval_end: int, seq_id: str = "") -> LogProbSlice:
        sym = self._symbols(tokens)
        n = int(sym.shape[0])
        if not (1 <= eval_start < eval_end <= n):
            raise ValueError(f"eval range [{eval_start}, {eval_end}) invalid for {n} tokens")
        order, A = self.order, self.alphabet
        out = np.empty(eval_end - eval_start, dtype=np.float64)
        for i in range(eval_start, min(eval_end, order)):
            out[i - eval_start] = self._log_pi[sym[i]]
        lo = max(eval_start, order)
        if lo < eval_end:
            keys = np.zeros(eval_end - lo, dtype=np.int64)
            for j in range(order):
                keys = keys * A + sym[lo - order + j : eval_end - order + j]
            out[lo - eval_start :] = self._log_rows[keys, sym[lo:eval_end]]
        return LogProbSlice(seq_id=seq_id, eval_start=eval_start, values=out)

    def full_next_distribution(self, prefix) -> np.ndarray:
        sym = self._symbols(prefix)
        probs = np.zeros(self.vocab_size, dtype=np.float64)
        if sym.shape[0] < self.order:
            row = self._pi
        else:
            key = 0
            for s in sym[-self.order :].tolist():
                key = key * self.alphabet + s
            row = self._rows[key]
        probs[PRINTABLE_OFFSET : PRINTABLE_OFFSET + self.alphabet] = row
        return probs


def true_markov_provider(spec: SynthSpec) -> TrueMarkovModel:
    return TrueMarkovModel(spec)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _sample_markov(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, str]]:
    pi, rows, order, A = _markov_tables(spec)
    n = spec.length
    sym = np.empty(n, dtype=np.int64)
    head = min(order, n)
    pi_cum = np.cumsum(pi)
    u = rng.random(n)
    top = A - 1  # inverse-CDF draws clamp here in the float-rounding corner
    for i in range(head):
        sym[i] = min(int(np.searchsorted(pi_cum, u[i], side="right")), top)
    rows_cum = np.cumsum(rows, axis=1)
    key_mod = A ** (order - 1)
    key = 0
    for s in sym[:head]:
        key = (key % key_mod) * A + int(s)
    for i in range(head, n):
        s = min(int(np.searchsorted(rows_cum[key], u[i], side="right")), top)
        sym[i] = s
        key = (key % key_mod) * A + s
    return sym, {}


def _sample_recall(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, str]]:
    p = spec.params
    A = int(p["alphabet"])
    n_keys, key_len, value_len = int(p["n_keys"]), int(p["key_len"]), int(p["value_len"])
    n_queries, min_distance = int(p["n_queries"]), int(p["min_distance"])
    event_len = key_len + value_len
    n = spec.length

    keys = rng.integers(0, A, size=(n_keys, key_len))
    values = rng.integers(0, A, size=(n_keys, value_len))
    sym = rng.integers(0, A, size=n)  # filler: same uniform alphabet as keys/values

    def_len = n_keys * event_len
    for i in range(n_keys):
        start = i * event_len
        sym[start : start + key_len] = keys[i]
        sym[start + key_len : start + event_len] = values[i]

    first_query = def_len + min_distance
    stride = (n - first_query) // n_queries
    query_starts = []
    for q in range(n_queries):
        key_idx = q % n_keys
        start = first_query + q * stride
        sym[start : start + key_len] = keys[key_idx]
        sym[start + key_len : start + event_len] = values[key_idx]
        query_starts.append(start)

    meta = {
        "query_starts": json.dumps(query_starts),
        "event_len": str(event_len),
        "def_len": str(def_len),
    }
    return sym, meta


def _sample_repeat(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, str]]:
    p = spec.params
    period = int(p["period"])
    motif = rng.integers(0, int(p["alphabet"]), size=period)
    reps = -(-spec.length // period)
    return np.tile(motif, reps)[: spec.length], {"period": str(period)}


_SAMPLERS = {"markov": _sample_markov, "recall": _sample_recall, "repeat": _sample_repeat}


def generate(spec: SynthSpec, seed: int, count: int) -> list[Document]:
    """Deterministically generate ``count`` documents for ``spec``.

    Document i is drawn from an rng keyed by (seed, i), so corpora are
    reproducible and individual documents are independent of ``count``.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    sampler = _SAMPLERS[spec.kind]
    docs = []
    base_meta = {
        "kind": spec.kind,
        "seed": str(seed),
        "params": json.dumps(dict(spec.params), sort_keys=True),
    }
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        sym, meta = sampler(spec, rng)
        text = (sym + PRINTABLE_OFFSET).astype(np.uint8).tobytes()
        docs.append(
            Document(
                doc_id=f"{spec.kind}-{seed}-{i:05d}",
                text=text,
                source=f"synth-{spec.kind}",
                meta={**base_meta, **meta},
            )
        )
    return docs
