"""Deterministic cache-augmented n-gram language model.

The built-in logprob backend is an add-k smoothed n-gram model mixed with a
decayed-recency cache over the visible prefix:

    p(t | prefix) = (1 - lam) * p_ngram(t | last order-1 tokens)
                  + lam      * p_cache(t | prefix)

    p_ngram(t | ctx) = (count(ctx, t) + k) / (count(ctx) + k * V)
    p_cache(t)       = sum_{j : x_j = t} decay^(i-1-j)  /  sum_{j < i} decay^(i-1-j)

where i is the position being predicted and j ranges over the provided
prefix.  The cache term is what gives the model genuine long-range
predictive power: tokens that reappeared recently anywhere in the prefix
get boosted, so extending the visible context really changes predictions.
The n-gram term uses the longest context table available at a position
(shorter near the window start), with no backoff interpolation across
orders; an unseen context therefore yields the uniform 1/V distribution
under add-k.

A fitted model is immutable and safe to share across workers.  Predictions
condition only on tokens inside the window passed to ``logprob_slice``;
callers control context truncation by slicing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import ConfigError, TokenizedDoc

MODEL_FORMAT = "ctxgain-ngram"
MODEL_FORMAT_VERSION = 1


class VocabTooLargeError(RuntimeError):
    """Materializing a full next-token table was refused (vocab too large)."""


@dataclass(frozen=True)
class LogProbSlice:
    """Natural-log probabilities of realized next tokens over an eval range.

    ``values[i]`` is ln p(tokens[eval_start + i] | provided prefix).
    """

    seq_id: str
    eval_start: int
    values: np.ndarray

    def __post_init__(self):
        vals = self.values
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{self.seq_id or '<slice>'}: non-finite logprob")
        if vals.size and float(vals.max()) > 0.0:
            raise ValueError(f"{self.seq_id or '<slice>'}: logprob above 0")

    def __len__(self) -> int:
        return int(self.values.shape[0])


class CacheNGramModel:
    """Immutable fitted n-gram + recency-cache model.

    Counts are kept per context length (0 .. order-1) in flat int-keyed
    dicts; a length-L context (c_1 .. c_L) is encoded as the base-V integer
    c_1 * V^(L-1) + ... + c_L, and a (context, token) pair as ctx_key * V + t.
    """

    def __init__(
        self,
        order: int,
        vocab_size: int,
        add_k: float,
        cache_lambda: float,
        cache_decay: float,
        tokenizer_id: str,
        pair_counts: list[dict[int, int]],
        ctx_totals: list[dict[int, int]],
    ):
        _validate_params(order, vocab_size, add_k, cache_lambda, cache_decay)
        self.order = order
        self.vocab_size = vocab_size
        self.add_k = add_k
        self.cache_lambda = cache_lambda
        self.cache_decay = cache_decay
        self.tokenizer_id = tokenizer_id
        self._pair_counts = pair_counts
        self._ctx_totals = ctx_totals

    # -- queries ------------------------------------------------------------

    def info(self) -> dict:
        return {
            "order": self.order,
            "vocab_size": self.vocab_size,
            "add_k": self.add_k,
            "cache_lambda": self.cache_lambda,
            "cache_decay": self.cache_decay,
            "tokenizer_id": self.tokenizer_id,
        }

    def logprob_slice(self, tokens, eval_start: int, eval_end: int, seq_id: str = "") -> LogProbSlice:
        """Score positions [eval_start, eval_end) of ``tokens``.

        Position i conditions on tokens[0:i] of the provided window only.
        """
        arr = np.asarray(tokens)
        n = int(arr.shape[0])
        if not (1 <= eval_start < eval_end <= n):
            raise ValueError(
                f"eval range [{eval_start}, {eval_end}) invalid for {n} tokens (need 1 <= start < end <= len)"
            )
        V = self.vocab_size
        if n and (int(arr.min()) < 0 or int(arr.max()) >= V):
            raise ValueError(f"token id out of range for vocab_size {V}")

        toks = arr.tolist()
        out = np.empty(eval_end - eval_start, dtype=np.float64)

        k = self.add_k
        kV = k * V
        lam = self.cache_lambda
        gamma = self.cache_decay
        use_cache = lam > 0.0
        one_minus_lam = 1.0 - lam
        mc = self.order - 1
        pair = self._pair_counts
        tot = self._ctx_totals
        log = math.log

        # lazy decayed cache: w[t] is the weight of t at step last[t]
        w = [0.0] * V
        last = [0] * V
        if use_cache:
            if gamma == 1.0:
                pg = None
                for j in range(eval_start):
                    w[toks[j]] += 1.0
            else:
                pg = np.power(gamma, np.arange(n + 1, dtype=np.float64)).tolist()
                for j in range(eval_start):
                    t = toks[j]
                    w[t] = w[t] * pg[j + 1 - last[t]] + 1.0
                    last[t] = j + 1
            inv_1mg = 0.0 if gamma == 1.0 else 1.0 / (1.0 - gamma)

        def eval_at(i: int, L: int, ck: int) -> float:
            t = toks[i]
            c_pair = pair[L].get(ck * V + t, 0)
            c_tot = tot[L].get(ck, 0)
            p = (c_pair + k) / (c_tot + kV)
            if use_cache:
                if gamma == 1.0:
                    p = one_minus_lam * p + lam * (w[t] / i)
                else:
                    wt = w[t] * pg[i - last[t]]
                    W = (1.0 - pg[i]) * inv_1mg
                    p = one_minus_lam * p + lam * (wt / W)
            return log(p)

        def consume(i: int) -> None:
            t = toks[i]
            if gamma == 1.0:
                w[t] += 1.0
            else:
                w[t] = w[t] * pg[i + 1 - last[t]] + 1.0
                last[t] = i + 1

        # positions whose whole prefix is shorter than the top context length
        i = eval_start
        while i < eval_end and i < mc:
            ck = 0
            for c in toks[:i]:
                ck = ck * V + c
            out[i - eval_start] = eval_at(i, i, ck)
            if use_cache:
                consume(i)
            i += 1

        # steady state: context is always the last (order-1) tokens
        if i < eval_end:
            if mc:
                ck = 0
                for c in toks[i - mc : i]:
                    ck = ck * V + c
                mod_hi = V ** (mc - 1)
                pair_top = pair[mc]
                tot_top = tot[mc]
                while i < eval_end:
                    t = toks[i]
                    c_pair = pair_top.get(ck * V + t, 0)
                    c_tot = tot_top.get(ck, 0)
                    p = (c_pair + k) / (c_tot + kV)
                    if use_cache:
                        if gamma == 1.0:
                            p = one_minus_lam * p + lam * (w[t] / i)
                            w[t] += 1.0
                        else:
                            wt = w[t] * pg[i - last[t]]
                            W = (1.0 - pg[i]) * inv_1mg
                            p = one_minus_lam * p + lam * (wt / W)
                            w[t] = w[t] * pg[i + 1 - last[t]] + 1.0
                            last[t] = i + 1
                    out[i - eval_start] = log(p)
                    ck = (ck % mod_hi) * V + t
                    i += 1
            else:  # order 1: empty context everywhere
                while i < eval_end:
                    out[i - eval_start] = eval_at(i, 0, 0)
                    if use_cache:
                        consume(i)
                    i += 1

        return LogProbSlice(seq_id=seq_id, eval_start=eval_start, values=out)

    def full_next_distribution(self, prefix) -> np.ndarray:
        """Exact next-token distribution over the whole vocabulary.

        Consistent with ``logprob_slice``: the realized token's slice value
        equals ln of its entry here.  Guarded to modest vocabularies since
        it materializes a dense table.
        """
        V = self.vocab_size
        if V > 65536:
            raise VocabTooLargeError(f"refusing dense table for vocab_size {V} > 65536")
        arr = np.asarray(prefix, dtype=np.int64) if len(prefix) else np.empty(0, dtype=np.int64)
        m = int(arr.shape[0])
        if m and (int(arr.min()) < 0 or int(arr.max()) >= V):
            raise ValueError(f"token id out of range for vocab_size {V}")

        L = min(self.order - 1, m)
        ck = 0
        for c in arr[m - L : m].tolist():
            ck = ck * V + c
        k = self.add_k
        c_tot = self._ctx_totals[L].get(ck, 0)
        denom = c_tot + k * V
        pair_L = self._pair_counts[L]
        base = ck * V
        probs = np.fromiter(
            ((pair_L.get(base + t, 0) + k) / denom for t in range(V)),
            dtype=np.float64,
            count=V,
        )

        lam = self.cache_lambda
        if lam > 0.0 and m > 0:
            gamma = self.cache_decay
            weights = np.zeros(V, dtype=np.float64)
            decays = np.power(gamma, np.arange(m - 1, -1, -1, dtype=np.float64))
            np.add.at(weights, arr, decays)
            W = float(m) if gamma == 1.0 else (1.0 - gamma**m) / (1.0 - gamma)
            probs = (1.0 - lam) * probs + lam * (weights / W)
        return probs

    # -- serialization --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write a deterministic versioned binary model file."""
        levels = []
        blobs: list[bytes] = []
        for L in range(self.order):
            pk = np.array(sorted(self._pair_counts[L].keys()), dtype=np.int64)
            pv = np.array([self._pair_counts[L][key] for key in pk.tolist()], dtype=np.int64)
            ck = np.array(sorted(self._ctx_totals[L].keys()), dtype=np.int64)
            cv = np.array([self._ctx_totals[L][key] for key in ck.tolist()], dtype=np.int64)
            levels.append({"pairs": int(pk.shape[0]), "contexts": int(ck.shape[0])})
            for a in (pk, pv, ck, cv):
                blobs.append(a.astype("<i8").tobytes())
        header = {
            "format": MODEL_FORMAT,
            "format_version": MODEL_FORMAT_VERSION,
            "order": self.order,
            "vocab_size": self.vocab_size,
            "add_k": self.add_k,
            "cache_lambda": self.cache_lambda,
            "cache_decay": self.cache_decay,
            "tokenizer_id": self.tokenizer_id,
            "levels": levels,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for blob in blobs:
                fh.write(blob)

    @classmethod
    def load(cls, path: str | Path) -> "CacheNGramModel":
        with open(path, "rb") as fh:
            header_line = fh.readline()
            try:
                header = json.loads(header_line)
            except ValueError as exc:
                raise ConfigError(f"{path}: not a model file ({exc})") from exc
            if header.get("format") != MODEL_FORMAT:
                raise ConfigError(f"{path}: unexpected format {header.get('format')!r}")
            if header.get("format_version") != MODEL_FORMAT_VERSION:
                raise ConfigError(
                    f"{path}: unsupported format_version {header.get('format_version')!r}"
                )
            pair_counts: list[dict[int, int]] = []
            ctx_totals: list[dict[int, int]] = []
            for level in header["levels"]:
                pk = np.frombuffer(fh.read(8 * level["pairs"]), dtype="<i8")
                pv = np.frombuffer(fh.read(8 * level["pairs"]), dtype="<i8")
                ck = np.frombuffer(fh.read(8 * level["contexts"]), dtype="<i8")
                cv = np.frombuffer(fh.read(8 * level["contexts"]), dtype="<i8")
                pair_counts.append(dict(zip(pk.tolist(), pv.tolist())))
                ctx_totals.append(dict(zip(ck.tolist(), cv.tolist())))
        return cls(
            order=header["order"],
            vocab_size=header["vocab_size"],
            add_k=header["add_k"],
            cache_lambda=header["cache_lambda"],
            cache_decay=header["cache_decay"],
            tokenizer_id=header["tokenizer_id"],
            pair_counts=pair_counts,
            ctx_totals=ctx_totals,
        )


def _validate_params(order, vocab_size, add_k, cache_lambda, cache_decay):
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    if vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
    if order * math.log2(vocab_size) > 62:
        raise ConfigError(f"order {order} with vocab {vocab_size} exceeds the integer key space")
    if not add_k > 0:
        raise ConfigError(f"add_k must be > 0, got {add_k}")
    if not (0.0 <= cache_lambda < 1.0):
        raise ConfigError(f"cache_lambda must be in [0, 1), got {cache_lambda}")
    if not (0.0 < cache_decay <= 1.0):
        raise ConfigError(f"cache_decay must be in (0, 1], got {cache_decay}")


def fit_cache_ngram(
    corpus: Iterable[TokenizedDoc],
    order: int,
    add_k: float,
    cache_lambda: float,
    cache_decay: float,
    vocab_size: int = 256,
    tokenizer_id: str | None = None,
) -> CacheNGramModel:
    """Count all n-grams of length <= order over the corpus and build a model.

    N-grams do not cross document boundaries.  The returned model is
    immutable; refitting on the same stream yields an identical model.
    """
    _validate_params(order, vocab_size, add_k, cache_lambda, cache_decay)
    pair_counts: list[dict[int, int]] = [{} for _ in range(order)]
    ctx_totals: list[dict[int, int]] = [{} for _ in range(order)]
    n_docs = 0
    tok_id = tokenizer_id
    for doc in corpus:
        n_docs += 1
        if tok_id is None:
            tok_id = doc.tokenizer_id
        elif tokenizer_id is None and doc.tokenizer_id != tok_id:
            raise ConfigError(
                f"mixed tokenizers in corpus: {tok_id!r} vs {doc.tokenizer_id!r}"
            )
        toks = doc.tokens.astype(np.int64, copy=False)
        n = int(toks.shape[0])
        if n and (int(toks.min()) < 0 or int(toks.max()) >= vocab_size):
            raise ConfigError(f"doc {doc.doc_id!r} has token ids outside vocab_size {vocab_size}")
        for L in range(order):
            if n <= L:
                continue
            keys = np.zeros(n - L, dtype=np.int64)
            for j in range(L):
                keys = keys * vocab_size + toks[j : n - L + j]
            pair_keys = keys * vocab_size + toks[L:]
            uniq, counts = np.unique(pair_keys, return_counts=True)
            table = pair_counts[L]
            for key, cnt in zip(uniq.tolist(), counts.tolist()):
                table[key] = table.get(key, 0) + cnt
            uniq, counts = np.unique(keys, return_counts=True)
            table = ctx_totals[L]
            for key, cnt in zip(uniq.tolist(), counts.tolist()):
                table[key] = table.get(key, 0) + cnt
    if n_docs == 0:
        raise ConfigError("cannot fit a model on an empty corpus")
    return CacheNGramModel(
        order=order,
        vocab_size=vocab_size,
        add_k=add_k,
        cache_lambda=cache_lambda,
        cache_decay=cache_decay,
        tokenizer_id=tok_id or "bytes-v1",
        pair_counts=pair_counts,
        ctx_totals=ctx_totals,
    )
