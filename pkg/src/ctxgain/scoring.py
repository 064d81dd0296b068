"""Token and sequence scoring: long-context vs short-context information gain.

For every position i of a packed sequence we obtain two natural-log
probabilities of the realized token: ``lp_long`` conditions on the full
prefix (up to ``long_len`` tokens), ``lp_short`` conditions only on the
containing chunk's prefix (chunks of ``chunk_len`` tokens with ``overlap``
shared tokens, so every scored position outside the first chunk has at
least ``overlap`` tokens of context).  The per-token gain is

    gain_i = exp(lp_long_i) * (lp_long_i - lp_short_i)

i.e. the realized-token term of KL(p_long || p_short), equivalently the
loss drop (short loss minus long loss) weighted by the model's confidence
under the long context.  A sequence's score is the arithmetic mean of its
per-token gains; negative gains are kept unless clipping is requested.

Providers are duck-typed: anything with
``logprob_slice(tokens, eval_start, eval_end, seq_id="") -> LogProbSlice``
works (the built-in model, the remote client, the exact synthetic models).
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import PackedSequence
from .ngram import LogProbSlice

__all__ = [
    "Chunk",
    "ChunkPlan",
    "ScoringConfig",
    "SequenceScore",
    "TokenScore",
    "aggregate",
    "long_logprobs",
    "plan_chunks",
    "read_score_records",
    "score_sequence",
    "short_logprobs",
    "token_scores",
    "write_score_records",
    "write_token_sidecar",
    "read_token_sidecars",
]


@dataclass(frozen=True)
class ScoringConfig:
    """Context-window and chunking parameters.

    ``chunk_len`` defaults to ``short_len`` and ``overlap`` to half the
    chunk, which guarantees every scored token outside the first chunk at
    least chunk_len/2 tokens of short context at twice the inference cost
    of disjoint chunks.
    """

    short_len: int
    long_len: int
    chunk_len: int | None = None
    overlap: int | None = None
    mask_doc_boundaries: bool = False
    clip_negative: bool = False

    def __post_init__(self):
        if self.chunk_len is None:
            object.__setattr__(self, "chunk_len", self.short_len)
        if self.overlap is None:
            object.__setattr__(self, "overlap", self.chunk_len // 2)
        if not (1 <= self.short_len < self.long_len):
            raise ValueError(f"need 1 <= short_len < long_len, got {self.short_len}, {self.long_len}")
        if not (0 <= self.overlap < self.chunk_len):
            raise ValueError(f"need 0 <= overlap < chunk_len, got {self.overlap}, {self.chunk_len}")


@dataclass(frozen=True)
class Chunk:
    start: int
    end: int
    score_from: int


@dataclass(frozen=True)
class ChunkPlan:
    pack_len: int
    chunk_len: int
    overlap: int
    chunks: tuple[Chunk, ...]


@dataclass(frozen=True)
class TokenScore:
    position: int
    lp_long: float
    lp_short: float
    gain: float


@dataclass(frozen=True)
class SequenceScore:
    seq_id: str
    score: float
    n_scored: int


def plan_chunks(pack_len: int, chunk_len: int, overlap: int) -> ChunkPlan:
    """Tile [0, pack_len) with overlapping chunks and disjoint scoring ranges.

    Chunk j starts at j*(chunk_len - overlap).  The first chunk scores
    positions [1, end); every later chunk scores [start + overlap, end),
    which is exactly where the previous chunk stopped, so the scoring
    ranges partition [1, pack_len).
    """
    if not (0 <= overlap < chunk_len <= pack_len):
        raise ValueError(
            f"need 0 <= overlap < chunk_len <= pack_len, got O={overlap} C={chunk_len} N={pack_len}"
        )
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + chunk_len, pack_len)
        score_from = 1 if not chunks else start + overlap
        chunks.append(Chunk(start=start, end=end, score_from=score_from))
        if end >= pack_len:
            break
        start += chunk_len - overlap
    return ChunkPlan(pack_len=pack_len, chunk_len=chunk_len, overlap=overlap, chunks=tuple(chunks))


def _eval_range(
    provider,
    tokens: np.ndarray,
    seq_id: str,
    lo: int,
    hi: int,
    ctx_base: int,
    max_ctx: int | None,
    boundaries: Sequence[int] = (),
) -> np.ndarray:
    """Logprobs for positions [lo, hi); position i conditions on
    tokens[max(ctx_base, i - max_ctx, containing boundary) : i].

    When masking makes a position's context empty (it sits exactly on a
    document boundary), it falls back to the single preceding token; the
    long and short passes hit the identical fallback, so the gain there is
    exactly zero.
    """
    n = int(tokens.shape[0])
    if max_ctx is None:
        max_ctx = n
    out = np.empty(hi - lo, dtype=np.float64)

    cuts = [lo] + [b for b in boundaries if lo < b < hi] + [hi]
    for a, b in zip(cuts, cuts[1:]):
        if boundaries:
            idx = bisect_right(boundaries, a) - 1
            cb = max(ctx_base, boundaries[idx] if idx >= 0 else 0)
        else:
            cb = ctx_base
        pos = a
        if pos == cb and pos < b:
            sl = provider.logprob_slice(tokens[pos - 1 : pos + 1], 1, 2, seq_id=seq_id)
            out[pos - lo] = sl.values[0]
            pos += 1
        head_hi = min(b, cb + max_ctx + 1)
        if pos < head_hi:
            sl = provider.logprob_slice(tokens[cb:head_hi], pos - cb, head_hi - cb, seq_id=seq_id)
            out[pos - lo : head_hi - lo] = sl.values
            pos = head_hi
        while pos < b:  # exact sliding window once the prefix exceeds max_ctx
            sl = provider.logprob_slice(tokens[pos - max_ctx : pos + 1], max_ctx, max_ctx + 1, seq_id=seq_id)
            out[pos - lo] = sl.values[0]
            pos += 1
    return out


def _mask_boundaries(seq: PackedSequence, config: ScoringConfig) -> tuple[int, ...]:
    if not config.mask_doc_boundaries:
        return ()
    return tuple(start for _, start, _ in seq.spans)


def long_logprobs(provider, seq: PackedSequence, config: ScoringConfig) -> LogProbSlice:
    """Full-prefix logprobs for positions [1, len(seq)).

    Position i conditions on up to ``long_len`` preceding tokens (all of
    them while i <= long_len); with ``mask_doc_boundaries`` the prefix is
    additionally truncated at the containing document's start.
    """
    n = len(seq)
    values = _eval_range(
        provider,
        seq.tokens,
        seq.seq_id,
        1,
        n,
        ctx_base=0,
        max_ctx=config.long_len,
        boundaries=_mask_boundaries(seq, config),
    )
    return LogProbSlice(seq_id=seq.seq_id, eval_start=1, values=values)


def short_logprobs(provider, seq: PackedSequence, plan: ChunkPlan, config: ScoringConfig) -> LogProbSlice:
    """Chunk-bounded logprobs for positions [1, len(seq)).

    Each chunk is queried with its own tokens only, so a scored position at
    offset k inside its chunk conditions on exactly k tokens, and k >=
    overlap for every chunk after the first.
    """
    n = len(seq)
    if plan.pack_len != n:
        raise ValueError(f"chunk plan is for pack_len {plan.pack_len}, sequence has {n}")
    boundaries = _mask_boundaries(seq, config)
    values = np.empty(n - 1, dtype=np.float64)
    for chunk in plan.chunks:
        vals = _eval_range(
            provider,
            seq.tokens,
            seq.seq_id,
            chunk.score_from,
            chunk.end,
            ctx_base=chunk.start,
            max_ctx=None,
            boundaries=boundaries,
        )
        values[chunk.score_from - 1 : chunk.end - 1] = vals
    return LogProbSlice(seq_id=seq.seq_id, eval_start=1, values=values)


def token_scores(
    lp_long: LogProbSlice,
    lp_short: LogProbSlice,
    clip_negative: bool = False,
) -> list[TokenScore]:
    """Per-token gains exp(lp_long) * (lp_long - lp_short) over aligned slices."""
    if lp_long.eval_start != lp_short.eval_start or len(lp_long) != len(lp_short):
        raise ValueError(
            f"misaligned slices: [{lp_long.eval_start}, +{len(lp_long)}) vs "
            f"[{lp_short.eval_start}, +{len(lp_short)})"
        )
    ll = lp_long.values
    ls = lp_short.values
    gains = np.exp(ll) * (ll - ls)
    if clip_negative:
        gains = np.maximum(gains, 0.0)
    start = lp_long.eval_start
    return [
        TokenScore(position=start + i, lp_long=float(ll[i]), lp_short=float(ls[i]), gain=float(gains[i]))
        for i in range(gains.shape[0])
    ]


def aggregate(scores: list[TokenScore], seq_id: str) -> SequenceScore:
    """Mean gain via compensated summation (permutation-invariant to the ulp)."""
    if not scores:
        raise ValueError(f"{seq_id}: cannot aggregate an empty score list")
    total = math.fsum(s.gain for s in scores)
    return SequenceScore(seq_id=seq_id, score=total / len(scores), n_scored=len(scores))


def score_sequence(
    provider,
    seq: PackedSequence,
    config: ScoringConfig,
) -> tuple[SequenceScore, list[TokenScore]]:
    """Run the full per-sequence workflow: plan, both passes, gains, mean."""
    plan = plan_chunks(len(seq), config.chunk_len, config.overlap)
    lp_long = long_logprobs(provider, seq, config)
    lp_short = short_logprobs(provider, seq, plan, config)
    tokens = token_scores(lp_long, lp_short, clip_negative=config.clip_negative)
    return aggregate(tokens, seq.seq_id), tokens


# ---------------------------------------------------------------------------
# score record files
# ---------------------------------------------------------------------------


def score_record(score: SequenceScore, config_digest: str) -> dict:
    return {
        "seq_id": score.seq_id,
        "score": score.score,
        "n_scored": score.n_scored,
        "config_digest": config_digest,
    }


def write_jsonl_header(path: str | Path, kind: str, config_digest: str, tool_version: str, **extra) -> None:
    """Start a fresh line-delimited output file with a provenance header."""
    header = {"record": "header", "kind": kind, "config_digest": config_digest,
              "tool_version": tool_version, **extra}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")


def read_jsonl_header(path: str | Path) -> dict | None:
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline().strip()
    if not line:
        return None
    record = json.loads(line)
    return record if record.get("record") == "header" else None


def write_score_records(
    path: str | Path,
    scores: Iterable[SequenceScore],
    config_digest: str,
    append: bool = False,
) -> int:
    n = 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for score in scores:
            fh.write(json.dumps(score_record(score, config_digest)) + "\n")
            n += 1
    return n


def read_score_records(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record = json.loads(line)
                if "record" not in record:
                    records.append(record)
    return records


def write_token_sidecar(path: str | Path, seq_id: str, tokens: list[TokenScore], append: bool = True) -> None:
    """Append one per-sequence record with parallel per-token arrays."""
    record = {
        "seq_id": seq_id,
        "positions": [t.position for t in tokens],
        "lp_long": [t.lp_long for t in tokens],
        "lp_short": [t.lp_short for t in tokens],
        "gain": [t.gain for t in tokens],
    }
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def read_token_sidecars(path: str | Path) -> dict[str, list[TokenScore]]:
    out: dict[str, list[TokenScore]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "record" in rec:
                continue
            out[rec["seq_id"]] = [
                TokenScore(position=p, lp_long=a, lp_short=b, gain=g)
                for p, a, b, g in zip(rec["positions"], rec["lp_long"], rec["lp_short"], rec["gain"])
            ]
    return out
