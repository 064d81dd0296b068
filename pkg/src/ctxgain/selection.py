"""Ranked selection of scored sequences and training-mixture composition.

Sequences are sorted by score descending (ties broken by seq_id ascending)
and the top ceil(keep_fraction * n) are kept.  The selected long sequences
are then interleaved with a pool of short documents into a mixture
schedule whose long fraction matches the requested ratio to within one
slot.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .scoring import SequenceScore

__all__ = [
    "MixtureRecipe",
    "SelectionManifest",
    "compose_mixture",
    "rank_and_select",
    "read_manifest",
    "selection_monotonicity_check",
    "write_manifest",
    "write_mixture",
]

MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SelectionManifest:
    entries: tuple[tuple[str, float, int], ...]  # (seq_id, score, rank), rank from 1
    keep_fraction: float
    threshold_score: float
    selected: tuple[str, ...]
    config_digest: str = ""


@dataclass(frozen=True)
class MixtureRecipe:
    long_fraction: float
    long_pool: tuple[str, ...]
    short_pool: tuple[str, ...]
    schedule: tuple[tuple[str, str], ...]  # (source, id) with source in {"long", "short"}


def _keep_count(keep_fraction: float, n: int) -> int:
    # ceil with a small guard so float noise in keep_fraction * n cannot
    # bump an exact integer product to the next count
    return max(1, min(n, math.ceil(keep_fraction * n - 1e-12)))


def rank_and_select(
    scores: Sequence[SequenceScore],
    keep_fraction: float,
    config_digest: str = "",
) -> SelectionManifest:
    """Sort scores descending and keep the top ceil(keep_fraction * n)."""
    if not scores:
        raise ValueError("cannot select from an empty score list")
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    ordered = sorted(scores, key=lambda s: (-s.score, s.seq_id))
    n_keep = _keep_count(keep_fraction, len(ordered))
    entries = tuple((s.seq_id, s.score, rank) for rank, s in enumerate(ordered, start=1))
    selected = tuple(s.seq_id for s in ordered[:n_keep])
    return SelectionManifest(
        entries=entries,
        keep_fraction=keep_fraction,
        threshold_score=ordered[n_keep - 1].score,
        selected=selected,
        config_digest=config_digest,
    )


def selection_monotonicity_check(scores: Sequence[SequenceScore], f1: float, f2: float) -> bool:
    """True iff the f1-selection is contained in the f2-selection (f1 <= f2)."""
    if not (0.0 < f1 <= 1.0 and 0.0 < f2 <= 1.0):
        raise ValueError(f"fractions must be in (0, 1], got {f1}, {f2}")
    a = set(rank_and_select(scores, f1).selected)
    b = set(rank_and_select(scores, f2).selected)
    return a <= b


def compose_mixture(
    selected: SelectionManifest | Sequence[str],
    short_pool: Sequence[str],
    long_fraction: float,
    seed: int,
) -> MixtureRecipe:
    """Interleave selected long sequences with short documents.

    All selected long entries are used once, in rank order.  Short entries
    are drawn round-robin from ``short_pool`` (repeating if the pool is
    smaller than needed) to hit ``long_fraction`` within one schedule slot.
    The interleaving pattern is a seeded shuffle, so the same seed always
    yields the same schedule.
    """
    if not (0.0 <= long_fraction <= 1.0):
        raise ValueError(f"long_fraction must be in [0, 1], got {long_fraction}")
    long_pool = tuple(selected.selected if isinstance(selected, SelectionManifest) else selected)
    short_pool = tuple(short_pool)

    if long_fraction > 0.0 and not long_pool:
        raise ValueError("long pool is empty but long_fraction > 0")
    if long_fraction == 1.0:
        n_short = 0
    else:
        if long_fraction == 0.0:
            schedule = tuple(("short", d) for d in short_pool)
            if not schedule:
                raise ValueError("short pool is empty but long_fraction < 1")
            return MixtureRecipe(long_fraction, long_pool, short_pool, schedule)
        n_short = round(len(long_pool) * (1.0 - long_fraction) / long_fraction)
        if n_short > 0 and not short_pool:
            raise ValueError("short pool is empty but long_fraction < 1")

    slots = ["long"] * len(long_pool) + ["short"] * n_short
    random.Random(seed).shuffle(slots)
    schedule = []
    li = si = 0
    for slot in slots:
        if slot == "long":
            schedule.append(("long", long_pool[li]))
            li += 1
        else:
            schedule.append(("short", short_pool[si % len(short_pool)]))
            si += 1
    return MixtureRecipe(long_fraction, long_pool, short_pool, tuple(schedule))


# ---------------------------------------------------------------------------
# manifest files (stable field order: reruns are byte-identical)
# ---------------------------------------------------------------------------


def write_manifest(path: str | Path, manifest: SelectionManifest, tool_version: str) -> None:
    selected = set(manifest.selected)
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "record": "header",
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "keep_fraction": manifest.keep_fraction,
            "threshold_score": manifest.threshold_score,
            "n_entries": len(manifest.entries),
            "n_selected": len(manifest.selected),
            "config_digest": manifest.config_digest,
            "tool_version": tool_version,
        }
        fh.write(json.dumps(header) + "\n")
        for seq_id, score, rank in manifest.entries:
            row = {
                "record": "entry",
                "rank": rank,
                "seq_id": seq_id,
                "score": score,
                "selected": seq_id in selected,
            }
            fh.write(json.dumps(row) + "\n")


def read_manifest(path: str | Path) -> SelectionManifest:
    entries: list[tuple[str, float, int]] = []
    selected: list[str] = []
    header: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["record"] == "header":
                header = rec
            else:
                entries.append((rec["seq_id"], rec["score"], rec["rank"]))
                if rec["selected"]:
                    selected.append(rec["seq_id"])
    return SelectionManifest(
        entries=tuple(entries),
        keep_fraction=header.get("keep_fraction", 0.0),
        threshold_score=header.get("threshold_score", 0.0),
        selected=tuple(selected),
        config_digest=header.get("config_digest", ""),
    )


def write_mixture(path: str | Path, recipe: MixtureRecipe, tool_version: str, config_digest: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        n_long = sum(1 for src, _ in recipe.schedule if src == "long")
        header = {
            "record": "header",
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "long_fraction": recipe.long_fraction,
            "n_items": len(recipe.schedule),
            "n_long": n_long,
            "config_digest": config_digest,
            "tool_version": tool_version,
        }
        fh.write(json.dumps(header) + "\n")
        for position, (source, item_id) in enumerate(recipe.schedule):
            fh.write(json.dumps({"record": "item", "position": position, "source": source, "id": item_id}) + "\n")
