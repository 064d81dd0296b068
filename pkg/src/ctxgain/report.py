"""Token-level reports: per-token record files and a standalone HTML view.

The HTML renders each scored token with a background whose intensity maps
linearly from its gain, clipped to the sequence's 5th..95th gain
percentiles (darker = higher gain), followed by an inline SVG of gain
versus position.  Everything is plain string building, so regenerating a
report is byte-identical.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PackedSequence
from .scoring import TokenScore

__all__ = ["TokenReport", "build_token_report", "render_html", "write_report_files"]


@dataclass(frozen=True)
class TokenReport:
    seq_id: str
    positions: np.ndarray
    token_texts: tuple[str, ...]
    lp_long: np.ndarray
    lp_short: np.ndarray
    gain: np.ndarray
    q05: float
    q95: float


def _printable(raw: bytes) -> str:
    out = []
    for b in raw:
        out.append(chr(b) if 32 <= b < 127 else "·")
    return "".join(out)


def build_token_report(seq: PackedSequence, tokens: list[TokenScore], tokenizer) -> TokenReport:
    if not tokens:
        raise ValueError(f"{seq.seq_id}: no token scores to report")
    positions = np.array([t.position for t in tokens], dtype=np.int64)
    gain = np.array([t.gain for t in tokens], dtype=np.float64)
    q05, q95 = (float(q) for q in np.quantile(gain, [0.05, 0.95]))
    texts = tuple(_printable(tokenizer.token_text(int(seq.tokens[p]))) for p in positions.tolist())
    return TokenReport(
        seq_id=seq.seq_id,
        positions=positions,
        token_texts=texts,
        lp_long=np.array([t.lp_long for t in tokens]),
        lp_short=np.array([t.lp_short for t in tokens]),
        gain=gain,
        q05=q05,
        q95=q95,
    )


def _alphas(report: TokenReport) -> np.ndarray:
    span = report.q95 - report.q05
    if span <= 0.0:  # degenerate scale (e.g. all-zero gains): uniform minimal intensity
        return np.zeros_like(report.gain)
    return (np.clip(report.gain, report.q05, report.q95) - report.q05) / span


def _series_svg(report: TokenReport, width: int = 900, height: int = 180) -> str:
    gain = report.gain
    lo, hi = float(gain.min()), float(gain.max())
    if hi <= lo:
        hi = lo + 1.0
    n = gain.shape[0]
    xs = np.linspace(5.0, width - 5.0, n)
    ys = (height - 15.0) - (gain - lo) / (hi - lo) * (height - 30.0)
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (
        f'<svg viewBox="0 0 {width} {height}" width="{width}" height="{height}" '
        'xmlns="http://www.w3.org/2000/svg">'
        f'<rect width="{width}" height="{height}" fill="#fafafa"/>'
        f'<polyline fill="none" stroke="#b2182b" stroke-width="1" points="{pts}"/>'
        f'<text x="5" y="12" font-size="10" fill="#555">gain max {hi:.6g}</text>'
        f'<text x="5" y="{height - 3}" font-size="10" fill="#555">gain min {lo:.6g}</text>'
        "</svg>"
    )


def render_html(report: TokenReport) -> str:
    alphas = _alphas(report)
    spans = []
    for text, alpha in zip(report.token_texts, alphas.tolist()):
        esc = html.escape(text)
        if alpha > 0.0:
            spans.append(f'<span style="background:rgba(178,24,43,{alpha:.3f})">{esc}</span>')
        else:
            spans.append(esc)
    body = "".join(spans)
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"/>"
        f"<title>{html.escape(report.seq_id)}</title>"
        "<style>pre{white-space:pre-wrap;word-break:break-all;font:12px monospace;"
        "max-width:72em}</style></head><body>"
        f"<h2>{html.escape(report.seq_id)}</h2>"
        f"<p>{len(report.token_texts)} scored tokens; color scale clipped to gain "
        f"[{report.q05:.6g}, {report.q95:.6g}] (darker = higher gain)</p>"
        f"<pre>{body}</pre>"
        f"{_series_svg(report)}"
        "</body></html>\n"
    )


def write_report_files(
    report: TokenReport,
    out_dir: str | Path,
    config_digest: str = "",
    tool_version: str = "",
) -> tuple[Path, Path]:
    """Write {seq_id}.tokens.jsonl (header + per-token records) and {seq_id}.html."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokens_path = out_dir / f"{report.seq_id}.tokens.jsonl"
    html_path = out_dir / f"{report.seq_id}.html"
    with open(tokens_path, "w", encoding="utf-8") as fh:
        header = {
            "record": "header",
            "seq_id": report.seq_id,
            "n_scored": int(report.positions.shape[0]),
            "gain_q05": report.q05,
            "gain_q95": report.q95,
            "config_digest": config_digest,
            "tool_version": tool_version,
        }
        fh.write(json.dumps(header) + "\n")
        for i in range(report.positions.shape[0]):
            row = {
                "record": "token",
                "position": int(report.positions[i]),
                "text": report.token_texts[i],
                "lp_long": float(report.lp_long[i]),
                "lp_short": float(report.lp_short[i]),
                "gain": float(report.gain[i]),
            }
            fh.write(json.dumps(row) + "\n")
    stamp = f"<!-- config_digest={config_digest} tool_version={tool_version} -->\n"
    html_path.write_text(stamp + render_html(report), encoding="utf-8")
    return tokens_path, html_path
