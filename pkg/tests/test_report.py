import json

import numpy as np

from ctxgain.corpus import ByteTokenizer, PackedSequence, pack, tokenize
from ctxgain.ngram import fit_cache_ngram
from ctxgain.report import build_token_report, render_html, write_report_files
from ctxgain.scoring import ScoringConfig, TokenScore, score_sequence
from ctxgain.synthetic import SynthSpec, generate

TOK = ByteTokenizer()


def _seq(data: bytes, seq_id="seq-0") -> PackedSequence:
    toks = TOK.encode(data)
    return PackedSequence(seq_id=seq_id, tokens=toks, spans=((seq_id, 0, len(toks)),))


def _flat_scores(n):
    return [TokenScore(position=i, lp_long=-1.0, lp_short=-1.0, gain=0.0) for i in range(1, n)]


class TestHeatmap:
    def test_all_zero_gains_render_without_background(self):
        seq = _seq(b"all zero gains here!")
        report = build_token_report(seq, _flat_scores(len(seq)), TOK)
        html_text = render_html(report)
        assert "rgba" not in html_text  # degenerate scale: uniform minimal intensity
        assert report.q05 == report.q95 == 0.0

    def test_regeneration_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        seq = _seq(bytes(rng.integers(97, 120, size=120).tolist()))
        scores = [
            TokenScore(position=i, lp_long=-1.0, lp_short=-1.5, gain=float(g))
            for i, g in enumerate(rng.normal(size=len(seq) - 1), start=1)
        ]
        report = build_token_report(seq, scores, TOK)
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        paths1 = write_report_files(report, d1)
        paths2 = write_report_files(report, d2)
        for a, b in zip(paths1, paths2):
            assert a.read_bytes() == b.read_bytes()

    def test_token_file_contents(self, tmp_path):
        seq = _seq(b"abcdef")
        scores = [TokenScore(position=i, lp_long=-0.5, lp_short=-1.0, gain=0.1 * i) for i in range(1, 6)]
        report = build_token_report(seq, scores, TOK)
        tokens_path, html_path = write_report_files(report, tmp_path)
        lines = [json.loads(l) for l in tokens_path.read_text().splitlines()]
        assert lines[0]["record"] == "header" and lines[0]["n_scored"] == 5
        assert [r["position"] for r in lines[1:]] == [1, 2, 3, 4, 5]
        assert lines[1]["text"] == "b"
        assert html_path.exists()

    def test_nonprintable_tokens_are_masked(self):
        seq = PackedSequence("s", np.array([0, 10, 97], dtype=np.int32), (("s", 0, 3),))
        scores = [TokenScore(position=i, lp_long=-1.0, lp_short=-1.0, gain=0.0) for i in (1, 2)]
        report = build_token_report(seq, scores, TOK)
        assert report.token_texts == ("·", "a")


class TestRecallHighlight:
    def test_query_regions_are_darkest(self):
        """The highest-gain tokens of a recall doc sit in query replays."""
        spec = SynthSpec(
            "recall",
            length=2048,
            params={"alphabet": 64, "n_keys": 4, "key_len": 6, "value_len": 24,
                    "n_queries": 40, "min_distance": 160, "short_len": 128},
        )
        score_docs = generate(spec, seed=50, count=4)
        fit_docs = generate(spec, seed=51, count=8)
        model = fit_cache_ngram(
            [tokenize(d, TOK) for d in fit_docs],
            order=3, add_k=0.25, cache_lambda=0.3, cache_decay=0.999,
        )
        config = ScoringConfig(short_len=128, long_len=2048, chunk_len=128, overlap=64)
        doc = score_docs[0]
        seq = next(iter(pack([tokenize(doc, TOK)], 2048)))
        _, tokens = score_sequence(model, seq, config)
        report = build_token_report(seq, tokens, TOK)

        starts = json.loads(doc.meta["query_starts"])
        event_len = int(doc.meta["event_len"])
        in_query = np.zeros(2048, dtype=bool)
        for s in starts:
            in_query[s : s + event_len] = True
        gains = report.gain
        positions = report.positions
        q_mask = in_query[positions]
        assert gains[q_mask].mean() > 2.5 * gains[~q_mask].mean()
        # the very darkest tokens sit in query replays
        top = np.argsort(-gains)[:20]
        assert q_mask[top].mean() >= 0.7
