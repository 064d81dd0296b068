"""Command-line pipeline: fit, score, select, report, synth, mock-serve.

Every command reads a JSON config file (``--config``), applies CTXGAIN_*
environment overrides and then command-line flags, validates, and writes
the fully resolved config next to its outputs.  All structured outputs are
line-delimited JSON carrying the config digest and tool version, and every
command is idempotent with respect to completed outputs; interrupted
scoring resumes where it stopped.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, load_config, write_resolved
from .corpus import (
    IngestStats,
    PackedSequence,
    get_tokenizer,
    ingest,
    pack,
    partition_by_length,
    read_packed_jsonl,
    tokenize,
    write_corpus_jsonl,
    write_packed_jsonl,
)
from .ngram import CacheNGramModel, fit_cache_ngram
from .scoring import (
    SequenceScore,
    read_jsonl_header,
    read_score_records,
    read_token_sidecars,
    score_record,
    score_sequence,
    write_jsonl_header,
    write_token_sidecar,
)
from .selection import compose_mixture, rank_and_select, write_manifest, write_mixture
from .synthetic import SynthSpec, generate
from .wire import ProtocolError, RemoteLogProbModel, TransportError, serve_mock

log = logging.getLogger("ctxgain")

SCORES_FILE = "scores.jsonl"
SIDECAR_FILE = "token_scores.jsonl"
PACKED_FILE = "packed.jsonl"
PARTITION_FILE = "partition.jsonl"
MANIFEST_FILE = "manifest.jsonl"
MIXTURE_FILE = "mixture.jsonl"
MODEL_FILE = "model.ngram"


def _build_provider(config: PipelineConfig):
    if config.endpoint:
        return RemoteLogProbModel(config.endpoint)
    return CacheNGramModel.load(config.model_path)


def _load_tokenized(config: PipelineConfig):
    tokenizer = get_tokenizer(config.tokenizer)
    stats = IngestStats()
    docs = []
    for input_path in config.inputs:
        for doc in ingest(input_path, config.input_format, source=config.source, stats=stats):
            docs.append(tokenize(doc, tokenizer))
    if stats.skipped_records:
        log.warning("skipped %d malformed record(s) during ingest", stats.skipped_records)
    return tokenizer, docs, stats


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(config: PipelineConfig) -> int:
    config.validate("fit")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokenizer, docs, _ = _load_tokenized(config)
    per_source: dict[str, int] = {}
    for doc in docs:
        per_source[doc.source] = per_source.get(doc.source, 0) + len(doc)
    model = fit_cache_ngram(
        docs,
        order=config.order,
        add_k=config.add_k,
        cache_lambda=config.cache_lambda,
        cache_decay=config.cache_decay,
        vocab_size=tokenizer.vocab_size,
        tokenizer_id=tokenizer.tokenizer_id,
    )
    model_path = Path(config.model_path) if config.model_path else out_dir / MODEL_FILE
    model.save(model_path)
    write_resolved(config, out_dir)
    for source in sorted(per_source):
        print(f"{source}: {per_source[source]:,} tokens across {sum(1 for d in docs if d.source == source)} docs")
    print(f"model written to {model_path}")
    return 0


# worker-process state for parallel scoring
_WORKER: dict = {}


def _init_worker(config_json: str) -> None:
    config = PipelineConfig(**json.loads(config_json))
    _WORKER["provider"] = _build_provider(config)
    _WORKER["sconf"] = config.scoring_config()
    _WORKER["sidecars"] = config.write_sidecars


def _score_one(seq: PackedSequence):
    try:
        score, tokens = score_sequence(_WORKER["provider"], seq, _WORKER["sconf"])
    except (TransportError, ProtocolError, ValueError) as exc:
        return ("error", seq.seq_id, f"{type(exc).__name__}: {exc}")
    return ("ok", score, tokens if _WORKER["sidecars"] else None)


def cmd_score(config: PipelineConfig) -> int:
    config.validate("score")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config.digest()
    write_resolved(config, out_dir)

    _, docs, _ = _load_tokenized(config)
    threshold = config.resolved_length_threshold()
    partition = partition_by_length(docs, threshold)
    with open(out_dir / PARTITION_FILE, "w", encoding="utf-8") as fh:
        header = {"record": "header", "kind": "partition", "config_digest": digest,
                  "tool_version": __version__, "threshold_tokens": threshold,
                  "n_long": len(partition.long_docs), "n_short": len(partition.short_docs)}
        fh.write(json.dumps(header) + "\n")
        lengths = {d.doc_id: len(d) for d in docs}
        for bucket, ids in (("long", partition.long_docs), ("short", partition.short_docs)):
            for doc_id in ids:
                fh.write(json.dumps({"record": "doc", "doc_id": doc_id, "bucket": bucket,
                                     "tokens": lengths[doc_id]}) + "\n")

    long_ids = set(partition.long_docs)
    packed = list(pack((d for d in docs if d.doc_id in long_ids), config.pack_len))
    if config.write_packed:
        write_packed_jsonl(packed, out_dir / PACKED_FILE,
                           header={"kind": "packed", "config_digest": digest,
                                   "tool_version": __version__, "pack_len": config.pack_len})
    log.info("packed %d sequences of %d tokens (threshold %d)", len(packed), config.pack_len, threshold)

    scores_path = out_dir / SCORES_FILE
    done: set[str] = set()
    if scores_path.exists():
        header = read_jsonl_header(scores_path)
        if header is not None and header["config_digest"] != digest:
            log.error(
                "existing %s was produced with config digest %s, current is %s; "
                "refusing to mix outputs - use a fresh --out or delete the file",
                scores_path, header["config_digest"], digest,
            )
            return 2
        for row in read_score_records(scores_path):
            if row["config_digest"] != digest:
                log.error(
                    "existing %s was produced with config digest %s, current is %s; "
                    "refusing to mix outputs - use a fresh --out or delete the file",
                    scores_path, row["config_digest"], digest,
                )
                return 2
            done.add(row["seq_id"])
    else:
        write_jsonl_header(scores_path, "scores", digest, __version__)
    pending = [seq for seq in packed if seq.seq_id not in done]
    if done:
        log.info("resuming: %d already scored, %d pending", len(done), len(pending))

    failures: list[tuple[str, str]] = []
    sidecar_path = out_dir / SIDECAR_FILE
    if config.write_sidecars and not sidecar_path.exists():
        write_jsonl_header(sidecar_path, "token_sidecar", digest, __version__)

    def handle(result) -> None:
        if result[0] == "error":
            failures.append((result[1], result[2]))
            log.error("sequence %s failed: %s", result[1], result[2])
            return
        _, score, tokens = result
        if tokens is not None:
            write_token_sidecar(sidecar_path, score.seq_id, tokens, append=True)
        with open(scores_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(score_record(score, digest)) + "\n")

    config_json = json.dumps(config.as_dict())
    if config.workers <= 1:
        _init_worker(config_json)
        for seq in pending:
            handle(_score_one(seq))
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(
            max_workers=config.workers, initializer=_init_worker, initargs=(config_json,)
        ) as pool:
            for result in pool.map(_score_one, pending, chunksize=1):
                handle(result)

    n_scored = len(pending) - len(failures)
    print(f"scored {n_scored}/{len(pending)} pending sequences ({len(done)} were already done)")
    if failures:
        print(f"{len(failures)} sequence(s) failed; rerun to retry them")
        return 1
    return 0


def _read_partition_short_pool(path: Path) -> list[str]:
    if not path.exists():
        return []
    short: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("record") == "doc" and rec.get("bucket") == "short":
                short.append(rec["doc_id"])
    return short


def cmd_select(config: PipelineConfig) -> int:
    config.validate("select")
    out_dir = Path(config.out_dir)
    digest = config.digest()
    scores_path = out_dir / SCORES_FILE
    if not scores_path.exists():
        log.error("no score file at %s; run `ctxgain score` first", scores_path)
        return 2
    rows = read_score_records(scores_path)
    if not rows:
        log.error("score file %s is empty", scores_path)
        return 2
    stale = [r for r in rows if r["config_digest"] != digest]
    if stale:
        log.error("score file digest %s does not match current config %s", stale[0]["config_digest"], digest)
        return 2
    scores = [SequenceScore(r["seq_id"], r["score"], r["n_scored"]) for r in rows]
    manifest = rank_and_select(scores, config.keep_fraction, config_digest=digest)
    write_manifest(out_dir / MANIFEST_FILE, manifest, tool_version=__version__)

    short_pool = _read_partition_short_pool(out_dir / PARTITION_FILE)
    if config.long_fraction < 1.0 and not short_pool:
        log.error("long_fraction %.3f needs short documents but the partition has none", config.long_fraction)
        return 2
    recipe = compose_mixture(manifest, short_pool, config.long_fraction, seed=config.seed)
    write_mixture(out_dir / MIXTURE_FILE, recipe, tool_version=__version__, config_digest=digest)
    print(
        f"selected {len(manifest.selected)}/{len(manifest.entries)} sequences "
        f"(threshold score {manifest.threshold_score:.6g}); mixture of {len(recipe.schedule)} items"
    )
    return 0


def cmd_report(config: PipelineConfig, seq_ids: list[str] | None) -> int:
    from .report import build_token_report, write_report_files

    config.validate("report")
    out_dir = Path(config.out_dir)
    sidecar_path = out_dir / SIDECAR_FILE
    if not sidecar_path.exists():
        log.error(
            "no per-token sidecar at %s; rerun `ctxgain score` with write_sidecars "
            "enabled (--sidecars) to produce it", sidecar_path,
        )
        return 2
    sidecars = read_token_sidecars(sidecar_path)
    packed_path = out_dir / PACKED_FILE
    if not packed_path.exists():
        log.error("no packed sequences at %s; rerun `ctxgain score` with write_packed enabled", packed_path)
        return 2
    seqs = {seq.seq_id: seq for seq in read_packed_jsonl(packed_path)}
    tokenizer = get_tokenizer(config.tokenizer)
    wanted = seq_ids if seq_ids else sorted(sidecars)
    report_dir = out_dir / "reports"
    n = 0
    for seq_id in wanted:
        if seq_id not in sidecars:
            log.error("no sidecar record for %s; rerun `ctxgain score` with --sidecars", seq_id)
            return 2
        if seq_id not in seqs:
            log.error("no packed sequence %s in %s", seq_id, packed_path)
            return 2
        report = build_token_report(seqs[seq_id], sidecars[seq_id], tokenizer)
        write_report_files(report, report_dir, config_digest=config.digest(), tool_version=__version__)
        n += 1
    print(f"wrote {n} report(s) to {report_dir}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    params: dict[str, float] = {}
    for item in args.param or []:
        key, _, raw = item.partition("=")
        if not _:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = json.loads(raw)
        except ValueError:
            raise ConfigError(f"--param {key} value {raw!r} is not a number") from None
    spec = SynthSpec(kind=args.kind, length=args.length, params=params)
    docs = generate(spec, seed=args.seed, count=args.count)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n = write_corpus_jsonl(docs, out_path)
    print(f"wrote {n} {args.kind} document(s) of {args.length} tokens to {out_path}")
    return 0


def cmd_mock_serve(args: argparse.Namespace) -> int:
    model = CacheNGramModel.load(args.model)
    print(f"serving {args.model} on http://{args.host}:{args.port} (Ctrl-C to stop)")
    try:
        serve_mock(model, host=args.host, port=args.port, background=False)
    except KeyboardInterrupt:
        print("shutting down")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a JSON config file")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxgain",
        description="Score and select long-context training data by extended-context information gain.",
    )
    parser.add_argument("--version", action="version", version=f"ctxgain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the built-in backend on a corpus")
    _add_common(p)
    p.add_argument("--inputs", help="comma-separated input paths (overrides config)")
    p.add_argument("--model-out", dest="model_path", help="where to write the model file")

    p = sub.add_parser("score", help="pack the corpus and score every sequence")
    _add_common(p)
    p.add_argument("--inputs", help="comma-separated input paths (overrides config)")
    p.add_argument("--model", dest="model_path", help="built-in model file to score with")
    p.add_argument("--endpoint", help="remote logprob endpoint to score with")
    p.add_argument("--sidecars", action="store_const", const=True, default=None,
                   dest="write_sidecars", help="write per-token sidecar records")

    p = sub.add_parser("select", help="rank scores, keep the top fraction, compose the mixture")
    _add_common(p)

    p = sub.add_parser("report", help="render token-level heatmap reports")
    _add_common(p)
    p.add_argument("--seqs", help="comma-separated seq_ids (default: all with sidecars)")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--kind", required=True, choices=("markov", "recall", "repeat"))
    p.add_argument("--length", type=int, required=True, help="tokens per document")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output corpus file (jsonl)")
    p.add_argument("--param", action="append", help="kind-specific parameter, key=value")

    p = sub.add_parser("mock-serve", help="serve a model file over the wire protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8047)

    return parser


def _config_from_args(args: argparse.Namespace, command: str) -> PipelineConfig:
    overrides: dict = {}
    for name in ("out_dir", "seed", "workers", "model_path", "endpoint", "write_sidecars"):
        if hasattr(args, name) and getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    if getattr(args, "inputs", None):
        overrides["inputs"] = [p for p in args.inputs.split(",") if p]
    config = load_config(args.config, overrides=overrides)
    if command == "score" and getattr(args, "endpoint", None) and "model_path" not in overrides:
        config.model_path = None  # --endpoint displaces a model_path from the config file
    return config


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(_config_from_args(args, "fit"))
        if args.command == "score":
            return cmd_score(_config_from_args(args, "score"))
        if args.command == "select":
            return cmd_select(_config_from_args(args, "select"))
        if args.command == "report":
            seq_ids = [s for s in args.seqs.split(",") if s] if args.seqs else None
            return cmd_report(_config_from_args(args, "report"), seq_ids)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "mock-serve":
            return cmd_mock_serve(args)
    except (ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
