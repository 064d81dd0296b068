"""Corpus ingestion, tokenization, length partitioning, and packing.

Raw documents come in as byte strings, get tokenized (byte-level by
default), and are concatenated in a deterministic order and cut into
fixed-length packed sequences.  Each packed sequence remembers which
document contributed which region via spans, so scoring can optionally
respect document boundaries.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

log = logging.getLogger(__name__)

INGEST_FORMATS = ("lines", "jsonl", "files")


class ConfigError(ValueError):
    """Invalid configuration (bad tokenizer spec, bad vocab file, ...)."""


@dataclass(frozen=True)
class Document:
    """One raw sample: unique id, non-empty byte content, source tag, metadata."""

    doc_id: str
    text: bytes
    source: str = "default"
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text:
            raise ValueError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class TokenizedDoc:
    doc_id: str
    tokens: np.ndarray  # int32 token ids, length >= 1
    tokenizer_id: str
    source: str = "default"

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


@dataclass(frozen=True)
class PackedSequence:
    """Fixed-length token sequence with (doc_id, start, end) provenance spans.

    Spans are contiguous, non-overlapping, and cover [0, len(tokens)) exactly.
    """

    seq_id: str
    tokens: np.ndarray
    spans: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        n = int(self.tokens.shape[0])
        pos = 0
        for doc_id, start, end in self.spans:
            if start != pos or end <= start:
                raise ValueError(f"{self.seq_id}: spans must tile [0, {n}) in order")
            pos = end
        if pos != n:
            raise ValueError(f"{self.seq_id}: spans cover [0, {pos}) but sequence has {n} tokens")

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


@dataclass(frozen=True)
class LengthPartition:
    long_docs: list[str]
    short_docs: list[str]
    threshold_tokens: int


@dataclass
class IngestStats:
    files: int = 0
    documents: int = 0
    skipped_records: int = 0


# ---------------------------------------------------------------------------
# tokenizers
# ---------------------------------------------------------------------------


class ByteTokenizer:
    """Identity tokenizer over raw bytes: token id == byte value, vocab 256."""

    tokenizer_id = "bytes-v1"
    vocab_size = 256

    def encode(self, text: bytes) -> np.ndarray:
        return np.frombuffer(text, dtype=np.uint8).astype(np.int32)

    def decode(self, tokens) -> bytes:
        return np.asarray(tokens, dtype=np.int32).astype(np.uint8).tobytes()

    def token_text(self, token: int) -> bytes:
        return bytes([int(token)])


class VocabFileTokenizer:
    """Greedy longest-match tokenizer driven by an external vocabulary file.

    The file is JSON: {"tokenizer_id": str, "tokens": ["a", "bc", ...]}
    where index in the list is the token id.  Every single byte must be
    covered so that any input can be encoded.  This exists for parity with
    remote backends that bring their own vocabulary; the built-in pipeline
    default is :class:`ByteTokenizer`.
    """

    def __init__(self, path: str | Path):
        path = Path(path)
        try:
            spec = json.loads(path.read_text(encoding="utf-8"))
            self.tokenizer_id = spec["tokenizer_id"]
            token_strings = [t.encode("utf-8") for t in spec["tokens"]]
        except (OSError, KeyError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid vocabulary file {path}: {exc}") from exc
        if not token_strings:
            raise ConfigError(f"vocabulary file {path} has an empty token list")
        self.vocab_size = len(token_strings)
        self._tokens = token_strings
        self._by_prefix: dict[bytes, int] = {t: i for i, t in enumerate(token_strings)}
        self._max_len = max(len(t) for t in token_strings)

    def encode(self, text: bytes) -> np.ndarray:
        out = []
        i, n = 0, len(text)
        while i < n:
            for width in range(min(self._max_len, n - i), 0, -1):
                tok = self._by_prefix.get(text[i : i + width])
                if tok is not None:
                    out.append(tok)
                    i += width
                    break
            else:
                raise ValueError(
                    f"byte 0x{text[i]:02x} at offset {i} is not covered by tokenizer "
                    f"{self.tokenizer_id!r}"
                )
        return np.asarray(out, dtype=np.int32)

    def decode(self, tokens) -> bytes:
        return b"".join(self._tokens[int(t)] for t in np.asarray(tokens))

    def token_text(self, token: int) -> bytes:
        return self._tokens[int(token)]


def get_tokenizer(spec: str):
    """Resolve a tokenizer spec: "bytes" or a path to a vocabulary JSON file."""
    if spec == "bytes":
        return ByteTokenizer()
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"tokenizer spec {spec!r} is neither 'bytes' nor an existing file")
    return VocabFileTokenizer(path)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _iter_input_files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.is_file())
    return [path]


def ingest(
    path: str | Path,
    format: str = "jsonl",
    source: str = "default",
    stats: IngestStats | None = None,
) -> Iterator[Document]:
    """Yield documents from ``path`` in a stable order.

    Files are visited in lexicographic order and records in file order, so
    doc_ids and document order are deterministic for a given input tree.

    Formats:
      * ``lines``: every non-empty line of a UTF-8 text file is a document.
      * ``jsonl``: one JSON record per line with a required "text" field and
        optional "meta" object; malformed records are skipped and counted.
      * ``files``: each file is a single document.
    """
    if format not in INGEST_FORMATS:
        raise ValueError(f"unknown ingest format {format!r}, expected one of {INGEST_FORMATS}")
    root = Path(path)
    if not root.exists():
        raise OSError(f"input path does not exist: {root}")
    if stats is None:
        stats = IngestStats()

    for file_path in _iter_input_files(root):
        rel = file_path.relative_to(root) if root.is_dir() else file_path.name
        stats.files += 1
        if format == "files":
            data = file_path.read_bytes()
            if not data:
                continue
            stats.documents += 1
            yield Document(doc_id=str(rel), text=data, source=source)
            continue

        with open(file_path, "rb") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip(b"\r\n")
                if not line:
                    continue
                doc_id = f"{rel}:{lineno}"
                if format == "lines":
                    stats.documents += 1
                    yield Document(doc_id=doc_id, text=line, source=source)
                    continue
                try:
                    record = json.loads(line)
                    text = record["text"]
                    if not isinstance(text, str) or not text:
                        raise ValueError("missing or empty 'text' field")
                except (ValueError, KeyError, TypeError) as exc:
                    stats.skipped_records += 1
                    log.warning("%s line %d: skipping malformed record (%s)", file_path, lineno, exc)
                    continue
                meta = {str(k): str(v) for k, v in record.get("meta", {}).items()}
                stats.documents += 1
                yield Document(
                    doc_id=doc_id,
                    text=text.encode("utf-8"),
                    source=record.get("source", source),
                    meta=meta,
                )


def write_corpus_jsonl(docs: Iterable[Document], path: str | Path) -> int:
    """Write documents in the structured (jsonl) input format. Returns the count.

    Document bytes must decode as UTF-8; the synthetic generators only emit
    printable ASCII so they always round-trip.
    """
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            record = {"text": doc.text.decode("utf-8"), "source": doc.source, "meta": doc.meta}
            fh.write(json.dumps(record, ensure_ascii=True, sort_keys=True) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# tokenize / partition / pack
# ---------------------------------------------------------------------------


def tokenize(doc: Document, tokenizer) -> TokenizedDoc:
    tokens = tokenizer.encode(doc.text)
    if tokens.shape[0] == 0:
        raise ValueError(f"document {doc.doc_id!r} tokenized to zero tokens")
    return TokenizedDoc(
        doc_id=doc.doc_id,
        tokens=tokens,
        tokenizer_id=tokenizer.tokenizer_id,
        source=doc.source,
    )


def partition_by_length(docs: Iterable[TokenizedDoc], threshold_tokens: int) -> LengthPartition:
    """Split docs into long (token count >= threshold) and short (the rest)."""
    if threshold_tokens < 1:
        raise ValueError(f"threshold_tokens must be >= 1, got {threshold_tokens}")
    long_docs: list[str] = []
    short_docs: list[str] = []
    for doc in docs:
        (long_docs if len(doc) >= threshold_tokens else short_docs).append(doc.doc_id)
    return LengthPartition(long_docs=long_docs, short_docs=short_docs, threshold_tokens=threshold_tokens)


def pack(
    docs: Iterable[TokenizedDoc],
    pack_len: int,
    seq_id_prefix: str = "seq",
) -> Iterator[PackedSequence]:
    """Concatenate token streams in input order and cut into pack_len pieces.

    The final partial remainder (fewer than pack_len tokens) is dropped.
    Spans record, for every emitted sequence, which document contributed
    each token region.
    """
    if pack_len < 2:
        raise ValueError(f"pack_len must be >= 2, got {pack_len}")

    buf: list[np.ndarray] = []
    spans: list[tuple[str, int, int]] = []  # offsets within the sequence being built
    filled = 0
    seq_index = 0

    for doc in docs:
        tokens = doc.tokens
        offset = 0
        remaining = tokens.shape[0]
        while remaining > 0:
            take = min(remaining, pack_len - filled)
            buf.append(tokens[offset : offset + take])
            spans.append((doc.doc_id, filled, filled + take))
            filled += take
            offset += take
            remaining -= take
            if filled == pack_len:
                yield PackedSequence(
                    seq_id=f"{seq_id_prefix}-{seq_index:06d}",
                    tokens=np.concatenate(buf),
                    spans=tuple(spans),
                )
                seq_index += 1
                buf, spans, filled = [], [], 0
    # remainder in buf is dropped


def write_packed_jsonl(seqs: Iterable[PackedSequence], path: str | Path, header: dict | None = None) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"record": "header", **header}) + "\n")
        for seq in seqs:
            record = {
                "seq_id": seq.seq_id,
                "tokens": seq.tokens.tolist(),
                "spans": [[doc_id, start, end] for doc_id, start, end in seq.spans],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            n += 1
    return n


def read_packed_jsonl(path: str | Path) -> Iterator[PackedSequence]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "record" in record:
                continue
            yield PackedSequence(
                seq_id=record["seq_id"],
                tokens=np.asarray(record["tokens"], dtype=np.int32),
                spans=tuple((d, int(s), int(e)) for d, s, e in record["spans"]),
            )
