"""Image/alt-text corpus: ingestion, multi-round caption records, statistics,
embedding storage, and the seeded alt-vs-synthetic mixing sampler.

Persistence is deliberately file-based (JSONL plus one small binary format);
reads are safe to share across threads, mutations go through a single lock.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyRoundError,
    FormatError,
    IngestionError,
    NotFoundError,
    ParseError,
    SequencingError,
    ValidationError,
)
from .textproc import word_count

SOURCES = ("wit", "metaclip", "synthetic", "other")

EMBED_MAGIC = b"ALTE"
EMBED_VERSION = 1
_EMBED_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True, slots=True)
class ImageItem:
    id: str
    image_ref: str
    alt_text: str
    source: str = "other"
    embedding_row: int | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("item id must be non-empty")
        if self.source not in SOURCES:
            raise ValidationError(f"unknown source {self.source!r}, expected one of {SOURCES}")

    def to_dict(self) -> dict:
        obj = {
            "id": self.id,
            "image_ref": self.image_ref,
            "alt_text": self.alt_text,
            "source": self.source,
        }
        if self.embedding_row is not None:
            obj["embedding_row"] = self.embedding_row
        return obj


@dataclass(frozen=True, slots=True)
class RoundRecord:
    item_id: str
    round_no: int
    caption: str
    annotator: str
    timestamp: float
    edit_distance_to_prev: int
    length_words: int

    def to_dict(self) -> dict:
        return {
            "id": self.item_id,
            "round": self.round_no,
            "caption": self.caption,
            "annotator": self.annotator,
            "ts": self.timestamp,
            "edit_distance_to_prev": self.edit_distance_to_prev,
            "length_words": self.length_words,
        }


@dataclass(frozen=True, slots=True)
class RoundStats:
    round_no: int
    item_count: int
    mean_length_words: float
    mean_edit_distance: float
    mean_alignment: float | None = None

    def to_dict(self) -> dict:
        return {
            "round": self.round_no,
            "item_count": self.item_count,
            "mean_length_words": self.mean_length_words,
            "mean_edit_distance": self.mean_edit_distance,
            "mean_alignment": self.mean_alignment,
        }


@dataclass(frozen=True, slots=True)
class MixSpec:
    p: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValidationError(f"mixing ratio p={self.p} outside valid range [0, 1]")


@dataclass(frozen=True, slots=True)
class CaptionChoice:
    item_id: str
    chosen_source: str  # "alt" | "synthetic"
    chosen_text: str


def edit_distance(a: str, b: str) -> int:
    """Character-level Levenshtein distance with unit costs.

    Row-vectorized DP: the horizontal (insertion) relaxation is the prefix
    minimum of ``t[j] - j`` shifted back, which keeps each row O(len(b))
    in numpy instead of a Python inner loop.
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    bv = np.fromiter((ord(c) for c in b), dtype=np.int64, count=len(b))
    m = len(b)
    offsets = np.arange(m + 1, dtype=np.int64)
    prev = offsets.copy()
    cur = np.empty(m + 1, dtype=np.int64)
    for i, ca in enumerate(a, start=1):
        cur[0] = i
        np.minimum(prev[:-1] + (bv != ord(ca)), prev[1:] + 1, out=cur[1:])
        np.minimum.accumulate(cur - offsets, out=cur)
        cur += offsets
        prev, cur = cur, prev
    return int(prev[m])


class Corpus:
    """In-memory handle over items and their round-caption chains.

    Round 1 is auto-created from the alt-text at ingestion so chained
    re-annotation always has a base. Mutations are serialized by a lock;
    concurrent reads need no coordination.
    """

    def __init__(self):
        self._items: dict[str, ImageItem] = {}
        self._rounds: dict[str, list[RoundRecord]] = {}
        self._lock = threading.Lock()

    # -- construction -------------------------------------------------------

    def _add_item(self, item: ImageItem, line_no: int | None = None) -> None:
        if item.id in self._items:
            where = f" (line {line_no})" if line_no is not None else ""
            raise IngestionError(f"duplicate item id {item.id!r}{where}")
        self._items[item.id] = item
        self._rounds[item.id] = [
            RoundRecord(
                item_id=item.id,
                round_no=1,
                caption=item.alt_text,
                annotator="alt-text",
                timestamp=0.0,
                edit_distance_to_prev=0,
                length_words=word_count(item.alt_text),
            )
        ]

    @classmethod
    def from_items(cls, items: Iterable[ImageItem]) -> "Corpus":
        corpus = cls()
        with corpus._lock:
            for item in items:
                corpus._add_item(item)
        return corpus

    # -- lookups ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._items

    def item(self, item_id: str) -> ImageItem:
        try:
            return self._items[item_id]
        except KeyError:
            raise NotFoundError(f"unknown item id {item_id!r}") from None

    def item_ids(self) -> list[str]:
        return list(self._items)

    def items(self) -> list[ImageItem]:
        return list(self._items.values())

    def rounds_for(self, item_id: str) -> tuple[RoundRecord, ...]:
        self.item(item_id)
        return tuple(self._rounds[item_id])

    def max_round(self, item_id: str) -> int:
        return self.rounds_for(item_id)[-1].round_no

    def latest_caption(self, item_id: str) -> str:
        return self.rounds_for(item_id)[-1].caption

    # -- mutation -----------------------------------------------------------

    def record_round(
        self,
        item_id: str,
        round_no: int,
        caption: str,
        annotator: str,
        timestamp: float | None = None,
    ) -> RoundRecord:
        item = self.item(item_id)
        with self._lock:
            existing = self._rounds[item_id]
            if round_no == 1 and caption != item.alt_text:
                raise ValidationError(
                    f"round 1 caption must equal the alt-text verbatim for item {item_id!r}"
                )
            expected = existing[-1].round_no + 1
            if round_no != expected:
                raise SequencingError(
                    f"item {item_id!r}: expected round {expected}, got {round_no}"
                )
            prev = existing[-1].caption
            record = RoundRecord(
                item_id=item_id,
                round_no=round_no,
                caption=caption,
                annotator=annotator,
                timestamp=time.time() if timestamp is None else float(timestamp),
                edit_distance_to_prev=edit_distance(prev, caption),
                length_words=word_count(caption),
            )
            existing.append(record)
            return record

    # -- statistics ----------------------------------------------------------

    def round_stats(
        self,
        round_no: int,
        embeddings: "EmbeddingMatrix | None" = None,
        text_embedder: Callable[[str], np.ndarray] | None = None,
    ) -> RoundStats:
        records = [
            rounds[round_no - 1]
            for rounds in self._rounds.values()
            if len(rounds) >= round_no >= 1
        ]
        if not records:
            raise EmptyRoundError(f"no items have a record at round {round_no}")
        mean_len = sum(r.length_words for r in records) / len(records)
        mean_ed = sum(r.edit_distance_to_prev for r in records) / len(records)
        alignment = None
        if embeddings is not None and text_embedder is not None:
            from .metrics import clip_score

            scores = []
            for rec in records:
                item = self._items[rec.item_id]
                if item.embedding_row is None:
                    continue
                image_vec = embeddings.rows[item.embedding_row]
                scores.append(clip_score(image_vec, text_embedder(rec.caption)))
            if scores:
                alignment = sum(scores) / len(scores)
        stats = RoundStats(round_no, len(records), mean_len, mean_ed, alignment)
        if not (math.isfinite(stats.mean_length_words) and math.isfinite(stats.mean_edit_distance)):
            raise ValidationError("round statistics are non-finite")
        return stats

    def recorded_rounds(self) -> list[int]:
        """Round numbers that have at least one record, ascending."""
        top = max((rounds[-1].round_no for rounds in self._rounds.values()), default=0)
        return list(range(1, top + 1))


def _parse_item(obj: dict, line_no: int | None = None) -> ImageItem:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", line_no)
    try:
        item_id = obj["id"]
        image_ref = obj["image_ref"]
        alt_text = obj["alt_text"]
    except KeyError as exc:
        raise ParseError(f"missing required key {exc.args[0]!r}", line_no) from None
    source = obj.get("source", "other")
    row = obj.get("embedding_row")
    if not isinstance(item_id, str) or not isinstance(image_ref, str) or not isinstance(alt_text, str):
        raise ParseError("id, image_ref and alt_text must be strings", line_no)
    if row is not None and not isinstance(row, int):
        raise ParseError("embedding_row must be an integer when present", line_no)
    try:
        return ImageItem(item_id, image_ref, alt_text, source, row)
    except ValidationError as exc:
        raise ParseError(str(exc), line_no) from None


def ingest_pairs(path: str | Path) -> Corpus:
    """Load an items JSONL file into a fresh corpus.

    Malformed lines raise :class:`ParseError` with the 1-based line number;
    duplicate ids raise :class:`IngestionError` naming the id and line.
    """
    corpus = Corpus()
    with open(path, "r", encoding="utf-8") as fh:
        with corpus._lock:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
                corpus._add_item(_parse_item(obj, line_no), line_no)
    return corpus


def load_rounds(corpus: Corpus, path: str | Path) -> int:
    """Apply a rounds JSONL file to ``corpus``; returns records applied.

    Round-1 lines are verified against the alt-text and skipped (they exist
    implicitly). Later rounds are recorded in ascending order per item.
    """
    by_item: dict[str, list[tuple[int, dict]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
            for key in ("id", "round", "caption"):
                if key not in obj:
                    raise ParseError(f"missing required key {key!r}", line_no)
            by_item.setdefault(obj["id"], []).append((line_no, obj))
    applied = 0
    for item_id, entries in by_item.items():
        entries.sort(key=lambda pair: pair[1]["round"])
        for line_no, obj in entries:
            round_no = int(obj["round"])
            if round_no == 1:
                if obj["caption"] != corpus.item(item_id).alt_text:
                    raise ParseError(
                        f"round 1 caption for item {item_id!r} does not equal its alt-text",
                        line_no,
                    )
                continue
            corpus.record_round(
                item_id,
                round_no,
                obj["caption"],
                obj.get("annotator", ""),
                timestamp=obj.get("ts"),
            )
            applied += 1
    return applied


def append_round_line(path: str | Path, record: RoundRecord) -> None:
    line = json.dumps(
        {
            "id": record.item_id,
            "round": record.round_no,
            "caption": record.caption,
            "annotator": record.annotator,
            "ts": record.timestamp,
        },
        ensure_ascii=False,
    )
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")


# ---------------------------------------------------------------------------
# Mixing sampler
# ---------------------------------------------------------------------------


def mix_sample(
    corpus: Corpus,
    spec: MixSpec,
    synthetic_source: int | Mapping[str, str],
) -> list[CaptionChoice]:
    """Assign each item its alt-text or its synthetic caption, i.i.d. with
    probability ``spec.p`` of choosing the synthetic one.

    ``synthetic_source`` is either a round number (that round's caption is
    the synthetic text) or an explicit ``id -> caption`` mapping. The draw
    sequence is fully determined by ``(seed, corpus order)``.
    """
    ids = corpus.item_ids()
    synthetic: dict[str, str] = {}
    for item_id in ids:
        if isinstance(synthetic_source, int):
            rounds = corpus.rounds_for(item_id)
            if len(rounds) < synthetic_source or synthetic_source < 1:
                raise ValidationError(
                    f"item {item_id!r} has no synthetic caption at round {synthetic_source}"
                )
            synthetic[item_id] = rounds[synthetic_source - 1].caption
        else:
            if item_id not in synthetic_source:
                raise ValidationError(f"item {item_id!r} has no synthetic caption")
            synthetic[item_id] = synthetic_source[item_id]
    draws = np.random.default_rng(spec.seed).random(len(ids))
    choices = []
    for item_id, draw in zip(ids, draws):
        if draw < spec.p:
            choices.append(CaptionChoice(item_id, "synthetic", synthetic[item_id]))
        else:
            choices.append(CaptionChoice(item_id, "alt", corpus.item(item_id).alt_text))
    return choices


def write_atomic(path: str | Path, data: str | bytes) -> None:
    """Write via a temp file and rename so interrupted runs never leave a
    half-written artifact."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, encoding=None if isinstance(data, bytes) else "utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_training_set(choices: Sequence[CaptionChoice], path: str | Path) -> None:
    """Write choices as JSONL ``{"id", "text", "source"}`` in input order."""
    if not choices:
        raise ValidationError("cannot export an empty training set")
    lines = [
        json.dumps(
            {"id": c.item_id, "text": c.chosen_text, "source": c.chosen_source},
            ensure_ascii=False,
        )
        for c in choices
    ]
    write_atomic(path, "\n".join(lines) + "\n")


def load_training_set(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
    return rows


# ---------------------------------------------------------------------------
# Embedding storage
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingMatrix:
    dim: int
    rows: np.ndarray  # [n, dim] float32
    id_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32).reshape(-1, self.dim)
        if self.rows.size and not np.all(np.isfinite(self.rows)):
            raise ValidationError("embedding matrix contains non-finite values")
        for key, row in self.id_index.items():
            if not (0 <= row < len(self.rows)):
                raise ValidationError(
                    f"id_index target {row} for {key!r} outside matrix of {len(self.rows)} rows"
                )

    def __len__(self) -> int:
        return len(self.rows)

    def row_for_id(self, item_id: str) -> np.ndarray:
        if item_id not in self.id_index:
            raise NotFoundError(f"no embedding row for id {item_id!r}")
        return self.rows[self.id_index[item_id]]


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".idx.jsonl")


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    header = _EMBED_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, matrix.dim, len(matrix.rows))
    payload = np.ascontiguousarray(matrix.rows, dtype="<f4").tobytes()
    write_atomic(path, header + payload)
    lines = [
        json.dumps({"id": key, "row": row})
        for key, row in sorted(matrix.id_index.items(), key=lambda kv: kv[1])
    ]
    write_atomic(_sidecar_path(path), "\n".join(lines) + ("\n" if lines else ""))


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read the binary embedding file and its sidecar id index.

    Format: magic ``ALTE``, u32 version, u32 dim, u64 count, then
    ``count * dim`` little-endian float32 values.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _EMBED_HEADER.size:
        raise FormatError(
            f"embedding file too short: {len(blob)} bytes, header needs {_EMBED_HEADER.size}"
        )
    magic, version, dim, count = _EMBED_HEADER.unpack_from(blob)
    if magic != EMBED_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMBED_MAGIC!r}")
    if version != EMBED_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    expected = 4 * dim * count
    actual = len(blob) - _EMBED_HEADER.size
    if actual != expected:
        raise FormatError(
            f"embedding payload truncated or padded: expected {expected} bytes, found {actual}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_EMBED_HEADER.size).reshape(count, dim)
    if data.size and not np.all(np.isfinite(data)):
        raise ValidationError("embedding file contains non-finite values")
    index: dict[str, int] = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
                index[obj["id"]] = int(obj["row"])
    return EmbeddingMatrix(dim=dim, rows=data.copy(), id_index=index)
