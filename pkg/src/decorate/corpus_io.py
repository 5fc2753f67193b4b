"""Streaming read/write of sharded corpora, annotations, and comparisons.

Interchange format is UTF-8 line-delimited JSON, one record per line.
Deterministic global document order = shard list order, then line order;
every seeded sampler depends on that order being stable across reads.

Record schemas:

- document:   {"id", "text", "source", "token_count", "meta"?}
- comparison: {"criterion", "doc_a", "doc_b", "winner": "A"|"B", "judge", "rationale"?}
- annotation: {"id", "ratings"?: {criterion: float}, "tags"?: [l1, l2, l3],
               "edited"?: str, "edited_token_count"?: int}
"""

from __future__ import annotations

import gzip
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional

from .errors import (
    IoFailure,
    MalformedRecord,
    MissingShard,
    UnknownTokenizer,
)
from .types import (
    AnnotatedDocument,
    ComparisonRecord,
    Criterion,
    Document,
    RatingVector,
    TagPath,
    Winner,
)
from .util import fingerprint_file

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# tokenizers

def _whitespace_tokens(text: str) -> int:
    return len(text.split())


_TOKENIZERS: dict[str, Callable[[str], int]] = {"whitespace": _whitespace_tokens}


def register_tokenizer(tokenizer_id: str, count_fn: Callable[[str], int]) -> None:
    """Register a token-count function under an id (overwrites silently)."""
    _TOKENIZERS[tokenizer_id] = count_fn


def count_tokens(text: str, tokenizer_id: str = "whitespace") -> int:
    """Token count of ``text`` under a registered tokenizer.

    The default whitespace tokenizer counts maximal non-whitespace runs.
    """
    try:
        fn = _TOKENIZERS[tokenizer_id]
    except KeyError:
        raise UnknownTokenizer(
            f"unknown tokenizer {tokenizer_id!r}; registered: {sorted(_TOKENIZERS)}"
        ) from None
    return fn(text)


# ---------------------------------------------------------------------------
# corpus manifests

@dataclass
class CorpusManifest:
    """Ordered shard list plus recomputable totals and a content fingerprint."""

    shards: list[str]
    total_documents: int
    total_tokens: int
    tokenizer_id: str
    content_fingerprint: str

    def to_json(self) -> dict:
        return {
            "shards": list(self.shards),
            "total_documents": self.total_documents,
            "total_tokens": self.total_tokens,
            "tokenizer_id": self.tokenizer_id,
            "content_fingerprint": self.content_fingerprint,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        doc = self.to_json()
        # Portable manifests: store shard paths relative to the manifest dir
        # when they live under it.
        rel = []
        for shard in doc["shards"]:
            p = Path(shard)
            try:
                rel.append(str(p.relative_to(path.parent)))
            except ValueError:
                rel.append(str(p))
        doc["shards"] = rel
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text("utf-8"))
        except FileNotFoundError:
            raise MissingShard(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"manifest {path} is not valid JSON: {exc}") from None
        try:
            shards = [
                str(p) if Path(p).is_absolute() else str(path.parent / p)
                for p in doc["shards"]
            ]
            return cls(
                shards=shards,
                total_documents=int(doc["total_documents"]),
                total_tokens=int(doc["total_tokens"]),
                tokenizer_id=str(doc["tokenizer_id"]),
                content_fingerprint=str(doc["content_fingerprint"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"manifest {path} missing field: {exc}") from None


def _open_shard(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def document_to_record(doc: Document) -> dict:
    record: dict = {
        "id": doc.id,
        "text": doc.text,
        "source": doc.source,
        "token_count": doc.token_count,
    }
    if doc.metadata:
        record["meta"] = dict(doc.metadata)
    return record


def document_from_record(record: Mapping) -> Document:
    try:
        return Document(
            id=str(record["id"]),
            text=str(record["text"]),
            source=str(record["source"]),
            token_count=int(record["token_count"]),
            metadata=dict(record.get("meta", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad document record: {exc}") from None


def write_documents(docs: Iterable[Document], path: str | Path) -> int:
    """Write one JSON line per document; returns the count written."""
    path = Path(path)
    n = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for doc in docs:
                fh.write(json.dumps(document_to_record(doc), ensure_ascii=False))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None
    return n


def build_manifest(
    shard_paths: list[str | Path], tokenizer_id: str = "whitespace"
) -> CorpusManifest:
    """Scan shards, accumulate totals, and fingerprint the shard bytes."""
    import hashlib

    total_docs = 0
    total_tokens = 0
    h = hashlib.sha256()
    for shard in shard_paths:
        shard = Path(shard)
        if not shard.exists():
            raise MissingShard(f"shard not found: {shard}")
        h.update(bytes.fromhex(fingerprint_file(shard)))
        for doc in _iter_shard(shard, skip_malformed=False):
            total_docs += 1
            total_tokens += doc.token_count
    return CorpusManifest(
        shards=[str(Path(p)) for p in shard_paths],
        total_documents=total_docs,
        total_tokens=total_tokens,
        tokenizer_id=tokenizer_id,
        content_fingerprint=h.hexdigest(),
    )


def _iter_shard(
    shard: Path,
    skip_malformed: bool,
    on_skip: Optional[Callable[[str], None]] = None,
) -> Iterator[Document]:
    try:
        fh = _open_shard(shard)
    except FileNotFoundError:
        raise MissingShard(f"shard not found: {shard}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield document_from_record(json.loads(line))
            except (json.JSONDecodeError, MalformedRecord) as exc:
                msg = f"{shard}:{lineno}: {exc}"
                if skip_malformed:
                    log.warning("skipping malformed record at %s", msg)
                    if on_skip is not None:
                        on_skip(msg)
                    continue
                raise MalformedRecord(msg) from None


def read_documents(
    manifest: CorpusManifest,
    skip_malformed: bool = False,
    on_skip: Optional[Callable[[str], None]] = None,
) -> Iterator[Document]:
    """Stream documents in manifest order.

    Hard-errors on malformed lines unless ``skip_malformed``; silent drops
    would corrupt token accounting, so skips are logged and reported via
    ``on_skip``. When not skipping, the emitted count is checked against
    the manifest's total.
    """
    n = 0
    for shard in manifest.shards:
        for doc in _iter_shard(Path(shard), skip_malformed, on_skip):
            n += 1
            yield doc
    if not skip_malformed and n != manifest.total_documents:
        raise MalformedRecord(
            f"manifest declares {manifest.total_documents} documents, read {n}"
        )


def load_documents(
    manifest: CorpusManifest, skip_malformed: bool = False
) -> dict[str, Document]:
    """Read the whole corpus into an id-keyed dict (insertion = manifest order)."""
    docs: dict[str, Document] = {}
    for doc in read_documents(manifest, skip_malformed=skip_malformed):
        if doc.id in docs:
            raise MalformedRecord(f"duplicate document id {doc.id!r}")
        docs[doc.id] = doc
    return docs


# ---------------------------------------------------------------------------
# annotations

def annotation_to_record(ann: AnnotatedDocument) -> dict:
    record: dict = {"id": ann.doc.id}
    if ann.ratings is not None:
        record["ratings"] = {c.value: ann.ratings[c] for c in Criterion}
    if ann.tags is not None:
        record["tags"] = list(ann.tags.as_tuple())
    if ann.edited_text is not None:
        record["edited"] = ann.edited_text
        record["edited_token_count"] = ann.edited_token_count
    return record


def annotation_from_record(
    record: Mapping, docs_by_id: Mapping[str, Document]
) -> AnnotatedDocument:
    """Typed annotation from a raw record, rejoined with its document.

    A present ``ratings`` map must be complete (all eight criteria); partial
    maps are malformed at this layer.
    """
    doc_id = record.get("id")
    if not doc_id:
        raise MalformedRecord("annotation record missing id")
    doc = docs_by_id.get(doc_id)
    if doc is None:
        raise MalformedRecord(f"annotation for unknown document {doc_id!r}")
    ratings = None
    if "ratings" in record:
        try:
            ratings = RatingVector.from_scores(
                {Criterion(k): float(v) for k, v in record["ratings"].items()}
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise MalformedRecord(f"bad ratings for {doc_id!r}: {exc}") from None
    tags = None
    if "tags" in record:
        raw = record["tags"]
        if not (isinstance(raw, list) and len(raw) == 3):
            raise MalformedRecord(f"bad tags for {doc_id!r}: {raw!r}")
        tags = TagPath(*map(str, raw))
    edited = record.get("edited")
    edited_tokens = record.get("edited_token_count")
    if (edited is None) != (edited_tokens is None):
        raise MalformedRecord(
            f"annotation for {doc_id!r} must carry edited and edited_token_count together"
        )
    return AnnotatedDocument(
        doc=doc,
        ratings=ratings,
        tags=tags,
        edited_text=edited,
        edited_token_count=None if edited_tokens is None else int(edited_tokens),
    )


def write_annotations(
    annotations: Iterable[AnnotatedDocument], path: str | Path
) -> int:
    """One line per annotated document; round-trips losslessly with
    ``read_annotations`` given the same corpus."""
    path = Path(path)
    n = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for ann in annotations:
                fh.write(json.dumps(annotation_to_record(ann), ensure_ascii=False))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None
    return n


def read_annotation_records(
    path: str | Path, skip_malformed: bool = False
) -> Iterator[dict]:
    """Stream raw annotation records (dicts); only JSON shape is validated."""
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise MissingShard(f"annotations not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict) or "id" not in record:
                    raise MalformedRecord("record must be an object with an id")
            except (json.JSONDecodeError, MalformedRecord) as exc:
                msg = f"{path}:{lineno}: {exc}"
                if skip_malformed:
                    log.warning("skipping malformed record at %s", msg)
                    continue
                raise MalformedRecord(msg) from None
            yield record


def read_annotations(
    path: str | Path, docs_by_id: Mapping[str, Document]
) -> Iterator[AnnotatedDocument]:
    for record in read_annotation_records(path):
        yield annotation_from_record(record, docs_by_id)


# ---------------------------------------------------------------------------
# comparisons

def comparison_to_record(rec: ComparisonRecord) -> dict:
    record: dict = {
        "criterion": rec.criterion.value,
        "doc_a": rec.doc_a,
        "doc_b": rec.doc_b,
        "winner": rec.winner.value,
        "judge": rec.judge,
    }
    if rec.rationale is not None:
        record["rationale"] = rec.rationale
    return record


def comparison_from_record(record: Mapping) -> ComparisonRecord:
    try:
        return ComparisonRecord(
            criterion=Criterion(record["criterion"]),
            doc_a=str(record["doc_a"]),
            doc_b=str(record["doc_b"]),
            winner=Winner(record["winner"]),
            judge=str(record["judge"]),
            rationale=record.get("rationale"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad comparison record: {exc}") from None


def write_comparisons(records: Iterable[ComparisonRecord], path: str | Path) -> int:
    path = Path(path)
    n = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(comparison_to_record(rec), ensure_ascii=False))
                fh.write("\n")
                n += 1
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None
    return n


def read_comparisons(path: str | Path) -> Iterator[ComparisonRecord]:
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise MissingShard(f"comparisons not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield comparison_from_record(json.loads(line))
            except (json.JSONDecodeError, MalformedRecord) as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from None
