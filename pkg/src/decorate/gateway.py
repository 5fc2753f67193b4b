"""Pluggable annotation backends and pair scheduling.

``MockBackend`` is a pure function of its inputs and fixture config, so the
whole pipeline runs offline with a known ground truth. ``RemoteBackend``
talks to any chat-completion-compatible endpoint; it never fabricates a
reply, surfacing transport or parse failures instead.

Comparison calls are label-blind: the remote backend randomizes (seeded)
which text is presented first and un-swaps the parsed choice, so position
bias in the judge cannot leak into the records.
"""

from __future__ import annotations

import json
import math
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import httpx

from . import prompts
from .errors import (
    EmptyReply,
    MalformedRecord,
    PathMismatch,
    TooFewDocuments,
    TransportError,
    UnknownTag,
    UnparseableReply,
)
from .taxonomy import TagTaxonomy
from .types import Criterion, TagPath, Winner
from .util import derive_seed, stable_u01


# ---------------------------------------------------------------------------
# pair scheduling

@dataclass
class PairSchedule:
    """Per-criterion comparison pairs forming a connected graph."""

    pairs: dict[Criterion, list[tuple[str, str]]]
    pairs_per_doc: int
    seed: int

    def save(self, path: str | Path) -> None:
        doc = {
            "pairs_per_doc": self.pairs_per_doc,
            "seed": self.seed,
            "criteria": {
                c.value: [list(p) for p in pairs] for c, pairs in self.pairs.items()
            },
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PairSchedule":
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
            return cls(
                pairs={
                    Criterion(name): [tuple(p) for p in pairs]
                    for name, pairs in doc["criteria"].items()
                },
                pairs_per_doc=int(doc["pairs_per_doc"]),
                seed=int(doc["seed"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"bad pair schedule {path}: {exc}") from None


def _pairs_for_criterion(
    doc_ids: Sequence[str], pairs_per_doc: int, seed: int
) -> list[tuple[str, str]]:
    import random

    n = len(doc_ids)
    rng = random.Random(seed)
    order = list(doc_ids)
    rng.shuffle(order)

    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()

    def add(i: int, j: int) -> bool:
        key = (i, j) if i < j else (j, i)
        if i == j or key in seen:
            return False
        seen.add(key)
        edges.append((i, j))
        return True

    # Hamiltonian ring over the shuffled order guarantees connectivity.
    if n == 2:
        add(0, 1)
    else:
        for i in range(n):
            add(i, (i + 1) % n)

    # Each document should take part in ~pairs_per_doc comparisons.
    target = min(max(len(edges), math.ceil(n * pairs_per_doc / 2)), n * (n - 1) // 2)
    max_pairs = n * (n - 1) // 2
    if target > 0.6 * max_pairs:
        candidates = [(i, j) for i in range(n) for j in range(i + 1, n)]
        rng.shuffle(candidates)
        for i, j in candidates:
            if len(edges) >= target:
                break
            add(i, j)
    else:
        while len(edges) < target:
            i, j = rng.sample(range(n), 2)
            add(i, j)
    return [(order[i], order[j]) for i, j in edges]


def schedule_pairs(
    doc_ids: Sequence[str], pairs_per_doc: int, seed: int
) -> PairSchedule:
    """Seeded random ring plus chords, built independently per criterion.

    Deterministic for a fixed (doc id order, seed); the graph is connected
    for every criterion by construction.
    """
    if len(doc_ids) < 2:
        raise TooFewDocuments(f"need >= 2 documents, got {len(doc_ids)}")
    if pairs_per_doc < 1:
        raise ValueError(f"pairs_per_doc must be >= 1, got {pairs_per_doc}")
    if len(set(doc_ids)) != len(doc_ids):
        raise ValueError("doc_ids contains duplicates")
    return PairSchedule(
        pairs={
            c: _pairs_for_criterion(
                doc_ids, pairs_per_doc, derive_seed(seed, f"pairs:{c.value}")
            )
            for c in Criterion
        },
        pairs_per_doc=pairs_per_doc,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# backend interface

@dataclass(frozen=True)
class CompareResult:
    winner: Winner
    rationale: Optional[str] = None
    swapped: bool = False  # texts were presented in reversed order


class AnnotatorBackend(Protocol):
    """Behavioral interface every backend implements."""

    judge: str

    def compare(self, criterion: Criterion, text_a: str, text_b: str) -> CompareResult: ...

    def assign_first_level_tag(
        self, text: str, taxonomy: TagTaxonomy
    ) -> tuple[str, str]: ...

    def assign_sub_tags(
        self, text: str, level1: str, taxonomy: TagTaxonomy
    ) -> tuple[str, str, str]: ...

    def summarize(self, text: str) -> str: ...

    def edit(self, text: str) -> str: ...


# ---------------------------------------------------------------------------
# mock backend

def _pseudo_latent(text: str, criterion: Criterion) -> float:
    # Hash-derived fallback latent; any fixed seed works, it only has to be
    # a pure function of (text, criterion).
    return stable_u01(0, "latent", criterion.value, text)


_EDIT_SUBSTITUTIONS = {
    "utilize": "use",
    "utilizes": "uses",
    "commence": "begin",
    "approximately": "roughly",
    "demonstrate": "show",
    "subsequently": "afterwards",
}


class MockBackend:
    """Deterministic offline backend.

    Comparison winners come from per-document latent quality scores (fixture
    file), falling back to a hash of the text. Tags come from a keyword table
    (fixture), falling back to a hash-picked taxonomy path. Identical inputs
    always yield identical outputs.
    """

    judge = "mock"

    def __init__(
        self,
        latents_by_text: Optional[Mapping[str, Mapping[Criterion, float]]] = None,
        keyword_paths: Optional[Mapping[str, TagPath]] = None,
    ) -> None:
        self._latents = dict(latents_by_text or {})
        # Longest keyword first so specific rules beat generic ones.
        self._keywords = sorted(
            (keyword_paths or {}).items(), key=lambda kv: (-len(kv[0]), kv[0])
        )

    @classmethod
    def from_fixture(
        cls, fixture_path: str | Path, texts_by_id: Mapping[str, str]
    ) -> "MockBackend":
        """Fixture JSON: {"latents": {doc_id: {criterion: score}},
        "keyword_tags": {keyword: [l1, l2, l3]}}."""
        try:
            doc = json.loads(Path(fixture_path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise MalformedRecord(f"bad mock fixture {fixture_path}: {exc}") from None
        latents: dict[str, dict[Criterion, float]] = {}
        for doc_id, scores in doc.get("latents", {}).items():
            text = texts_by_id.get(doc_id)
            if text is None:
                continue
            latents[text] = {Criterion(c): float(v) for c, v in scores.items()}
        keywords = {
            kw: TagPath(*path) for kw, path in doc.get("keyword_tags", {}).items()
        }
        return cls(latents_by_text=latents, keyword_paths=keywords)

    def _latent(self, text: str, criterion: Criterion) -> float:
        configured = self._latents.get(text)
        if configured is not None and criterion in configured:
            return configured[criterion]
        return _pseudo_latent(text, criterion)

    def compare(self, criterion: Criterion, text_a: str, text_b: str) -> CompareResult:
        la = self._latent(text_a, criterion)
        lb = self._latent(text_b, criterion)
        winner = Winner.A if la >= lb else Winner.B  # ties go to A
        return CompareResult(
            winner=winner, rationale=f"latent {la:.6f} vs {lb:.6f}"
        )

    def _keyword_path(self, text: str) -> Optional[tuple[str, TagPath]]:
        lowered = text.lower()
        for keyword, path in self._keywords:
            if keyword.lower() in lowered:
                return keyword, path
        return None

    def assign_first_level_tag(
        self, text: str, taxonomy: TagTaxonomy
    ) -> tuple[str, str]:
        hit = self._keyword_path(text)
        if hit is not None:
            keyword, path = hit
            if path.level1 not in taxonomy.level1:
                raise UnknownTag(f"fixture tag {path.level1!r} not in taxonomy")
            return path.level1, f"keyword match: {keyword!r}"
        idx = int(stable_u01(0, "tag1", text) * len(taxonomy.level1))
        return taxonomy.level1[idx], "hash fallback"

    def assign_sub_tags(
        self, text: str, level1: str, taxonomy: TagTaxonomy
    ) -> tuple[str, str, str]:
        if level1 not in taxonomy.level1:
            raise UnknownTag(f"unknown first-level tag {level1!r}")
        hit = self._keyword_path(text)
        if hit is not None and hit[1].level1 == level1:
            keyword, path = hit
            if path.level2 not in taxonomy.children(level1):
                raise UnknownTag(f"fixture tag {path.level2!r} not under {level1!r}")
            if path.level3 not in taxonomy.grandchildren(level1, path.level2):
                raise PathMismatch(
                    f"fixture tag {path.level3!r} not under {path.level2!r}"
                )
            return path.level2, path.level3, f"keyword match: {keyword!r}"
        leaves = [
            (l2, l3)
            for l2 in taxonomy.children(level1)
            for l3 in taxonomy.grandchildren(level1, l2)
        ]
        idx = int(stable_u01(0, "tag23", level1, text) * len(leaves))
        l2, l3 = leaves[idx]
        return l2, l3, "hash fallback"

    def summarize(self, text: str) -> str:
        return " ".join(text.split()[:100])

    def edit(self, text: str) -> str:
        """Sentence-order normalization plus fixed lexical substitutions;
        deterministic so tests can recompute the expected output."""
        sentences = [s for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s]
        sentences.sort(key=str.casefold)
        edited = " ".join(sentences)
        for old, new in _EDIT_SUBSTITUTIONS.items():
            edited = re.sub(rf"\b{re.escape(old)}\b", new, edited, flags=re.IGNORECASE)
        if not edited:
            raise EmptyReply("mock edit of empty text")
        return edited


# ---------------------------------------------------------------------------
# remote backend

_CHOICE_RE = re.compile(r"Choice:\s*([12])")
_JSON_RE = re.compile(r"\{.*\}", re.DOTALL)
_STRICT_SUFFIX = (
    "\n\nYour previous reply could not be parsed. "
    "Respond ONLY in the exact format requested above."
)


def _extract_json(reply: str) -> Optional[dict]:
    for candidate in (reply, *(m.group(0) for m in [_JSON_RE.search(reply)] if m)):
        try:
            doc = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    return None


class RemoteBackend:
    """Chat-completion client with bounded concurrency, retry with
    exponential backoff, and a one-re-ask parse policy.

    Per send, at most ``retries + 1`` HTTP requests are made; a parse
    failure triggers exactly one re-ask with a stricter suffix before
    surfacing ``UnparseableReply``. Transport failures surface as
    ``TransportError`` after the retry budget; no reply is ever fabricated.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "default",
        retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        max_in_flight: int = 8,
        seed: int = 0,
        transport: Optional[httpx.BaseTransport] = None,
    ) -> None:
        if not base_url:
            raise TransportError("remote backend needs a base URL")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retries = retries
        self.backoff_base = backoff_base
        self.seed = seed
        self.judge = f"remote:{model}"
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)
        self._slot = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_env(cls, **overrides) -> "RemoteBackend":
        """Configure from DECORATE_API_BASE / DECORATE_API_KEY / DECORATE_MODEL."""
        import os

        base = os.environ.get("DECORATE_API_BASE", "")
        if not base:
            raise TransportError("DECORATE_API_BASE is not set")
        model = os.environ.get("DECORATE_MODEL", "")
        if not model:
            raise TransportError("DECORATE_MODEL is not set")
        kwargs = {
            "base_url": base,
            "api_key": os.environ.get("DECORATE_API_KEY", ""),
            "model": model,
        }
        kwargs.update(overrides)
        return cls(**kwargs)

    def close(self) -> None:
        self._client.close()

    def _send(self, prompt: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        url = f"{self.base_url}/chat/completions"
        last_error: Optional[str] = None
        for attempt in range(self.retries + 1):
            if attempt > 0:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                with self._slot:
                    response = self._client.post(url, json=body)
            except httpx.HTTPError as exc:
                last_error = str(exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                raise UnparseableReply(f"malformed completion body: {exc}") from None
        raise TransportError(
            f"request failed after {self.retries + 1} attempts: {last_error}"
        )

    def _ask_parsed(self, prompt: str, parse, what: str):
        """Send, parse, and on parse failure re-ask once with a strict suffix."""
        reply = self._send(prompt)
        parsed = parse(reply)
        if parsed is not None:
            return parsed
        reply = self._send(prompt + _STRICT_SUFFIX)
        parsed = parse(reply)
        if parsed is not None:
            return parsed
        raise UnparseableReply(f"could not parse {what} from reply: {reply[:200]!r}")

    def compare(self, criterion: Criterion, text_a: str, text_b: str) -> CompareResult:
        if not text_a or not text_b:
            raise EmptyReply("comparison texts must be non-empty")
        swapped = stable_u01(self.seed, "present", criterion.value, text_a, text_b) < 0.5
        first, second = (text_b, text_a) if swapped else (text_a, text_b)
        prompt = prompts.render_compare(criterion, first, second)

        def parse(reply: str):
            m = _CHOICE_RE.search(reply)
            if not m:
                return None
            why = reply.split("Why:", 1)[1].strip() if "Why:" in reply else None
            return int(m.group(1)), why

        choice, why = self._ask_parsed(prompt, parse, "choice")
        picked_first = choice == 1
        winner = Winner.B if picked_first == swapped else Winner.A
        return CompareResult(winner=winner, rationale=why, swapped=swapped)

    def assign_first_level_tag(
        self, text: str, taxonomy: TagTaxonomy
    ) -> tuple[str, str]:
        prompt = prompts.render_first_level_tagging(text)

        def parse(reply: str):
            doc = _extract_json(reply)
            if doc is None or "tag" not in doc:
                return None
            return str(doc["tag"]), str(doc.get("explanation", ""))

        tag, explanation = self._ask_parsed(prompt, parse, "first-level tag")
        if tag not in taxonomy.level1:
            raise UnknownTag(f"reply tag {tag!r} is not a first-level tag")
        return tag, explanation

    def assign_sub_tags(
        self, text: str, level1: str, taxonomy: TagTaxonomy
    ) -> tuple[str, str, str]:
        if level1 not in taxonomy.level1:
            raise UnknownTag(f"unknown first-level tag {level1!r}")
        prompt = prompts.render_sub_level_tagging(
            text, level1, taxonomy.subtree_json(level1)
        )

        def parse(reply: str):
            doc = _extract_json(reply)
            if doc is None or "second_level_tag" not in doc or "third_level_tag" not in doc:
                return None
            return (
                str(doc["second_level_tag"]),
                str(doc["third_level_tag"]),
                str(doc.get("explanation", "")),
            )

        l2, l3, explanation = self._ask_parsed(prompt, parse, "sub-level tags")
        if l2 not in taxonomy.children(level1):
            raise UnknownTag(f"reply tag {l2!r} is not under {level1!r}")
        if l3 not in taxonomy.grandchildren(level1, l2):
            raise PathMismatch(f"reply tag {l3!r} is not under {l2!r}")
        return l2, l3, explanation

    def summarize(self, text: str) -> str:
        prompt = prompts.render_summary(text)

        def parse(reply: str):
            doc = _extract_json(reply)
            if doc is None or "summary" not in doc:
                return None
            return str(doc["summary"])

        return self._ask_parsed(prompt, parse, "summary")

    def edit(self, text: str) -> str:
        reply = self._send(prompts.render_editing(text)).strip()
        if not reply:
            raise EmptyReply("remote edit returned an empty reply")
        return reply
