from __future__ import annotations

import random
from pathlib import Path

import pytest

from decorate import corpus_io
from decorate.taxonomy import TagTaxonomy, parse_taxonomy
from decorate.types import (
    AnnotatedDocument,
    Criterion,
    Document,
    RatingVector,
    TagPath,
)

_VOCAB = (
    "the quick brown fox jumps over a lazy dog while rivers flow through "
    "quiet valleys and engineers measure entropy in sampled corpora with "
    "careful seeded experiments that repeat exactly every time"
).split()


def make_docs(
    n: int,
    seed: int = 0,
    min_tokens: int = 60,
    max_tokens: int = 120,
    source: str = "synthetic",
) -> list[Document]:
    """Deterministic unique-text documents with whitespace token counts."""
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        k = rng.randint(min_tokens, max_tokens)
        words = [f"entry{i}"] + rng.choices(_VOCAB, k=k - 1)
        text = " ".join(words)
        docs.append(
            Document(
                id=f"doc-{i:05d}",
                text=text,
                source=source,
                token_count=len(text.split()),
            )
        )
    return docs


def write_corpus(tmp_path: Path, docs: list[Document], shards: int = 2) -> Path:
    """Write docs into shard files plus a manifest; returns the manifest path."""
    shard_paths = []
    per_shard = max(1, -(-len(docs) // shards)) if docs else 1
    for s in range(shards):
        chunk = docs[s * per_shard : (s + 1) * per_shard]
        if s > 0 and not chunk:
            break
        path = tmp_path / f"shard-{s:03d}.jsonl"
        corpus_io.write_documents(chunk, path)
        shard_paths.append(path)
    manifest = corpus_io.build_manifest(shard_paths, tokenizer_id="whitespace")
    manifest_path = tmp_path / "manifest.json"
    manifest.save(manifest_path)
    return manifest_path


def uniform_ratings(score: float) -> RatingVector:
    return RatingVector.from_scores({c: score for c in Criterion})


def random_ratings(rng: random.Random) -> RatingVector:
    return RatingVector.from_scores({c: rng.uniform(0, 100) for c in Criterion})


def annotate_all(
    docs: list[Document],
    rng: random.Random,
    taxonomy: TagTaxonomy,
    with_edits: bool = True,
) -> list[AnnotatedDocument]:
    """Fully annotated documents with random ratings and taxonomy-valid tags."""
    leaves = taxonomy.leaf_paths()
    out = []
    for doc in docs:
        tags = rng.choice(leaves)
        edited = f"edited copy of {doc.id} " + doc.text[: len(doc.text) // 2]
        out.append(
            AnnotatedDocument(
                doc=doc,
                ratings=random_ratings(rng),
                tags=tags,
                edited_text=edited if with_edits else None,
                edited_token_count=len(edited.split()) if with_edits else None,
            )
        )
    return out


@pytest.fixture
def tiny_taxonomy() -> TagTaxonomy:
    return parse_taxonomy(
        [
            {
                "name": "Alpha",
                "children": [
                    {"name": "A1", "children": [{"name": "A1x"}, {"name": "A1y"}]},
                    {"name": "A2", "children": [{"name": "A2x"}]},
                ],
            },
            {
                "name": "Beta",
                "children": [
                    {
                        "name": "B1",
                        "children": [
                            {"name": "B1x"},
                            {"name": "B1y"},
                            {"name": "B1z"},
                        ],
                    }
                ],
            },
            {
                "name": "Gamma",
                "children": [{"name": "G1", "children": [{"name": "G1x"}]}],
            },
        ]
    )


@pytest.fixture(scope="session")
def default_taxonomy() -> TagTaxonomy:
    from decorate.taxonomy import load_default_taxonomy

    return load_default_taxonomy()


MEDICAL_PATH = TagPath("Medical and Health", "Medical Procedures", "Diagnostic Procedures")
