from __future__ import annotations

import json
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decorate import corpus_io
from decorate.errors import MalformedRecord, MissingShard, UnknownTokenizer
from decorate.types import AnnotatedDocument, ComparisonRecord, Criterion, Document, Winner

from .conftest import make_docs, uniform_ratings, write_corpus

FIXTURE_PARAGRAPH = (
    "Line one has  uneven   spacing.\n\tTabs and newlines separate tokens;\n"
    "punctuation, sticks-to-words. Final token"
)


class TestCountTokens:
    def test_empty(self):
        assert corpus_io.count_tokens("") == 0

    def test_runs_of_whitespace(self):
        assert corpus_io.count_tokens("a b  c") == 3

    def test_fixture_matches_regex_oracle(self):
        # Independent oracle: maximal non-whitespace runs via regex.
        expected = len(re.findall(r"\S+", FIXTURE_PARAGRAPH))
        assert corpus_io.count_tokens(FIXTURE_PARAGRAPH) == expected

    def test_unknown_tokenizer(self):
        with pytest.raises(UnknownTokenizer):
            corpus_io.count_tokens("x", "no-such-tokenizer")

    def test_registry(self):
        corpus_io.register_tokenizer("chars", len)
        assert corpus_io.count_tokens("abc", "chars") == 3


class TestReadDocuments:
    def test_empty_manifest(self, tmp_path):
        manifest_path = write_corpus(tmp_path, [], shards=1)
        manifest = corpus_io.CorpusManifest.load(manifest_path)
        assert list(corpus_io.read_documents(manifest)) == []

    def test_two_shards_concatenate_in_order(self, tmp_path):
        docs = make_docs(6)
        manifest_path = write_corpus(tmp_path, docs, shards=2)
        manifest = corpus_io.CorpusManifest.load(manifest_path)
        assert [d.id for d in corpus_io.read_documents(manifest)] == [d.id for d in docs]
        assert manifest.total_documents == 6
        assert manifest.total_tokens == sum(d.token_count for d in docs)

    def test_malformed_line_names_shard_and_line(self, tmp_path):
        docs = make_docs(3)
        manifest_path = write_corpus(tmp_path, docs, shards=1)
        shard = tmp_path / "shard-000.jsonl"
        lines = shard.read_text().splitlines()
        lines.insert(1, "{not json")
        shard.write_text("\n".join(lines) + "\n")
        manifest = corpus_io.CorpusManifest.load(manifest_path)
        manifest.content_fingerprint = "stale"  # bytes changed on purpose
        with pytest.raises(MalformedRecord, match=r"shard-000\.jsonl:2"):
            list(corpus_io.read_documents(manifest))

    def test_skip_malformed_counts_skips(self, tmp_path):
        docs = make_docs(3)
        manifest_path = write_corpus(tmp_path, docs, shards=1)
        shard = tmp_path / "shard-000.jsonl"
        shard.write_text("{oops\n" + shard.read_text())
        manifest = corpus_io.CorpusManifest.load(manifest_path)
        skips: list[str] = []
        out = list(
            corpus_io.read_documents(manifest, skip_malformed=True, on_skip=skips.append)
        )
        assert len(out) == 3
        assert len(skips) == 1

    def test_missing_shard(self, tmp_path):
        manifest = corpus_io.CorpusManifest(
            shards=[str(tmp_path / "nope.jsonl")],
            total_documents=0,
            total_tokens=0,
            tokenizer_id="whitespace",
            content_fingerprint="",
        )
        with pytest.raises(MissingShard):
            list(corpus_io.read_documents(manifest))

    def test_iteration_order_is_stable(self, tmp_path):
        docs = make_docs(20, seed=3)
        manifest_path = write_corpus(tmp_path, docs, shards=3)
        manifest = corpus_io.CorpusManifest.load(manifest_path)
        first = [d.id for d in corpus_io.read_documents(manifest)]
        second = [d.id for d in corpus_io.read_documents(manifest)]
        assert first == second


document_strategy = st.builds(
    Document,
    id=st.text(min_size=1, max_size=12).filter(str.strip),
    text=st.text(max_size=200),
    source=st.sampled_from(["alpha", "beta"]),
    token_count=st.integers(min_value=0, max_value=10_000),
)


@settings(max_examples=50, deadline=None)
@given(st.lists(document_strategy, max_size=20))
def test_document_roundtrip_property(tmp_path_factory, docs):
    path = tmp_path_factory.mktemp("rt") / "docs.jsonl"
    corpus_io.write_documents(docs, path)
    out = [
        corpus_io.document_from_record(json.loads(line))
        for line in path.read_text("utf-8").splitlines()
    ]
    assert out == docs


class TestAnnotations:
    def _annotations(self, n=100):
        docs = make_docs(n, seed=1)
        anns = []
        for i, doc in enumerate(docs):
            anns.append(
                AnnotatedDocument(
                    doc=doc,
                    ratings=uniform_ratings(float(i % 101)),
                    edited_text=f"edited\nwith newline {i}",
                    edited_token_count=4,
                )
            )
        return docs, anns

    def test_roundtrip_100_docs(self, tmp_path):
        docs, anns = self._annotations(100)
        path = tmp_path / "ann.jsonl"
        assert corpus_io.write_annotations(anns, path) == 100
        docs_by_id = {d.id: d for d in docs}
        assert list(corpus_io.read_annotations(path, docs_by_id)) == anns

    def test_empty_stream(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        assert corpus_io.write_annotations([], path) == 0
        assert path.read_text() == ""
        assert list(corpus_io.read_annotation_records(path)) == []

    def test_newlines_escaped_one_line_per_record(self, tmp_path):
        docs, anns = self._annotations(5)
        path = tmp_path / "ann.jsonl"
        corpus_io.write_annotations(anns, path)
        assert len(path.read_text("utf-8").splitlines()) == 5

    def test_partial_ratings_map_is_malformed_for_typed_read(self, tmp_path):
        doc = make_docs(1)[0]
        path = tmp_path / "ann.jsonl"
        path.write_text(
            json.dumps({"id": doc.id, "ratings": {"expertise": 10.0}}) + "\n"
        )
        with pytest.raises(MalformedRecord):
            list(corpus_io.read_annotations(path, {doc.id: doc}))


class TestComparisons:
    def test_roundtrip(self, tmp_path):
        records = [
            ComparisonRecord(
                criterion=Criterion.SCARCITY,
                doc_a="a",
                doc_b="b",
                winner=Winner.B,
                judge="mock",
                rationale="why not",
            ),
            ComparisonRecord(
                criterion=Criterion.EXPERTISE,
                doc_a="b",
                doc_b="c",
                winner=Winner.A,
                judge="mock",
            ),
        ]
        path = tmp_path / "cmp.jsonl"
        assert corpus_io.write_comparisons(records, path) == 2
        assert list(corpus_io.read_comparisons(path)) == records

    def test_bad_winner_rejected(self, tmp_path):
        path = tmp_path / "cmp.jsonl"
        path.write_text(
            json.dumps(
                {
                    "criterion": "expertise",
                    "doc_a": "a",
                    "doc_b": "b",
                    "winner": "C",
                    "judge": "mock",
                }
            )
            + "\n"
        )
        with pytest.raises(MalformedRecord):
            list(corpus_io.read_comparisons(path))


def test_manifest_saves_relative_paths(tmp_path):
    docs = make_docs(4)
    manifest_path = write_corpus(tmp_path, docs, shards=2)
    raw = json.loads(manifest_path.read_text())
    assert all("/" not in s for s in raw["shards"])
    manifest = corpus_io.CorpusManifest.load(manifest_path)
    assert [d.id for d in corpus_io.read_documents(manifest)] == [d.id for d in docs]
