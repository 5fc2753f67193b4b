from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from decorate.types import (
    AnnotatedDocument,
    ComparisonRecord,
    Criterion,
    Document,
    RatingVector,
    Winner,
    canonical_criterion_order,
)


def test_canonical_order_is_fixed():
    order = canonical_criterion_order()
    assert len(order) == 8
    assert order[0] is Criterion.EDUCATIONAL_VALUE
    assert order[-1] is Criterion.SUBJECTIVITY
    assert order == canonical_criterion_order()


def test_document_rejects_empty_id_and_negative_tokens():
    with pytest.raises(ValueError):
        Document(id="", text="x", source="s", token_count=1)
    with pytest.raises(ValueError):
        Document(id="a", text="x", source="s", token_count=-1)


def test_rating_vector_requires_all_criteria():
    scores = {c: 50.0 for c in Criterion}
    scores.pop(Criterion.SCARCITY)
    with pytest.raises(ValueError, match="missing"):
        RatingVector.from_scores(scores)


@pytest.mark.parametrize("bad", [-0.001, 100.001, 1e9])
def test_rating_vector_rejects_out_of_range(bad):
    scores = {c: 50.0 for c in Criterion}
    scores[Criterion.EXPERTISE] = bad
    with pytest.raises(ValueError, match="out of"):
        RatingVector.from_scores(scores)


@given(st.lists(st.floats(min_value=0, max_value=100), min_size=8, max_size=8))
def test_rating_vector_accepts_in_range(values):
    rv = RatingVector.from_scores(dict(zip(Criterion, values)))
    for c, v in zip(Criterion, values):
        assert rv[c] == v


def test_comparison_rejects_self_pair():
    with pytest.raises(ValueError):
        ComparisonRecord(
            criterion=Criterion.EXPERTISE,
            doc_a="x",
            doc_b="x",
            winner=Winner.A,
            judge="mock",
        )


def test_annotated_document_edit_fields_travel_together():
    doc = Document(id="a", text="hello world", source="s", token_count=2)
    with pytest.raises(ValueError):
        AnnotatedDocument(doc=doc, edited_text="hi")
    with pytest.raises(ValueError):
        AnnotatedDocument(doc=doc, edited_token_count=1)
    ann = AnnotatedDocument(doc=doc, edited_text="hi", edited_token_count=1)
    assert ann.edited_text == "hi"
