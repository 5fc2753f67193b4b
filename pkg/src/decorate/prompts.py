"""Prompt templates for the remote annotation backend.

Templates live as text assets under ``decorate/templates/`` and use
``str.format`` placeholders (literal braces are doubled in the assets).
The pairwise-comparison prompt is assembled from a shared frame plus a
per-criterion instruction block.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .types import Criterion


@lru_cache(maxsize=None)
def _asset(name: str) -> str:
    ref = resources.files("decorate").joinpath("templates").joinpath(f"{name}.txt")
    return ref.read_text(encoding="utf-8").rstrip("\n")


def criterion_instruction(criterion: Criterion) -> str:
    """The criterion-specific comparison instruction block."""
    return _asset(criterion.value)


def render_compare(criterion: Criterion, text_1: str, text_2: str) -> str:
    return _asset("compare").format(
        criterion=criterion_instruction(criterion),
        text_1=text_1,
        text_2=text_2,
    )


def render_summary(instance: str) -> str:
    return _asset("summary").format(instance=instance)


def render_first_level_tagging(instance: str) -> str:
    return _asset("first_level_tagging").format(instance=instance)


def render_sub_level_tagging(
    instance: str, first_level_tag: str, tag_tree_json: str
) -> str:
    return _asset("sub_level_tagging").format(
        instance=instance,
        first_level_tag=first_level_tag,
        tag_tree=tag_tree_json,
    )


def render_editing(text: str) -> str:
    return _asset("editing").format(text=text)


def structural_format_generation_template() -> str:
    """Template for generating structured-format text; no pipeline drives it."""
    return _asset("structural_format_generation")
