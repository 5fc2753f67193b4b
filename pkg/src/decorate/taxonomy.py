"""Three-level tag tree: loading, validation, counts, and diversity stats.

Taxonomy JSON is a root list of ``{"name", "children": [...]}`` nodes nested
exactly three deep. Level-2 and level-3 tags are keyed by their full path
("L1/L2", "L1/L2/L3") in distributions, since sibling names are only unique
under a common parent.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import (
    DuplicateSibling,
    EmptyCounts,
    InvalidDistribution,
    InvalidTagPath,
    SchemaError,
    WrongDepth,
)
from .types import AnnotatedDocument, TagPath

PATH_SEP = "/"


def _join(*parts: str) -> str:
    return PATH_SEP.join(parts)


@dataclass(frozen=True)
class TagTaxonomy:
    """Validated three-level tag tree with O(1) path lookups."""

    tree: Mapping[str, Mapping[str, tuple[str, ...]]]
    level1: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "level1", tuple(self.tree.keys()))

    def children(self, level1: str) -> tuple[str, ...]:
        return tuple(self.tree[level1].keys())

    def grandchildren(self, level1: str, level2: str) -> tuple[str, ...]:
        return self.tree[level1][level2]

    def is_valid(self, path: TagPath) -> bool:
        sub = self.tree.get(path.level1)
        if sub is None:
            return False
        leaves = sub.get(path.level2)
        return leaves is not None and path.level3 in leaves

    def leaf_paths(self) -> list[TagPath]:
        return [
            TagPath(l1, l2, l3)
            for l1, sub in self.tree.items()
            for l2, leaves in sub.items()
            for l3 in leaves
        ]

    def level_keys(self, level: int) -> list[str]:
        """All tag keys at a level: names at level 1, slash-joined paths below."""
        if level == 1:
            return list(self.level1)
        if level == 2:
            return [_join(l1, l2) for l1, sub in self.tree.items() for l2 in sub]
        if level == 3:
            return [
                _join(l1, l2, l3)
                for l1, sub in self.tree.items()
                for l2, leaves in sub.items()
                for l3 in leaves
            ]
        raise InvalidDistribution(f"level must be 1, 2, or 3, got {level}")

    def subtree_json(self, level1: str) -> str:
        """The {level2: [level3, ...]} subtree as JSON, for prompt rendering."""
        if level1 not in self.tree:
            raise InvalidTagPath(f"unknown first-level tag {level1!r}")
        return json.dumps(
            {l2: list(leaves) for l2, leaves in self.tree[level1].items()},
            ensure_ascii=False,
        )

    def to_json(self) -> list[dict]:
        return [
            {
                "name": l1,
                "children": [
                    {"name": l2, "children": [{"name": l3} for l3 in leaves]}
                    for l2, leaves in sub.items()
                ],
            }
            for l1, sub in self.tree.items()
        ]


def _parse_node(node: object, where: str) -> tuple[str, list]:
    if not isinstance(node, dict) or "name" not in node:
        raise SchemaError(f"{where}: node must be an object with a name")
    name = node["name"]
    if not isinstance(name, str) or not name:
        raise SchemaError(f"{where}: name must be a non-empty string")
    children = node.get("children", [])
    if not isinstance(children, list):
        raise SchemaError(f"{where}: children must be a list")
    return name, children


def parse_taxonomy(roots: object) -> TagTaxonomy:
    """Validate the nested-node structure: exactly three levels, non-empty
    children at levels 1-2, unique sibling names under a common parent."""
    if not isinstance(roots, list) or not roots:
        raise SchemaError("taxonomy must be a non-empty list of root nodes")
    tree: dict[str, dict[str, tuple[str, ...]]] = {}
    for root in roots:
        l1, subs = _parse_node(root, "level 1")
        if l1 in tree:
            raise DuplicateSibling(f"duplicate first-level tag {l1!r}")
        if not subs:
            raise WrongDepth(f"first-level tag {l1!r} has no second level")
        sub_tree: dict[str, tuple[str, ...]] = {}
        for sub in subs:
            l2, leaves = _parse_node(sub, f"level 2 under {l1!r}")
            if l2 in sub_tree:
                raise DuplicateSibling(f"duplicate tag {l2!r} under {l1!r}")
            if not leaves:
                raise WrongDepth(f"tag {_join(l1, l2)!r} has no third level")
            seen: list[str] = []
            for leaf in leaves:
                l3, grand = _parse_node(leaf, f"level 3 under {_join(l1, l2)!r}")
                if grand:
                    raise WrongDepth(
                        f"tag {_join(l1, l2, l3)!r} has children; depth is three levels"
                    )
                if l3 in seen:
                    raise DuplicateSibling(
                        f"duplicate tag {l3!r} under {_join(l1, l2)!r}"
                    )
                seen.append(l3)
            sub_tree[l2] = tuple(seen)
        tree[l1] = sub_tree
    return TagTaxonomy(tree=tree)


def load_taxonomy(path: str | Path) -> TagTaxonomy:
    path = Path(path)
    try:
        roots = json.loads(path.read_text("utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"taxonomy file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"taxonomy {path} is not valid JSON: {exc}") from None
    return parse_taxonomy(roots)


def load_default_taxonomy() -> TagTaxonomy:
    """The bundled starter taxonomy: the 21 standard first-level categories
    with a small hand-written second/third level under each."""
    ref = resources.files("decorate").joinpath("data/default_taxonomy.json")
    return parse_taxonomy(json.loads(ref.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# counts and distributions

@dataclass
class TagCounts:
    """Instance counts at every tree node, plus untagged documents."""

    level1: Counter = field(default_factory=Counter)
    level2: Counter = field(default_factory=Counter)  # key (l1, l2)
    level3: Counter = field(default_factory=Counter)  # key (l1, l2, l3)
    total: int = 0
    untagged: int = 0

    def add(self, path: TagPath, n: int = 1) -> None:
        self.level1[path.level1] += n
        self.level2[(path.level1, path.level2)] += n
        self.level3[path.as_tuple()] += n
        self.total += n

    def merge(self, other: "TagCounts") -> "TagCounts":
        self.level1.update(other.level1)
        self.level2.update(other.level2)
        self.level3.update(other.level3)
        self.total += other.total
        self.untagged += other.untagged
        return self


def count_tags(
    annotations: Iterable[AnnotatedDocument], taxonomy: TagTaxonomy
) -> TagCounts:
    """Exact counts at all three levels; untagged documents are excluded from
    the totals and counted separately."""
    counts = TagCounts()
    for ann in annotations:
        if ann.tags is None:
            counts.untagged += 1
            continue
        if not taxonomy.is_valid(ann.tags):
            raise InvalidTagPath(
                f"document {ann.doc.id!r} has tag path {ann.tags.as_tuple()} "
                "not in the taxonomy"
            )
        counts.add(ann.tags)
    return counts


def tag_distribution(counts: TagCounts, level: int) -> dict[str, float]:
    """Observed probability of each tag at a level (keys as in level_keys)."""
    if counts.total <= 0:
        raise EmptyCounts("no tagged documents")
    if level == 1:
        items = {k: v for k, v in counts.level1.items()}
    elif level == 2:
        items = {_join(*k): v for k, v in counts.level2.items()}
    elif level == 3:
        items = {_join(*k): v for k, v in counts.level3.items()}
    else:
        raise InvalidDistribution(f"level must be 1, 2, or 3, got {level}")
    total = counts.total
    return {k: v / total for k, v in sorted(items.items())}


def tag_cross_entropy(
    observed: Mapping[str, float],
    taxonomy: TagTaxonomy,
    level: int = 1,
    epsilon: float = 1e-9,
) -> float:
    """Diversity statistic: cross-entropy between the uniform distribution
    over all taxonomy tags at ``level`` and the observed distribution.

    H = -sum_a u(a) * ln(max(q(a), epsilon)), u uniform over the K taxonomy
    tags. Minimal, at ln K, exactly when the observed distribution covers
    all K tags evenly; mass missing from the taxonomy keys shows up as a
    large penalty through the epsilon floor.
    """
    if epsilon <= 0.0:
        raise InvalidDistribution(f"epsilon must be > 0, got {epsilon}")
    keys = taxonomy.level_keys(level)
    known = set(keys)
    total = 0.0
    for tag, p in observed.items():
        if tag not in known:
            raise InvalidDistribution(f"tag {tag!r} not in taxonomy level {level}")
        if p < 0.0:
            raise InvalidDistribution(f"negative probability for {tag!r}: {p}")
        total += p
    if abs(total - 1.0) > 1e-9:
        raise InvalidDistribution(f"observed distribution sums to {total!r}, not 1")
    k = len(keys)
    return -sum(math.log(max(observed.get(tag, 0.0), epsilon)) for tag in keys) / k
