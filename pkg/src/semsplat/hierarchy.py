"""Per-view mask hierarchy built from a pixel-coverage rule.

A mask A becomes a child of a strictly coarser-level mask B when more than
theta of A's pixels fall inside B while B is not itself mostly inside A, and
B is the smallest such mask.  Levels are 1=whole, 2=part, 3=subpart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

LEVEL_WHOLE, LEVEL_PART, LEVEL_SUBPART = 1, 2, 3


@dataclass(frozen=True)
class MaskEntry:
    """One binary segment at a semantic level within one view.

    `label` optionally records the ground-truth (level, label_id) the mask
    was rendered from; imported masks leave it None.
    """

    id: int
    level: int
    bits: np.ndarray
    view_id: int = 0
    label: tuple[int, int] | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if self.id < 0:
            raise ValidationError("mask id must be non-negative")
        if self.level not in (LEVEL_WHOLE, LEVEL_PART, LEVEL_SUBPART):
            raise ValidationError(f"mask level must be 1, 2 or 3, got {self.level}")
        if bits.ndim != 2:
            raise ValidationError("mask bits must be a 2-d boolean array")
        if not bits.any():
            raise ValidationError(f"mask {self.id} has no true bits")

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass
class TreeNode:
    id: int
    level: int
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    skip_level: bool = False  # parent is more than one level coarser


@dataclass
class MaskTree:
    """Forest of mask ids with parent/child links; levels increase downward."""

    nodes: dict[int, TreeNode] = field(default_factory=dict)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> TreeNode:
        if node_id not in self.nodes:
            raise ValidationError(f"unknown tree node id {node_id}")
        return self.nodes[node_id]

    def parent_of(self, node_id: int) -> int | None:
        return self.node(node_id).parent

    def children_of(self, node_id: int) -> list[int]:
        return list(self.node(node_id).children)

    def roots(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.parent is None)

    def edges(self) -> set[tuple[int, int]]:
        """Set of (child_id, parent_id) pairs."""
        return {(i, n.parent) for i, n in self.nodes.items() if n.parent is not None}


def is_covered_by(a: MaskEntry, b: MaskEntry, theta: float) -> bool:
    """First two coverage conditions: A mostly inside B, B not mostly in A.

    True iff |A∩B|/|A| > theta and |A∩B|/|B| < theta.  The smallest-mask
    condition lives in build_mask_tree, which sees all candidates.
    """
    if not (0.5 < theta <= 1.0):
        raise ValidationError(f"theta must lie in (0.5, 1], got {theta}")
    if a.bits.shape != b.bits.shape:
        raise ValidationError(
            f"mask dimensions differ: {a.bits.shape} vs {b.bits.shape}")
    if a.view_id != b.view_id:
        raise ValidationError("coverage is defined within a single view")
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return inter / a.area > theta and inter / b.area < theta


def build_mask_tree(masks: list[MaskEntry], theta: float = 0.9) -> MaskTree:
    """Attach each mask to the smallest strictly-coarser mask covering it.

    Candidates must satisfy is_covered_by; ties on area break toward the
    smaller id so builds are deterministic.  Masks without a candidate are
    roots.  Empty input yields an empty tree.
    """
    if not masks:
        return MaskTree()
    views = {m.view_id for m in masks}
    if len(views) != 1:
        raise ValidationError("build_mask_tree expects masks from a single view")
    ids = [m.id for m in masks]
    if len(set(ids)) != len(ids):
        raise ValidationError("mask ids must be unique within a view")

    tree = MaskTree({m.id: TreeNode(id=m.id, level=m.level) for m in masks})
    by_id = {m.id: m for m in masks}
    for a in masks:
        best: tuple[int, int] | None = None  # (area, id)
        for b in masks:
            if b.level >= a.level:
                continue
            if not is_covered_by(a, b, theta):
                continue
            key = (b.area, b.id)
            if best is None or key < best:
                best = key
        if best is not None:
            parent_id = best[1]
            tree.nodes[a.id].parent = parent_id
            tree.nodes[parent_id].children.append(a.id)
            tree.nodes[a.id].skip_level = by_id[parent_id].level != a.level - 1
    for node in tree.nodes.values():
        node.children.sort()
    return tree


def siblings_under(tree: MaskTree, node_id: int) -> list[int]:
    """Same-parent, same-level nodes other than node_id.

    Root nodes treat the other roots at their level as siblings.
    """
    node = tree.node(node_id)
    return sorted(
        other.id for other in tree.nodes.values()
        if other.id != node_id
        and other.level == node.level
        and other.parent == node.parent
    )
