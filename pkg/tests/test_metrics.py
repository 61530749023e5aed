import numpy as np
import pytest

from semsplat.errors import ValidationError
from semsplat.hierarchy import MaskEntry, MaskTree, TreeNode
from semsplat.metrics import (boundary_band, boundary_iou, default_band_radius,
                              hierarchy_consistency, hc_score, iou,
                              localization_accuracy)

import oracles


def rect(h, w, r0, r1, c0, c1):
    bits = np.zeros((h, w), dtype=bool)
    bits[r0:r1, c0:c1] = True
    return bits


def tree_of(levels, parent_of):
    nodes = {}
    for nid, level in levels.items():
        nodes[nid] = TreeNode(id=nid, level=level, parent=parent_of.get(nid))
    for nid, p in parent_of.items():
        if p is not None:
            nodes[p].children.append(nid)
    return MaskTree(nodes)


class TestIoU:
    def test_identical(self):
        m = rect(4, 4, 0, 2, 0, 2)
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        assert iou(rect(4, 4, 0, 2, 0, 2), rect(4, 4, 2, 4, 2, 4)) == 0.0

    def test_hand_overlap(self):
        a = rect(4, 4, 0, 2, 0, 2)
        b = rect(4, 4, 0, 2, 1, 3)
        assert iou(a, b) == pytest.approx(1 / 3)

    def test_both_empty_convention(self):
        z = np.zeros((3, 3), dtype=bool)
        assert iou(z, z) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.random((6, 6)) < 0.5
            b = rng.random((6, 6)) < 0.5
            assert iou(a, b) == iou(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            iou(np.zeros((3, 3), dtype=bool), np.zeros((4, 4), dtype=bool))


class TestBoundaryIoU:
    def test_identical(self):
        m = rect(8, 8, 1, 6, 2, 7)
        assert boundary_iou(m, m, 1) == 1.0

    def test_thin_mask_band_is_mask(self):
        thin = rect(6, 6, 2, 3, 0, 6)
        assert np.array_equal(boundary_band(thin, 1), thin)
        other = rect(6, 6, 3, 4, 0, 6)
        assert boundary_iou(thin, other, 1) == iou(thin, other)

    def test_concentric_squares_match_oracle(self):
        inner = rect(12, 12, 3, 9, 3, 9)
        outer = rect(12, 12, 2, 10, 2, 10)
        expected = oracles.naive_boundary_iou(inner, outer, 1)
        assert boundary_iou(inner, outer, 1) == pytest.approx(expected)

    def test_empty_bands_convention(self):
        z = np.zeros((5, 5), dtype=bool)
        assert boundary_iou(z, z, 1) == 1.0

    def test_default_radius(self):
        assert default_band_radius(64, 64) == max(1, round(0.02 * np.hypot(64, 64)))
        assert default_band_radius(5, 5) == 1


class TestLocalizationAccuracy:
    def test_all_inside(self):
        gt = rect(4, 4, 0, 4, 0, 4)
        assert localization_accuracy([(1, 1), (2, 3)], [gt, gt]) == 1.0

    def test_none_inside(self):
        gt = rect(4, 4, 0, 1, 0, 1)
        assert localization_accuracy([(3, 3), (2, 2)], [gt, gt]) == 0.0

    def test_three_of_four(self):
        gt = rect(4, 4, 0, 2, 0, 2)
        pts = [(0, 0), (0, 1), (1, 1), (3, 3)]
        assert localization_accuracy(pts, [gt] * 4) == 0.75

    def test_empty_queries(self):
        assert localization_accuracy([], []) == 0.0


class TestHierarchyConsistency:
    def make_nested(self):
        h = w = 16
        masks = [
            MaskEntry(0, 1, rect(h, w, 0, 14, 0, 14)),
            MaskEntry(1, 2, rect(h, w, 1, 7, 1, 7)),
            MaskEntry(2, 2, rect(h, w, 8, 13, 8, 13)),
            MaskEntry(3, 3, rect(h, w, 2, 5, 2, 5)),
            MaskEntry(4, 3, rect(h, w, 9, 12, 9, 12)),
        ]
        tree = tree_of({0: 1, 1: 2, 2: 2, 3: 3, 4: 3},
                       {1: 0, 2: 0, 3: 1, 4: 2})
        return masks, tree

    def test_perfect_nesting_scores_one(self):
        masks, tree = self.make_nested()
        assert hc_score(masks, tree) == pytest.approx(1.0, abs=1e-9)

    def test_half_out_child_term(self):
        h = w = 16
        parent = rect(h, w, 0, 8, 0, 8)
        child = rect(h, w, 0, 4, 4, 12)  # half of its 16 pixels outside
        masks = [MaskEntry(0, 1, parent), MaskEntry(1, 2, child)]
        tree = tree_of({0: 1, 1: 2}, {1: 0})
        result = hierarchy_consistency(masks, tree)
        assert result.pair_terms[(0, 1)] == pytest.approx(0.5)
        assert result.score == pytest.approx(0.5)

    def test_translation_lowers_score(self):
        masks, tree = self.make_nested()
        moved = [m for m in masks]
        bits = np.roll(masks[3].bits, 8, axis=1)  # push subpart outside part 1
        moved[3] = MaskEntry(3, 3, bits)
        assert hc_score(moved, tree) < hc_score(masks, tree)

    def test_parent_in_child_orientation(self):
        h = w = 8
        parent = rect(h, w, 0, 4, 0, 8)   # 32 px
        child = rect(h, w, 0, 2, 0, 4)    # 8 px inside
        masks = [MaskEntry(0, 1, parent), MaskEntry(1, 2, child)]
        tree = tree_of({0: 1, 1: 2}, {1: 0})
        assert hc_score(masks, tree, "parent_in_child") == pytest.approx(8 / 32)
        assert hc_score(masks, tree, "child_in_parent") == pytest.approx(1.0)

    def test_no_pairs_scores_zero_with_diagnostic(self):
        masks = [MaskEntry(0, 1, rect(4, 4, 0, 2, 0, 2)),
                 MaskEntry(1, 2, rect(4, 4, 2, 4, 2, 4))]
        tree = tree_of({0: 1, 1: 2}, {})
        result = hierarchy_consistency(masks, tree)
        assert result.score == 0.0
        assert result.no_pairs

    def test_matches_oracle_on_random_masks(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            bits = {i: rng.random((8, 8)) < 0.5 for i in range(5)}
            for b in bits.values():
                if not b.any():
                    b[0, 0] = True
            levels = {0: 1, 1: 2, 2: 2, 3: 3, 4: 3}
            parent_of = {1: 0, 2: 0, 3: 1, 4: 2}
            masks = [MaskEntry(i, levels[i], bits[i]) for i in range(5)]
            tree = tree_of(levels, parent_of)
            expected, n_pairs = oracles.naive_hc(bits, levels, parent_of)
            result = hierarchy_consistency(masks, tree)
            assert result.score == pytest.approx(expected, rel=1e-12)
            assert result.n_pairs == n_pairs


class TestAgainstBruteForce:
    """Random small masks versus loop-based pixel enumeration."""

    def test_iou_and_biou_match(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            h = int(rng.integers(2, 17))
            w = int(rng.integers(2, 17))
            a = rng.random((h, w)) < rng.uniform(0.2, 0.8)
            b = rng.random((h, w)) < rng.uniform(0.2, 0.8)
            assert iou(a, b) == oracles.naive_iou(a, b)
            r = int(rng.integers(1, 3))
            assert boundary_iou(a, b, r) == oracles.naive_boundary_iou(a, b, r)

    def test_localization_matches(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            gts = [rng.random((6, 6)) < 0.4 for _ in range(4)]
            pts = [(int(rng.integers(0, 6)), int(rng.integers(0, 6)))
                   for _ in range(4)]
            assert localization_accuracy(pts, gts) == oracles.naive_localization(pts, gts)
