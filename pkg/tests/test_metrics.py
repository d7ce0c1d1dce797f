from __future__ import annotations

from itertools import combinations, permutations

import numpy as np
import pytest

from slotssm.errors import ShapeError
from slotssm.metrics import (
    adjusted_rand_index,
    ball_colors_from_classes,
    color_accuracy,
    fg_ari,
    geometry_iou,
    miou,
    rollout_mse_curve,
    segmentation_scores,
    white_baseline_accuracy,
)
from slotssm.nn import make_rng
from slotssm.palette import WHITE


def brute_ari(a, b):
    """Pair-counting ARI straight from its definition."""
    a, b = list(a), list(b)
    pairs = list(combinations(range(len(a)), 2))
    if not pairs:
        return 1.0
    same_a = np.array([a[i] == a[j] for i, j in pairs])
    same_b = np.array([b[i] == b[j] for i, j in pairs])
    index = float((same_a & same_b).sum())
    sum_a, sum_b, total = float(same_a.sum()), float(same_b.sum()), float(len(pairs))
    expected = sum_a * sum_b / total
    top = 0.5 * (sum_a + sum_b)
    if top == expected:
        return 1.0
    return (index - expected) / (top - expected)


def test_ari_matches_pair_counting():
    rng = make_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 25))
        a = rng.integers(0, int(rng.integers(1, 6)), size=n)
        b = rng.integers(0, int(rng.integers(1, 6)), size=n)
        assert adjusted_rand_index(a, b) == brute_ari(a, b)


def test_ari_is_label_permutation_invariant():
    a = np.array([0, 0, 1, 1, 2, 2])
    assert adjusted_rand_index(a, (a + 1) % 3) == pytest.approx(1.0)
    assert adjusted_rand_index(a, np.array([5, 5, 5, 5, 5, 5])) == pytest.approx(0.0)


def test_fg_ari_ignores_background_pixels():
    gt = np.array([[[0, 0, 1], [0, 2, 2]]])
    pred = np.array([[[3, 4, 1], [7, 0, 0]]])
    assert fg_ari(pred, gt) == pytest.approx(1.0)
    assert fg_ari(pred, np.zeros_like(gt)) == 1.0
    with pytest.raises(ShapeError):
        fg_ari(pred, gt[:, :1])


def test_fg_ari_matches_pair_counting_per_frame():
    rng = make_rng(2)
    for _ in range(1000):
        frames = int(rng.integers(1, 4))
        gt = rng.integers(0, int(rng.integers(1, 5)), size=(frames, 4, 4))
        pred = rng.integers(0, int(rng.integers(1, 6)), size=(frames, 4, 4))
        want = np.mean([brute_ari(g[g != 0], p[g != 0]) for p, g in zip(pred, gt)])
        assert fg_ari(pred, gt) == want


def brute_miou(pred, gt):
    objects = [o for o in np.unique(gt) if o != 0]
    if not objects:
        return 1.0
    slots = list(np.unique(pred))
    best = 0.0
    for perm in permutations(slots + [None] * len(objects), len(objects)):
        total = 0.0
        for obj, slot in zip(objects, perm):
            if slot is None:
                continue
            a, b = pred == slot, gt == obj
            total += (a & b).sum() / (a | b).sum()
        best = max(best, total)
    return best / len(objects)


def test_miou_matches_exhaustive_search():
    rng = make_rng(4)
    for _ in range(1000):
        gt = rng.integers(0, int(rng.integers(2, 5)), size=(2, 4, 4))
        pred = rng.integers(0, int(rng.integers(1, 5)), size=(2, 4, 4))
        assert miou(pred, gt) == pytest.approx(brute_miou(pred, gt), abs=1e-12)


def test_miou_edge_cases():
    gt = np.array([[1, 1], [2, 2]])
    assert miou(np.array([[0, 0], [1, 1]]), gt) == 1.0
    assert miou(np.zeros((2, 2), dtype=int), gt) == pytest.approx(0.25)
    assert miou(np.zeros((2, 2), dtype=int), np.zeros((2, 2), dtype=int)) == 1.0


def test_segmentation_scores_average_over_episodes():
    gt = np.zeros((2, 1, 2, 2), dtype=int)
    gt[:, :, 0] = 1
    scores = segmentation_scores(np.zeros_like(gt), gt)
    assert scores["fg_ari"] == pytest.approx(1.0)
    assert scores["miou"] == pytest.approx(0.5)


def test_rollout_curve_is_per_step():
    target = np.zeros((2, 3, 4, 4, 3))
    pred = np.zeros_like(target)
    pred[:, 1] = 0.5
    pred[:, 2] = 1.0
    np.testing.assert_allclose(rollout_mse_curve(pred, target), [0.0, 0.25, 1.0])
    with pytest.raises(ShapeError):
        rollout_mse_curve(pred, target[:, :2])


def test_ball_votes_and_color_accuracy():
    mask = np.array([[1, 1, 2], [1, 0, 0]])
    classes = np.array([[3, 3, 4], [2, 0, 0]])
    assert ball_colors_from_classes(classes, mask, 3).tolist() == [3, 4, -1]
    finals = np.array([[3, 5, 2]])
    assert color_accuracy(classes[None], mask[None], finals) == pytest.approx(0.5)


def test_white_baseline_counts_white_finals():
    mask = np.array([[[1, 2], [3, 0]]])
    finals = np.array([[WHITE, 4, WHITE]])
    assert white_baseline_accuracy(mask, finals) == pytest.approx(2 / 3)


def test_geometry_iou_ignores_color():
    mask = np.array([[1, 1], [0, 0]])
    assert geometry_iou(np.array([[5, 2], [0, 0]]), mask) == 1.0
    assert geometry_iou(np.array([[5, 0], [0, 3]]), mask) == pytest.approx(1 / 3)
