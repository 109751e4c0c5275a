from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmrec.data import ViewFeatureMatrix
from mmrec.errors import ValidationError
from mmrec.features import (
    BehaviorProbabilities,
    JointFeatureMatrix,
    SceneProbabilities,
    build_joint_features,
    filter_features,
    fuse_behavior,
    recognize_behavior,
    recognize_scene,
)

# a coarse grid makes exact ties frequent
probs = st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0])


def prob_matrix(rows=st.integers(1, 6), cols=st.integers(1, 5)):
    return st.tuples(rows, cols).flatmap(lambda rc: arrays(np.float64, rc, elements=probs))


def scan_argmax(row):
    best, arg = -1.0, -1
    for j, p in enumerate(row):
        if p > best:
            best, arg = p, j
    return arg, best


def test_scene_examples():
    sp = SceneProbabilities([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]])
    assert recognize_scene(sp, 0) == (1, 0.7)
    assert recognize_scene(SceneProbabilities([[0.5, 0.5]]), 0) == (0, 0.5)
    with pytest.raises(ValidationError):
        recognize_scene(sp, 2)


def test_scene_random_rows_match_scan(rng):
    sp = SceneProbabilities(rng.random((100, 9)))
    for i in range(100):
        assert recognize_scene(sp, i) == scan_argmax(sp.matrix[i])


def test_fuse_examples():
    bp = BehaviorProbabilities([[0.5, 0.8]], [[0.4, 0.5]])
    assert np.allclose(fuse_behavior(bp), [[0.20, 0.40]], rtol=0, atol=1e-15)
    rgb = np.array([[0.3, 0.9], [0.1, 0.0]])
    assert np.array_equal(fuse_behavior(BehaviorProbabilities(rgb, np.ones_like(rgb))), rgb)


def test_behavior_examples():
    bp = BehaviorProbabilities([[0.2, 0.8, 0.5]], [[0.3, 0.5, 0.2]])
    idx, p = recognize_behavior(bp, 0)
    assert idx == 1 and p == pytest.approx(0.4)
    assert recognize_behavior(BehaviorProbabilities([[1.0, 0.0]], [[0.0, 1.0]]), 0) == (0, 0.0)


def test_behavior_random_items_match_oracle(rng):
    bp = BehaviorProbabilities(rng.random((100, 6)), rng.random((100, 6)))
    for i in range(100):
        fused = [a * b for a, b in zip(bp.rgb[i], bp.flow[i])]
        assert recognize_behavior(bp, i) == scan_argmax(fused)


def test_probability_range_enforced():
    with pytest.raises(ValidationError, match="row 0, col 1"):
        SceneProbabilities([[0.5, 1.2]])
    with pytest.raises(ValidationError):
        BehaviorProbabilities([[0.1, 0.2]], [[0.1, 0.2, 0.3]])
    with pytest.raises(ValidationError):
        BehaviorProbabilities([[-0.1]], [[0.1]])


@given(prob_matrix())
def test_argmax_tie_rule_and_max(m):
    sp = SceneProbabilities(m)
    for i in range(m.shape[0]):
        j, p = recognize_scene(sp, i)
        assert p == m[i].max()
        assert j == int(np.flatnonzero(m[i] == m[i].max())[0])


@given(prob_matrix(), st.sampled_from([np.sqrt, np.exp, lambda x: 3 * x - 7, np.arctan]))
def test_argmax_index_invariant_under_monotone_transform(m, f):
    sp = SceneProbabilities(m)
    for i in range(m.shape[0]):
        t = f(m[i])
        assert recognize_scene(sp, i)[0] == int(np.argmax(t))


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(arrays(np.float64, (n, 3), elements=st.floats(0, 1)),
                                                    arrays(np.float64, (n, 3), elements=st.floats(0, 1)))))
def test_fuse_commutative_and_bounded(pair):
    a, b = pair
    ab = fuse_behavior(BehaviorProbabilities(a, b))
    ba = fuse_behavior(BehaviorProbabilities(b, a))
    assert np.array_equal(ab, ba)
    assert np.all(ab >= 0) and np.all(ab <= 1)
    assert ab.max() <= min(a.max(), 1.0)


def test_joint_widths_and_provenance(rng):
    sp = SceneProbabilities(rng.random((10, 3)))
    bp = BehaviorProbabilities(rng.random((10, 4)), rng.random((10, 4)))
    F = build_joint_features(sp, bp)
    assert F.width == 7
    assert F.provenance == ("scene",) * 3 + ("action",) * 4
    extra = ViewFeatureMatrix("text", rng.normal(size=(10, 2)))
    G = build_joint_features(sp, bp, [extra])
    assert G.blocks() == ["scene", "action", "view:text"]
    fused = fuse_behavior(bp)
    for i in range(10):
        for c in range(3):
            assert G.matrix[i, c] == sp.matrix[i, c]
        for c in range(4):
            assert G.matrix[i, 3 + c] == fused[i, c]
        for c in range(2):
            assert G.matrix[i, 7 + c] == extra.features[i, c]


def test_joint_block_order_relabels_only(rng):
    sp = SceneProbabilities(rng.random((5, 2)))
    x = ViewFeatureMatrix("x", rng.normal(size=(5, 3)))
    y = ViewFeatureMatrix("y", rng.normal(size=(5, 1)))
    a = build_joint_features(sp, None, [x, y])
    b = build_joint_features(sp, None, [y, x])
    for label in ("scene", "view:x", "view:y"):
        assert np.array_equal(a.block(label), b.block(label))
    assert a.provenance != b.provenance


def test_joint_row_mismatch(rng):
    with pytest.raises(ValidationError, match="row-count"):
        build_joint_features(SceneProbabilities(rng.random((5, 2))), None,
                             [ViewFeatureMatrix("x", np.zeros((4, 1)))])
    with pytest.raises(ValidationError):
        build_joint_features()


@settings(max_examples=50)
@given(prob_matrix(rows=st.just(4)), prob_matrix(rows=st.just(4)), prob_matrix(rows=st.just(4)))
def test_joint_preserves_value_multiset(s, r, f):
    if r.shape != f.shape:
        f = r[:, ::-1].copy()
    sp, bp = SceneProbabilities(s), BehaviorProbabilities(r, f)
    F = build_joint_features(sp, bp)
    expect = Counter(s.ravel().tolist()) + Counter(fuse_behavior(bp).ravel().tolist())
    assert Counter(F.matrix.ravel().tolist()) == expect


def test_filter_examples():
    F = JointFeatureMatrix(np.arange(6.0).reshape(2, 3), ("scene", "action", "view:x"))
    G = filter_features(F, [3, 1, 2], 2)
    assert G.source_columns == (0, 2)
    assert np.array_equal(G.matrix, F.matrix[:, [0, 2]])
    assert G.provenance == ("scene", "view:x")
    assert filter_features(F, [1, 1, 1], 1).source_columns == (0,)
    same = filter_features(F, [5, 9, 1], 3)
    assert np.array_equal(same.matrix, F.matrix) and same.provenance == F.provenance


def test_filter_errors():
    F = JointFeatureMatrix(np.zeros((2, 3)), ("a", "b", "c"))
    with pytest.raises(ValidationError):
        filter_features(F, [1, 2], 1)
    for k in (0, 4):
        with pytest.raises(ValidationError):
            filter_features(F, [1, 2, 3], k)


@given(st.integers(1, 8).flatmap(
    lambda w: st.tuples(st.lists(st.integers(0, 3), min_size=w, max_size=w), st.integers(1, w))))
def test_filter_subset_rule(case):
    imp, k = case
    w = len(imp)
    F = JointFeatureMatrix(np.arange(3.0 * w).reshape(3, w), tuple(f"view:c{c}" for c in range(w)))
    G = filter_features(F, imp, k)
    kept = list(G.source_columns)
    oracle = sorted(sorted(range(w), key=lambda c: (-imp[c], c))[:k])
    assert kept == oracle
    for pos, c in enumerate(kept):
        assert np.array_equal(G.matrix[:, pos], F.matrix[:, c])
        assert G.provenance[pos] == F.provenance[c]
