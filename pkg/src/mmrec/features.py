"""Scene/behaviour probability features and the joint item feature matrix.

Scene and action probabilities come from upstream classifiers and are only
range-checked here. Rows need not sum to one: the two-stream action fusion
is a plain elementwise product and is not renormalised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ViewFeatureMatrix
from .errors import ValidationError


def _prob_matrix(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"{name}: expected a 2-d matrix")
    if not np.all(np.isfinite(m)) or np.any(m < 0.0) or np.any(m > 1.0):
        bad = np.argwhere(~((m >= 0.0) & (m <= 1.0)))[0]
        raise ValidationError(f"{name}: entry at row {bad[0]}, col {bad[1]} outside [0, 1]")
    m = m.copy()
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class SceneProbabilities:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _prob_matrix(self.matrix, "scene"))

    @classmethod
    def from_view(cls, view: ViewFeatureMatrix) -> "SceneProbabilities":
        return cls(view.features)

    @property
    def num_scenes(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class BehaviorProbabilities:
    rgb: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        rgb = _prob_matrix(self.rgb, "action_rgb")
        flow = _prob_matrix(self.flow, "action_flow")
        if rgb.shape != flow.shape:
            raise ValidationError(f"RGB stream {rgb.shape} and Flow stream {flow.shape} differ in shape")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "flow", flow)

    @classmethod
    def from_views(cls, rgb: ViewFeatureMatrix, flow: ViewFeatureMatrix) -> "BehaviorProbabilities":
        return cls(rgb.features, flow.features)

    @property
    def num_actions(self) -> int:
        return self.rgb.shape[1]


@dataclass(frozen=True)
class JointFeatureMatrix:
    """Item rows with one provenance label per column (``scene``, ``action`` or ``view:<id>``)."""

    matrix: np.ndarray
    provenance: tuple[str, ...]
    source_columns: tuple[int, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != len(self.provenance):
            raise ValidationError("one provenance label per column required")
        if not np.all(np.isfinite(m)):
            raise ValidationError("joint features must be finite")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if not self.source_columns:
            object.__setattr__(self, "source_columns", tuple(range(m.shape[1])))

    @property
    def num_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def block(self, label: str) -> np.ndarray:
        """Columns whose provenance equals ``label``, in stored order."""
        cols = [c for c, p in enumerate(self.provenance) if p == label]
        return self.matrix[:, cols]

    def blocks(self) -> list[str]:
        return list(dict.fromkeys(self.provenance))


def _argmax_row(row: np.ndarray) -> tuple[int, float]:
    # np.argmax returns the first maximal index, which is the tie rule
    j = int(np.argmax(row))
    return j, float(row[j])


def _check_item(n: int, item: int):
    if not 0 <= item < n:
        raise ValidationError(f"item {item} out of range [0, {n})")


def recognize_scene(sp: SceneProbabilities, item: int) -> tuple[int, float]:
    _check_item(sp.matrix.shape[0], item)
    return _argmax_row(sp.matrix[item])


def fuse_behavior(bp: BehaviorProbabilities) -> np.ndarray:
    return bp.rgb * bp.flow


def recognize_behavior(bp: BehaviorProbabilities, item: int) -> tuple[int, float]:
    _check_item(bp.rgb.shape[0], item)
    return _argmax_row(bp.rgb[item] * bp.flow[item])


def build_joint_features(
    sp: SceneProbabilities | None = None,
    bp: BehaviorProbabilities | None = None,
    extra_views: Sequence[ViewFeatureMatrix] = (),
) -> JointFeatureMatrix:
    """Concatenate full scene vectors, fused action vectors and extra view rows."""
    blocks, labels = [], []
    if sp is not None:
        blocks.append(sp.matrix)
        labels += ["scene"] * sp.num_scenes
    if bp is not None:
        blocks.append(fuse_behavior(bp))
        labels += ["action"] * bp.num_actions
    for view in extra_views:
        blocks.append(view.features)
        labels += [f"view:{view.view_id}"] * view.dim
    if not blocks:
        raise ValidationError("no feature blocks given")
    n = blocks[0].shape[0]
    if any(b.shape[0] != n for b in blocks):
        raise ValidationError(f"row-count mismatch between feature blocks: {[b.shape[0] for b in blocks]}")
    return JointFeatureMatrix(np.hstack(blocks), tuple(labels))


def filter_features(F: JointFeatureMatrix, importance, top_k: int) -> JointFeatureMatrix:
    """Keep the ``top_k`` most important columns, in their original order.

    Ties in importance go to the lower column index.
    """
    importance = np.asarray(importance, dtype=np.float64)
    if importance.shape != (F.width,):
        raise ValidationError(f"importance has length {importance.size}, matrix has {F.width} columns")
    if not 1 <= top_k <= F.width:
        raise ValidationError(f"top_k={top_k} outside [1, {F.width}]")
    order = np.lexsort((np.arange(F.width), -importance))
    keep = np.sort(order[:top_k])
    return JointFeatureMatrix(
        F.matrix[:, keep],
        tuple(F.provenance[c] for c in keep),
        tuple(F.source_columns[c] for c in keep),
    )
