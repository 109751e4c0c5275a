"""Second-order factorization machine for implicit-feedback preference scoring.

Feature layout is ``[user one-hot | item one-hot | joint item features]``.
Pairwise interactions use the O(nnz * h) identity

    sum_{i<j} <V_i, V_j> x_i x_j = 1/2 sum_f [(sum_i V_if x_i)^2 - sum_i V_if^2 x_i^2]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import kernels
from .data import TrainTestSplit, sample_negatives
from .errors import NumericalError, ParseError, ValidationError
from .features import JointFeatureMatrix

logger = logging.getLogger(__name__)

FORMAT_TAG = "mmrec-fm"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureLayout:
    num_users: int
    num_items: int
    num_joint: int = 0

    @property
    def item_offset(self) -> int:
        return self.num_users

    @property
    def joint_offset(self) -> int:
        return self.num_users + self.num_items

    @property
    def n_features(self) -> int:
        return self.num_users + self.num_items + self.num_joint


@dataclass(frozen=True)
class FMModel:
    w0: float
    w: np.ndarray
    V: np.ndarray
    layout: FeatureLayout | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        V = np.asarray(self.V, dtype=np.float64)
        if V.ndim != 2 or V.shape[1] < 1:
            raise ValidationError("V must be n_features x h with h >= 1")
        if w.shape != (V.shape[0],):
            raise ValidationError("w and V disagree on the number of features")
        if self.layout is not None and self.layout.n_features != w.size:
            raise ValidationError("layout does not match parameter size")
        if not (math.isfinite(self.w0) and np.all(np.isfinite(w)) and np.all(np.isfinite(V))):
            raise ValidationError("non-finite FM parameters")
        object.__setattr__(self, "w0", float(self.w0))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "V", V)

    @property
    def n_features(self) -> int:
        return self.w.size

    @property
    def h(self) -> int:
        return self.V.shape[1]


@dataclass(frozen=True)
class FMInstance:
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValidationError("indices and values must be 1-d and aligned")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValidationError("feature indices must be strictly increasing")
        if idx.size and idx[0] < 0:
            raise ValidationError("negative feature index")
        if not np.all(np.isfinite(val)):
            raise ValidationError("non-finite feature value")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)


@dataclass
class FMConfig:
    h: int = 16
    learning_rate: float = 0.05
    l2_reg: float = 1e-5
    epochs: int = 20
    n_negatives: int = 4
    seed: int = 0
    init_std: float = 0.01

    def __post_init__(self):
        if self.h < 1:
            raise ValidationError("h must be >= 1 (use V = 0 for a linear model)")
        if self.learning_rate <= 0 or self.l2_reg < 0 or self.epochs < 0 or self.n_negatives < 1:
            raise ValidationError("invalid FM config")


class FeatureEncoder:
    """Turns (user, item) pairs into FM rows under a :class:`FeatureLayout`.

    Exact zeros of the joint feature block are not stored.
    """

    def __init__(self, num_users: int, num_items: int, joint: JointFeatureMatrix | np.ndarray | None = None):
        if joint is None:
            F = np.zeros((num_items, 0))
        else:
            F = joint.matrix if isinstance(joint, JointFeatureMatrix) else np.asarray(joint, dtype=np.float64)
        if F.shape[0] != num_items:
            raise ValidationError(f"joint features have {F.shape[0]} rows, catalog has {num_items} items")
        self.layout = FeatureLayout(num_users, num_items, F.shape[1])
        nz = F != 0.0
        self._item_nnz = nz.sum(axis=1).astype(np.int64)
        self._item_ptr = np.concatenate(([0], np.cumsum(self._item_nnz)))
        rows, cols = np.nonzero(nz)
        self._item_idx = cols.astype(np.int64) + self.layout.joint_offset
        self._item_val = F[rows, cols]

    def instance(self, user: int, item: int) -> FMInstance:
        ip, iv = self._item_rows(item)
        return FMInstance(
            np.concatenate(([user, self.layout.item_offset + item], ip)),
            np.concatenate(([1.0, 1.0], iv)),
        )

    def _item_rows(self, item):
        a, b = self._item_ptr[item], self._item_ptr[item + 1]
        return self._item_idx[a:b], self._item_val[a:b]

    def encode(self, users, items):
        """CSR arrays ``(indptr, indices, values)`` for parallel user/item arrays."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        L = self._item_nnz[items]
        counts = L + 2
        indptr = np.zeros(users.size + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int64)
        values = np.empty(indptr[-1], dtype=np.float64)
        starts = indptr[:-1]
        indices[starts] = users
        indices[starts + 1] = self.layout.item_offset + items
        values[starts] = 1.0
        values[starts + 1] = 1.0
        total = int(L.sum())
        if total:
            dst = np.repeat(starts + 2, L) + (np.arange(total) - np.repeat(np.cumsum(L) - L, L))
            src = np.repeat(self._item_ptr[items], L) + (np.arange(total) - np.repeat(np.cumsum(L) - L, L))
            indices[dst] = self._item_idx[src]
            values[dst] = self._item_val[src]
        return indptr, indices, values


def init_fm(layout: FeatureLayout, h: int, seed: int, init_std: float = 0.01) -> FMModel:
    rng = np.random.default_rng(seed)
    return FMModel(0.0, np.zeros(layout.n_features), rng.normal(0.0, init_std, size=(layout.n_features, h)), layout)


def _check_instance(m: FMModel, x: FMInstance):
    if x.indices.size and x.indices[-1] >= m.n_features:
        raise ValidationError(f"feature index {x.indices[-1]} out of range [0, {m.n_features})")


def fm_score(m: FMModel, x: FMInstance) -> float:
    _check_instance(m, x)
    Vx = m.V[x.indices] * x.values[:, None]
    s = Vx.sum(axis=0)
    return float(m.w0 + m.w[x.indices] @ x.values + 0.5 * (s @ s - np.sum(Vx * Vx)))


def fm_predict(m: FMModel, indptr, indices, values) -> np.ndarray:
    """Scores for a CSR batch (compiled backend when available)."""
    return kernels.fm_predict(m.w0, m.w, m.V, indptr, indices, values)


def _logloss(y: float, label: float) -> float:
    return max(y, 0.0) - label * y + math.log1p(math.exp(-abs(y)))


def fm_loss_and_grad(m: FMModel, batch: Sequence[tuple[FMInstance, int]], l2: float = 0.0):
    """Mean logistic loss of ``sigmoid(y(x))`` over ``batch`` and its gradient.

    With ``l2 > 0`` the objective adds ``l2/2 * (|w|^2 + |V|^2)`` (no penalty on
    ``w0``). The gradient is returned as an :class:`FMModel`-shaped triple
    ``(d_w0, d_w, d_V)``.
    """
    if not batch:
        raise ValidationError("empty batch")
    gw0, gw, gV = 0.0, np.zeros_like(m.w), np.zeros_like(m.V)
    loss = 0.0
    for k, (x, label) in enumerate(batch):
        _check_instance(m, x)
        Vi = m.V[x.indices]
        with np.errstate(over="ignore", invalid="ignore"):
            s = (Vi * x.values[:, None]).sum(axis=0)
            y = m.w0 + m.w[x.indices] @ x.values + 0.5 * (s @ s - np.sum((Vi * x.values[:, None]) ** 2))
        if not math.isfinite(y):
            raise NumericalError(f"non-finite score for batch instance {k}")
        loss += _logloss(y, label)
        g = 0.5 * (1.0 + math.tanh(0.5 * y)) - label
        gw0 += g
        gw[x.indices] += g * x.values
        gV[x.indices] += g * (x.values[:, None] * s[None, :] - Vi * (x.values ** 2)[:, None])
    n = len(batch)
    loss /= n
    gw /= n
    gV /= n
    if l2:
        loss += 0.5 * l2 * (float(m.w @ m.w) + float(np.sum(m.V * m.V)))
        gw += l2 * m.w
        gV += l2 * m.V
    return loss, (gw0 / n, gw, gV)


def _instances(split: TrainTestSplit, k: int, rng: np.random.Generator):
    train = split.train
    users = train.users()
    neg = sample_negatives(train, users, k, rng)
    inst_u = np.concatenate((users, np.repeat(users, k)))
    inst_i = np.concatenate((train.indices, neg.ravel()))
    labels = np.concatenate((np.ones(users.size), np.zeros(neg.size)))
    return inst_u, inst_i, labels


def _mean_loss(m: FMModel, csr, labels) -> float:
    y = fm_predict(m, *csr)
    return float(np.mean(np.maximum(y, 0) - labels * y + np.log1p(np.exp(-np.abs(y)))))


def fm_train(split: TrainTestSplit, F: JointFeatureMatrix | None, cfg: FMConfig | None = None):
    """SGD on pointwise logistic loss with ``n_negatives`` uniform negatives per positive.

    Returns ``(model, loss_history)``; ``loss_history[0]`` is the loss of the
    initial model on the first epoch's sample, then one entry per epoch
    (mean loss of the updated model on that epoch's instances).
    """
    cfg = cfg or FMConfig()
    enc = FeatureEncoder(split.num_users, split.num_items, F)
    model = init_fm(enc.layout, cfg.h, cfg.seed, cfg.init_std)
    if split.train.num_interactions == 0:
        raise ValidationError("no training interactions")
    rng = np.random.default_rng(cfg.seed + 1)
    w0 = np.array([model.w0])
    w, V = model.w.copy(), model.V.copy()

    inst_u, inst_i, labels = _instances(split, cfg.n_negatives, rng)
    csr = enc.encode(inst_u, inst_i)
    history = [_mean_loss(model, csr, labels)]
    for epoch in range(1, cfg.epochs + 1):
        if epoch > 1:
            inst_u, inst_i, labels = _instances(split, cfg.n_negatives, rng)
            csr = enc.encode(inst_u, inst_i)
        order = rng.permutation(labels.size).astype(np.int64)
        online = kernels.fm_sgd_epoch(w0, w, V, *csr, labels, order, cfg.learning_rate, cfg.l2_reg)
        if not math.isfinite(online) or not (np.all(np.isfinite(w)) and np.all(np.isfinite(V))):
            raise NumericalError(f"FM training diverged at epoch {epoch} (learning_rate={cfg.learning_rate})")
        current = FMModel(float(w0[0]), w, V, enc.layout)
        history.append(_mean_loss(current, csr, labels))
        logger.info("fm epoch %d: loss %.6f", epoch, history[-1])
    return FMModel(float(w0[0]), w.copy(), V.copy(), enc.layout), history


class FMScorer:
    """Callable ``(user, items) -> scores`` over a trained FM."""

    name = "fm"

    def __init__(self, model: FMModel, joint: JointFeatureMatrix | np.ndarray | None = None):
        layout = model.layout
        if layout is None:
            raise ValidationError("FM model has no feature layout")
        self.model = model
        self.encoder = FeatureEncoder(layout.num_users, layout.num_items, joint)
        if self.encoder.layout != layout:
            raise ValidationError(f"feature layout {self.encoder.layout} does not match model {layout}")

    def __call__(self, user: int, items) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        csr = self.encoder.encode(np.full(items.size, user, dtype=np.int64), items)
        return fm_predict(self.model, *csr)


# ---------------------------------------------------------------------------
# persistence


def save_fm(m: FMModel, path, header: dict | None = None) -> None:
    layout = m.layout or FeatureLayout(0, 0, m.n_features)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{FORMAT_TAG} {FORMAT_VERSION}\n")
        for k, v in (header or {}).items():
            fh.write(f"meta {k} {v}\n")
        fh.write(f"layout {layout.num_users} {layout.num_items} {layout.num_joint}\n")
        fh.write(f"h {m.h}\n")
        fh.write(f"w0 {m.w0!r}\n")
        fh.write("block w\n")
        np.savetxt(fh, m.w[None, :], fmt="%.17g")
        fh.write("block V\n")
        np.savetxt(fh, m.V, fmt="%.17g")


def load_fm(path) -> tuple[FMModel, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    tag = lines[0].split()
    if len(tag) != 2 or tag[0] != FORMAT_TAG or int(tag[1]) != FORMAT_VERSION:
        raise ParseError(f"{path}: not a {FORMAT_TAG} v{FORMAT_VERSION} file")
    meta, hdr = {}, {}
    pos = 1
    while not lines[pos].startswith("block"):
        parts = lines[pos].split()
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        else:
            hdr[parts[0]] = parts[1:]
        pos += 1
    layout = FeatureLayout(*(int(v) for v in hdr["layout"]))
    h = int(hdr["h"][0])
    w = np.array([float(v) for v in lines[pos + 1].split()])
    if w.size != layout.n_features:
        raise ParseError(f"{path}: w has {w.size} entries, layout needs {layout.n_features}")
    V = np.array([[float(v) for v in ln.split()] for ln in lines[pos + 3:pos + 3 + layout.n_features]])
    if V.shape != (layout.n_features, h):
        raise ParseError(f"{path}: V block has shape {V.shape}, expected {(layout.n_features, h)}")
    return FMModel(float(hdr["w0"][0]), w, V, layout), meta
