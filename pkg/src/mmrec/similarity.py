"""Attention-weighted item similarity re-ranker and score fusion.

A user's score for target item ``i`` given history ``R`` is

    s(u, i) = sum_{j in R, j != i} a(i, j) * <P_i, Q_j>
    a(i, j) = exp(e_ij) / (sum_{j'} exp(e_ij'))^beta,  e_ij = z . relu(A [P_i; Q_j])

History embeddings are grounded in the multimodal codes: ``Q = codes @ M + O``
with a learned projection ``M`` and a free per-item offset ``O``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _pykernels
from .backend import kernels
from .data import InteractionDataset, TrainTestSplit, sample_negatives
from .errors import NumericalError, ParseError, ValidationError
from .subspace import SubspaceModel

logger = logging.getLogger(__name__)

FORMAT_TAG = "mmrec-sim"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SimilarityModel:
    P: np.ndarray
    O: np.ndarray
    M: np.ndarray
    codes: np.ndarray
    A: np.ndarray
    z: np.ndarray
    beta: float = 0.5
    lam: float = 0.5

    def __post_init__(self):
        arrs = {k: np.asarray(getattr(self, k), dtype=np.float64) for k in ("P", "O", "M", "codes", "A", "z")}
        n, d = arrs["P"].shape
        if d < 1:
            raise ValidationError("embedding dimension d must be >= 1")
        if arrs["O"].shape != (n, d) or arrs["codes"].shape[0] != n:
            raise ValidationError("P, O and codes must have one row per item")
        if arrs["M"].shape != (arrs["codes"].shape[1], d):
            raise ValidationError("projection M must be code_dim x d")
        if arrs["A"].ndim != 2 or arrs["A"].shape[1] != 2 * d or arrs["z"].shape != (arrs["A"].shape[0],):
            raise ValidationError("attention A must be a x 2d and z length a")
        if not 0 < self.beta <= 1:
            raise ValidationError("beta must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValidationError("lambda must lie in [0, 1]")
        if not all(np.all(np.isfinite(a)) for a in arrs.values()):
            raise ValidationError("non-finite similarity parameters")
        for k, a in arrs.items():
            object.__setattr__(self, k, a)

    @property
    def num_items(self) -> int:
        return self.P.shape[0]

    @property
    def d(self) -> int:
        return self.P.shape[1]

    @property
    def Q(self) -> np.ndarray:
        return self.codes @ self.M + self.O


@dataclass
class SimConfig:
    d: int = 16
    a: int | None = None
    beta: float = 0.5
    learning_rate: float = 0.05
    l2: float = 1e-5
    epochs: int = 10
    n_negatives: int = 4
    seed: int = 0
    init_std: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if self.a is None:
            self.a = self.d
        if self.d < 1 or self.a < 1 or self.epochs < 0 or self.n_negatives < 1:
            raise ValidationError("invalid similarity config")
        if not 0 < self.beta <= 1 or not 0 <= self.lam <= 1 or self.learning_rate <= 0 or self.l2 < 0:
            raise ValidationError("invalid similarity config")


def _check_items(m: SimilarityModel, items):
    items = np.asarray(items, dtype=np.int64)
    if items.size and (items.min() < 0 or items.max() >= m.num_items):
        raise ValidationError(f"item index out of range [0, {m.num_items})")
    return items


def attention_weights(m: SimilarityModel, target: int, history) -> np.ndarray:
    """Weights of every entry of ``history`` for ``target``; the target itself gets 0."""
    target = int(_check_items(m, [target])[0])
    history = _check_items(m, history)
    out = np.zeros(history.size)
    keep = history != target
    if keep.any():
        _, cache = _pykernels.sim_forward(m.P[target], m.Q[history[keep]], m.A, m.z, m.beta)
        out[keep] = cache[4]
    return out


def attention_weight(m: SimilarityModel, target: int, hist_item: int, history=None) -> float:
    """Weight of ``hist_item`` for ``target``, normalised over ``history`` (default: ``[hist_item]``)."""
    if target == hist_item:
        raise ValidationError("target and history item must differ")
    history = np.asarray([hist_item] if history is None else history, dtype=np.int64)
    pos = np.flatnonzero(history == hist_item)
    if pos.size == 0:
        raise ValidationError(f"item {hist_item} is not in the history")
    return float(attention_weights(m, target, history)[pos[0]])


def similarity_score(m: SimilarityModel, user_history, target: int) -> float:
    return float(score_targets(m, m.Q, user_history, [target])[0])


def score_targets(m: SimilarityModel, Q: np.ndarray, history, targets, chunk: int = 256) -> np.ndarray:
    """Vectorised :func:`similarity_score` for many targets sharing one history."""
    history = np.unique(_check_items(m, history))
    targets = _check_items(m, targets)
    out = np.zeros(targets.size)
    if history.size == 0 or targets.size == 0:
        return out
    d = m.d
    Qh = Q[history]
    AQ = Qh @ m.A[:, d:].T  # (n, a)
    for s in range(0, targets.size, chunk):
        t = targets[s:s + chunk]
        Pt = m.P[t]
        pre = (Pt @ m.A[:, :d].T)[:, None, :] + AQ[None, :, :]
        e = np.maximum(pre, 0.0) @ m.z  # (c, n)
        self_hit = t[:, None] == history[None, :]
        e = np.where(self_hit, -np.inf, e)
        valid = ~self_hit.all(axis=1)
        mx = np.where(valid, e.max(axis=1, initial=-np.inf), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lse = mx + np.log(np.exp(e - mx[:, None]).sum(axis=1))
            w = np.exp(e - m.beta * lse[:, None])
            res = np.sum(w * (Pt @ Qh.T), axis=1)
        out[s:s + chunk] = np.where(valid, res, 0.0)
    return out


def sim_loss_and_grad(m: SimilarityModel, batch: Sequence[tuple[Sequence[int], int, int]], l2: float = 0.0):
    """Mean logistic loss of ``sigmoid(s)`` over ``(history, target, label)`` triples.

    Returns ``(loss, grads)`` where ``grads`` maps ``P, O, M, A, z`` to arrays.
    With ``l2 > 0`` adds ``l2/2`` times the squared norm of those parameters.
    """
    if not batch:
        raise ValidationError("empty batch")
    Q = m.Q
    g = {k: np.zeros_like(getattr(m, k)) for k in ("P", "O", "M", "A", "z")}
    loss = 0.0
    for k, (hist, target, label) in enumerate(batch):
        hist = np.unique(_check_items(m, hist))
        hist = hist[hist != target]
        if hist.size == 0:
            loss += math.log(2.0)
            continue
        Pi = m.P[target]
        s, cache = _pykernels.sim_forward(Pi, Q[hist], m.A, m.z, m.beta)
        if not math.isfinite(s):
            raise NumericalError(f"non-finite similarity for batch instance {k}")
        loss += _pykernels._logloss(s, label)
        gs = _pykernels._sigmoid(s) - label
        dPi, dQh, dA, dz = _pykernels.sim_backward(Pi, Q[hist], m.A, m.z, m.beta, s, cache, gs)
        g["P"][target] += dPi
        g["O"][hist] += dQh
        g["M"] += m.codes[hist].T @ dQh
        g["A"] += dA
        g["z"] += dz
    n = len(batch)
    loss /= n
    for k in g:
        g[k] /= n
        if l2:
            p = getattr(m, k)
            loss += 0.5 * l2 * float(np.sum(p * p))
            g[k] += l2 * p
    return loss, g


def init_similarity(num_items: int, codes: np.ndarray, cfg: SimConfig) -> SimilarityModel:
    rng = np.random.default_rng(cfg.seed)
    D = codes.shape[1]
    P = rng.normal(0.0, cfg.init_std, size=(num_items, cfg.d))
    if D:
        M = rng.normal(0.0, cfg.init_std / math.sqrt(D), size=(D, cfg.d))
        O = np.zeros((num_items, cfg.d))
    else:
        M = np.zeros((0, cfg.d))
        O = rng.normal(0.0, cfg.init_std, size=(num_items, cfg.d))
    A = rng.normal(0.0, 1.0 / math.sqrt(2 * cfg.d), size=(cfg.a, 2 * cfg.d))
    z = rng.normal(0.0, 1.0 / math.sqrt(cfg.a), size=cfg.a)
    return SimilarityModel(P, O, M, codes, A, z, cfg.beta, cfg.lam)


def _codes_for(H: SubspaceModel | np.ndarray | None, num_items: int) -> np.ndarray:
    if H is None:
        return np.zeros((num_items, 0))
    codes = H.item_codes(standardize=True) if isinstance(H, SubspaceModel) else np.asarray(H, dtype=np.float64)
    if codes.shape[0] != num_items:
        raise ValidationError(f"subspace codes cover {codes.shape[0]} items, catalog has {num_items}")
    return np.ascontiguousarray(codes)


def sim_train(split: TrainTestSplit, H: SubspaceModel | np.ndarray | None, cfg: SimConfig | None = None):
    """SGD on logistic loss over each train positive and ``n_negatives`` sampled items.

    The history of a training instance is the user's train items minus the
    target itself. Returns ``(model, loss_history)`` like :func:`fm_train`.
    """
    cfg = cfg or SimConfig()
    train = split.train
    if train.num_interactions == 0:
        raise ValidationError("no training interactions")
    codes = _codes_for(H, split.num_items)
    model = init_similarity(split.num_items, codes, cfg)
    P, O, M, A, z = (np.array(getattr(model, k)) for k in ("P", "O", "M", "A", "z"))
    rng = np.random.default_rng(cfg.seed + 1)

    def instances():
        users = train.users()
        neg = sample_negatives(train, users, cfg.n_negatives, rng)
        return (
            np.concatenate((users, np.repeat(users, cfg.n_negatives))),
            np.concatenate((train.indices, neg.ravel())),
            np.concatenate((np.ones(users.size), np.zeros(neg.size))),
        )

    def snapshot():
        return SimilarityModel(P, O, M, codes, A, z, cfg.beta, cfg.lam)

    inst = instances()
    history = [_mean_loss(model, train, *inst)]
    for epoch in range(1, cfg.epochs + 1):
        if epoch > 1:
            inst = instances()
        order = rng.permutation(inst[2].size).astype(np.int64)
        online = kernels.sim_sgd_epoch(
            P, O, M, codes, A, z, cfg.beta, inst[0], inst[1], inst[2],
            train.indptr, train.indices, order, cfg.learning_rate, cfg.l2,
        )
        if not math.isfinite(online) or not all(np.all(np.isfinite(a)) for a in (P, O, M, A, z)):
            raise NumericalError(f"similarity training diverged at epoch {epoch} (learning_rate={cfg.learning_rate})")
        history.append(_mean_loss(snapshot(), train, *inst))
        logger.info("sim epoch %d: loss %.6f", epoch, history[-1])
    return snapshot(), history


def _mean_loss(m: SimilarityModel, train: InteractionDataset, users, items, labels) -> float:
    Q = m.Q
    s = np.empty(labels.size)
    order = np.argsort(users, kind="stable")
    bounds = np.searchsorted(users[order], np.arange(train.num_users + 1))
    for u in range(train.num_users):
        sel = order[bounds[u]:bounds[u + 1]]
        if sel.size:
            s[sel] = score_targets(m, Q, train.items_of(u), items[sel])
    return float(np.mean(np.maximum(s, 0) - labels * s + np.log1p(np.exp(-np.abs(s)))))


class SimScorer:
    """Callable ``(user, items) -> scores`` using the user's train history."""

    name = "sim"

    def __init__(self, model: SimilarityModel, train: InteractionDataset):
        if model.num_items != train.num_items:
            raise ValidationError(f"similarity model has {model.num_items} items, dataset has {train.num_items}")
        self.model = model
        self.train = train
        self._Q = model.Q

    def __call__(self, user: int, items) -> np.ndarray:
        return score_targets(self.model, self._Q, self.train.items_of(user), items)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def fuse(fm_scores, sim_scores, lam: float):
    return lam * _sigmoid(fm_scores) + (1.0 - lam) * _sigmoid(sim_scores)


def fused_score(fm_scorer, sim: SimilarityModel, user: int, item: int, history, lam: float | None = None) -> float:
    """``lam * sigmoid(fm) + (1 - lam) * sigmoid(sim)``; empty history forces ``lam = 1``."""
    lam = sim.lam if lam is None else lam
    history = np.asarray(history, dtype=np.int64)
    f = float(fm_scorer(user, [item])[0])
    if history.size == 0:
        return float(_sigmoid(f))
    return float(fuse(f, similarity_score(sim, history, item), lam))


class FusedScorer:
    name = "fused"

    def __init__(self, fm_scorer, sim_scorer: SimScorer, lam: float = 0.5):
        if not 0 <= lam <= 1:
            raise ValidationError("lambda must lie in [0, 1]")
        self.fm = fm_scorer
        self.sim = sim_scorer
        self.lam = lam

    def is_cold(self, user: int) -> bool:
        return self.sim.train.items_of(user).size == 0

    def __call__(self, user: int, items) -> np.ndarray:
        f = self.fm(user, items)
        if self.is_cold(user):
            return _sigmoid(f)
        return fuse(f, self.sim(user, items), self.lam)


# ---------------------------------------------------------------------------
# persistence


def save_similarity(m: SimilarityModel, path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{FORMAT_TAG} {FORMAT_VERSION}\n")
        for k, v in (header or {}).items():
            fh.write(f"meta {k} {v}\n")
        fh.write(f"dims {m.num_items} {m.d} {m.codes.shape[1]} {m.A.shape[0]}\n")
        fh.write(f"beta {m.beta!r}\nlambda {m.lam!r}\n")
        for k in ("P", "O", "M", "codes", "A"):
            fh.write(f"block {k}\n")
            if getattr(m, k).size:
                np.savetxt(fh, getattr(m, k), fmt="%.17g")
        fh.write("block z\n")
        np.savetxt(fh, m.z[None, :], fmt="%.17g")


def load_similarity(path, expected_items: int | None = None) -> tuple[SimilarityModel, dict]:
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
    n, d, D, a = (int(v) for v in hdr["dims"])
    if expected_items is not None and n != expected_items:
        raise ValidationError(f"{path}: model has {n} items, dataset has {expected_items}")
    shapes = {"P": (n, d), "O": (n, d), "M": (D, d), "codes": (n, D), "A": (a, 2 * d), "z": (1, a)}
    blocks = {}
    for k, (r, c) in shapes.items():
        if lines[pos] != f"block {k}":
            raise ParseError(f"{path}:{pos + 1}: expected block {k}")
        rows = lines[pos + 1:pos + 1 + r] if c else [""] * r
        arr = np.array([[float(v) for v in ln.split()] for ln in rows]).reshape(r, c)
        blocks[k] = arr
        pos += 1 + (r if c else 0)
    return SimilarityModel(
        blocks["P"], blocks["O"], blocks["M"], blocks["codes"], blocks["A"], blocks["z"][0],
        float(hdr["beta"][0]), float(hdr["lambda"][0]),
    ), meta
