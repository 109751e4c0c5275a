"""Multi-view subspace coding.

A shared code matrix ``H`` (latent_dim x num_items) is decoded into every
view by a one-layer network ``U_v = act(W_v H + b_v)``; training minimises
the summed squared reconstruction error over views by alternating gradient
steps on the decoders and on ``H``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ViewFeatureMatrix
from .errors import NumericalError, ParseError, ValidationError

logger = logging.getLogger(__name__)

FORMAT_TAG = "mmrec-subspace"
FORMAT_VERSION = 1


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


ACTIVATIONS = {
    "tanh": (np.tanh, lambda u: 1.0 - u * u),
    "sigmoid": (_sigmoid, lambda u: u * (1.0 - u)),
    "identity": (lambda z: z, lambda u: np.ones_like(u)),
}


@dataclass(frozen=True)
class SubspaceModel:
    H: np.ndarray
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "tanh"
    view_ids: tuple[str, ...] = ()

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.ndim != 2:
            raise ValidationError("H must be latent_dim x num_items")
        W = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        b = tuple(np.asarray(v, dtype=np.float64).reshape(-1) for v in self.biases)
        if len(W) != len(b):
            raise ValidationError("one bias per decoder required")
        for v, (w, bb) in enumerate(zip(W, b)):
            if w.ndim != 2 or w.shape[1] != H.shape[0] or bb.shape != (w.shape[0],):
                raise ValidationError(f"decoder {v}: expected W (D_v x {H.shape[0]}) and b (D_v,)")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        vids = self.view_ids or tuple(f"view{v}" for v in range(len(W)))
        if len(vids) != len(W):
            raise ValidationError("view_ids length does not match decoders")
        if not (np.all(np.isfinite(H)) and all(np.all(np.isfinite(w)) for w in W) and all(np.all(np.isfinite(x)) for x in b)):
            raise ValidationError("non-finite subspace parameters")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "view_ids", tuple(vids))

    @property
    def latent_dim(self) -> int:
        return self.H.shape[0]

    @property
    def num_items(self) -> int:
        return self.H.shape[1]

    @property
    def num_views(self) -> int:
        return len(self.weights)

    def view_index(self, view) -> int:
        if isinstance(view, str):
            try:
                return self.view_ids.index(view)
            except ValueError:
                raise ValidationError(f"unknown view {view!r}") from None
        view = int(view)
        if not 0 <= view < self.num_views:
            raise ValidationError(f"view index {view} out of range [0, {self.num_views})")
        return view

    def decode_all(self, view) -> np.ndarray:
        """Reconstruction ``U_v`` as an items x D_v matrix."""
        v = self.view_index(view)
        act, _ = ACTIVATIONS[self.activation]
        return act(self.weights[v] @ self.H + self.biases[v][:, None]).T

    def item_codes(self, standardize: bool = False) -> np.ndarray:
        """Item embeddings as rows (num_items x latent_dim)."""
        codes = self.H.T.copy()
        if standardize:
            sd = codes.std(axis=0)
            codes = (codes - codes.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        return codes


@dataclass
class TrainConfig:
    learning_rate_H: float = 1e-3
    learning_rate_dec: float = 1e-3
    epochs: int = 500
    batch_size: int = 0
    tolerance: float = 0.0
    seed: int = 0
    activation: str = "tanh"
    view_weights: Sequence[float] | None = None
    # full batch only: step sizes adapt by backtracking, shrinking on a rejected step
    # and growing by this factor after an accepted one
    step_growth: float = 1.2

    def __post_init__(self):
        if self.learning_rate_H <= 0 or self.learning_rate_dec <= 0:
            raise ValidationError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size < 0 or self.tolerance < 0:
            raise ValidationError("epochs, batch_size and tolerance must be non-negative")
        if self.step_growth < 1.0:
            raise ValidationError("step_growth must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")


def _check(model: SubspaceModel, views: Sequence[ViewFeatureMatrix]):
    if len(views) != model.num_views:
        raise ValidationError(f"model has {model.num_views} decoders, got {len(views)} views")
    for v, view in enumerate(views):
        if view.features.shape != (model.num_items, model.weights[v].shape[0]):
            raise ValidationError(
                f"view {view.view_id!r}: shape {view.features.shape} does not match "
                f"decoder ({model.num_items}, {model.weights[v].shape[0]})"
            )


def _weights(model, view_weights):
    if view_weights is None:
        return np.ones(model.num_views)
    w = np.asarray(view_weights, dtype=np.float64)
    if w.shape != (model.num_views,) or np.any(w < 0):
        raise ValidationError("view_weights must be one non-negative weight per view")
    return w


def decode(model: SubspaceModel, view, item: int) -> np.ndarray:
    v = model.view_index(view)
    if not 0 <= item < model.num_items:
        raise ValidationError(f"item {item} out of range [0, {model.num_items})")
    act, _ = ACTIVATIONS[model.activation]
    return act(model.weights[v] @ model.H[:, item] + model.biases[v])


def reconstruction_loss(model: SubspaceModel, views: Sequence[ViewFeatureMatrix], view_weights=None) -> float:
    _check(model, views)
    omega = _weights(model, view_weights)
    return _loss(model.H, model.weights, model.biases, [v.features.T for v in views], model.activation, omega)


def _loss(H, W, b, XT, activation, omega, cols=None) -> float:
    act, _ = ACTIVATIONS[activation]
    Hc = H if cols is None else H[:, cols]
    total = 0.0
    for v in range(len(W)):
        X = XT[v] if cols is None else XT[v][:, cols]
        R = act(W[v] @ Hc + b[v][:, None]) - X
        total += omega[v] * float(np.sum(R * R))
    return total


def _backprop(H, W, b, XT, activation, omega):
    """Per-view delta ``G_v = dL/dZ_v`` for ``Z_v = W_v H + b_v``."""
    act, dact = ACTIVATIONS[activation]
    out = []
    for v in range(len(W)):
        U = act(W[v] @ H + b[v][:, None])
        out.append(2.0 * omega[v] * (U - XT[v]) * dact(U))
    return out


def gradients(model: SubspaceModel, views: Sequence[ViewFeatureMatrix], wrt="all", view_weights=None):
    """Analytic gradient of :func:`reconstruction_loss`.

    ``wrt`` is ``"H"`` (returns a D x N array), ``("decoder", v)`` (returns
    ``(dW_v, db_v)``) or ``"all"`` (returns ``(dH, [dW_v], [db_v])``).
    """
    _check(model, views)
    omega = _weights(model, view_weights)
    XT = [v.features.T for v in views]
    G = _backprop(model.H, model.weights, model.biases, XT, model.activation, omega)
    if wrt == "H":
        return sum(W.T @ g for W, g in zip(model.weights, G))
    if isinstance(wrt, tuple) and len(wrt) == 2 and wrt[0] == "decoder":
        v = model.view_index(wrt[1])
        return G[v] @ model.H.T, G[v].sum(axis=1)
    if wrt == "all":
        dH = sum(W.T @ g for W, g in zip(model.weights, G))
        return dH, [g @ model.H.T for g in G], [g.sum(axis=1) for g in G]
    raise ValidationError(f"unknown gradient target {wrt!r}")


def init_model(views: Sequence[ViewFeatureMatrix], latent_dim: int, seed: int, activation: str = "tanh") -> SubspaceModel:
    """H ~ U[-0.01, 0.01]; W_v ~ U[-r, r] with r = sqrt(6 / (D_v + D)); b_v = 0."""
    rng = np.random.default_rng(seed)
    n = views[0].num_items
    H = rng.uniform(-0.01, 0.01, size=(latent_dim, n))
    W, b = [], []
    for view in views:
        r = np.sqrt(6.0 / (view.dim + latent_dim))
        W.append(rng.uniform(-r, r, size=(view.dim, latent_dim)))
        b.append(np.zeros(view.dim))
    return SubspaceModel(H, tuple(W), tuple(b), activation, tuple(v.view_id for v in views))


def fit(views: Sequence[ViewFeatureMatrix], latent_dim: int, cfg: TrainConfig | None = None):
    """Alternate decoder and code updates; returns ``(model, loss_history)``.

    ``loss_history[0]`` is the loss at initialisation and one entry is
    appended per epoch. In full-batch mode every step is backtracked until
    it does not increase the loss, so the history is non-increasing.
    """
    cfg = cfg or TrainConfig()
    if latent_dim < 1:
        raise ValidationError("latent_dim must be >= 1")
    if not views:
        raise ValidationError("at least one view is required")
    n = views[0].num_items
    if any(v.num_items != n for v in views):
        raise ValidationError("all views must share the same item count")

    model = init_model(views, latent_dim, cfg.seed, cfg.activation)
    omega = _weights(model, cfg.view_weights)
    XT = [np.ascontiguousarray(v.features.T) for v in views]
    H = model.H.copy()
    W = [w.copy() for w in model.weights]
    b = [x.copy() for x in model.biases]
    act = cfg.activation

    loss = _loss(H, W, b, XT, act, omega)
    history = [loss]
    rng = np.random.default_rng(cfg.seed + 1)
    step_dec, step_H = cfg.learning_rate_dec, cfg.learning_rate_H

    for epoch in range(1, cfg.epochs + 1):
        if cfg.batch_size == 0 or cfg.batch_size >= n:
            G = _backprop(H, W, b, XT, act, omega)
            dW = [g @ H.T for g in G]
            db = [g.sum(axis=1) for g in G]

            def try_dec(s):
                W2 = [w - s * g for w, g in zip(W, dW)]
                b2 = [x - s * g for x, g in zip(b, db)]
                return _loss(H, W2, b2, XT, act, omega), (W2, b2)

            step_dec, loss, accepted = _backtrack(try_dec, loss, step_dec, cfg.step_growth)
            if accepted is not None:
                W, b = accepted

            G = _backprop(H, W, b, XT, act, omega)
            dH = sum(w.T @ g for w, g in zip(W, G))

            def try_H(s):
                H2 = H - s * dH
                return _loss(H2, W, b, XT, act, omega), H2

            step_H, loss, accepted = _backtrack(try_H, loss, step_H, cfg.step_growth)
            if accepted is not None:
                H = accepted
        else:
            order = rng.permutation(n)
            scale = n / cfg.batch_size
            for start in range(0, n, cfg.batch_size):
                cols = order[start:start + cfg.batch_size]
                XTb = [x[:, cols] for x in XT]
                G = _backprop(H[:, cols], W, b, XTb, act, omega)
                for v, g in enumerate(G):
                    W[v] -= cfg.learning_rate_dec * scale * (g @ H[:, cols].T)
                    b[v] -= cfg.learning_rate_dec * scale * g.sum(axis=1)
                G = _backprop(H[:, cols], W, b, XTb, act, omega)
                H[:, cols] -= cfg.learning_rate_H * sum(w.T @ g for w, g in zip(W, G))
            loss = _loss(H, W, b, XT, act, omega)

        if not np.isfinite(loss):
            raise NumericalError(
                f"subspace fit diverged at epoch {epoch} "
                f"(learning_rate_dec={cfg.learning_rate_dec}, learning_rate_H={cfg.learning_rate_H})"
            )
        prev = history[-1]
        history.append(loss)
        if cfg.tolerance > 0 and prev > 0 and abs(prev - loss) / prev < cfg.tolerance:
            logger.info("subspace fit: converged at epoch %d (loss %.6g)", epoch, loss)
            break

    return SubspaceModel(H, tuple(W), tuple(b), act, model.view_ids), history


def _backtrack(trial, loss, step, growth, max_halvings=50):
    """Halve ``step`` until ``trial(step)`` does not increase ``loss``.

    Returns ``(next_step, new_loss, accepted_params_or_None)``.
    """
    for _ in range(max_halvings):
        new_loss, params = trial(step)
        if np.isfinite(new_loss) and new_loss <= loss:
            return step * growth, new_loss, params
        step *= 0.5
    return step, loss, None


# ---------------------------------------------------------------------------
# persistence


def save_subspace(model: SubspaceModel, path, header: dict | None = None) -> None:
    """Flat text: tag/version, key-value header, then row-major parameter blocks."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{FORMAT_TAG} {FORMAT_VERSION}\n")
        for k, v in (header or {}).items():
            fh.write(f"meta {k} {v}\n")
        fh.write(f"activation {model.activation}\n")
        fh.write(f"latent_dim {model.latent_dim}\nnum_items {model.num_items}\nviews {model.num_views}\n")
        for vid, w in zip(model.view_ids, model.weights):
            fh.write(f"view {vid} {w.shape[0]}\n")
        fh.write("block H\n")
        np.savetxt(fh, model.H, fmt="%.17g")
        for vid, w, b in zip(model.view_ids, model.weights, model.biases):
            fh.write(f"block W {vid}\n")
            np.savetxt(fh, w, fmt="%.17g")
            fh.write(f"block b {vid}\n")
            np.savetxt(fh, b[None, :], fmt="%.17g")


def _read_block(lines, pos, rows, cols):
    block = np.array([[float(x) for x in lines[pos + r].split()] for r in range(rows)], dtype=np.float64)
    if block.shape != (rows, cols):
        raise ParseError(f"parameter block at line {pos + 1}: expected {rows}x{cols}")
    return block.reshape(rows, cols), pos + rows


def load_subspace(path, expected_items: int | None = None) -> tuple[SubspaceModel, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    tag = lines[0].split()
    if len(tag) != 2 or tag[0] != FORMAT_TAG or int(tag[1]) != FORMAT_VERSION:
        raise ParseError(f"{path}: not a {FORMAT_TAG} v{FORMAT_VERSION} file")
    meta, hdr, vdims = {}, {}, []
    pos = 1
    while not lines[pos].startswith("block"):
        parts = lines[pos].split()
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "view":
            vdims.append((parts[1], int(parts[2])))
        else:
            hdr[parts[0]] = parts[1]
        pos += 1
    D, N = int(hdr["latent_dim"]), int(hdr["num_items"])
    if len(vdims) != int(hdr["views"]):
        raise ParseError(f"{path}: view count mismatch")
    if expected_items is not None and N != expected_items:
        raise ValidationError(f"{path}: model has {N} items, dataset has {expected_items}")
    H, pos = _read_block(lines, pos + 1, D, N)
    W, b = [], []
    for _, dv in vdims:
        w, pos = _read_block(lines, pos + 1, dv, D)
        bb, pos = _read_block(lines, pos + 1, 1, dv)
        W.append(w)
        b.append(bb[0])
    model = SubspaceModel(H, tuple(W), tuple(b), hdr["activation"], tuple(v for v, _ in vdims))
    return model, meta
