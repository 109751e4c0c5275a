"""Interaction logs, per-view item features, leave-one-out splits and
candidate sets.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared across workers without copies. Random draws use numpy's
``default_rng`` (PCG64) seeded explicitly by the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError, ValidationError

logger = logging.getLogger(__name__)

#: view ids whose entries must lie in [0, 1]
PROBABILITY_VIEWS = frozenset({"scene", "action_rgb", "action_flow"})

DELIMITERS = {"tsv": "\t", "csv": ",", "dat": "::"}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def is_probability_view(view_id: str) -> bool:
    return view_id in PROBABILITY_VIEWS or view_id.startswith("prob_")


@dataclass(frozen=True)
class InteractionDataset:
    """Implicit-feedback log stored as a CSR adjacency (user -> sorted items).

    ``user_tokens[u]`` / ``item_tokens[i]`` map dense ids back to the raw
    tokens of the source file.
    """

    num_users: int
    num_items: int
    indptr: np.ndarray
    indices: np.ndarray
    timestamps: np.ndarray | None = None
    user_tokens: tuple[str, ...] = ()
    item_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype=np.int64)))
        if not self.user_tokens:
            object.__setattr__(self, "user_tokens", tuple(str(u) for u in range(self.num_users)))
        if not self.item_tokens:
            object.__setattr__(self, "item_tokens", tuple(str(i) for i in range(self.num_items)))
        self.validate()

    @classmethod
    def from_pairs(cls, num_users: int, num_items: int, users, items, timestamps=None, **kw) -> "InteractionDataset":
        """Build from parallel (user, item) arrays; duplicate pairs are dropped."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise ValidationError("user id out of range")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise ValidationError("item id out of range")
        keys = users * num_items + items
        keys, first = np.unique(keys, return_index=True)
        users, items = keys // num_items, keys % num_items
        ts = None if timestamps is None else np.asarray(timestamps, dtype=np.int64)[first]
        indptr = np.zeros(num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=num_users), out=indptr[1:])
        return cls(num_users, num_items, indptr, items, ts, **kw)

    def validate(self) -> None:
        if self.indptr.shape != (self.num_users + 1,) or self.indptr[0] != 0:
            raise ValidationError("indptr does not match num_users")
        if self.indptr[-1] != self.indices.size or np.any(np.diff(self.indptr) < 0):
            raise ValidationError("indptr is not a valid CSR pointer")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.num_items):
            raise ValidationError("item id out of range")
        step_ok = np.diff(self.indices) > 0
        boundaries = self.indptr[1:-1] - 1
        step_ok[boundaries[(boundaries >= 0) & (boundaries < step_ok.size)]] = True
        if not step_ok.all():
            u = int(np.searchsorted(self.indptr, np.argmin(step_ok), side="right") - 1)
            raise ValidationError(f"user {u}: adjacency not strictly increasing (duplicate or unsorted)")
        if len(self.user_tokens) != self.num_users or len(self.item_tokens) != self.num_items:
            raise ValidationError("token tables do not match dimensions")

    @property
    def num_interactions(self) -> int:
        return int(self.indices.size)

    @property
    def density(self) -> float:
        return self.num_interactions / (self.num_users * self.num_items)

    def items_of(self, user: int) -> np.ndarray:
        return self.indices[self.indptr[user]:self.indptr[user + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def users(self) -> np.ndarray:
        """User id of every stored interaction (row index expanded)."""
        return np.repeat(np.arange(self.num_users, dtype=np.int64), self.degrees())

    def item_popularity(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.num_items)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.users().tolist(), self.indices.tolist()))

    def stats(self) -> dict:
        return {
            "users": self.num_users,
            "items": self.num_items,
            "interactions": self.num_interactions,
            "density": float(f"{self.density:.4g}"),
        }


@dataclass(frozen=True)
class ViewFeatureMatrix:
    """Dense item features for one modality: row n = features of item n."""

    view_id: str
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise ValidationError(f"view {self.view_id!r}: features must be 2-d")
        bad = np.argwhere(~np.isfinite(f))
        if bad.size:
            r, c = bad[0]
            raise ValidationError(f"view {self.view_id!r}: non-finite entry at row {r}, col {c}")
        if self.probability:
            bad = np.argwhere((f < 0.0) | (f > 1.0))
            if bad.size:
                r, c = bad[0]
                raise ValidationError(
                    f"view {self.view_id!r}: probability {f[r, c]!r} out of [0, 1] at row {r}, col {c}"
                )
        object.__setattr__(self, "features", _frozen(f))

    @property
    def num_items(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def probability(self) -> bool:
        return is_probability_view(self.view_id)


@dataclass(frozen=True)
class TrainTestSplit:
    train: InteractionDataset
    test_users: np.ndarray
    test_items: np.ndarray
    rng_seed: int
    skipped_users: int = 0

    def __post_init__(self):
        object.__setattr__(self, "test_users", _frozen(np.asarray(self.test_users, dtype=np.int64)))
        object.__setattr__(self, "test_items", _frozen(np.asarray(self.test_items, dtype=np.int64)))

    @property
    def test(self) -> list[tuple[int, int]]:
        return list(zip(self.test_users.tolist(), self.test_items.tolist()))

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def positives(self) -> dict[int, int]:
        return dict(self.test)


@dataclass(frozen=True)
class CandidateSet:
    user_id: int
    positive: int
    negatives: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "negatives", _frozen(np.asarray(self.negatives, dtype=np.int64)))

    @property
    def items(self) -> np.ndarray:
        """Positive first, then negatives."""
        return np.concatenate(([self.positive], self.negatives))


# ---------------------------------------------------------------------------
# interactions IO


def _read_rows(path: Path, delim: str):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(delim)
            if len(parts) < 2 or len(parts) > 4 or not parts[0] or not parts[1]:
                raise ParseError(f"{path}:{lineno}: expected user{delim!r}item[{delim!r}rating[{delim!r}timestamp]]")
            ts = None
            if len(parts) >= 3:
                try:
                    float(parts[2])
                    if len(parts) == 4:
                        ts = int(float(parts[3]))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-numeric rating/timestamp") from None
            yield lineno, parts[0], parts[1], ts


def load_interactions(
    path, format: str = "tsv", min_user_interactions: int = 1, item_catalog: Sequence[str] | None = None
) -> InteractionDataset:
    """Read a delimited interaction log and densely re-index it.

    Ratings are parsed but ignored (implicit feedback). Duplicate pairs keep
    their first occurrence. Users with fewer than ``min_user_interactions``
    distinct items are dropped before ids are assigned, so both user and item
    ids stay contiguous; ids follow order of first appearance.

    ``item_catalog`` fixes the item universe and its id order instead (items
    without interactions are kept); feature files are aligned to it.
    """
    path = Path(path)
    if format not in DELIMITERS:
        raise ValidationError(f"unknown interaction format {format!r}; expected one of {sorted(DELIMITERS)}")
    seen: set[tuple[str, str]] = set()
    rows: list[tuple[str, str, int | None]] = []
    dupes = 0
    for _, u, i, ts in _read_rows(path, DELIMITERS[format]):
        if (u, i) in seen:
            dupes += 1
            continue
        seen.add((u, i))
        rows.append((u, i, ts))
    if dupes:
        logger.warning("%s: dropped %d duplicate (user, item) rows", path, dupes)

    counts: dict[str, int] = {}
    for u, _, _ in rows:
        counts[u] = counts.get(u, 0) + 1
    rows = [r for r in rows if counts[r[0]] >= min_user_interactions]
    if not rows:
        raise DomainError(f"{path}: no interactions")

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    if item_catalog is not None:
        for tok in item_catalog:
            if tok in item_ids:
                raise ValidationError(f"item catalog lists {tok!r} twice")
            item_ids[tok] = len(item_ids)
        unknown = next((i for _, i, _ in rows if i not in item_ids), None)
        if unknown is not None:
            raise ValidationError(f"{path}: item {unknown!r} is not in the item catalog")
    for u, i, _ in rows:
        user_ids.setdefault(u, len(user_ids))
        item_ids.setdefault(i, len(item_ids))
    users = [user_ids[u] for u, _, _ in rows]
    items = [item_ids[i] for _, i, _ in rows]
    has_ts = all(ts is not None for _, _, ts in rows)
    ts = [t for _, _, t in rows] if has_ts else None
    return InteractionDataset.from_pairs(
        len(user_ids), len(item_ids), users, items, ts,
        user_tokens=tuple(user_ids), item_tokens=tuple(item_ids),
    )


def load_item_catalog(path) -> list[str]:
    """One raw item token per line."""
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def save_item_catalog(tokens: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{t}\n" for t in tokens)


def save_interactions(ds: InteractionDataset, path, format: str = "tsv") -> None:
    """Write one ``user<delim>item[<delim>1<delim>timestamp]`` line per pair using raw tokens."""
    delim = DELIMITERS[format]
    users = ds.users()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, (u, i) in enumerate(zip(users.tolist(), ds.indices.tolist())):
            line = f"{ds.user_tokens[u]}{delim}{ds.item_tokens[i]}"
            if ds.timestamps is not None:
                line += f"{delim}1{delim}{int(ds.timestamps[k])}"
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# view features IO


def load_view_features(path, expected_items: int | None = None) -> ViewFeatureMatrix:
    """Read a feature file with a ``num_items dim view_id`` header line."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ParseError(f"{path}:1: header must be 'num_items dim view_id'")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError(f"{path}:1: non-integer dimensions in header") from None
        view_id = header[2]
        if expected_items is not None and n != expected_items:
            raise ValidationError(f"{path}: dimension mismatch, header declares {n} items, expected {expected_items}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != d:
                raise ParseError(f"{path}:{lineno}: expected {d} values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
    if len(rows) != n:
        raise ValidationError(f"{path}: dimension mismatch, header declares {n} rows, body has {len(rows)}")
    features = np.asarray(rows, dtype=np.float64).reshape(n, d)
    return ViewFeatureMatrix(view_id, features)


def save_view_features(view: ViewFeatureMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{view.num_items} {view.dim} {view.view_id}\n")
        np.savetxt(fh, view.features, fmt="%.17g", delimiter=" ")


# ---------------------------------------------------------------------------
# protocol


def leave_one_out_split(ds: InteractionDataset, seed: int) -> TrainTestSplit:
    """Hold out one uniformly chosen item for every user with >= 2 interactions."""
    rng = np.random.default_rng(seed)
    deg = ds.degrees()
    keep = np.ones(ds.num_interactions, dtype=bool)
    test_users, test_items = [], []
    for u in range(ds.num_users):
        if deg[u] < 2:
            continue
        k = ds.indptr[u] + int(rng.integers(deg[u]))
        keep[k] = False
        test_users.append(u)
        test_items.append(int(ds.indices[k]))
    skipped = int(np.sum(deg < 2))
    if skipped:
        logger.info("leave_one_out_split: %d users with < 2 interactions kept in train only", skipped)
    users = ds.users()[keep]
    ts = None if ds.timestamps is None else ds.timestamps[keep]
    train = InteractionDataset.from_pairs(
        ds.num_users, ds.num_items, users, ds.indices[keep], ts,
        user_tokens=ds.user_tokens, item_tokens=ds.item_tokens,
    )
    return TrainTestSplit(train, np.array(test_users, dtype=np.int64), np.array(test_items, dtype=np.int64), seed, skipped)


def sample_candidates(split: TrainTestSplit, seed: int, num_negatives: int = 99) -> list[CandidateSet]:
    """Draw ``num_negatives`` never-interacted items per test pair, without replacement."""
    rng = np.random.default_rng(seed)
    n_items = split.num_items
    out = []
    for u, pos in split.test:
        seen = np.append(split.train.items_of(u), pos)
        avail = n_items - np.unique(seen).size
        if avail < num_negatives:
            raise DomainError(
                f"user {u} ({split.train.user_tokens[u]}): only {avail} non-interacted items, need {num_negatives}"
            )
        mask = np.ones(n_items, dtype=bool)
        mask[seen] = False
        pool = np.flatnonzero(mask)
        out.append(CandidateSet(u, pos, rng.choice(pool, size=num_negatives, replace=False)))
    return out


def sample_negatives(train: InteractionDataset, users: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` uniform non-interacted items (w.r.t. ``train``) per entry of ``users``.

    Negatives of one row may repeat; rejection sampling against the user's
    sorted adjacency.
    """
    users = np.asarray(users, dtype=np.int64)
    neg = rng.integers(train.num_items, size=(users.size, k))
    bad = _interacted(train, np.repeat(users, k), neg.ravel()).reshape(neg.shape)
    while bad.any():
        rows, cols = np.nonzero(bad)
        neg[rows, cols] = rng.integers(train.num_items, size=rows.size)
        bad[rows, cols] = _interacted(train, users[rows], neg[rows, cols])
    return neg


def _interacted(ds: InteractionDataset, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    keys = ds.users() * ds.num_items + ds.indices  # sorted by construction
    q = users * ds.num_items + items
    pos = np.searchsorted(keys, q)
    pos = np.minimum(pos, keys.size - 1)
    return keys[pos] == q if keys.size else np.zeros(q.shape, dtype=bool)


def save_split(split: TrainTestSplit, candidates: Sequence[CandidateSet], directory) -> None:
    """Persist split and candidates as dense-id TSV files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "train.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, i in zip(split.train.users().tolist(), split.train.indices.tolist()):
            fh.write(f"{u}\t{i}\n")
    with open(d / "test.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, i in split.test:
            fh.write(f"{u}\t{i}\n")
    with open(d / "candidates.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for cs in candidates:
            fh.write("\t".join(map(str, [cs.user_id, cs.positive, *cs.negatives.tolist()])) + "\n")


def load_split(directory, base: InteractionDataset, seed: int) -> tuple[TrainTestSplit, list[CandidateSet]]:
    d = Path(directory)
    tr = np.loadtxt(d / "train.tsv", dtype=np.int64, ndmin=2).reshape(-1, 2)
    te = np.loadtxt(d / "test.tsv", dtype=np.int64, ndmin=2).reshape(-1, 2)
    train = InteractionDataset.from_pairs(
        base.num_users, base.num_items, tr[:, 0], tr[:, 1],
        user_tokens=base.user_tokens, item_tokens=base.item_tokens,
    )
    split = TrainTestSplit(train, te[:, 0], te[:, 1], seed)
    cands = []
    with open(d / "candidates.tsv", encoding="utf-8") as fh:
        for line in fh:
            vals = [int(v) for v in line.split()]
            cands.append(CandidateSet(vals[0], vals[1], vals[2:]))
    return split, cands


def validate_candidates(split: TrainTestSplit, candidates: Iterable[CandidateSet]) -> None:
    """Raise if any candidate set breaks the 1 positive + distinct unseen negatives rule."""
    for cs in candidates:
        neg = cs.negatives
        if np.unique(neg).size != neg.size:
            raise ValidationError(f"user {cs.user_id}: repeated negatives")
        if cs.positive in set(neg.tolist()):
            raise ValidationError(f"user {cs.user_id}: positive among negatives")
        if np.intersect1d(neg, split.train.items_of(cs.user_id)).size:
            raise ValidationError(f"user {cs.user_id}: negative overlaps train history")
