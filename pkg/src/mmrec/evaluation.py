"""Leave-one-out ranking evaluation over sampled candidate sets (HR@N, NDCG@N).

Each test user has one held-out positive ranked against 99 sampled
negatives. With a single relevant item the ideal DCG is 1, so

    HR@N   = mean_u 1[rank_u <= N]
    NDCG@N = mean_u 1[rank_u <= N] / log2(rank_u + 1)

where ``rank_u`` is the 1-based position of the positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import CandidateSet, InteractionDataset, TrainTestSplit
from .errors import MMRecError, NumericalError, ProtocolError

Scorer = Callable[[int, np.ndarray], np.ndarray]

DEFAULT_N = (5, 10, 20)

#: published HR@10 / NDCG@10 of the full model; context only, not reproduced here
REFERENCE_RESULTS = {
    "MovieLens-1M": {"HR@10": 0.8287, "NDCG@10": 0.5899},
    "Amazon Clothing/Shoes/Jewelry": {"HR@10": 0.4643, "NDCG@10": 0.2879},
}


@dataclass(frozen=True)
class RankedList:
    user_id: int
    items: np.ndarray
    scores: np.ndarray

    def rank_of(self, item: int) -> int | None:
        pos = np.flatnonzero(self.items == item)
        return int(pos[0]) + 1 if pos.size else None


def rank_candidates(scorer: Scorer, cs: CandidateSet) -> RankedList:
    """Score all candidates and sort by descending score, ties by ascending item id."""
    items = cs.items
    try:
        scores = np.asarray(scorer(cs.user_id, items), dtype=np.float64)
    except MMRecError:
        raise
    except Exception as exc:
        raise MMRecError(f"scorer failed for user {cs.user_id}: {exc}") from exc
    if scores.shape != items.shape:
        raise ProtocolError(f"scorer returned {scores.shape} scores for {items.size} candidates (user {cs.user_id})")
    if not np.all(np.isfinite(scores)):
        raise NumericalError(f"non-finite candidate score for user {cs.user_id}")
    order = np.lexsort((items, -scores))
    return RankedList(cs.user_id, items[order], scores[order])


def positive_ranks(lists: Sequence[RankedList], positives: Mapping[int, int]) -> np.ndarray:
    ranks = np.empty(len(lists), dtype=np.int64)
    for k, rl in enumerate(lists):
        if rl.user_id not in positives:
            raise ProtocolError(f"user {rl.user_id} has no held-out positive")
        r = rl.rank_of(positives[rl.user_id])
        if r is None:
            raise ProtocolError(f"positive {positives[rl.user_id]} missing from candidate list of user {rl.user_id}")
        ranks[k] = r
    return ranks


def _cutoff(N: int) -> int:
    if N < 1:
        raise ProtocolError(f"cutoff N must be >= 1, got {N}")
    return N


def hr_from_ranks(ranks: np.ndarray, N: int) -> float:
    if ranks.size == 0:
        raise ProtocolError("no ranked lists")
    return float(np.mean(ranks <= _cutoff(N)))


def ndcg_from_ranks(ranks: np.ndarray, N: int) -> float:
    if ranks.size == 0:
        raise ProtocolError("no ranked lists")
    gain = np.where(ranks <= _cutoff(N), 1.0 / np.log2(ranks + 1.0), 0.0)
    # correctly rounded sum: the mean does not depend on user order
    return math.fsum(gain) / ranks.size


def hit_ratio(lists: Sequence[RankedList], positives: Mapping[int, int], N: int) -> float:
    return hr_from_ranks(positive_ranks(lists, positives), N)


def ndcg(lists: Sequence[RankedList], positives: Mapping[int, int], N: int) -> float:
    return ndcg_from_ranks(positive_ranks(lists, positives), N)


@dataclass
class MetricsReport:
    model: str
    N_values: tuple[int, ...]
    hr: dict[int, float]
    ndcg: dict[int, float]
    ranks: dict[int, int] = field(repr=False)
    seed: int | None = None
    negatives_per_user: int = 99
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return len(self.ranks)

    def rows(self) -> list[tuple[int, float, float]]:
        return [(N, self.hr[N], self.ndcg[N]) for N in self.N_values]

    def to_text(self, footnotes: bool = True) -> str:
        lines = ["# mmrec metrics report v1", "[protocol]"]
        lines += [
            f"model = {self.model}",
            f"seed = {self.seed}",
            f"users = {self.num_users}",
            f"negatives_per_user = {self.negatives_per_user}",
            f"candidates_per_user = {self.negatives_per_user + 1}",
            f"N = {','.join(map(str, self.N_values))}",
        ]
        lines += [f"{k} = {v}" for k, v in sorted(self.meta.items())]
        lines.append("[metrics]")
        for N in self.N_values:
            lines.append(f"HR@{N} = {self.hr[N]:.6f}")
            lines.append(f"NDCG@{N} = {self.ndcg[N]:.6f}")
        if footnotes:
            lines.append("[reference]")
            lines.append("note = published full-model values on the original datasets; not reproduced by this run")
            for ds, vals in REFERENCE_RESULTS.items():
                lines.append(f"{ds} = " + ", ".join(f"{k} {v}" for k, v in vals.items()))
        return "\n".join(lines) + "\n"

    def write(self, directory, prefix: str | None = None) -> None:
        """Write ``<prefix>report.txt``, ``<prefix>plot.tsv`` and ``<prefix>ranks.tsv``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        p = prefix if prefix is not None else f"{self.model}_"
        (d / f"{p}report.txt").write_text(self.to_text(), encoding="utf-8")
        write_plot_table([self], d / f"{p}plot.tsv")
        with open(d / f"{p}ranks.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("user\trank\n")
            for u, r in self.ranks.items():
                fh.write(f"{u}\t{r}\n")


def write_plot_table(reports: Iterable[MetricsReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model\tN\tHR\tNDCG\n")
        for rep in reports:
            for N, hr, nd in rep.rows():
                fh.write(f"{rep.model}\t{N}\t{hr:.6f}\t{nd:.6f}\n")


def read_report(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if " = " in line and not line.startswith("#"):
            k, v = line.split(" = ", 1)
            out.setdefault(k, v)
    return out


def evaluate(
    scorer: Scorer,
    split: TrainTestSplit,
    candidates: Sequence[CandidateSet],
    N_list: Sequence[int] = DEFAULT_N,
    name: str | None = None,
    meta: Mapping[str, str] | None = None,
) -> MetricsReport:
    """Rank every candidate set and aggregate HR@N / NDCG@N for each cutoff."""
    N_values = tuple(sorted({_cutoff(int(N)) for N in N_list}))
    positives = split.positives()
    for cs in candidates:
        if positives.get(cs.user_id) != cs.positive:
            raise ProtocolError(f"candidate set of user {cs.user_id} does not carry the held-out positive")
    lists = [rank_candidates(scorer, cs) for cs in candidates]
    ranks = positive_ranks(lists, positives)
    negs = {cs.negatives.size for cs in candidates}
    return MetricsReport(
        model=name or getattr(scorer, "name", "model"),
        N_values=N_values,
        hr={N: hr_from_ranks(ranks, N) for N in N_values},
        ndcg={N: ndcg_from_ranks(ranks, N) for N in N_values},
        ranks={rl.user_id: int(r) for rl, r in zip(lists, ranks)},
        seed=split.rng_seed,
        negatives_per_user=negs.pop() if len(negs) == 1 else -1,
        meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# reference scorers


class PopularityScorer:
    """Score = train interaction count of the item."""

    name = "popularity"

    def __init__(self, train: InteractionDataset):
        self.pop = train.item_popularity().astype(np.float64)

    def __call__(self, user, items):
        return self.pop[np.asarray(items)]


class RandomScorer:
    """Uniform scores, a deterministic function of (seed, user, candidate order)."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def __call__(self, user, items):
        return np.random.default_rng([self.seed, int(user)]).random(len(items))
