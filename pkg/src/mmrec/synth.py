"""Planted-structure synthetic data for recovery and end-to-end tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import InteractionDataset, ViewFeatureMatrix
from .errors import ValidationError
from .subspace import ACTIVATIONS, SubspaceModel


@dataclass
class SyntheticSpec:
    num_users: int = 500
    num_items: int = 2000
    num_views: int = 3
    latent_dim: int = 8
    view_dims: list[int] = field(default_factory=lambda: [20, 30, 25])
    noise_sigma: float = 0.01
    interactions_per_user: int = 20
    seed: int = 0
    # preference model: users belong to taste clusters in code space
    taste_clusters: int = 8
    taste_noise: float = 0.3
    popularity_weight: float = 0.5
    temperature: float = 0.35

    def __post_init__(self):
        self.view_dims = list(self.view_dims)
        if min(self.num_users, self.num_items, self.num_views, self.latent_dim, self.interactions_per_user) < 1:
            raise ValidationError("synthetic sizes must be positive")
        if len(self.view_dims) != self.num_views or min(self.view_dims) < 1:
            raise ValidationError("view_dims must list one positive dimension per view")
        if self.interactions_per_user > self.num_items:
            raise ValidationError("interactions_per_user exceeds num_items")
        if self.noise_sigma < 0 or self.temperature <= 0 or self.taste_clusters < 1:
            raise ValidationError("noise_sigma >= 0, temperature > 0 and taste_clusters >= 1 required")


@dataclass(frozen=True)
class SyntheticTruth:
    model: SubspaceModel
    user_taste: np.ndarray
    popularity: np.ndarray
    temperature: float

    def affinity(self, user: int, items) -> np.ndarray:
        """Planted preference logits of ``user`` for ``items``."""
        h = self.model.H[:, np.asarray(items)]
        return (self.user_taste[user] + self.popularity) @ h / self.temperature


def generate_synthetic(spec: SyntheticSpec):
    """Return ``(dataset, views, truth)``.

    Codes ``H*`` are standard normal; view ``v`` is ``tanh(W*_v H* + b*_v)``
    plus Gaussian noise. Each user draws ``interactions_per_user`` distinct
    items with probability proportional to ``exp(affinity)`` (Gumbel top-k),
    where affinity is a planted linear score of the item code.
    """
    rng = np.random.default_rng(spec.seed)
    D, N = spec.latent_dim, spec.num_items
    H = rng.standard_normal((D, N))
    W = tuple(rng.normal(0.0, 1.0 / np.sqrt(D), size=(dv, D)) for dv in spec.view_dims)
    b = tuple(rng.normal(0.0, 0.1, size=dv) for dv in spec.view_dims)
    truth_model = SubspaceModel(H, W, b, "tanh", tuple(f"view{v}" for v in range(spec.num_views)))

    act, _ = ACTIVATIONS["tanh"]
    views = []
    for v in range(spec.num_views):
        clean = act(W[v] @ H + b[v][:, None]).T
        noisy = clean + spec.noise_sigma * rng.standard_normal(clean.shape) if spec.noise_sigma > 0 else clean
        views.append(ViewFeatureMatrix(f"view{v}", noisy))

    centroids = rng.standard_normal((spec.taste_clusters, D))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    cluster = rng.integers(spec.taste_clusters, size=spec.num_users)
    taste = centroids[cluster] + spec.taste_noise * rng.standard_normal((spec.num_users, D)) / np.sqrt(D)
    pop = rng.standard_normal(D)
    pop *= spec.popularity_weight / np.linalg.norm(pop)
    truth = SyntheticTruth(truth_model, taste, pop, spec.temperature)

    logits = (taste + pop) @ H / spec.temperature
    gumbel = rng.gumbel(size=logits.shape)
    k = spec.interactions_per_user
    picks = np.argpartition(-(logits + gumbel), k - 1, axis=1)[:, :k]
    users = np.repeat(np.arange(spec.num_users), k)
    ds = InteractionDataset.from_pairs(spec.num_users, N, users, picks.ravel())
    return ds, views, truth
