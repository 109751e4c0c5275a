"""Run configuration and end-to-end wiring of the components.

Dependency order is subspace fit -> joint item features -> FM -> similarity.
The learned codes feed both the FM (as an extra feature block) and the
similarity model (as grounding for history embeddings); disabling the
subspace component removes both uses.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .data import ViewFeatureMatrix, TrainTestSplit
from .errors import ValidationError
from .features import (
    BehaviorProbabilities,
    JointFeatureMatrix,
    SceneProbabilities,
    build_joint_features,
    filter_features,
)
from .fm import FMConfig, FMModel, FMScorer, fm_train
from .similarity import FusedScorer, SimConfig, SimilarityModel, SimScorer, sim_train
from .subspace import SubspaceModel, TrainConfig, fit

logger = logging.getLogger(__name__)

PROBABILITY_BLOCKS = ("scene", "action_rgb", "action_flow")

DEFAULT_CONFIG: dict[str, Any] = {
    "data": {
        "interactions": None,
        "format": "tsv",
        "min_user_interactions": 1,
        "items": None,
        "views": {},
        "scene": None,
        "action_rgb": None,
        "action_flow": None,
    },
    "seed": 0,
    "views_enabled": None,
    "subspace": {"latent_dim": 8, "epochs": 300, "learning_rate_H": 1e-3, "learning_rate_dec": 1e-3,
                 "batch_size": 0, "tolerance": 0.0, "activation": "tanh"},
    "features": {"importance": None, "top_k": None},
    "fm": {"h": 16, "learning_rate": 0.02, "l2_reg": 1e-5, "epochs": 20, "n_negatives": 4},
    "sim": {"d": 16, "a": None, "beta": 0.5, "learning_rate": 0.02, "l2": 1e-5, "epochs": 10, "n_negatives": 4},
    "components": {"subspace": True, "fm": True, "sim": True, "id_only_fm": True},
    "eval": {"N": [5, 10, 20], "lambda": 0.5},
    "out": "run",
}

# sections that do not change trained artifacts
_UNHASHED = ("eval", "out")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "views":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(user: dict | None = None) -> dict:
    cfg = _merge(DEFAULT_CONFIG, user or {})
    unknown = set(cfg) - set(DEFAULT_CONFIG)
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    comps = cfg["components"]
    if not (comps["fm"] or comps["sim"]):
        raise ValidationError("at least one scorer (fm or sim) must be enabled")
    lam = cfg["eval"]["lambda"]
    if not 0 <= lam <= 1:
        raise ValidationError("eval.lambda must lie in [0, 1]")
    return cfg


def config_hash(cfg: dict, sections: Sequence[str] | None = None) -> str:
    """Short sha256 of the canonical JSON of ``sections`` (default: all training-relevant ones)."""
    if sections is None:
        payload = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    else:
        payload = {k: cfg[k] for k in sections}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def subspace_config(cfg: dict) -> tuple[int, TrainConfig]:
    s = dict(cfg["subspace"])
    latent = int(s.pop("latent_dim"))
    return latent, TrainConfig(seed=cfg["seed"], **s)


def fm_config(cfg: dict) -> FMConfig:
    return FMConfig(seed=cfg["seed"], **cfg["fm"])


def sim_config(cfg: dict) -> SimConfig:
    return SimConfig(seed=cfg["seed"], **cfg["sim"])


def select_views(views: Sequence[ViewFeatureMatrix], enabled: Sequence[str] | None) -> list[ViewFeatureMatrix]:
    if enabled is None:
        return list(views)
    known = {v.view_id for v in views}
    missing = set(enabled) - known
    if missing:
        raise ValidationError(f"unknown views requested: {sorted(missing)}; available {sorted(known)}")
    return [v for v in views if v.view_id in set(enabled)]


def subspace_block(model: SubspaceModel) -> ViewFeatureMatrix:
    """Standardised codes scaled to unit expected row norm, as a feature view."""
    codes = model.item_codes(standardize=True) / math.sqrt(model.latent_dim)
    return ViewFeatureMatrix("subspace", codes)


def joint_features(
    subspace: SubspaceModel | None,
    prob_views: dict[str, ViewFeatureMatrix],
    importance: Sequence[float] | None = None,
    top_k: int | None = None,
) -> JointFeatureMatrix | None:
    """Item feature block for the FM; ``None`` means id-only."""
    sp = SceneProbabilities.from_view(prob_views["scene"]) if "scene" in prob_views else None
    bp = None
    if "action_rgb" in prob_views or "action_flow" in prob_views:
        if not ("action_rgb" in prob_views and "action_flow" in prob_views):
            raise ValidationError("action_rgb and action_flow must be given together")
        bp = BehaviorProbabilities.from_views(prob_views["action_rgb"], prob_views["action_flow"])
    extra = [subspace_block(subspace)] if subspace is not None else []
    if sp is None and bp is None and not extra:
        return None
    F = build_joint_features(sp, bp, extra)
    if importance is not None or top_k is not None:
        imp = np.ones(F.width) if importance is None else np.asarray(importance, dtype=np.float64)
        F = filter_features(F, imp, F.width if top_k is None else int(top_k))
    return F


@dataclass
class TrainedBundle:
    subspace: SubspaceModel | None = None
    joint: JointFeatureMatrix | None = None
    fm: FMModel | None = None
    fm_idonly: FMModel | None = None
    sim: SimilarityModel | None = None
    logs: dict[str, list[float]] = field(default_factory=dict)

    def scorers(self, split: TrainTestSplit, lam: float) -> dict:
        out = {}
        fm = FMScorer(self.fm, self.joint) if self.fm is not None else None
        if fm is not None:
            out["fm"] = fm
        if self.fm_idonly is not None:
            out["fm_idonly"] = FMScorer(self.fm_idonly, None)
        if self.sim is not None:
            sim = SimScorer(self.sim, split.train)
            out["sim"] = sim
            if fm is not None:
                out["fused"] = FusedScorer(fm, sim, lam)
        return out


def train_all(
    split: TrainTestSplit,
    views: Sequence[ViewFeatureMatrix],
    cfg: dict,
    prob_views: dict[str, ViewFeatureMatrix] | None = None,
) -> TrainedBundle:
    comps = cfg["components"]
    bundle = TrainedBundle()
    views = select_views(views, cfg.get("views_enabled"))
    if comps["subspace"] and views:
        latent, tcfg = subspace_config(cfg)
        bundle.subspace, bundle.logs["subspace"] = fit(views, latent, tcfg)
    if comps["fm"]:
        feats = cfg["features"]
        bundle.joint = joint_features(bundle.subspace, prob_views or {}, feats["importance"], feats["top_k"])
        bundle.fm, bundle.logs["fm"] = fm_train(split, bundle.joint, fm_config(cfg))
        if comps["id_only_fm"] and bundle.joint is not None:
            bundle.fm_idonly, bundle.logs["fm_idonly"] = fm_train(split, None, fm_config(cfg))
    if comps["sim"]:
        bundle.sim, bundle.logs["sim"] = sim_train(split, bundle.subspace, sim_config(cfg))
    return bundle
