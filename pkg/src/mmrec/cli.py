"""Command line interface: ``mmrec {synth,prepare,train,evaluate,recommend}``.

One JSON config drives every command; flags override it. Artifacts land
under ``<out>/prepared``, ``<out>/models`` and ``<out>/eval``, each stamped
with the config hash. Exit codes: 0 ok, 2 validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .errors import MMRecError, ValidationError
from .evaluation import PopularityScorer, evaluate, write_plot_table
from .features import JointFeatureMatrix
from .fm import load_fm, save_fm
from .pipeline import PROBABILITY_BLOCKS, TrainedBundle, config_hash, resolve_config, train_all
from .similarity import load_similarity, save_similarity
from .subspace import load_subspace, save_subspace
from .synth import SyntheticSpec, generate_synthetic

logger = logging.getLogger("mmrec")


# ---------------------------------------------------------------------------
# config


def load_config(args) -> dict:
    user = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ValidationError(f"config file {path} not found")
        user = json.loads(path.read_text(encoding="utf-8"))
        # relative data paths are relative to the config file
        base = path.parent
        d = user.get("data", {})
        for key in ("interactions", "items", *PROBABILITY_BLOCKS):
            if d.get(key):
                d[key] = str((base / d[key]).resolve()) if not Path(d[key]).is_absolute() else d[key]
        if isinstance(d.get("views"), list):
            d["views"] = [p if Path(p).is_absolute() else str((base / p).resolve()) for p in d["views"]]
        elif isinstance(d.get("views"), dict):
            d["views"] = {k: p if Path(p).is_absolute() else str((base / p).resolve()) for k, p in d["views"].items()}
        if isinstance(user.get("out"), str) and not Path(user["out"]).is_absolute():
            user["out"] = str((base / user["out"]).resolve())
    synth = user.pop("synth", None)
    cfg = resolve_config(user)
    if synth is not None:
        cfg["synth"] = synth
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "views", None) is not None:
        cfg["views_enabled"] = [] if args.views.lower() == "none" else [v for v in args.views.split(",") if v]
    if getattr(args, "fm_only", False) and getattr(args, "sim_only", False):
        raise ValidationError("--fm-only and --sim-only are mutually exclusive")
    if getattr(args, "fm_only", False):
        cfg["components"].update(subspace=False, sim=False)
    if getattr(args, "sim_only", False):
        cfg["components"].update(fm=False, id_only_fm=False)
    if getattr(args, "lam", None) is not None:
        cfg["eval"]["lambda"] = args.lam
    resolved = resolve_config({k: v for k, v in cfg.items() if k != "synth"})
    if synth is not None:
        resolved["synth"] = synth
    return resolved


def _hash(cfg) -> str:
    return config_hash({k: v for k, v in cfg.items() if k != "synth"})


def _data_hash(cfg) -> str:
    return config_hash(cfg, ("data", "seed"))


def _view_paths(cfg) -> list[str]:
    v = cfg["data"]["views"] or []
    return list(v.values()) if isinstance(v, dict) else list(v)


def _load_dataset(cfg) -> D.InteractionDataset:
    d = cfg["data"]
    if not d["interactions"]:
        raise ValidationError("config data.interactions is required")
    path = Path(d["interactions"])
    if not path.exists():
        raise ValidationError(f"interactions file {path} not found")
    catalog = D.load_item_catalog(d["items"]) if d.get("items") else None
    return D.load_interactions(path, d["format"], d["min_user_interactions"], catalog)


def _load_views(cfg, num_items):
    views, prob = [], {}
    for p in _view_paths(cfg):
        if not Path(p).exists():
            raise ValidationError(f"feature file {p} not found")
        views.append(D.load_view_features(p, num_items))
    for key in PROBABILITY_BLOCKS:
        p = cfg["data"].get(key)
        if p:
            if not Path(p).exists():
                raise ValidationError(f"feature file {p} not found")
            v = D.load_view_features(p, num_items)
            if v.view_id != key:
                raise ValidationError(f"{p}: header view_id {v.view_id!r}, expected {key!r}")
            prob[key] = v
    ids = [v.view_id for v in views]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate view ids {ids}")
    return views, prob


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _check_manifest(directory: Path, h: str, what: str):
    mf = directory / "manifest.json"
    if not mf.exists():
        raise ValidationError(f"{what} artifacts missing in {directory}; run the earlier command first")
    got = json.loads(mf.read_text(encoding="utf-8"))
    if got.get("config_hash") != h:
        raise ValidationError(
            f"{what} artifacts in {directory} were built with config {got.get('config_hash')}, current config is {h}"
        )
    return got


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg) -> int:
    spec = SyntheticSpec(**{"seed": cfg["seed"], **cfg.get("synth", {})})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ds, views, _ = generate_synthetic(spec)
    D.save_interactions(ds, out / "interactions.tsv")
    D.save_item_catalog(ds.item_tokens, out / "items.txt")
    for v in views:
        D.save_view_features(v, out / f"{v.view_id}.txt")
    run = {
        "data": {
            "interactions": "interactions.tsv",
            "items": "items.txt",
            "views": [f"{v.view_id}.txt" for v in views],
        },
        "seed": cfg["seed"],
        "subspace": {"latent_dim": spec.latent_dim},
        "out": "run",
    }
    _write_json(out / "config.json", run)
    print(f"wrote synthetic data ({ds.num_users} users, {ds.num_items} items) and {out / 'config.json'}")
    return 0


def cmd_prepare(cfg) -> int:
    ds = _load_dataset(cfg)
    _load_views(cfg, ds.num_items)  # validate before anything is written
    out = Path(cfg["out"]) / "prepared"
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    split = D.leave_one_out_split(ds, seed)
    cands = D.sample_candidates(split, seed + 1)
    D.save_split(split, cands, out)
    with open(out / "user_map.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\t{t}\n" for u, t in enumerate(ds.user_tokens))
    with open(out / "item_map.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i}\t{t}\n" for i, t in enumerate(ds.item_tokens))
    stats = ds.stats()
    stats.update(test_users=len(split.test), skipped_users=split.skipped_users)
    _write_json(out / "stats.json", stats)
    _write_json(out / "manifest.json", {"config_hash": _data_hash(cfg), "seed": seed})
    print("users\titems\tinteractions\tdensity")
    print(f"{stats['users']}\t{stats['items']}\t{stats['interactions']}\t{100 * ds.density:.4g}%")
    return 0


def _prepared(cfg):
    h = _hash(cfg)
    out = Path(cfg["out"]) / "prepared"
    _check_manifest(out, _data_hash(cfg), "prepare")
    ds = _load_dataset(cfg)
    split, cands = D.load_split(out, ds, cfg["seed"])
    return ds, split, cands, h


def cmd_train(cfg) -> int:
    ds, split, _, h = _prepared(cfg)
    views, prob = _load_views(cfg, ds.num_items)
    bundle = train_all(split, views, cfg, prob)
    out = Path(cfg["out"]) / "models"
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("subspace.model", "joint_features.txt", "fm.model", "fm_idonly.model", "sim.model"):
        (out / stale).unlink(missing_ok=True)
    meta = {"config_hash": h}
    if bundle.subspace is not None:
        save_subspace(bundle.subspace, out / "subspace.model", meta)
    if bundle.joint is not None:
        D.save_view_features(D.ViewFeatureMatrix("joint", bundle.joint.matrix), out / "joint_features.txt")
        (out / "joint_provenance.txt").write_text("\n".join(bundle.joint.provenance) + "\n", encoding="utf-8")
    if bundle.fm is not None:
        save_fm(bundle.fm, out / "fm.model", meta)
    if bundle.fm_idonly is not None:
        save_fm(bundle.fm_idonly, out / "fm_idonly.model", meta)
    if bundle.sim is not None:
        save_similarity(bundle.sim, out / "sim.model", meta)
    with open(out / "train_log.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("component\tepoch\tloss\n")
        for name, hist in bundle.logs.items():
            for e, loss in enumerate(hist):
                fh.write(f"{name}\t{e}\t{loss:.17g}\n")
    _write_json(out / "manifest.json", {"config_hash": h, "components": sorted(bundle.logs)})
    for name, hist in bundle.logs.items():
        print(f"{name}: loss {hist[0]:.6g} -> {hist[-1]:.6g} ({len(hist) - 1} epochs)")
    return 0


def _load_bundle(cfg, ds, h) -> TrainedBundle:
    mdir = Path(cfg["out"]) / "models"
    _check_manifest(mdir, h, "train")
    b = TrainedBundle()

    def meta_ok(meta, name):
        if meta.get("config_hash") != h:
            raise ValidationError(f"{name} has config hash {meta.get('config_hash')}, expected {h}")

    if (mdir / "subspace.model").exists():
        b.subspace, meta = load_subspace(mdir / "subspace.model", ds.num_items)
        meta_ok(meta, "subspace.model")
    if (mdir / "joint_features.txt").exists():
        jf = D.load_view_features(mdir / "joint_features.txt", ds.num_items)
        prov = tuple((mdir / "joint_provenance.txt").read_text(encoding="utf-8").split())
        b.joint = JointFeatureMatrix(jf.features, prov)
    for name in ("fm", "fm_idonly"):
        if (mdir / f"{name}.model").exists():
            m, meta = load_fm(mdir / f"{name}.model")
            meta_ok(meta, f"{name}.model")
            setattr(b, name, m)
    if (mdir / "sim.model").exists():
        b.sim, meta = load_similarity(mdir / "sim.model", ds.num_items)
        meta_ok(meta, "sim.model")
    if b.fm is None and b.sim is None:
        raise ValidationError(f"no trained scorer found in {mdir}")
    return b


def cmd_evaluate(cfg) -> int:
    ds, split, cands, h = _prepared(cfg)
    bundle = _load_bundle(cfg, ds, h)
    out = Path(cfg["out"]) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    scorers = {"popularity": PopularityScorer(split.train), **bundle.scorers(split, cfg["eval"]["lambda"])}
    meta = {"config_hash": h, "lambda": str(cfg["eval"]["lambda"])}
    reports = []
    for name, sc in scorers.items():
        rep = evaluate(sc, split, cands, cfg["eval"]["N"], name=name, meta=meta)
        rep.write(out)
        reports.append(rep)
    write_plot_table(reports, out / "comparison.tsv")
    ns = reports[0].N_values
    print("model\t" + "\t".join(f"HR@{n}\tNDCG@{n}" for n in ns))
    for rep in reports:
        print(rep.model + "\t" + "\t".join(f"{rep.hr[n]:.4f}\t{rep.ndcg[n]:.4f}" for n in ns))
    print("reference (published, not reproduced): MovieLens-1M HR@10 0.8287 NDCG@10 0.5899; "
          "Amazon HR@10 0.4643 NDCG@10 0.2879")
    return 0


def cmd_recommend(cfg, user_token: str, topn: int) -> int:
    ds, split, _, h = _prepared(cfg)
    bundle = _load_bundle(cfg, ds, h)
    try:
        u = ds.user_tokens.index(user_token)
    except ValueError:
        raise ValidationError(f"unknown user {user_token!r}") from None
    scorers = bundle.scorers(split, cfg["eval"]["lambda"])
    seen = set(ds.items_of(u).tolist())
    items = np.array([i for i in range(ds.num_items) if i not in seen], dtype=np.int64)
    history = split.train.items_of(u)
    if "fused" in scorers and history.size == 0:
        print("note: empty history, using FM-only fallback", file=sys.stderr)
        scorer = scorers["fm"]
    else:
        scorer = scorers.get("fused") or scorers.get("fm") or scorers["sim"]
    if topn > items.size:
        logger.warning("requested top-%d but only %d unseen items; truncating", topn, items.size)
        topn = items.size
    scores = scorer(u, items)
    order = np.lexsort((items, -scores))[:topn]
    for rank, k in enumerate(order, start=1):
        print(f"{rank}\t{ds.item_tokens[items[k]]}\t{scores[k]:.6f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmrec", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        return sp

    common(sub.add_parser("synth", help="write a planted synthetic dataset and a run config"))
    for name in ("prepare", "train", "evaluate", "recommend"):
        sp = common(sub.add_parser(name))
        sp.add_argument("--views", help="comma-separated view ids to use, or 'none'")
        sp.add_argument("--fm-only", action="store_true")
        sp.add_argument("--sim-only", action="store_true")
        sp.add_argument("--lambda", dest="lam", type=float, help="fusion weight of the FM score")
        if name == "recommend":
            sp.add_argument("--user", required=True, help="raw user token")
            sp.add_argument("--topn", type=int, default=10)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_recommend(cfg, args.user, args.topn)
    except MMRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
