"""Command-line entry point: synth, run, eval, fit-demo, selftest."""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from gvground import io
from gvground.config import RunConfig
from gvground.encoder import Scene, rasterize_ground_truth, synth_scenes
from gvground.errors import ConfigurationError, InvalidArgument, NumericalError
from gvground.metrics import METRIC_SETS, EvalRecord, scene_row, summarize
from gvground.numerics import ParamStore, sigmoid
from gvground.pipeline import build_params, fit, predict

MANIFEST = "manifest.json"
PREDICTIONS = "predictions.jsonl"


class CommandError(Exception):
    """Fatal error for the current command; reported without a traceback."""

    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- config


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.override(seed=args.seed)


def resolve_params(cfg: RunConfig, path=None) -> ParamStore:
    if path is None:
        return build_params(cfg)
    params = ParamStore.load(path)
    expected = build_params(cfg)
    if list(params) != list(expected) or any(params.shape(n) != expected.shape(n)
                                             for n in expected):
        raise ConfigurationError(f"{path}: parameters do not fit the configured model")
    return params


# ---------------------------------------------------------------- synth


def cmd_synth(cfg: RunConfig, count: int, out: Path) -> Path:
    if count < 0:
        raise CommandError(f"count must be >= 0, got {count}")
    scene_dir = out / "scenes"
    try:
        scene_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for scene in synth_scenes(cfg.seed, count, cfg.dataset):
            name = f"scenes/{scene.id}.json"
            (out / name).write_text(scene.to_json())
            entries.append({"id": scene.id, "file": name})
        io.write_json(out / MANIFEST, {"count": count, "seed": cfg.seed,
                                       "dataset": cfg.dataset.to_dict(), "scenes": entries})
    except OSError as exc:
        raise CommandError(f"cannot write dataset to {exc.filename}: {exc.strerror}") from exc
    return out / MANIFEST


def load_manifest(dataset: Path) -> tuple[Path, list[dict]]:
    root = dataset if dataset.is_dir() else dataset.parent
    path = root / MANIFEST if dataset.is_dir() else dataset
    try:
        manifest = io.read_json(path)
    except OSError as exc:
        raise CommandError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except InvalidArgument as exc:
        raise CommandError(f"manifest {exc}") from exc
    entries = manifest.get("scenes") if isinstance(manifest, dict) else None
    if not isinstance(entries, list):
        raise CommandError(f"{path}: manifest has no scene list")
    return root, entries


def load_scene(root: Path, entry: dict) -> Scene:
    path = root / entry["file"]
    try:
        scene = Scene.from_json(path.read_text())
    except OSError as exc:
        raise InvalidArgument(f"{path}: {exc.strerror}") from exc
    except InvalidArgument as exc:
        raise InvalidArgument(f"{path}: {exc}") from exc
    if scene.id != entry["id"]:
        raise InvalidArgument(f"{path}: scene id {scene.id!r} != manifest id {entry['id']!r}")
    return scene


# ---------------------------------------------------------------- run

_WORKER: dict = {}


def _init_worker(cfg_json: str, param_bytes: bytes) -> None:
    _WORKER["cfg"] = RunConfig.from_json(cfg_json)
    _WORKER["params"] = ParamStore.from_bytes(param_bytes)


def _predict_one(scene_json: str, dump_attn: bool, dump_masks: bool) -> tuple:
    cfg, params = _WORKER["cfg"], _WORKER["params"]
    scene = Scene.from_json(scene_json)
    out, fw = predict(scene, params, cfg)
    record = {
        "id": scene.id,
        "kept": list(out.indices),
        "boxes": out.boxes.tolist(),
        "scores": out.scores.tolist(),
        "non_target": out.non_target,
        "exist_prob": fw.exist_prob,
        "fg_prob": fw.decoded.fg_prob.tolist(),
        "points": fw.queries.points.tolist(),
        "mask": io.mask_to_rle(out.mask),
    }
    attn = None
    if dump_attn:
        attn = {"id": scene.id, "score_map": fw.attn.score_map.tolist(),
                "cells": list(fw.queries.cells), "points": fw.queries.points.tolist(),
                "weights": fw.attn.weights.tolist(), "empty": fw.attn.empty}
    masks = None
    if dump_masks:
        masks = (out.mask, sigmoid(fw.seg.mask_logits), sigmoid(fw.masks.logits))
    return record, attn, masks


def cmd_run(cfg: RunConfig, dataset: Path, out: Path, params_path=None, workers: int = 1,
            dump_attn: bool = False, dump_masks: bool = False) -> int:
    """Predict every scene of ``dataset``; returns the number of scenes that failed."""
    root, entries = load_manifest(dataset)
    params = resolve_params(cfg, params_path)
    jobs, failures = [], 0
    for entry in entries:
        try:
            jobs.append(load_scene(root, entry).to_json())
        except (InvalidArgument, KeyError, TypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            failures += 1
    out.mkdir(parents=True, exist_ok=True)
    args = [(j, dump_attn, dump_masks) for j in jobs]
    init = (cfg.to_json(), params.to_bytes())
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=init) as pool:
            results = list(pool.map(_predict_one, *zip(*args)))
    else:
        _init_worker(*init)
        results = [_predict_one(*a) for a in args]

    io.write_jsonl(out / PREDICTIONS, (r for r, _, _ in results))
    if dump_attn:
        (out / "attn").mkdir(exist_ok=True)
        for rec, attn, _ in results:
            io.write_json(out / "attn" / f"{rec['id']}.json", attn)
            io.write_pgm(out / "attn" / f"{rec['id']}_score.pgm",
                         sigmoid(np.array(attn["score_map"])), 0.0, 1.0)
    if dump_masks:
        (out / "masks").mkdir(exist_ok=True)
        for rec, _, (merged, glob, inst) in results:
            stem = out / "masks" / rec["id"]
            io.write_pgm(f"{stem}_merged.pgm", merged, 0.0, 1.0)
            io.write_pgm(f"{stem}_global.pgm", glob, 0.0, 1.0)
            for q, m in enumerate(inst):
                io.write_pgm(f"{stem}_q{q:02d}.pgm", m, 0.0, 1.0)
    return failures


# ---------------------------------------------------------------- eval


def _records(cfg: RunConfig, predictions: list[dict], root: Path, entries: list[dict]
             ) -> list[EvalRecord]:
    by_id = {}
    for p in predictions:
        if p.get("id") in by_id:
            raise CommandError(f"duplicate prediction id {p.get('id')!r}")
        by_id[p.get("id")] = p
    gt_ids = [e["id"] for e in entries]
    missing = sorted(set(gt_ids) - set(by_id))
    extra = sorted(str(i) for i in set(by_id) - set(gt_ids))
    if missing or extra:
        raise CommandError("prediction ids do not match the dataset; "
                           f"missing: {missing or 'none'}; unexpected: {extra or 'none'}")
    records = []
    for entry in entries:
        try:
            scene = load_scene(root, entry)
        except InvalidArgument as exc:
            raise CommandError(str(exc), code=1) from exc
        gt = rasterize_ground_truth(scene, *cfg.mask_size)
        p = by_id[entry["id"]]
        try:
            mask = io.rle_to_mask(p["mask"])
            records.append(EvalRecord(scene.id, p["boxes"], p["scores"], mask,
                                      bool(p["non_target"]), gt.boxes, gt.global_mask,
                                      np.asarray(p.get("points", []))))
        except (KeyError, InvalidArgument) as exc:
            raise CommandError(f"prediction {entry['id']}: {exc}", code=1) from exc
    return records


def cmd_eval(cfg: RunConfig, predictions: Path, dataset: Path, metric_set: str, out: Path
             ) -> dict:
    if metric_set not in METRIC_SETS:
        raise CommandError(f"unknown metric set {metric_set!r}; known: {sorted(METRIC_SETS)}")
    root, entries = load_manifest(dataset)
    try:
        preds = io.read_jsonl(predictions)
    except OSError as exc:
        raise CommandError(f"cannot read {predictions}: {exc.strerror}") from exc
    except InvalidArgument as exc:
        raise CommandError(str(exc), code=1) from exc
    records = _records(cfg, preds, root, entries)
    summary = summarize(records).as_dict()
    chosen = {k: summary[k] for k in METRIC_SETS[metric_set]}
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "eval_summary.json", {"metric_set": metric_set, "metrics": chosen,
                                              "scenes": len(records)})
    sets = [s for s in METRIC_SETS if s != "all"] if metric_set == "all" else [metric_set]
    fields = ["metric_set"] + list(summary)
    rows = [{"metric_set": s, **{k: summary[k] for k in METRIC_SETS[s]}} for s in sets]
    io.write_csv(out / "eval_summary.csv", rows, fields)
    io.write_jsonl(out / "eval_scenes.jsonl", (scene_row(r) for r in records))
    return chosen


# ---------------------------------------------------------------- fit-demo

LOSS_FIELDS = ["step", "l_detr", "l_seg", "l_ins_seg", "l_exist", "total"]


def cmd_fit_demo(cfg: RunConfig, out: Path) -> list[dict]:
    if cfg.fit_steps < 1:
        raise CommandError(f"steps must be >= 1, got {cfg.fit_steps}")
    if not cfg.fit_lr >= 0:
        raise CommandError(f"learning rate must be >= 0, got {cfg.fit_lr}")
    scenes = synth_scenes(cfg.seed, cfg.fit_scenes, cfg.dataset)
    rows = []
    final, _ = fit(scenes, build_params(cfg), cfg,
                   on_step=lambda step, rep: rows.append({"step": step, **rep.as_row()}))
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "fit_loss.csv", rows, LOSS_FIELDS)
    final.save(out / "fit_params.gvp")
    return rows


# ---------------------------------------------------------------- parser


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--config", default=default(None), help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=default(None), help="override config seed")
    parser.add_argument("--out", type=Path, default=default(Path("out")),
                        help="output directory (default: ./out)")
    parser.add_argument("--dump-attn", action="store_true", default=default(False),
                        help="run: also write score maps, prior points and attention weights")
    parser.add_argument("--dump-masks", action="store_true", default=default(False),
                        help="run: also write merged, global and per-query masks as PGM")
    parser.add_argument("--workers", type=int, default=default(1),
                        help="worker processes for run (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvground",
                                     description="Generalized visual grounding toy pipeline.")
    _add_global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--count", type=int, default=16)

    p = sub.add_parser("run", parents=[common], help="run the pipeline over a dataset")
    p.add_argument("dataset", type=Path, help="dataset directory or manifest file")
    p.add_argument("--params", type=Path, help="parameter file (default: seed-initialized)")

    p = sub.add_parser("eval", parents=[common], help="score predictions against a dataset")
    p.add_argument("predictions", type=Path)
    p.add_argument("dataset", type=Path)
    p.add_argument("--metrics", default="all", choices=sorted(METRIC_SETS))

    p = sub.add_parser("fit-demo", parents=[common], help="finite-difference fitting demo")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)

    sub.add_parser("selftest", parents=[common], help="run the embedded oracle checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.workers < 1:
            raise CommandError(f"--workers must be >= 1, got {args.workers}")
        if args.command == "synth":
            path = cmd_synth(cfg, args.count, args.out)
            print(f"wrote {args.count} scenes to {path.parent}")
        elif args.command == "run":
            failures = cmd_run(cfg, args.dataset, args.out, args.params, args.workers,
                               args.dump_attn, args.dump_masks)
            print(f"wrote {args.out / PREDICTIONS}")
            if failures:
                print(f"{failures} scene(s) failed", file=sys.stderr)
                return 1
        elif args.command == "eval":
            metrics = cmd_eval(cfg, args.predictions, args.dataset, args.metrics, args.out)
            for k, v in metrics.items():
                print(f"{k:16s} {v:.6f}")
        elif args.command == "fit-demo":
            cfg = cfg.override(fit_steps=args.steps, fit_lr=args.lr)
            rows = cmd_fit_demo(cfg, args.out)
            first, last = rows[0]["total"], rows[-1]["total"]
            print(f"total loss {first:.6f} -> {last:.6f} (ratio {last / first:.4f})")
        elif args.command == "selftest":
            from gvground.selftest import run_all
            return 0 if run_all(verbose=True) else 1
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
