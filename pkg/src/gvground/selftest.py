"""Embedded oracle checks run by ``gvground selftest``."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from gvground import decoder, iqg, kernels, oracles
from gvground.config import RunConfig
from gvground.encoder import synth_scenes
from gvground.matcher import hungarian
from gvground.numerics import Grid, ParamStore, bilinear_sample
from gvground.postprocess import binarize
from gvground.pipeline import build_params, predict


def check_hungarian(trials: int = 200, seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    for t in range(trials):
        n, m = rng.integers(1, 7, size=2)
        cost = rng.integers(0, 5, size=(n, m)).astype(float) if t % 2 else rng.random((n, m))
        a = hungarian(cost)
        total = float(sum(cost[q, g] for q, g in a.pairs))
        best, pairs = oracles.brute_force_assignment(cost)
        if len(a) != min(n, m) or abs(total - best) > 1e-12 or a.pairs != pairs:
            return f"trial {t}: got {a.pairs} ({total}), expected {pairs} ({best})"
    return ""


def _random_pyramid(rng, channels, n_levels):
    h, w = (int(v) for v in rng.integers(2, 9, size=2))
    levels = [rng.normal(size=(max(h >> l, 1), max(w >> l, 1), channels))
              for l in range(n_levels)]
    grids = tuple(Grid(v) for v in levels)
    return levels, decoder.PyramidFeatures(grids, tuple(2 ** l for l in range(n_levels)))


def check_deform_attn(trials: int = 100, seed: int = 1) -> str:
    rng = np.random.default_rng(seed)
    for t in range(trials):
        heads, n_levels, n_points = (int(rng.integers(1, hi)) for hi in (5, 4, 5))
        channels = heads * int(rng.integers(1, 4))
        params = ParamStore(t)
        decoder.register_deform_attn(params, "a", channels, heads, n_levels, n_points)
        params = params.updated({"a.offsets.weight": 8.0 * params["a.offsets.weight"]})
        levels, pyramid = _random_pyramid(rng, channels, n_levels)
        z, p = rng.normal(size=channels), rng.uniform(0, 1, size=2)
        got = decoder.ms_deform_attn(z, p, pyramid, params, "a", heads, n_points)
        want = oracles.deform_attn_oracle(z, p, levels, params, "a", heads, n_points)
        if np.max(np.abs(got - want)) > 1e-9:
            return f"trial {t}: max error {np.max(np.abs(got - want)):.3g}"
    # one head, one level, one point, zero offsets: a plain bilinear read of W' x
    params = ParamStore(0)
    decoder.register_deform_attn(params, "a", 4, 1, 1, 1)
    eye = np.eye(4)
    params = params.updated({"a.offsets.weight": np.zeros((2, 4)), "a.offsets.bias": np.zeros(2),
                             "a.value_proj.weight": eye, "a.output_proj.weight": eye})
    levels, pyramid = _random_pyramid(rng, 4, 1)
    p = rng.uniform(0, 1, size=2)
    got = decoder.ms_deform_attn(rng.normal(size=4), p, pyramid, params, "a", 1, 1)
    if not np.array_equal(got, bilinear_sample(pyramid.levels[0], p)):
        return "degenerate case differs from bilinear_sample"
    return ""


def check_point_select(trials: int = 50, seed: int = 2) -> str:
    rng = np.random.default_rng(seed)
    for t in range(trials):
        h, w = (int(v) for v in rng.integers(2, 17, size=2))
        n = int(rng.integers(1, min(10, h * w) + 1))
        score = rng.normal(0, 2, size=(h, w))
        _, _, cells = iqg.dynamic_point_select(score, n, 0.003)
        want = oracles.point_select_oracle(score, n, 0.003)
        if cells != want:
            return f"trial {t}: got {cells}, expected {want}"
    return ""


def check_coverage(maps: int = 100, seed: int = 3) -> str:
    rng = np.random.default_rng(seed)
    dyn, top, boxes = [], [], []
    for _ in range(maps):
        m, b = oracles.two_cluster_map(rng)
        dyn.append(iqg.dynamic_point_select(m, 10, 0.003)[0])
        top.append(iqg.topk_point_select(m, 10)[0])
        boxes.append(b)
    gap = iqg.cover_acc(dyn, boxes) - iqg.cover_acc(top, boxes)
    return "" if gap >= 0.05 else f"dynamic selector gains only {gap:.3f} CoverAcc"


def check_pipeline(seed: int = 4) -> str:
    cfg = RunConfig(seed=seed)
    params = build_params(cfg)
    for scene in synth_scenes(seed, 8, cfg.dataset):
        out, fw = predict(scene, params, cfg)
        if np.any(binarize(fw.seg.mask_logits, cfg.thr_m) & ~out.mask):
            return f"{scene.id}: merged mask drops global-mask pixels"
    if RunConfig.from_json(cfg.to_json()) != cfg:
        return "config does not round-trip"
    return ""


SUITES: dict[str, Callable[[], str]] = {
    "hungarian": check_hungarian,
    "deform-attn": check_deform_attn,
    "point-select": check_point_select,
    "coverage": check_coverage,
    "pipeline": check_pipeline,
}


def run_all(verbose: bool = False) -> bool:
    ok = True
    if verbose:
        print(f"kernel backend: {kernels.BACKEND}")
    for name, check in SUITES.items():
        start = time.perf_counter()
        problem = check()
        ok &= not problem
        if verbose:
            status = "ok" if not problem else f"FAIL: {problem}"
            print(f"{name:14s} {status} ({time.perf_counter() - start:.2f}s)")
    return ok
