import numpy as np
import pytest

from gvground.config import RunConfig
from gvground.encoder import synth_scenes
from gvground.errors import InvalidArgument
from gvground.pipeline import (FIT_SUBSET, FitProblem, build_params, fit, forward, ground_truth,
                               predict, scene_loss)
from gvground.postprocess import binarize


@pytest.fixture(scope="module")
def setup():
    cfg = RunConfig(seed=2)
    return cfg, build_params(cfg), synth_scenes(2, 4, cfg.dataset)


def test_forward_shapes(setup):
    cfg, params, scenes = setup
    fw = forward(scenes[0], params, cfg)
    assert fw.decoded.boxes.shape == (cfg.n_queries, 4)
    assert fw.masks.logits.shape == (cfg.n_queries, 16, 16)
    assert fw.seg.mask_logits.shape == (16, 16)
    assert 0.0 < fw.exist_prob < 1.0


def test_predict_invariants(setup):
    cfg, params, scenes = setup
    for scene in scenes:
        out, fw = predict(scene, params, cfg)
        assert out.id == scene.id
        assert not np.any(binarize(fw.seg.mask_logits, cfg.thr_m) & ~out.mask)
        assert all(s > cfg.thr_q for s in out.scores)


def test_predict_deterministic(setup):
    cfg, params, scenes = setup
    a, _ = predict(scenes[1], params, cfg)
    b, _ = predict(scenes[1], build_params(cfg), cfg)
    assert a.indices == b.indices
    np.testing.assert_array_equal(a.mask, b.mask)


def _reference_total(problem_scenes, params, cfg):
    reports = [scene_loss(forward(s, params, cfg), ground_truth(s, cfg), cfg)[0]
               for s in problem_scenes]
    return np.mean([r.total for r in reports])


def test_fit_problem_matches_full_forward(setup, rng):
    cfg, params, scenes = setup
    problem = FitProblem(scenes, params, cfg)
    assert problem(params) == pytest.approx(_reference_total(scenes, params, cfg), abs=1e-12)
    # memoized terms must follow every changed tensor
    for name in FIT_SUBSET:
        moved = params.updated({name: params[name] + 0.05 * rng.normal(size=params.shape(name))})
        assert problem(moved) == pytest.approx(_reference_total(scenes, moved, cfg), abs=1e-12)
        assert problem(params) == pytest.approx(_reference_total(scenes, params, cfg), abs=1e-12)


def test_fit_short_run(setup):
    cfg, params, scenes = setup
    cfg = cfg.override(fit_steps=3)
    steps = []
    final, history = fit(scenes[:2], params, cfg, on_step=lambda i, r: steps.append(i))
    assert steps == [0, 1, 2, 3] and len(history) == 4
    assert history[-1].total < history[0].total
    untouched = [n for n in params if n not in FIT_SUBSET]
    assert all(final[n] is params[n] or np.array_equal(final[n], params[n]) for n in untouched)
    with pytest.raises(InvalidArgument):
        fit(scenes, params, cfg.override(fit_steps=0))
