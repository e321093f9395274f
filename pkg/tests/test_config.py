import json

import pytest

from gvground.config import RunConfig
from gvground.encoder import GeneratorConfig
from gvground.errors import ConfigurationError


def test_defaults():
    c = RunConfig()
    assert (c.n_queries, c.w_dist) == (10, 0.003)
    assert (c.lambda_cls, c.lambda_box, c.lambda_giou, c.lambda_point) == (1.0, 5.0, 2.0, 2.0)
    assert (c.lambda_detr, c.lambda_seg, c.lambda_instance, c.lambda_exist, c.lambda_neg) == (
        0.1, 1.0, 1.0, 0.2, 0.2)
    assert (c.thr_q, c.thr_m, c.nms) == (0.9, 0.5, False)
    assert c.mask_size == (16, 16)


def test_round_trip(tmp_path):
    c = RunConfig(seed=7, n_queries=6, nms=True, dataset=GeneratorConfig(instance_count=(2, 3), non_target_rate=0.5))
    assert RunConfig.from_json(c.to_json()) == c
    path = tmp_path / "c.json"
    path.write_text(c.to_json())
    again = RunConfig.load(path)
    assert again == c and again.to_json() == c.to_json()


def test_partial_file_and_override():
    c = RunConfig.from_json(json.dumps({"thr_q": 0.5}))
    assert c.thr_q == 0.5 and c.n_queries == 10
    assert c.override(seed=4, thr_q=None).seed == 4
    assert c.override(seed=None) is c


@pytest.mark.parametrize("bad", [
    {"n_queries": 0}, {"n_queries": 65}, {"channels": 10}, {"thr_q": 1.5}, {"lambda_box": -1},
    {"nms_iou": 0.0}, {"levels": 5}, {"bogus": 1}, {"grid_height": 6},
])
def test_invalid(bad):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict(bad)


def test_invalid_json():
    with pytest.raises(ConfigurationError):
        RunConfig.from_json("{")
