import numpy as np
import pytest

from gvground.encoder import (TOKEN_ID, GeneratorConfig, Instance, Scene, encode,
                              generate_scene, node_coordinates, rasterize_ground_truth,
                              register_params, synth_scenes)
from gvground.errors import GenerationError, InvalidArgument
from gvground.numerics import ParamStore


@pytest.fixture
def params():
    p = ParamStore(0)
    register_params(p, 16)
    return p


def test_zero_instances_is_non_target():
    scene = generate_scene(1, GeneratorConfig(instance_count=(0, 0)))
    assert scene.non_target and scene.instances == () and scene.targets() == []
    assert any(t >= 7 for t in scene.expression)


def test_deterministic():
    assert generate_scene(42) == generate_scene(42)
    assert generate_scene(42).to_json() == generate_scene(42).to_json()
    assert synth_scenes(3, 5) == synth_scenes(3, 5)
    assert generate_scene(42) != generate_scene(43)


def test_three_targets_global_or():
    cfg = GeneratorConfig(instance_count=(3, 3), target_count=(3, 3), non_target_rate=0.0)
    for seed in range(20):
        scene = generate_scene(seed, cfg)
        gt = rasterize_ground_truth(scene, 16, 16)
        assert gt.count == 3
        np.testing.assert_array_equal(gt.global_mask, gt.masks[0] | gt.masks[1] | gt.masks[2])


def test_non_target_rate_within_tolerance():
    scenes = synth_scenes(0, 1000)
    rate = np.mean([s.non_target for s in scenes])
    assert abs(rate - GeneratorConfig().non_target_rate) <= 0.05


def test_generated_scenes_valid():
    for scene in synth_scenes(5, 300):
        scene.validate()
        assert scene.non_target == (len(scene.targets()) == 0)
        for inst in scene.instances:
            cx, cy, w, h = inst.box()
            assert 0 <= cx - w / 2 and cx + w / 2 <= 1 and 0 <= cy - h / 2 and cy + h / 2 <= 1


def test_infeasible_generator_raises():
    cfg = GeneratorConfig(instance_count=(12, 12), extent=(0.4, 0.45), max_retries=5)
    with pytest.raises(GenerationError):
        generate_scene(0, cfg)


@pytest.mark.parametrize("bad", [dict(extent=(0.0, 0.5)), dict(instance_count=(3, 1)),
                                 dict(non_target_rate=1.5), dict(attribute_words=(0, 1))])
def test_bad_generator_config(bad):
    with pytest.raises(InvalidArgument):
        generate_scene(0, GeneratorConfig(**bad))


def test_json_roundtrip_and_errors():
    scene = generate_scene(9, scene_id="s9")
    assert Scene.from_json(scene.to_json()) == scene
    with pytest.raises(InvalidArgument):
        Scene.from_json("{not json")
    d = scene.to_dict()
    d["expression"] = [999]
    with pytest.raises(InvalidArgument):
        Scene.from_dict(d)
    d = scene.to_dict()
    d["non_target"] = not d["non_target"]
    with pytest.raises(InvalidArgument):
        Scene.from_dict(d)


def _scene(instances, expression, h=8, w=8):
    scene = Scene(h, w, tuple(instances), tuple(expression), False)
    return Scene(h, w, tuple(instances), tuple(expression), not scene.targets())


def test_encode_shapes_and_mask(params):
    scene = _scene([], [])
    image, text = encode(scene, params)
    assert image.values.shape == (8, 8, 16)
    assert text.features.shape == (8, 16) and not text.mask.any()
    assert not text.features.any()


def test_encode_token_embeddings(params):
    red = TOKEN_ID["red"]
    scene = _scene([Instance("rectangle", (0.5, 0.5), (0.4, 0.4), (red, TOKEN_ID["plain"]))],
                   [TOKEN_ID["the"], red])
    _, text = encode(scene, params)
    np.testing.assert_array_equal(text.mask, [1, 1, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(text.features[1], params["encoder.attr_embed"][red - 7])
    np.testing.assert_array_equal(text.features[0], params["encoder.filler_embed"][1])


def test_encode_attribute_change_is_local(params):
    a = Instance("rectangle", (0.3, 0.3), (0.3, 0.3), (TOKEN_ID["red"], TOKEN_ID["plain"]))
    b = Instance("ellipse", (0.75, 0.7), (0.4, 0.4), (TOKEN_ID["blue"], TOKEN_ID["dotted"]))
    b2 = Instance("ellipse", (0.75, 0.7), (0.4, 0.4), (TOKEN_ID["green"], TOKEN_ID["dotted"]))
    f1, _ = encode(_scene([a, b], [TOKEN_ID["red"]]), params)
    f2, _ = encode(_scene([a, b2], [TOKEN_ID["red"]]), params)
    changed = np.any(f1.values != f2.values, axis=2)
    xs, ys = node_coordinates(8, 8)
    np.testing.assert_array_equal(changed, b.covers(xs, ys))
    assert changed.any()
    f3, _ = encode(_scene([a, b], [TOKEN_ID["red"]]), params)
    assert np.array_equal(f1.values, f3.values)


def test_encode_rejects_unknown_token(params):
    scene = Scene(8, 8, (), (99,), True)
    with pytest.raises(InvalidArgument):
        encode(scene, params)
    with pytest.raises(InvalidArgument):
        encode(_scene([], [7] * 9), params)


def test_rasterize_rectangle_oracle():
    inst = Instance("rectangle", (0.4, 0.5), (0.3, 0.5), (TOKEN_ID["red"], TOKEN_ID["plain"]))
    scene = _scene([inst], [TOKEN_ID["red"]], 4, 4)
    gt = rasterize_ground_truth(scene, 11, 11)
    expected = np.zeros((11, 11), dtype=bool)
    # nodes at k/10: x in [0.25, 0.55] -> columns 3..5, y in [0.25, 0.75] -> rows 3..7
    expected[3:8, 3:6] = True
    np.testing.assert_array_equal(gt.masks[0], expected)
    assert gt.boxes[0].tolist() == [0.4, 0.5, 0.3, 0.5]


def test_rasterize_non_target_and_disjoint():
    gt = rasterize_ground_truth(_scene([], [TOKEN_ID["red"]]), 16, 16)
    assert gt.count == 0 and gt.non_target and not gt.global_mask.any()
    attrs = (TOKEN_ID["red"], TOKEN_ID["plain"])
    a = Instance("rectangle", (0.2, 0.2), (0.3, 0.3), attrs)
    b = Instance("ellipse", (0.7, 0.7), (0.4, 0.4), attrs)
    gt = rasterize_ground_truth(_scene([a, b], [TOKEN_ID["red"]]), 16, 16)
    assert gt.global_mask.sum() == gt.masks[0].sum() + gt.masks[1].sum()
    with pytest.raises(InvalidArgument):
        rasterize_ground_truth(_scene([a], [TOKEN_ID["red"]]), 0, 4)


def test_masks_inside_dilated_boxes():
    for scene in synth_scenes(1, 200):
        gt = rasterize_ground_truth(scene, 16, 16)
        xs, ys = node_coordinates(16, 16)
        cell = 1.0 / 15
        for (cx, cy, w, h), m in zip(gt.boxes, gt.masks):
            inside = (np.abs(xs - cx) <= w / 2 + cell) & (np.abs(ys - cy) <= h / 2 + cell)
            assert not np.any(m & ~inside)
