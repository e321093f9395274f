"""Synthetic scenes and a deterministic stand-in for the vision-language encoder.

A scene holds non-overlapping rectangles and ellipses, each carrying a color and
a texture. An expression is a bag of attribute words (plus low-salience filler
words); an instance is referred to iff it carries every attribute word.

Geometry uses the align-corners frame: node ``(r, c)`` of an ``h x w`` grid sits
at normalized ``(c / (w - 1), r / (h - 1))``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from gvground.errors import GenerationError, InvalidArgument
from gvground.numerics import Grid, ParamStore, TextSequence

FILLERS = ("find", "the", "all", "object", "please", "that", "is")
SHAPES = ("rectangle", "ellipse")
COLORS = ("red", "green", "blue", "yellow")
TEXTURES = ("striped", "dotted", "plain")
VOCAB = FILLERS + SHAPES + COLORS + TEXTURES
TOKEN_ID = {word: i for i, word in enumerate(VOCAB)}
N_FILLERS = len(FILLERS)
N_ATTRIBUTES = len(SHAPES) + len(COLORS) + len(TEXTURES)
_CATEGORIES = (SHAPES, COLORS, TEXTURES)


@dataclass(frozen=True)
class Instance:
    shape: str
    center: tuple[float, float]
    extent: tuple[float, float]
    attributes: tuple[int, ...]  # color and texture token ids

    def tokens(self) -> frozenset[int]:
        return frozenset((TOKEN_ID[self.shape],) + tuple(self.attributes))

    def box(self) -> tuple[float, float, float, float]:
        return (self.center[0], self.center[1], self.extent[0], self.extent[1])

    def covers(self, x, y):
        """Boolean coverage of normalized points (arrays broadcast)."""
        dx = (np.asarray(x) - self.center[0]) / (self.extent[0] / 2)
        dy = (np.asarray(y) - self.center[1]) / (self.extent[1] / 2)
        if self.shape == "rectangle":
            return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
        return dx * dx + dy * dy <= 1.0


@dataclass(frozen=True)
class Scene:
    height: int
    width: int
    instances: tuple[Instance, ...]
    expression: tuple[int, ...]
    non_target: bool
    id: str = ""

    def matches(self, inst: Instance) -> bool:
        wanted = {t for t in self.expression if t >= N_FILLERS}
        return bool(wanted) and wanted <= inst.tokens()

    def targets(self) -> list[Instance]:
        return [inst for inst in self.instances if self.matches(inst)]

    def words(self) -> list[str]:
        return [VOCAB[t] for t in self.expression]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "id": self.id,
            "height": self.height,
            "width": self.width,
            "non_target": self.non_target,
            "expression": list(self.expression),
            "expression_words": self.words(),
            "instances": [
                {
                    "shape": inst.shape,
                    "center": list(inst.center),
                    "extent": list(inst.extent),
                    "attributes": list(inst.attributes),
                    "words": [VOCAB[t] for t in inst.attributes],
                }
                for inst in self.instances
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            instances = tuple(
                Instance(
                    shape=str(i["shape"]),
                    center=(float(i["center"][0]), float(i["center"][1])),
                    extent=(float(i["extent"][0]), float(i["extent"][1])),
                    attributes=tuple(int(a) for a in i["attributes"]),
                )
                for i in d["instances"]
            )
            scene = cls(
                height=int(d["height"]),
                width=int(d["width"]),
                instances=instances,
                expression=tuple(int(t) for t in d["expression"]),
                non_target=bool(d["non_target"]),
                id=str(d.get("id", "")),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InvalidArgument(f"malformed scene record: {exc}") from exc
        scene.validate()
        return scene

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"scene is not valid JSON: {exc}") from exc

    def validate(self) -> None:
        if self.height < 2 or self.width < 2:
            raise InvalidArgument(f"grid {self.height}x{self.width} too small")
        for inst in self.instances:
            if inst.shape not in SHAPES:
                raise InvalidArgument(f"unknown shape {inst.shape!r}")
            cx, cy = inst.center
            w, h = inst.extent
            if not (0 < w < 1 and 0 < h < 1):
                raise InvalidArgument(f"extent {inst.extent} outside (0, 1)")
            if cx - w / 2 < -1e-12 or cx + w / 2 > 1 + 1e-12 or cy - h / 2 < -1e-12 \
                    or cy + h / 2 > 1 + 1e-12:
                raise InvalidArgument(f"instance box {inst.box()} leaves the unit square")
        for t in self.expression:
            if not 0 <= t < len(VOCAB):
                raise InvalidArgument(f"unknown token id {t}")
        if self.non_target != (len(self.targets()) == 0):
            raise InvalidArgument("non_target flag disagrees with the expression")


@dataclass(frozen=True)
class GeneratorConfig:
    height: int = 8
    width: int = 8
    instance_count: tuple[int, int] = (1, 3)
    target_count: tuple[int, int] = (1, 3)
    non_target_rate: float = 0.25
    extent: tuple[float, float] = (0.25, 0.45)
    attribute_words: tuple[int, int] = (1, 2)
    filler_words: tuple[int, int] = (0, 3)
    max_retries: int = 200

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        kwargs = {}
        for key, value in d.items():
            if key not in cls.__dataclass_fields__:
                raise InvalidArgument(f"unknown generator option {key!r}")
            if isinstance(value, list):
                value = tuple(value)
            if key == "instance_count" and isinstance(value, int):
                value = (value, value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def check(self) -> None:
        lo, hi = self.instance_count
        if lo < 0 or hi < lo:
            raise InvalidArgument(f"bad instance_count {self.instance_count}")
        if self.target_count[0] < 1 or self.target_count[1] < self.target_count[0]:
            raise InvalidArgument(f"bad target_count {self.target_count}")
        if not 0.0 <= self.non_target_rate <= 1.0:
            raise InvalidArgument(f"non_target_rate {self.non_target_rate} outside [0, 1]")
        if not 0.0 < self.extent[0] <= self.extent[1] < 1.0:
            raise InvalidArgument(f"extent range {self.extent} must lie in (0, 1)")
        if not 1 <= self.attribute_words[0] <= self.attribute_words[1] <= len(_CATEGORIES):
            raise InvalidArgument(f"bad attribute_words {self.attribute_words}")


def _overlaps(a, b) -> bool:
    return (abs(a[0] - b[0]) * 2 < a[2] + b[2]) and (abs(a[1] - b[1]) * 2 < a[3] + b[3])


def _place_boxes(rng, n, cfg):
    for _layout in range(cfg.max_retries):
        boxes = []
        for _ in range(n):
            for _attempt in range(20):
                w, h = rng.uniform(cfg.extent[0], cfg.extent[1], size=2)
                cx = rng.uniform(w / 2, 1 - w / 2)
                cy = rng.uniform(h / 2, 1 - h / 2)
                box = (float(cx), float(cy), float(w), float(h))
                if not any(_overlaps(box, other) for other in boxes):
                    boxes.append(box)
                    break
            else:
                break
        if len(boxes) == n:
            return boxes
    return None


def _random_tokens(rng) -> tuple[str, tuple[int, int]]:
    shape = SHAPES[rng.integers(len(SHAPES))]
    color = TOKEN_ID[COLORS[rng.integers(len(COLORS))]]
    texture = TOKEN_ID[TEXTURES[rng.integers(len(TEXTURES))]]
    return shape, (color, texture)


def generate_scene(seed: int, cfg: GeneratorConfig | None = None, scene_id: str = "") -> Scene:
    """Draw one scene; identical for identical ``(seed, cfg)``."""
    cfg = cfg or GeneratorConfig()
    cfg.check()
    rng = np.random.default_rng(seed)
    n = int(rng.integers(cfg.instance_count[0], cfg.instance_count[1] + 1))
    non_target = n == 0 or bool(rng.random() < cfg.non_target_rate)

    boxes = _place_boxes(rng, n, cfg)
    if boxes is None:
        raise GenerationError(
            f"seed {seed}: could not place {n} non-overlapping instances "
            f"after {cfg.max_retries} layout retries")

    n_attr = int(rng.integers(cfg.attribute_words[0], cfg.attribute_words[1] + 1))
    categories = sorted(rng.choice(len(_CATEGORIES), size=n_attr, replace=False))
    wanted = [TOKEN_ID[_CATEGORIES[c][rng.integers(len(_CATEGORIES[c]))]] for c in categories]
    wanted_set = set(wanted)

    n_targets = 0
    if not non_target:
        n_targets = int(rng.integers(cfg.target_count[0], cfg.target_count[1] + 1))
        n_targets = min(n_targets, n)
    target_ids = set(rng.choice(n, size=n_targets, replace=False).tolist()) if n_targets else set()

    instances = []
    for i, box in enumerate(boxes):
        for _attempt in range(cfg.max_retries):
            shape, attrs = _random_tokens(rng)
            if i in target_ids:
                for t in wanted:
                    if VOCAB[t] in SHAPES:
                        shape = VOCAB[t]
                    elif VOCAB[t] in COLORS:
                        attrs = (t, attrs[1])
                    else:
                        attrs = (attrs[0], t)
                break
            if not wanted_set <= ({TOKEN_ID[shape]} | set(attrs)):
                break
        else:
            raise GenerationError(f"seed {seed}: could not draw a distractor")
        instances.append(Instance(shape, (box[0], box[1]), (box[2], box[3]), attrs))

    n_fill = int(rng.integers(cfg.filler_words[0], cfg.filler_words[1] + 1))
    fillers = [int(t) for t in rng.integers(0, N_FILLERS, size=n_fill)]
    order = rng.permutation(len(wanted))
    expression = tuple(fillers + [wanted[j] for j in order])
    return Scene(cfg.height, cfg.width, tuple(instances), expression, non_target, scene_id)


def register_params(params: ParamStore, channels: int) -> None:
    params.add("encoder.attr_embed", (N_ATTRIBUTES, channels), fan_in=1)
    params.add("encoder.filler_embed", (N_FILLERS, channels), fan_in=1, scale=0.1)
    params.add("encoder.background", (channels,), fan_in=1, scale=0.3)


def token_embedding(params: ParamStore, token: int) -> np.ndarray:
    if not 0 <= token < len(VOCAB):
        raise InvalidArgument(f"unknown token id {token}")
    if token < N_FILLERS:
        return params["encoder.filler_embed"][token]
    return params["encoder.attr_embed"][token - N_FILLERS]


def positional_encoding(height: int, width: int, channels: int) -> np.ndarray:
    """2-D sinusoidal encoding: half the channels encode rows, half columns."""
    half = channels // 2
    n_freq = max(half // 2, 1)
    freqs = 1.0 / (100.0 ** (np.arange(n_freq) / n_freq))
    pe = np.zeros((height, width, channels))
    rows = np.arange(height)[:, None] * freqs[None, :]
    cols = np.arange(width)[:, None] * freqs[None, :]
    row_code = np.concatenate([np.sin(rows), np.cos(rows)], axis=1)[:, :half]
    col_code = np.concatenate([np.sin(cols), np.cos(cols)], axis=1)[:, : channels - half]
    pe[:, :, :half] = row_code[:, None, :]
    pe[:, :, half:] = col_code[None, :, :]
    return pe


def node_coordinates(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(width) / max(width - 1, 1)
    ys = np.arange(height) / max(height - 1, 1)
    return np.meshgrid(xs, ys)


def encode(scene: Scene, params: ParamStore, n_tokens: int = 8,
           pe_scale: float = 0.5) -> tuple[Grid, TextSequence]:
    """Image features and text features for ``scene``.

    Cells covered by an instance hold the sum of its attribute embeddings; other
    cells hold the background embedding. Both get a sinusoidal position code.
    """
    channels = params["encoder.background"].shape[0]
    if len(scene.expression) > n_tokens:
        raise InvalidArgument(
            f"expression has {len(scene.expression)} tokens, limit is {n_tokens}")
    text = np.zeros((n_tokens, channels))
    mask = np.zeros(n_tokens, dtype=bool)
    for i, tok in enumerate(scene.expression):
        text[i] = token_embedding(params, tok)
        mask[i] = True

    h, w = scene.height, scene.width
    feats = np.broadcast_to(params["encoder.background"], (h, w, channels)).copy()
    xs, ys = node_coordinates(h, w)
    for inst in scene.instances:
        cover = inst.covers(xs, ys)
        content = sum(token_embedding(params, t) for t in sorted(inst.tokens()))
        feats[cover] = content
    feats += pe_scale * positional_encoding(h, w, channels)
    return Grid(feats), TextSequence(text, mask)


@dataclass(frozen=True)
class SceneGroundTruth:
    boxes: np.ndarray  # (n, 4) cxcywh
    masks: np.ndarray  # (n, H', W') bool
    global_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 3 or masks.shape[0] != boxes.shape[0]:
            raise InvalidArgument(
                f"{boxes.shape[0]} boxes but masks of shape {masks.shape}")
        gm = masks.any(axis=0) if self.global_mask is None else np.asarray(self.global_mask, bool)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "global_mask", gm)

    @property
    def count(self) -> int:
        return self.boxes.shape[0]

    @property
    def non_target(self) -> bool:
        return self.count == 0


def rasterize_ground_truth(scene: Scene, height: int, width: int) -> SceneGroundTruth:
    if height < 1 or width < 1:
        raise InvalidArgument(f"mask size {height}x{width} must be positive")
    xs, ys = node_coordinates(height, width)
    targets = scene.targets()
    masks = np.zeros((len(targets), height, width), dtype=bool)
    for i, inst in enumerate(targets):
        masks[i] = inst.covers(xs, ys)
    boxes = np.array([inst.box() for inst in targets], dtype=np.float64).reshape(-1, 4)
    global_mask = masks.any(axis=0) if len(targets) else np.zeros((height, width), dtype=bool)
    return SceneGroundTruth(boxes, masks, global_mask)


def scene_batch(seeds: Sequence[int], cfg: GeneratorConfig | None = None) -> list[Scene]:
    return [generate_scene(s, cfg, scene_id=f"scene_{i:05d}") for i, s in enumerate(seeds)]


def derive_seed(seed: int, index: int) -> int:
    """Independent per-scene seed for scene ``index`` of a dataset drawn with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def synth_scenes(seed: int, count: int, cfg: GeneratorConfig | None = None) -> list[Scene]:
    return [generate_scene(derive_seed(seed, i), cfg, scene_id=f"scene_{i:05d}")
            for i in range(count)]
