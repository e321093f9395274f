"""Run configuration: one JSON file, overridable from the command line."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from gvground.encoder import GeneratorConfig
from gvground.errors import ConfigurationError, InvalidArgument
from gvground.losses import LossWeights
from gvground.matcher import CostWeights
from gvground.postprocess import PostprocessConfig


@dataclass(frozen=True)
class RunConfig:
    n_queries: int = 10
    w_dist: float = 0.003
    heads: int = 4
    levels: int = 3
    points: int = 4
    depth: int = 3
    channels: int = 16
    text_tokens: int = 8
    lambda_cls: float = 1.0
    lambda_box: float = 5.0
    lambda_giou: float = 2.0
    lambda_point: float = 2.0
    lambda_detr: float = 0.1
    lambda_seg: float = 1.0
    lambda_instance: float = 1.0
    lambda_exist: float = 0.2
    lambda_neg: float = 0.2
    thr_q: float = 0.9
    thr_m: float = 0.5
    nms: bool = False
    nms_iou: float = 0.7
    seed: int = 0
    grid_height: int = 8
    grid_width: int = 8
    dataset: GeneratorConfig = field(default_factory=GeneratorConfig)
    fit_steps: int = 50
    fit_lr: float = 6.0
    fit_step_size: float = 1e-5
    fit_scenes: int = 4

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            object.__setattr__(self, "dataset", GeneratorConfig.from_dict(self.dataset))
        self.check()

    def check(self) -> None:
        if self.n_queries < 1:
            raise ConfigurationError(f"n_queries must be >= 1, got {self.n_queries}")
        if self.n_queries > self.grid_height * self.grid_width:
            raise ConfigurationError(
                f"{self.n_queries} queries exceed the {self.grid_height}x{self.grid_width} grid")
        if self.w_dist < 0:
            raise ConfigurationError("w_dist must be non-negative")
        for name in ("heads", "levels", "points", "depth", "channels", "text_tokens"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.channels % self.heads:
            raise ConfigurationError(
                f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.grid_height < 2 ** (self.levels - 1) or self.grid_width < 2 ** (self.levels - 1):
            raise ConfigurationError(f"grid too small for {self.levels} pyramid levels")
        for f in fields(self):
            if f.name.startswith("lambda_") and getattr(self, f.name) < 0:
                raise ConfigurationError(f"{f.name} must be non-negative")
        if not 0.0 <= self.thr_q <= 1.0 or not 0.0 <= self.thr_m <= 1.0:
            raise ConfigurationError("thresholds must lie in [0, 1]")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ConfigurationError("nms_iou must lie in (0, 1]")
        if (self.dataset.height, self.dataset.width) != (self.grid_height, self.grid_width):
            raise ConfigurationError("dataset grid size must equal grid_height x grid_width")
        try:
            self.dataset.check()
        except InvalidArgument as exc:
            raise ConfigurationError(str(exc)) from exc

    @property
    def mask_size(self) -> tuple[int, int]:
        return 2 * self.grid_height, 2 * self.grid_width

    @property
    def cost_weights(self) -> CostWeights:
        return CostWeights(self.lambda_cls, self.lambda_box, self.lambda_giou, self.lambda_point)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_detr, self.lambda_seg, self.lambda_instance,
                           self.lambda_exist)

    @property
    def postprocess(self) -> PostprocessConfig:
        return PostprocessConfig(self.thr_q, self.thr_m, self.nms, self.nms_iou)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = self.dataset.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "dataset" in d:
            try:
                d["dataset"] = GeneratorConfig.from_dict(d["dataset"])
            except (InvalidArgument, TypeError) as exc:
                raise ConfigurationError(f"dataset: {exc}") from exc
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def override(self, **values) -> "RunConfig":
        values = {k: v for k, v in values.items() if v is not None}
        return replace(self, **values) if values else self
