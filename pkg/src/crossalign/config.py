"""Run configuration: one JSON document covering every pipeline stage.

Example::

    {
      "seed": 7,
      "num_scenes": 250,
      "scene": {"hardware_error": {"random_shift": 6.0}},
      "train": {"epochs": 20, "lambda": 1.0},
      "jitter": {"enabled": true, "copies": 2, "sigma_x": 0.05},
      "pipeline": {"use_ms": true, "holdout_fraction": 0.3},
      "eval": {"iou_thresh": 0.5, "pos_px": 3, "size_px": 3, "angle_deg": 3}
    }

The top-level ``seed`` (or the ``TSRA_SEED`` environment variable) seeds
every stage; sub-sections may not set their own seeds.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .alignment_head import AlignTrainConfig
from .jitter import JitterConfig
from .pipeline import PipelineConfig
from .rng import SplitMix64
from .simulator import SceneConfig

SEED_ENV = "TSRA_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    iou_thresh: float = 0.5
    pos_px: float = 3.0
    size_px: float = 3.0
    angle_deg: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.iou_thresh < 1.0:
            raise ValueError("iou_thresh must lie in (0, 1)")


@dataclass
class JitterSection:
    enabled: bool = True
    copies: int = 2
    sigma_x: float = 0.05
    sigma_y: float = 0.05
    sigma_w: float = 0.05
    sigma_h: float = 0.05
    sigma_theta: float = 0.05

    def __post_init__(self):
        if self.copies < 1:
            raise ValueError("jitter.copies must be >= 1")


@dataclass
class RunConfig:
    seed: int = 0
    num_scenes: int = 250
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: AlignTrainConfig = field(default_factory=AlignTrainConfig)
    jitter: JitterSection = field(default_factory=JitterSection)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def jitter_config(self) -> JitterConfig | None:
        j = self.jitter
        if not j.enabled:
            return None
        return JitterConfig(j.sigma_x, j.sigma_y, j.sigma_w, j.sigma_h, j.sigma_theta,
                            seed=SplitMix64(self.seed).spawn(2).seed)

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train["lambda"] = train.pop("lam")
        train.pop("seed")
        scene = self.scene.to_dict()
        scene.pop("seed")
        return {
            "seed": self.seed,
            "num_scenes": self.num_scenes,
            "scene": scene,
            "train": train,
            "jitter": asdict(self.jitter),
            "pipeline": asdict(self.pipeline),
            "eval": asdict(self.eval),
        }


def _section(cls, data, name, reserved=("seed",)):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    allowed = {f.name for f in fields(cls)} - set(reserved)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return data


def parse_config(data: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    try:
        seed = int(data.get("seed", 0)) if seed_override is None else int(seed_override)
        if seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        num_scenes = int(data.get("num_scenes", 250))
        if num_scenes < 0:
            raise ConfigError("num_scenes must be >= 0")

        scene_d = dict(_section(SceneConfig, data.get("scene"), "scene"))
        try:
            scene = SceneConfig.from_dict({**scene_d, "seed": seed})
        except TypeError as exc:
            raise ConfigError(f"scene: {exc}") from exc

        train_d = dict(data.get("train") or {})
        if "lambda" in train_d:
            train_d["lam"] = train_d.pop("lambda")
        _section(AlignTrainConfig, train_d, "train")
        train = AlignTrainConfig(**train_d, seed=seed)

        jitter = JitterSection(**_section(JitterSection, data.get("jitter"), "jitter", ()))
        pipeline = PipelineConfig(**_section(PipelineConfig, data.get("pipeline"), "pipeline", ()))
        ev = EvalConfig(**_section(EvalConfig, data.get("eval"), "eval", ()))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(seed, num_scenes, scene, train, jitter, pipeline, ev)


def env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def load_config(path, seed_override: int | None = None) -> RunConfig:
    """Read and validate a config file; ``TSRA_SEED`` beats the file's seed."""
    if path is None:
        data = {}
    else:
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{p}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if seed_override is None:
        seed_override = env_seed()
    return parse_config(data, seed_override)


def write_config_echo(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
