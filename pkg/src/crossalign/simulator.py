"""Synthetic paired RGB/IR scenes with known misalignment.

Every object has a true pose.  The IR image shows it at that pose; the RGB
image shows it after the hardware transform (global shift and scale about the
image center, plus a displacement along the heading for moving objects).
Annotations start from each modality's rendered pose and may receive
annotation noise.  Both rendered poses are kept alongside the annotations so
alignment results can be scored against the truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .deviation import Deviation, encode
from .geometry import RotatedBox, corners, points_in_box
from .modality_selection import GrayImage
from .pnm import PnmError, read_pnm, write_pgm
from .pooling import FeatureMap
from .rng import SplitMix64

DATASET_FORMAT = "crossalign-dataset/1"
DEFAULT_DARK_THRESHOLD = 10.0
FEATURE_CHANNELS = 4

# sub-stream keys for per-scene generators
_POSES, _HARDWARE, _ANNOT, _RENDER, _FEATURES = range(5)


class DatasetError(ValueError):
    pass


@dataclass
class HardwareError:
    global_shift: tuple[float, float] = (0.0, 0.0)
    random_shift: float = 3.0     # max magnitude of an extra per-scene shift, px
    global_scale: float = 1.0
    motion_skew: float = 6.0      # max displacement along heading, px
    moving_prob: float = 0.3


@dataclass
class AnnotationError:
    prob: float = 0.3
    pos_sigma: float = 2.0
    size_sigma: float = 2.0
    angle_sigma: float = 0.05
    modality: str = "rgb"         # "rgb", "ir" or "either"
    exact: bool = False           # exactly round(prob * n) objects per scene, fixed magnitudes


@dataclass
class Illumination:
    dark_prob: float = 0.0
    dark_gain: float = 0.3


@dataclass
class SceneConfig:
    image_size: tuple[int, int] = (256, 256)
    objects_per_image: tuple[int, int] = (6, 10)
    num_classes: int = 5
    object_length: tuple[float, float] = (24.0, 44.0)
    object_aspect: tuple[float, float] = (0.4, 0.6)
    hardware_error: HardwareError = field(default_factory=HardwareError)
    annotation_error: AnnotationError = field(default_factory=AnnotationError)
    illumination: Illumination = field(default_factory=Illumination)
    missing_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.hardware_error, dict):
            self.hardware_error = HardwareError(**self.hardware_error)
        if isinstance(self.annotation_error, dict):
            self.annotation_error = AnnotationError(**self.annotation_error)
        if isinstance(self.illumination, dict):
            self.illumination = Illumination(**self.illumination)
        self.image_size = tuple(int(v) for v in self.image_size)
        self.objects_per_image = tuple(int(v) for v in self.objects_per_image)
        self.object_length = tuple(float(v) for v in self.object_length)
        self.object_aspect = tuple(float(v) for v in self.object_aspect)
        self.hardware_error.global_shift = tuple(float(v) for v in self.hardware_error.global_shift)
        self.validate()

    def validate(self) -> None:
        probs = {
            "annotation_error.prob": self.annotation_error.prob,
            "illumination.dark_prob": self.illumination.dark_prob,
            "hardware_error.moving_prob": self.hardware_error.moving_prob,
            "missing_prob": self.missing_prob,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        ae = self.annotation_error
        for name in ("pos_sigma", "size_sigma", "angle_sigma"):
            if getattr(ae, name) < 0:
                raise ValueError(f"annotation_error.{name} must be >= 0")
        if ae.modality not in ("rgb", "ir", "either"):
            raise ValueError(f"annotation_error.modality must be rgb, ir or either, got {ae.modality!r}")
        hw = self.hardware_error
        if hw.random_shift < 0 or hw.motion_skew < 0 or hw.global_scale <= 0:
            raise ValueError("hardware_error magnitudes must be >= 0 and global_scale > 0")
        lo, hi = self.objects_per_image
        if lo < 0 or hi < lo:
            raise ValueError("objects_per_image must be a (min, max) range")
        if min(self.image_size) < 16:
            raise ValueError("image_size too small")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**_checked_keys(cls, d))


def _checked_keys(cls, d: dict) -> dict:
    names = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    out = dict(d)
    for key in ("hardware_error", "annotation_error", "illumination"):
        if key in out and isinstance(out[key], dict):
            sub = {"hardware_error": HardwareError, "annotation_error": AnnotationError,
                   "illumination": Illumination}[key]
            bad = set(out[key]) - {f.name for f in fields(sub)}
            if bad:
                raise ValueError(f"unknown {key} keys: {sorted(bad)}")
    return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if is_dataclass(obj):
        return _plain(asdict(obj))
    return obj


@dataclass
class PairedAnnotation:
    """One object's annotations in both modalities.

    ``rgb_pose``/``ir_pose`` are where the object is actually rendered in each
    modality (simulator ground truth); ``rgb_box``/``ir_box`` are the, possibly
    noisy or missing, annotations.
    """

    object_id: int
    class_id: int
    rgb_box: RotatedBox | None
    ir_box: RotatedBox | None
    true_deviation: Deviation | None = None
    rgb_pose: RotatedBox | None = None
    ir_pose: RotatedBox | None = None
    moving: bool = False

    def __post_init__(self):
        if self.rgb_box is None and self.ir_box is None:
            raise ValueError("annotation needs at least one box")

    def to_dict(self) -> dict:
        def box(b):
            return None if b is None else b.to_dict()

        return {
            "object_id": self.object_id,
            "class_id": self.class_id,
            "rgb_box": box(self.rgb_box),
            "ir_box": box(self.ir_box),
            "true_deviation": None if self.true_deviation is None else self.true_deviation.to_dict(),
            "rgb_pose": box(self.rgb_pose),
            "ir_pose": box(self.ir_pose),
            "moving": self.moving,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairedAnnotation":
        def box(v):
            return None if v is None else RotatedBox.from_dict(v)

        dev = d.get("true_deviation")
        return cls(
            object_id=int(d["object_id"]),
            class_id=int(d["class_id"]),
            rgb_box=box(d.get("rgb_box")),
            ir_box=box(d.get("ir_box")),
            true_deviation=None if dev is None else Deviation.from_dict(dev),
            rgb_pose=box(d.get("rgb_pose")),
            ir_pose=box(d.get("ir_pose")),
            moving=bool(d.get("moving", False)),
        )


@dataclass
class Scene:
    scene_id: int
    seed: int
    rgb_img: GrayImage
    ir_img: GrayImage
    annotations: list[PairedAnnotation]


# -- generation ---------------------------------------------------------------


def _place_objects(cfg: SceneConfig, rng: SplitMix64) -> list[tuple[RotatedBox, int]]:
    H, W = cfg.image_size
    n = rng.integers(cfg.objects_per_image[0], cfg.objects_per_image[1] + 1)
    placed: list[tuple[RotatedBox, int]] = []
    margin = 0.5 * cfg.object_length[1] + 8.0
    for _ in range(n):
        for _attempt in range(200):
            length = rng.uniform(*cfg.object_length)
            width = length * rng.uniform(*cfg.object_aspect)
            theta = rng.uniform(0.0, 2.0 * math.pi)
            cx = rng.uniform(margin, W - margin) if W > 2 * margin else W / 2
            cy = rng.uniform(margin, H - margin) if H > 2 * margin else H / 2
            cls = rng.integers(0, cfg.num_classes)
            box = RotatedBox(cx, cy, length, width, theta)
            if all(math.hypot(cx - b.cx, cy - b.cy) > 0.5 * (length + b.w) + 8.0 for b, _ in placed):
                placed.append((box, cls))
                break
    return placed


def _hardware_transform(cfg: SceneConfig, rng: SplitMix64):
    hw = cfg.hardware_error
    H, W = cfg.image_size
    ang = rng.uniform(0.0, 2.0 * math.pi)
    mag = rng.uniform(0.0, hw.random_shift)
    dx = hw.global_shift[0] + mag * math.cos(ang)
    dy = hw.global_shift[1] + mag * math.sin(ang)
    ox, oy = 0.5 * W, 0.5 * H

    def apply(box: RotatedBox, skew: float) -> RotatedBox:
        # written as an offset from the original center so zero error is exact
        cx = box.cx + (hw.global_scale - 1.0) * (box.cx - ox) + dx + skew * math.cos(box.theta)
        cy = box.cy + (hw.global_scale - 1.0) * (box.cy - oy) + dy + skew * math.sin(box.theta)
        return RotatedBox(cx, cy, box.w * hw.global_scale, box.h * hw.global_scale, box.theta)

    return apply


def _noisy(box: RotatedBox, ae: AnnotationError, rng: SplitMix64) -> RotatedBox:
    if ae.exact:
        ang = rng.uniform(0.0, 2.0 * math.pi)
        sw, sh, st = (1.0 if rng.random() < 0.5 else -1.0 for _ in range(3))
        return RotatedBox(
            box.cx + ae.pos_sigma * math.cos(ang),
            box.cy + ae.pos_sigma * math.sin(ang),
            max(1.0, box.w + sw * ae.size_sigma),
            max(1.0, box.h + sh * ae.size_sigma),
            box.theta + st * ae.angle_sigma,
        )
    z = rng.normal(size=5)
    return RotatedBox(
        box.cx + ae.pos_sigma * z[0],
        box.cy + ae.pos_sigma * z[1],
        max(1.0, box.w + ae.size_sigma * z[2]),
        max(1.0, box.h + ae.size_sigma * z[3]),
        box.theta + ae.angle_sigma * z[4],
    )


def _render(size, poses: list[RotatedBox], levels: list[float], rng: SplitMix64, gain: float) -> GrayImage:
    H, W = size
    noise = rng.normal(size=H * W).reshape(H, W)
    # cheap texture: 3x3 box blur of white noise
    pad = np.pad(noise, 1, mode="wrap")
    tex = sum(pad[i:i + H, j:j + W] for i in range(3) for j in range(3)) / 3.0
    img = 40.0 + 8.0 * tex
    ys, xs = np.mgrid[0:H, 0:W]
    for pose, level in zip(poses, levels):
        pts = corners(pose)
        x0 = max(0, int(math.floor(pts[:, 0].min())))
        x1 = min(W, int(math.ceil(pts[:, 0].max())) + 1)
        y0 = max(0, int(math.floor(pts[:, 1].min())))
        y1 = min(H, int(math.ceil(pts[:, 1].max())) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        inside = points_in_box(pose, xs[y0:y1, x0:x1] + 0.5, ys[y0:y1, x0:x1] + 0.5)
        img[y0:y1, x0:x1][inside] = level + 6.0 * noise[y0:y1, x0:x1][inside]
    return GrayImage(np.clip(np.round(img * gain), 0, 255).astype(np.uint8))


def generate_scene(cfg: SceneConfig, rng: SplitMix64, scene_id: int = 0) -> Scene:
    """Sample one scene; the result depends only on ``rng``'s state and ``cfg``."""
    seed = int(rng.next_u64(1)[0])
    base = SplitMix64(seed)
    pose_rng = base.spawn(_POSES)
    hw_rng = base.spawn(_HARDWARE)
    ann_rng = base.spawn(_ANNOT)
    ren_rng = base.spawn(_RENDER)

    objects = _place_objects(cfg, pose_rng)
    transform = _hardware_transform(cfg, hw_rng)
    hw = cfg.hardware_error
    ae = cfg.annotation_error

    n = len(objects)
    if ae.exact:
        k = int(round(ae.prob * n))
        chosen = set(int(i) for i in ann_rng.permutation(n)[:k])
    annotations = []
    for i, (truth, cls) in enumerate(objects):
        moving = hw_rng.random() < hw.moving_prob
        skew = hw_rng.uniform(0.0, hw.motion_skew) if moving else 0.0
        ir_pose = truth
        rgb_pose = transform(truth, skew)
        rgb_box, ir_box = rgb_pose, ir_pose
        noisy = (i in chosen) if ae.exact else (ann_rng.random() < ae.prob)
        which = ae.modality
        if which == "either":
            which = "rgb" if ann_rng.random() < 0.5 else "ir"
        if noisy:
            if which == "rgb":
                rgb_box = _noisy(rgb_box, ae, ann_rng)
            else:
                ir_box = _noisy(ir_box, ae, ann_rng)
        if cfg.missing_prob > 0 and ann_rng.random() < cfg.missing_prob:
            if ann_rng.random() < 0.5:
                rgb_box = None
            else:
                ir_box = None
        dev = encode(ir_box, rgb_box) if rgb_box is not None and ir_box is not None else None
        annotations.append(PairedAnnotation(i, int(cls), rgb_box, ir_box, dev, rgb_pose, ir_pose, bool(moving)))

    levels = [float(ren_rng.uniform(170.0, 230.0)) for _ in annotations]
    gain = cfg.illumination.dark_gain if ren_rng.random() < cfg.illumination.dark_prob else 1.0
    ir_img = _render(cfg.image_size, [a.ir_pose for a in annotations], levels, ren_rng, 1.0)
    rgb_img = _render(cfg.image_size, [a.rgb_pose for a in annotations], levels, ren_rng, gain)
    return Scene(scene_id, seed, rgb_img, ir_img, annotations)


def generate_dataset(cfg: SceneConfig, n_scenes: int) -> list[Scene]:
    rng = SplitMix64(cfg.seed)
    return [generate_scene(cfg, rng, scene_id=i) for i in range(n_scenes)]


# -- features -----------------------------------------------------------------


def _blob_features(poses: list[RotatedBox], shape: tuple[int, int]) -> np.ndarray:
    H, W = shape
    out = np.zeros((FEATURE_CHANNELS, H, W))
    for pose in poses:
        reach = 1.6 * max(pose.w, pose.h)
        x0, x1 = max(0, int(pose.cx - reach)), min(W, int(pose.cx + reach) + 1)
        y0, y1 = max(0, int(pose.cy - reach)), min(H, int(pose.cy + reach) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        dx, dy = xs + 0.5 - pose.cx, ys + 0.5 - pose.cy
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        a = (dx * c + dy * s) / (0.5 * pose.w)
        b = (-dx * s + dy * c) / (0.5 * pose.h)
        core = np.exp(-0.5 * (a * a + b * b) / 0.36)
        wide = np.exp(-0.5 * (a * a + b * b))
        out[0, y0:y1, x0:x1] += core
        out[1, y0:y1, x0:x1] += wide
        out[2, y0:y1, x0:x1] += a * wide
        out[3, y0:y1, x0:x1] += b * wide
    return out


def synth_features(scene: Scene, noise_sigma: float = 0.02) -> tuple[FeatureMap, FeatureMap]:
    """Stand-in backbone features ``(fm_rgb, fm_ir)`` for a scene.

    Each object adds smooth oriented blobs (two widths plus two odd moments
    along its axes) at the pose where it is rendered in that modality.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    shape = (scene.ir_img.height, scene.ir_img.width)
    rgb = _blob_features([a.rgb_pose or a.rgb_box or a.ir_box for a in scene.annotations], shape)
    ir = _blob_features([a.ir_pose or a.ir_box or a.rgb_box for a in scene.annotations], shape)
    if noise_sigma > 0:
        rng = SplitMix64(scene.seed).spawn(_FEATURES)
        rgb += noise_sigma * rng.normal(size=rgb.size).reshape(rgb.shape)
        ir += noise_sigma * rng.normal(size=ir.size).reshape(ir.shape)
    return FeatureMap(rgb), FeatureMap(ir)


# -- harmonization ------------------------------------------------------------


def crop_mean(img: GrayImage, box: RotatedBox) -> float | None:
    """Mean intensity over pixels whose centers fall inside ``box``."""
    pts = corners(box)
    x0 = max(0, int(math.floor(pts[:, 0].min())))
    x1 = min(img.width, int(math.ceil(pts[:, 0].max())) + 1)
    y0 = max(0, int(math.floor(pts[:, 1].min())))
    y1 = min(img.height, int(math.ceil(pts[:, 1].max())) + 1)
    if x0 >= x1 or y0 >= y1:
        return None
    ys, xs = np.mgrid[y0:y1, x0:x1]
    inside = points_in_box(box, xs + 0.5, ys + 0.5)
    if not inside.any():
        return None
    return float(img.pixels[y0:y1, x0:x1][inside].mean())


def harmonize(
    annotations: list[PairedAnnotation],
    rgb_img: GrayImage,
    ir_img: GrayImage | None = None,
    dark_threshold: float = DEFAULT_DARK_THRESHOLD,
) -> list[PairedAnnotation]:
    """Make annotations paired, lit and index-aligned.

    1. An object annotated in one modality only gets the same box in the other.
    2. Pairs whose RGB crop mean intensity (0-255) is below ``dark_threshold``
       are dropped from both modalities; so are RGB boxes entirely off-image.
    3. The result is sorted by ``object_id``.
    """
    out = []
    for a in annotations:
        rgb_box = a.rgb_box if a.rgb_box is not None else a.ir_box
        ir_box = a.ir_box if a.ir_box is not None else a.rgb_box
        mean = crop_mean(rgb_img, rgb_box)
        if mean is None or mean < dark_threshold:
            continue
        dev = a.true_deviation if (a.rgb_box is not None and a.ir_box is not None) else encode(ir_box, rgb_box)
        out.append(PairedAnnotation(a.object_id, a.class_id, rgb_box, ir_box, dev, a.rgb_pose, a.ir_pose, a.moving))
    out.sort(key=lambda a: a.object_id)
    return out


def harmonize_scene(scene: Scene, dark_threshold: float = DEFAULT_DARK_THRESHOLD) -> Scene:
    return Scene(scene.scene_id, scene.seed, scene.rgb_img, scene.ir_img,
                 harmonize(scene.annotations, scene.rgb_img, scene.ir_img, dark_threshold))


# -- dataset I/O --------------------------------------------------------------
#
# Directory layout:
#   manifest.json             {"format", "seed", "config", "scenes": [{"scene_id", "seed",
#                              "height", "width", "num_objects"}]}
#   images/{id}_rgb.pgm       binary PGM, 8-bit
#   images/{id}_ir.pgm
#   annotations.jsonl         one PairedAnnotation.to_dict() per line plus "scene_id"


def export_dataset(scenes: list[Scene], dir_path, config: SceneConfig | dict | None = None) -> None:
    root = Path(dir_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    cfg = config.to_dict() if isinstance(config, SceneConfig) else config
    manifest = {
        "format": DATASET_FORMAT,
        "seed": None if cfg is None else cfg.get("seed"),
        "config": cfg,
        "scenes": [],
    }
    lines = []
    for sc in scenes:
        write_pgm(root / "images" / f"{sc.scene_id}_rgb.pgm", sc.rgb_img.pixels)
        write_pgm(root / "images" / f"{sc.scene_id}_ir.pgm", sc.ir_img.pixels)
        manifest["scenes"].append({
            "scene_id": sc.scene_id,
            "seed": sc.seed,
            "height": sc.ir_img.height,
            "width": sc.ir_img.width,
            "num_objects": len(sc.annotations),
        })
        for a in sc.annotations:
            rec = {"scene_id": sc.scene_id}
            rec.update(a.to_dict())
            lines.append(json.dumps(rec, sort_keys=True))
    (root / "annotations.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(dir_path) -> dict:
    path = Path(dir_path) / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetError(f"{path}: missing manifest") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{path}: unexpected format {manifest.get('format')!r}")
    return manifest


def read_annotations(path) -> dict[int, list[PairedAnnotation]]:
    by_scene: dict[int, list[PairedAnnotation]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ann = PairedAnnotation.from_dict(rec)
                sid = int(rec["scene_id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            by_scene.setdefault(sid, []).append(ann)
    return by_scene


def import_dataset(dir_path) -> tuple[list[Scene], dict]:
    """Load scenes and the manifest written by :func:`export_dataset`."""
    root = Path(dir_path)
    manifest = read_manifest(root)
    by_scene = read_annotations(root / "annotations.jsonl")
    scenes = []
    for entry in manifest["scenes"]:
        sid = int(entry["scene_id"])
        try:
            rgb = GrayImage(read_pnm(root / "images" / f"{sid}_rgb.pgm"))
            ir = GrayImage(read_pnm(root / "images" / f"{sid}_ir.pgm"))
        except (OSError, PnmError) as exc:
            raise DatasetError(f"scene {sid}: {exc}") from exc
        scenes.append(Scene(sid, int(entry["seed"]), rgb, ir, by_scene.get(sid, [])))
    return scenes, manifest
