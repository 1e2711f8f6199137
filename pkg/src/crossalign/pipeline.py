"""Glue between simulated scenes and the alignment head.

Proposals come from annotations: the reference modality's box is the
proposal, both modalities are pooled on it, and the target is the encoded
offset to the sensed modality's annotated box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .alignment_head import AlignHeadParams, ProposalSample, align_proposal
from .deviation import RotationMode, encode
from .geometry import RotatedBox, rotated_iou
from .jitter import JitterConfig, jitter_dataset
from .modality_selection import DEFAULT_EXTEND_FACTOR, EmptyCrop, Modality, select_reference
from .pooling import DEFAULT_OUT_SIZE, DEFAULT_SAMPLING_RATIO, rotated_roi_align
from .rng import SplitMix64
from .simulator import DEFAULT_DARK_THRESHOLD, Scene, harmonize_scene, synth_features


@dataclass
class PipelineConfig:
    out_size: int = DEFAULT_OUT_SIZE
    sampling_ratio: int = DEFAULT_SAMPLING_RATIO
    feature_noise: float = 0.02
    use_ms: bool = True
    extend_factor: float = DEFAULT_EXTEND_FACTOR
    dark_threshold: float = DEFAULT_DARK_THRESHOLD
    negatives_per_scene: int = 0
    holdout_fraction: float = 0.3

    def __post_init__(self):
        if self.out_size < 1 or self.sampling_ratio < 1:
            raise ValueError("out_size and sampling_ratio must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        if self.negatives_per_scene < 0:
            raise ValueError("negatives_per_scene must be >= 0")


@dataclass
class ObjectRecord:
    """A positive proposal plus the ground truth needed to score it."""

    scene_id: int
    object_id: int
    class_id: int
    reference: Modality
    proposal: RotatedBox
    sensed_pose: RotatedBox
    sample: ProposalSample = field(repr=False)


def split_scenes(scenes: list[Scene], holdout_fraction: float) -> tuple[list[Scene], list[Scene]]:
    """Deterministic split: the last ``holdout_fraction`` of scenes is held out."""
    n_hold = int(math.floor(len(scenes) * holdout_fraction + 0.5))
    if holdout_fraction > 0 and len(scenes) > 1:
        n_hold = min(max(n_hold, 1), len(scenes) - 1)
    cut = len(scenes) - n_hold
    return scenes[:cut], scenes[cut:]


def scene_records(scene: Scene, cfg: PipelineConfig) -> tuple[list[ObjectRecord], list[ProposalSample]]:
    """Harmonize a scene and build one record per object, plus negatives."""
    scene = harmonize_scene(scene, cfg.dark_threshold)
    fm_rgb, fm_ir = synth_features(scene, cfg.feature_noise)
    records = []
    for a in scene.annotations:
        ref = Modality.IR
        if cfg.use_ms:
            try:
                ref, _, _ = select_reference(scene.rgb_img, scene.ir_img, a.rgb_box, a.ir_box, cfg.extend_factor)
            except EmptyCrop:
                ref = Modality.IR
        if ref is Modality.IR:
            proposal, sensed_box = a.ir_box, a.rgb_box
            fm_ref, fm_sensed = fm_ir, fm_rgb
            sensed_pose = a.rgb_pose or a.rgb_box
        else:
            proposal, sensed_box = a.rgb_box, a.ir_box
            fm_ref, fm_sensed = fm_rgb, fm_ir
            sensed_pose = a.ir_pose or a.ir_box
        phi_r = rotated_roi_align(fm_ref, proposal, cfg.out_size, cfg.sampling_ratio)
        phi_s = rotated_roi_align(fm_sensed, proposal, cfg.out_size, cfg.sampling_ratio)
        sample = ProposalSample(
            phi_r, phi_s, True, encode(proposal, sensed_box),
            sensed_proposal=proposal, sensed_box=sensed_box, fm_sensed=fm_sensed,
            sampling_ratio=cfg.sampling_ratio,
        )
        records.append(ObjectRecord(scene.scene_id, a.object_id, a.class_id, ref, proposal, sensed_pose, sample))
    negatives = []
    if cfg.negatives_per_scene:
        rng = SplitMix64(scene.seed).spawn(100)
        H, W = scene.ir_img.height, scene.ir_img.width
        for _ in range(cfg.negatives_per_scene):
            box = RotatedBox(rng.uniform(0, W), rng.uniform(0, H), rng.uniform(16, 40), rng.uniform(8, 20),
                             rng.uniform(0, 2 * math.pi))
            negatives.append(ProposalSample(
                rotated_roi_align(fm_ir, box, cfg.out_size, cfg.sampling_ratio),
                rotated_roi_align(fm_rgb, box, cfg.out_size, cfg.sampling_ratio),
                False,
            ))
    return records, negatives


def build_records(scenes: list[Scene], cfg: PipelineConfig):
    records, negatives = [], []
    for sc in scenes:
        r, n = scene_records(sc, cfg)
        records += r
        negatives += n
    return records, negatives


def training_samples(records, negatives, jitter: JitterConfig | None = None, copies: int = 1):
    samples = [r.sample for r in records] + list(negatives)
    if jitter is not None:
        samples = jitter_dataset(samples, jitter, copies)
    return samples


@dataclass
class AlignmentErrors:
    center: float
    size: float
    angle_deg: float
    iou: float

    def as_dict(self) -> dict:
        return {"center_px": self.center, "size_px": self.size, "angle_deg": self.angle_deg, "iou": self.iou}


def box_errors(pred: list[RotatedBox], truth: list[RotatedBox]) -> AlignmentErrors:
    if not pred:
        return AlignmentErrors(0.0, 0.0, 0.0, 1.0)
    center, size, angle, iou = [], [], [], []
    for p, t in zip(pred, truth):
        center.append(math.hypot(p.cx - t.cx, p.cy - t.cy))
        size.append(0.5 * (abs(p.w - t.w) + abs(p.h - t.h)))
        d = math.fmod(abs(p.theta - t.theta), 2 * math.pi)
        angle.append(math.degrees(min(d, 2 * math.pi - d)))
        iou.append(rotated_iou(p, t))
    return AlignmentErrors(*(float(np.mean(v)) for v in (center, size, angle, iou)))


def align_records(params: AlignHeadParams | None, records: list[ObjectRecord], oracle: bool = False,
                  mode: RotationMode = RotationMode.STANDARD) -> list[RotatedBox]:
    """Aligned sensed boxes for each record.

    With ``oracle`` the network is bypassed and the true deviation from the
    proposal to the sensed pose is decoded instead.
    """
    out = []
    for r in records:
        s = r.sample
        dev = encode(r.proposal, r.sensed_pose, mode) if oracle else None
        box, _ = align_proposal(params, s.fm_sensed, r.proposal, s.phi_r, s.phi_s, mode,
                                s.phi_s.size, s.sampling_ratio, deviation=dev)
        out.append(box)
    return out


def evaluate_alignment(params, records, oracle: bool = False) -> tuple[AlignmentErrors, AlignmentErrors]:
    """(before, after) errors against the true sensed poses."""
    truth = [r.sensed_pose for r in records]
    before = box_errors([r.proposal for r in records], truth)
    after = box_errors(align_records(params, records, oracle), truth)
    return before, after
