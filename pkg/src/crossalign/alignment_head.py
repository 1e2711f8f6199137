"""Deviation prediction head with explicit backpropagation.

The head sees the difference of the pooled sensed and reference features and
predicts a :class:`~crossalign.deviation.Deviation` through three separate
fully connected branches (position -> 2, size -> 2, angle -> 1).  Hidden layers
use ReLU; the angle branch ends in a sigmoid.

The angle output lives in *head space*: it is the deviation in turns shifted
by half a turn, so a sigmoid output of 0.5 means "no rotation".  Targets are
shifted the same way before the loss (:func:`to_head_space`) and predictions
are shifted back before decoding (:func:`from_head_space`).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .deviation import Deviation, RotationMode, decode, encode, smooth_l1, smooth_l1_grad, wrap_turns
from .geometry import RotatedBox
from .pooling import (
    DEFAULT_OUT_SIZE,
    DEFAULT_SAMPLING_RATIO,
    FeatureMap,
    PooledFeature,
    ShapeMismatch,
    fuse,
    rotated_roi_align,
    subtract,
)
from .rng import SplitMix64

BRANCHES = (("position", 2), ("size", 2), ("angle", 1))


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


def to_head_space(dev: Deviation) -> Deviation:
    return replace(dev, rtheta=wrap_turns(dev.rtheta + 0.5))


def from_head_space(dev: Deviation) -> Deviation:
    return replace(dev, rtheta=wrap_turns(dev.rtheta + 0.5))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)


@dataclass
class AlignHeadParams:
    branches: dict[str, list[Layer]]

    @classmethod
    def init(cls, input_dim: int, hidden: int = 64, depth: int = 2, seed: int = 0) -> "AlignHeadParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        rng = SplitMix64(seed)
        branches = {}
        for name, n_out in BRANCHES:
            dims = [input_dim] + [hidden] * depth + [n_out]
            layers = []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                bound = 1.0 / math.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=fan_in * fan_out).reshape(fan_out, fan_in)
                layers.append(Layer(w, np.zeros(fan_out)))
            branches[name] = layers
        return cls(branches)

    @classmethod
    def zeros(cls, input_dim: int, hidden: int = 64, depth: int = 2) -> "AlignHeadParams":
        p = cls.init(input_dim, hidden, depth)
        for layer in p.layers():
            layer.weight[:] = 0.0
        return p

    def layers(self):
        for name, _ in BRANCHES:
            yield from self.branches[name]

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (per branch: W0, b0, W1, b1, ...)."""
        out = []
        for layer in self.layers():
            out += [layer.weight, layer.bias]
        return out

    @property
    def input_dim(self) -> int:
        return self.branches["position"][0].weight.shape[1]

    @property
    def hidden(self) -> int:
        return self.branches["position"][0].weight.shape[0]

    @property
    def depth(self) -> int:
        return len(self.branches["position"]) - 1

    def copy(self) -> "AlignHeadParams":
        return AlignHeadParams(
            {k: [Layer(l.weight.copy(), l.bias.copy()) for l in v] for k, v in self.branches.items()}
        )

    def zeros_like(self) -> "AlignHeadParams":
        return AlignHeadParams(
            {k: [Layer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in v] for k, v in self.branches.items()}
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class AlignTrainConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    lam: float = 1.0
    hidden: int = 64
    beta: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.lam < 0:
            raise ValueError("weight_decay and lambda must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("epochs, batch_size and hidden must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass
class ProposalSample:
    """One proposal with its pooled features and, for positives, its target.

    ``target`` is in the codec's standard space.  ``sensed_proposal`` is the box
    ``phi_s`` was pooled on (the origin of ``target``) and ``sensed_box`` the
    annotated box the target points at; together with ``fm_sensed`` they let
    jitter re-pool and re-encode the sample.
    """

    phi_r: PooledFeature
    phi_s: PooledFeature
    positive: bool
    target: Deviation | None = None
    sensed_proposal: RotatedBox | None = None
    sensed_box: RotatedBox | None = None
    fm_sensed: FeatureMap | None = field(default=None, repr=False)
    sampling_ratio: int = DEFAULT_SAMPLING_RATIO

    def __post_init__(self):
        if self.positive and self.target is None:
            raise ValueError("positive samples need a target")


def rejitter(sample: ProposalSample, proposal: RotatedBox, repool=None) -> ProposalSample:
    """Move a positive sample's sensed proposal to ``proposal``."""
    if sample.sensed_box is None:
        raise ValueError("sample has no annotated sensed box to re-encode against")
    if repool is not None:
        phi_s = repool(sample, proposal)
    elif sample.fm_sensed is not None:
        phi_s = rotated_roi_align(sample.fm_sensed, proposal, sample.phi_s.size, sample.sampling_ratio)
    else:
        raise ValueError("sample has no sensed feature map to re-pool from")
    return replace(sample, phi_s=phi_s, sensed_proposal=proposal, target=encode(proposal, sample.sensed_box))


def head_input(phi_r: PooledFeature, phi_s: PooledFeature) -> np.ndarray:
    return subtract(phi_s, phi_r).flatten()


def _branch_forward(layers: list[Layer], x: np.ndarray):
    acts = [x]
    for k, layer in enumerate(layers):
        z = acts[-1] @ layer.weight.T + layer.bias
        if k < len(layers) - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def predict_raw(params: AlignHeadParams, X: np.ndarray) -> tuple[np.ndarray, dict]:
    """Batch forward; returns (N, 5) head-space predictions and activations."""
    X = np.atleast_2d(X)
    if X.shape[1] != params.input_dim:
        raise ShapeMismatch(f"input dim {X.shape[1]} != head input dim {params.input_dim}")
    cache = {name: _branch_forward(params.branches[name], X) for name, _ in BRANCHES}
    out = np.hstack([
        cache["position"][-1],
        cache["size"][-1],
        _sigmoid(cache["angle"][-1]),
    ])
    return out, cache


def forward(params: AlignHeadParams, phi_r: PooledFeature, phi_s: PooledFeature) -> Deviation:
    """Predicted deviation in head space (see module docstring)."""
    out, _ = predict_raw(params, head_input(phi_r, phi_s)[None, :])
    return Deviation.from_array(out[0])


def _targets(samples: list[ProposalSample]) -> tuple[np.ndarray, np.ndarray]:
    T = np.zeros((len(samples), 5))
    G = np.zeros(len(samples))
    for i, s in enumerate(samples):
        if s.positive:
            T[i] = to_head_space(s.target).as_array()
            G[i] = 1.0
    return T, G


def deviation_loss(pred: list[Deviation], samples: list[ProposalSample], beta: float = 1.0) -> float:
    """Smooth-L1 deviation loss averaged over positive proposals.

    ``pred`` are head-space outputs of :func:`forward`; targets are shifted to
    head space here.
    """
    if len(pred) != len(samples):
        raise ValueError("pred and samples differ in length")
    if not pred:
        return 0.0
    P = np.array([d.as_array() for d in pred])
    T, G = _targets(samples)
    per = smooth_l1(P - T, beta).sum(axis=1)
    return float((G * per).sum() / max(1.0, G.sum()))


def _loss_and_grads(params: AlignHeadParams, X, T, G, beta: float):
    out, cache = predict_raw(params, X)
    n_pos = max(1.0, G.sum())
    res = out - T
    loss = float((G[:, None] * smooth_l1(res, beta)).sum() / n_pos)
    d_out = G[:, None] * smooth_l1_grad(res, beta) / n_pos
    sig = out[:, 4:5]
    d_raw = {
        "position": d_out[:, 0:2],
        "size": d_out[:, 2:4],
        "angle": d_out[:, 4:5] * sig * (1.0 - sig),
    }
    grads = params.zeros_like()
    for name, _ in BRANCHES:
        layers = params.branches[name]
        acts = cache[name]
        delta = d_raw[name]
        for k in range(len(layers) - 1, -1, -1):
            g = grads.branches[name][k]
            g.weight[:] = delta.T @ acts[k]
            g.bias[:] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ layers[k].weight) * (acts[k] > 0.0)
    return loss, grads


def _stack(samples: list[ProposalSample]):
    X = np.array([head_input(s.phi_r, s.phi_s) for s in samples])
    T, G = _targets(samples)
    return X, T, G


def backward(params: AlignHeadParams, samples: list[ProposalSample], beta: float = 1.0):
    """Exact gradients of :func:`deviation_loss` for the batch.

    Returns ``(loss, grads)`` with ``grads`` shaped like ``params``.
    """
    X, T, G = _stack(samples)
    return _loss_and_grads(params, X, T, G, beta)


def train(
    config: AlignTrainConfig,
    dataset: list[ProposalSample],
    params: AlignHeadParams | None = None,
    log=None,
) -> tuple[AlignHeadParams, list[float]]:
    """Minibatch SGD with momentum and weight decay.

    Returns the trained parameters and the per-epoch loss (total loss over the
    epoch's positives divided by their count, scaled by ``lam``).
    """
    if not dataset:
        raise ValueError("empty training set")
    X, T, G = _stack(dataset)
    if params is None:
        params = AlignHeadParams.init(X.shape[1], config.hidden, seed=config.seed)
    params = params.copy()
    velocity = params.zeros_like()
    rng = SplitMix64(config.seed).spawn(1)
    curve = []
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, n_pos = 0.0, 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = _loss_and_grads(params, X[idx], T[idx], G[idx], config.beta)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            batch_pos = G[idx].sum()
            total += loss * max(1.0, batch_pos) if batch_pos else 0.0
            n_pos += batch_pos
            for p, g, v in zip(params.arrays(), grads.arrays(), velocity.arrays()):
                step = config.lam * g + config.weight_decay * p
                v *= config.momentum
                v += step
                p -= config.learning_rate * v
        epoch_loss = float(config.lam * total / max(1.0, n_pos))
        if not math.isfinite(epoch_loss) or not params.is_finite():
            raise NonFiniteLoss(epoch, epoch_loss)
        curve.append(epoch_loss)
        if log is not None:
            log(epoch, epoch_loss)
    return params, curve


def align_proposal(
    params: AlignHeadParams | None,
    fm_sensed: FeatureMap,
    reference_box: RotatedBox,
    phi_r: PooledFeature,
    phi_s: PooledFeature,
    mode: RotationMode = RotationMode.STANDARD,
    out_size: int = DEFAULT_OUT_SIZE,
    sampling_ratio: int = DEFAULT_SAMPLING_RATIO,
    deviation: Deviation | None = None,
) -> tuple[RotatedBox, PooledFeature]:
    """Predict the sensed box for a reference proposal and build the fused feature.

    ``deviation`` bypasses the network with a known standard-space deviation
    (used for oracle runs); otherwise ``params`` must be given.
    """
    if deviation is None:
        deviation = from_head_space(forward(params, phi_r, phi_s))
    sensed_box = decode(reference_box, deviation, mode)
    aligned = rotated_roi_align(fm_sensed, sensed_box, out_size, sampling_ratio)
    return sensed_box, fuse(phi_r, aligned)


# -- checkpoints ---------------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic b"XALNHEAD"
#   uint32    format version (1)
#   uint32    header length L
#   L bytes   UTF-8 JSON header: kind, input_dim, hidden, depth, config echo, ...
#   uint32    number of arrays K
#   K times:  uint32 ndim, ndim x uint32 dims, prod(dims) x float64 (row-major)
# Arrays follow AlignHeadParams.arrays() order.

MAGIC = b"XALNHEAD"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: AlignHeadParams | None, header: dict) -> None:
    header = dict(header)
    arrays = params.arrays() if params is not None else []
    if params is not None:
        header.update(input_dim=params.input_dim, hidden=params.hidden, depth=params.depth)
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", FORMAT_VERSION, len(text))
    buf += text
    buf += struct.pack("<I", len(arrays))
    for a in arrays:
        buf += struct.pack("<I", a.ndim)
        buf += struct.pack(f"<{a.ndim}I", *a.shape)
        buf += np.ascontiguousarray(a, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> tuple[AlignHeadParams | None, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    try:
        version, hlen = struct.unpack_from("<II", raw, 8)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 16
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
        off += hlen
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(shape))
            a = np.frombuffer(raw, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(shape)
            off += 8 * size
            arrays.append(a)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    if not arrays:
        return None, header
    template = AlignHeadParams.zeros(header["input_dim"], header["hidden"], header["depth"])
    slots = template.arrays()
    if len(slots) != len(arrays) or any(s.shape != a.shape for s, a in zip(slots, arrays)):
        raise CheckpointError(f"{path}: array shapes do not match header")
    for s, a in zip(slots, arrays):
        s[:] = a
    return template, header


def config_echo(config: AlignTrainConfig) -> dict:
    d = asdict(config)
    d["lambda"] = d.pop("lam")
    return d
