"""ResNet-50 style bottleneck classifier over single-channel log-Mel inputs."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import nncore as nn
from ._fileio import atomic_write_bytes
from .errors import (BadMagic, InvalidConfig, ShapeMismatch, ShapeMismatchOnLoad,
                     TruncatedFile, VersionMismatch)
from .features import FeatureConfig

EXPANSION = 4
HEAD_INIT_STD = 0.005


@dataclass(frozen=True)
class ResNetConfig:
    input_mels: int = 32
    input_frames: int = 155
    stage_depths: tuple = (3, 4, 6, 3)
    base_width: int = 64
    width_factor: float = 1.0
    num_classes: int = 2
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        if not 1 <= len(self.stage_depths) <= 4 or min(self.stage_depths) < 1:
            raise InvalidConfig("stage_depths needs one to four positive integers")
        if not 0 < float(self.width_factor) <= 1:
            raise InvalidConfig("width_factor must lie in (0, 1]")
        if self.base_width < 1 or self.num_classes < 2 or self.in_channels < 1:
            raise InvalidConfig("base_width, num_classes and in_channels must be positive")
        if self.input_mels < 1 or self.input_frames < 1:
            raise InvalidConfig("input dimensions must be positive")
        if self.stem_width < 1:
            raise InvalidConfig("width_factor leaves the stem with no channels")

    def _scaled(self, c: int) -> int:
        return int(round(c * Fraction(self.width_factor).limit_denominator(1024)))

    @property
    def stem_width(self) -> int:
        return self._scaled(self.base_width)

    def stage_width(self, stage: int) -> int:
        """Bottleneck (reduced) width of stage 0..3."""
        return self._scaled(self.base_width * 2 ** stage)

    @property
    def feature_width(self) -> int:
        return self.stage_width(len(self.stage_depths) - 1) * EXPANSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_depths"] = list(self.stage_depths)
        d["width_factor"] = float(self.width_factor)
        return d

    @classmethod
    def tiny(cls, input_mels: int = 32, input_frames: int = 155) -> "ResNetConfig":
        return cls(input_mels, input_frames, (1, 1, 1, 1), width_factor=1 / 8)


@dataclass
class Model:
    config: ResNetConfig
    params: dict                      # name -> nn.Tensor, in build order
    bn: dict                          # name -> nn.BatchNormState
    blocks: list                      # {"prefix", "stride", "project"} per block
    feature_config: FeatureConfig | None = None
    metadata: dict = field(default_factory=dict)

    def parameters(self) -> list:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def weighted_layers(self) -> int:
        """Main-path conv layers plus the dense head (projection shortcuts excluded)."""
        convs = 1 + sum(3 for _ in self.blocks)
        return convs + 1


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build(config: ResNetConfig, seed: int = 0, dtype=np.float32,
          feature_config: FeatureConfig | None = None) -> Model:
    """Assemble the network: He-normal convolutions, unit gamma, zero beta.

    The dense head is drawn with std HEAD_INIT_STD and a zero bias.
    """
    rng = np.random.default_rng(seed)
    params: dict = {}
    bn: dict = {}

    def conv(name, o, i, k):
        params[name] = nn.Tensor(_he(rng, (o, i, k, k), i * k * k, dtype), True, name)

    def norm(name, c):
        params[f"{name}.gamma"] = nn.Tensor(np.ones(c, dtype), True, f"{name}.gamma")
        params[f"{name}.beta"] = nn.Tensor(np.zeros(c, dtype), True, f"{name}.beta")
        bn[name] = nn.BatchNormState.fresh(c, dtype)

    stem = config.stem_width
    conv("stem.conv", stem, config.in_channels, 7)
    norm("stem.bn", stem)

    blocks = []
    in_c = stem
    for s, depth in enumerate(config.stage_depths):
        mid = config.stage_width(s)
        out_c = mid * EXPANSION
        for b in range(depth):
            stride = 2 if (s > 0 and b == 0) else 1
            p = f"layer{s + 1}.{b}"
            conv(f"{p}.conv1", mid, in_c, 1)
            norm(f"{p}.bn1", mid)
            conv(f"{p}.conv2", mid, mid, 3)
            norm(f"{p}.bn2", mid)
            conv(f"{p}.conv3", out_c, mid, 1)
            norm(f"{p}.bn3", out_c)
            project = stride != 1 or in_c != out_c
            if project:
                conv(f"{p}.proj.conv", out_c, in_c, 1)
                norm(f"{p}.proj.bn", out_c)
            blocks.append({"prefix": p, "stride": stride, "project": project})
            in_c = out_c

    # small head keeps the initial softmax near uniform
    fc_w = (rng.standard_normal((config.num_classes, in_c)) * HEAD_INIT_STD).astype(dtype)
    params["fc.weight"] = nn.Tensor(fc_w, True, "fc.weight")
    params["fc.bias"] = nn.Tensor(np.zeros(config.num_classes, dtype), True, "fc.bias")
    return Model(config, params, bn, blocks, feature_config)


def _bottleneck(model: Model, x: nn.Tensor, blk: dict, train: bool) -> nn.Tensor:
    P, B, p = model.params, model.bn, blk["prefix"]

    def cbn(t, conv, norm, stride=1, pad=0):
        t = nn.conv2d(t, P[conv], stride=stride, pad=pad)
        return nn.batchnorm2d(t, P[f"{norm}.gamma"], P[f"{norm}.beta"], B[norm], train)

    # stride sits on the first 1x1 reduction
    y = nn.relu(cbn(x, f"{p}.conv1", f"{p}.bn1", stride=blk["stride"]))
    y = nn.relu(cbn(y, f"{p}.conv2", f"{p}.bn2", pad=1))
    y = cbn(y, f"{p}.conv3", f"{p}.bn3")
    short = cbn(x, f"{p}.proj.conv", f"{p}.proj.bn", stride=blk["stride"]) if blk["project"] else x
    return nn.relu(nn.add(y, short))


def forward_logits(model: Model, batch, mode: str = "eval", shapes: dict | None = None) -> nn.Tensor:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    train = mode == "train"
    x = batch if isinstance(batch, nn.Tensor) else nn.Tensor(np.asarray(batch))
    cfg = model.config
    if x.data.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.input_mels, cfg.input_frames):
        raise ShapeMismatch(
            f"expected (B, {cfg.in_channels}, {cfg.input_mels}, {cfg.input_frames}), got {x.shape}")
    P = model.params
    x = nn.conv2d(x, P["stem.conv"], stride=2, pad=3)
    x = nn.relu(nn.batchnorm2d(x, P["stem.bn.gamma"], P["stem.bn.beta"], model.bn["stem.bn"], train))
    if shapes is not None:
        shapes["stem"] = x.shape[2:]
    x = nn.maxpool2d(x, 3, 2, 1)
    if shapes is not None:
        shapes["pool"] = x.shape[2:]
    for blk in model.blocks:
        x = _bottleneck(model, x, blk, train)
        if shapes is not None:
            shapes[blk["prefix"].split(".")[0]] = x.shape[2:]
    feats = nn.global_avg_pool(x)
    if shapes is not None:
        shapes["head"] = feats.shape[1:]
    return nn.dense(feats, P["fc.weight"], P["fc.bias"])


def forward(model: Model, batch, mode: str = "eval", shapes: dict | None = None) -> nn.Tensor:
    """Class probabilities, shape (B, num_classes); column 1 is the positive class."""
    return nn.softmax(forward_logits(model, batch, mode, shapes))


def predict_proba(model: Model, batch, chunk: int = 64) -> np.ndarray:
    """Eval-mode positive-class probabilities for an (N, 1, M, K) array."""
    batch = np.asarray(batch)
    out = [forward(model, batch[i:i + chunk], "eval").data[:, 1] for i in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def stage_shapes(config: ResNetConfig) -> dict:
    """Closed-form spatial sizes after stem, pool and each stage."""
    h, w = config.input_mels, config.input_frames
    size = nn.conv_output_size
    h, w = size(h, 7, 2, 3), size(w, 7, 2, 3)
    out = {"stem": (h, w)}
    h, w = size(h, 3, 2, 1), size(w, 3, 2, 1)
    out["pool"] = (h, w)
    for s in range(len(config.stage_depths)):
        if s:
            h, w = size(h, 1, 2, 0), size(w, 1, 2, 0)
        out[f"layer{s + 1}"] = (h, w)
    return out


# --- checkpoints ------------------------------------------------------------------

MAGIC = b"CGHN"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def _tensor_table(model: Model):
    for name, t in model.params.items():
        yield name, t.data
    for name, st in model.bn.items():
        yield f"bn:{name}.running_mean", st.running_mean
        yield f"bn:{name}.running_var", st.running_var


def to_bytes(model: Model) -> bytes:
    """CGHN layout: magic, u16 version, u32 header length, JSON header, f32 LE tensors."""
    table = list(_tensor_table(model))
    header = {
        "resnet": model.config.to_dict(),
        "features": model.feature_config.to_dict() if model.feature_config else None,
        "metadata": model.metadata,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in table],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in table)
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body


def from_bytes(data: bytes, input_mels: int | None = None,
               input_frames: int | None = None) -> Model:
    if len(data) < _PREFIX.size:
        raise TruncatedFile("checkpoint shorter than its prefix")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    if len(data) < _PREFIX.size + hlen:
        raise TruncatedFile("checkpoint header is truncated")
    header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode())
    rc = header["resnet"]
    config = ResNetConfig(**{**rc, "stage_depths": tuple(rc["stage_depths"])})
    if input_mels is not None and config.input_mels != input_mels:
        raise ShapeMismatchOnLoad(
            f"checkpoint expects {config.input_mels} mel bands, caller has {input_mels}")
    if input_frames is not None and config.input_frames != input_frames:
        raise ShapeMismatchOnLoad(
            f"checkpoint expects {config.input_frames} frames, caller has {input_frames}")
    fc = FeatureConfig.from_dict(header["features"]) if header.get("features") else None
    model = build(config, seed=0, feature_config=fc)
    model.metadata = header.get("metadata") or {}

    expected = {n: a.shape for n, a in _tensor_table(model)}
    offset = _PREFIX.size + hlen
    loaded = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise ShapeMismatchOnLoad(f"tensor {name} has shape {shape}, model needs {expected.get(name)}")
        n = int(np.prod(shape))
        if len(data) < offset + 4 * n:
            raise TruncatedFile(f"tensor {name} is truncated")
        loaded[name] = np.frombuffer(data, "<f4", n, offset).reshape(shape).astype(np.float32)
        offset += 4 * n
    if set(loaded) != set(expected):
        raise ShapeMismatchOnLoad(f"missing tensors: {sorted(set(expected) - set(loaded))}")
    for name, t in model.params.items():
        t.data = loaded[name]
    for name, st in model.bn.items():
        st.running_mean = loaded[f"bn:{name}.running_mean"]
        st.running_var = loaded[f"bn:{name}.running_var"]
    return model


def save(model: Model, path) -> None:
    atomic_write_bytes(path, to_bytes(model))


def load(path, input_mels: int | None = None, input_frames: int | None = None) -> Model:
    return from_bytes(Path(path).read_bytes(), input_mels, input_frames)


def copy_model(model: Model) -> Model:
    """Deep copy via the checkpoint encoding (float32 parameters)."""
    return from_bytes(to_bytes(model))
