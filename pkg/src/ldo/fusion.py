"""Reference forward passes for global-local feature fusion.

Covers the channel-context distillation (conv -> global avg/max pooling ->
shared two-layer MLP), the sigmoid selection gate blending global and local
BEV maps, the lossless channel-to-height reshape, and the density-weighted
occupancy cross-entropy.  Everything is a plain forward computation on
numpy arrays; parameters are inputs, there is no training machinery here.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    IndivisibleChannels,
    InvariantViolation,
    IoFailure,
    LabelOutOfRange,
    NotNormalized,
    ShapeMismatch,
    TruncatedFile,
)
from .heights import AggregationParams, conv2d_3x3
from .voxelizer import EMPTY, LdoGrid

_LOG_FLOOR = 1e-12


def _validated(name: str, value, shape: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation(f"{name} contains non-finite values")
    if shape is not None and arr.shape != shape:
        raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


@dataclass(frozen=True)
class ContextParams:
    """Conv + pooled two-layer MLP used to squeeze a map into channel context."""

    pre_conv_weight: np.ndarray  # (C', C', 3, 3)
    pre_conv_bias: np.ndarray  # (C',)
    mlp_w1: np.ndarray  # (C', C_h)
    mlp_b1: np.ndarray  # (C_h,)
    mlp_w2: np.ndarray  # (C_h, C')
    mlp_b2: np.ndarray  # (C',)

    def __post_init__(self) -> None:
        w = _validated("pre_conv_weight", self.pre_conv_weight)
        if w.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[2:] != (3, 3):
            raise ShapeMismatch(f"pre_conv_weight must be (C', C', 3, 3), got {w.shape}")
        c = w.shape[0]
        w1 = _validated("mlp_w1", self.mlp_w1)
        if w1.ndim != 2 or w1.shape[0] != c:
            raise ShapeMismatch(f"mlp_w1 must be (C'={c}, C_h), got {w1.shape}")
        hidden = w1.shape[1]
        object.__setattr__(self, "pre_conv_weight", w)
        object.__setattr__(self, "pre_conv_bias", _validated("pre_conv_bias", self.pre_conv_bias, (c,)))
        object.__setattr__(self, "mlp_w1", w1)
        object.__setattr__(self, "mlp_b1", _validated("mlp_b1", self.mlp_b1, (hidden,)))
        object.__setattr__(self, "mlp_w2", _validated("mlp_w2", self.mlp_w2, (hidden, c)))
        object.__setattr__(self, "mlp_b2", _validated("mlp_b2", self.mlp_b2, (c,)))

    @property
    def channels(self) -> int:
        return self.pre_conv_weight.shape[0]

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str = "") -> "ContextParams":
        g = lambda name: tensors[prefix + name]
        return cls(
            pre_conv_weight=g("pre_conv.weight"),
            pre_conv_bias=g("pre_conv.bias"),
            mlp_w1=g("mlp.w1"),
            mlp_b1=g("mlp.b1"),
            mlp_w2=g("mlp.w2"),
            mlp_b2=g("mlp.b2"),
        )


@dataclass(frozen=True)
class FusionParams:
    """Parameters of the gated global/local blend."""

    ctx_local: ContextParams
    ctx_global: ContextParams
    conv_g_weight: np.ndarray  # (C', C', 3, 3)
    conv_g_bias: np.ndarray  # (C',)
    conv_l_weight: np.ndarray  # (C', C', 3, 3)
    conv_l_bias: np.ndarray  # (C',)

    def __post_init__(self) -> None:
        c = self.ctx_local.channels
        if self.ctx_global.channels != c:
            raise ShapeMismatch("local and global context params disagree in channels")
        for name in ("conv_g_weight", "conv_l_weight"):
            object.__setattr__(self, name, _validated(name, getattr(self, name), (c, c, 3, 3)))
        for name in ("conv_g_bias", "conv_l_bias"):
            object.__setattr__(self, name, _validated(name, getattr(self, name), (c,)))

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str = "") -> "FusionParams":
        g = lambda name: tensors[prefix + name]
        return cls(
            ctx_local=ContextParams.from_tensors(tensors, prefix + "ctx_local."),
            ctx_global=ContextParams.from_tensors(tensors, prefix + "ctx_global."),
            conv_g_weight=g("conv_g.weight"),
            conv_g_bias=g("conv_g.bias"),
            conv_l_weight=g("conv_l.weight"),
            conv_l_bias=g("conv_l.bias"),
        )


def aggregation_params_from_tensors(
    tensors: Mapping[str, np.ndarray], prefix: str = ""
) -> AggregationParams:
    g = lambda name: tensors[prefix + name]
    return AggregationParams(
        path1_weight=g("path1.weight"),
        path1_bias=g("path1.bias"),
        path2_weight=g("path2.weight"),
        path2_bias=g("path2.bias"),
        conv_weight=g("path2_conv.weight"),
        conv_bias=g("path2_conv.bias"),
    )


def context_distill(f: np.ndarray, p: ContextParams) -> np.ndarray:
    """Squeeze a [C', H', W'] map into a length-C' context vector.

    The pre-conv output is globally average- and max-pooled; both vectors go
    through the shared two-layer MLP (rectifier hidden activation) and the
    results are summed.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != p.channels:
        raise ShapeMismatch(f"expected ({p.channels}, H, W) input, got {f.shape}")
    y = conv2d_3x3(f, p.pre_conv_weight, p.pre_conv_bias)
    avg = y.mean(axis=(1, 2))
    mx = y.max(axis=(1, 2))

    def mlp(v: np.ndarray) -> np.ndarray:
        hidden = np.maximum(v @ p.mlp_w1 + p.mlp_b1, 0.0)
        return hidden @ p.mlp_w2 + p.mlp_b2

    return mlp(avg) + mlp(mx)


def gate_alpha(c_l: np.ndarray, c_g: np.ndarray) -> np.ndarray:
    """Elementwise sigmoid of the summed context vectors."""
    c_l = np.asarray(c_l, dtype=np.float64)
    c_g = np.asarray(c_g, dtype=np.float64)
    if c_l.shape != c_g.shape:
        raise ShapeMismatch(f"context vectors disagree: {c_l.shape} vs {c_g.shape}")
    return 1.0 / (1.0 + np.exp(-(c_l + c_g)))


def cff_fuse(f_g: np.ndarray, f_l: np.ndarray, p: FusionParams) -> np.ndarray:
    """Gated convex blend of global and local [C', H', W'] maps.

    alpha is a per-channel gate broadcast over the spatial grid:
    out = alpha * conv_g(f_g) + (1 - alpha) * conv_l(f_l).
    """
    f_g = np.asarray(f_g, dtype=np.float64)
    f_l = np.asarray(f_l, dtype=np.float64)
    if f_g.shape != f_l.shape:
        raise ShapeMismatch(f"global {f_g.shape} and local {f_l.shape} maps disagree")
    alpha = gate_alpha(context_distill(f_l, p.ctx_local), context_distill(f_g, p.ctx_global))
    out_g = conv2d_3x3(f_g, p.conv_g_weight, p.conv_g_bias)
    out_l = conv2d_3x3(f_l, p.conv_l_weight, p.conv_l_bias)
    fused = alpha[:, None, None] * out_g + (1.0 - alpha)[:, None, None] * out_l
    return fused.astype(np.float32)


def c2h(f: np.ndarray, z: int, c_out: int) -> np.ndarray:
    """Reshape a [C', H', W'] map to [C'', Z, H', W'] with C' = C''*Z.

    Pure reindexing: out[c, k, h, w] = in[c*Z + k, h, w], no arithmetic.
    """
    f = np.asarray(f)
    if f.ndim != 3:
        raise ShapeMismatch(f"expected a rank-3 map, got shape {f.shape}")
    if z < 1 or c_out < 1 or f.shape[0] != c_out * z:
        raise IndivisibleChannels(
            f"{f.shape[0]} channels cannot be split into {c_out} x {z}"
        )
    return f.reshape(c_out, z, f.shape[1], f.shape[2])


def h2c(f_vox: np.ndarray) -> np.ndarray:
    """Inverse of c2h: fold [C'', Z, H', W'] back into [C''*Z, H', W']."""
    f_vox = np.asarray(f_vox)
    if f_vox.ndim != 4:
        raise ShapeMismatch(f"expected a rank-4 volume, got shape {f_vox.shape}")
    c, z, h, w = f_vox.shape
    return f_vox.reshape(c * z, h, w)


def weighted_occ_loss(pred: np.ndarray, gt: LdoGrid, beta: float = 0.9) -> float:
    """Density-weighted cross-entropy over the occupancy grid.

    ``pred`` is [M, H, W, Z] of per-voxel class probabilities (class 0 is
    EMPTY).  Occupied voxels are weighted by the grid's density weights,
    empty voxels by 1; the weighted mean is scaled by the temperature beta.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 4 or pred.shape[1:] != gt.spec.dims:
        raise ShapeMismatch(
            f"pred shape {pred.shape} does not cover grid dims {gt.spec.dims}"
        )
    m = pred.shape[0]
    if int(gt.labels.max(initial=0)) >= m:
        raise LabelOutOfRange(
            f"grid labels reach {int(gt.labels.max())} but pred has {m} classes"
        )
    total = pred.sum(axis=0)
    if np.any(np.abs(total - 1.0) > 1e-5):
        worst = float(np.abs(total - 1.0).max())
        raise NotNormalized(f"per-voxel probabilities sum to 1 +/- {worst:.2e} (> 1e-5)")

    labels = gt.labels.astype(np.int64)
    p_true = np.take_along_axis(pred, labels[None, ...], axis=0)[0]
    nll = -np.log(np.maximum(p_true, _LOG_FLOOR))
    w = np.where(labels != EMPTY, gt.weights.astype(np.float64), 1.0)
    return float(beta) * float((w * nll).sum() / w.sum())


# ---------------------------------------------------------------------------
# Binary tensor container for parameter bundles.
#
# Layout (little-endian): magic "LDOT" | u32 version=1 | u32 tensor_count |
# per tensor { u32 name_len, name_len UTF-8 bytes, u8 rank, rank x u32 dims,
# f32 payload (C order) }.
# ---------------------------------------------------------------------------

_TENSOR_MAGIC = b"LDOT"
_TENSOR_VERSION = 1


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [struct.pack("<4sII", _TENSOR_MAGIC, _TENSOR_VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype=np.float32))
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise IoFailure(f"cannot write tensor container {path}: {exc}") from exc


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read tensor container {path}: {exc}") from exc
    if len(data) < 12:
        raise TruncatedFile(f"{path}: {len(data)} bytes is shorter than the 12-byte header")
    magic, version, count = struct.unpack_from("<4sII", data)
    if magic != _TENSOR_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {_TENSOR_MAGIC!r}")
    if version != _TENSOR_VERSION:
        raise BadVersion(f"{path}: version {version} unsupported (expected {_TENSOR_VERSION})")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset : offset + name_len].decode("utf-8")
            if len(data) < offset + name_len:
                raise TruncatedFile(f"{path}: tensor {i} name runs past end of file")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
        except struct.error as exc:
            raise TruncatedFile(f"{path}: tensor {i} header runs past end of file") from exc
        n_values = int(np.prod(dims, dtype=np.int64)) if rank else 1
        end = offset + 4 * n_values
        if len(data) < end:
            raise TruncatedFile(f"{path}: tensor {name!r} payload runs past end of file")
        arr = np.frombuffer(data, dtype="<f4", count=n_values, offset=offset).reshape(dims)
        out[name] = arr.copy()
        offset = end
    if offset != len(data):
        raise TruncatedFile(f"{path}: {len(data) - offset} trailing bytes after last tensor")
    return out
