"""
Minimal deterministic forward-pass engine (float32, HWC feature maps).

Convolution is cross-correlation with symmetric zero padding. Every output
element accumulates its products in a fixed order (c outer, then r, then s
innermost), so results are bit-reproducible and can be compared exactly with a
naive loop implementation. Weight blocks are indexed [m][c][r][s].
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError

from net_ir import LayerSpec, NetworkSpec, ShapeInfo, infer_shapes

logger = logging.getLogger(__name__)

DTYPE = np.float32
BLOB_DTYPE = "<f4"

WeightSet = Dict[str, np.ndarray]
LayerTap = Callable[[LayerSpec, "Tensor"], "Tensor"]


class ShapeMismatchError(ValueError):
    """Tensor or weight dimensions do not fit the operation."""


class DataFileError(ValueError):
    """Malformed weights or dataset file."""


@dataclass(frozen=True)
class Tensor:
    """Immutable dense float32 feature map with dims (h, w, c) or (n,)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=DTYPE, copy=True)
        if arr.ndim not in (1, 3):
            raise ShapeMismatchError(
                f"tensor must be (h, w, c) or (n,), got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ShapeMismatchError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    def as_map(self) -> np.ndarray:
        """View as (h, w, c); a flat tensor becomes 1 x 1 x n."""
        if self.data.ndim == 1:
            return self.data.reshape(1, 1, -1)
        return self.data

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a freshly computed float32 array without the entry checks."""
        t = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=DTYPE)
        arr.flags.writeable = False
        object.__setattr__(t, "data", arr)
        return t


def _out_size(size: int, pad: int, window: int, stride: int) -> int:
    return (size + 2 * pad - window) // stride + 1


def _windows(
    xp: np.ndarray, r: int, s: int, stride: int, e: int, f: int
) -> Callable[[int, int], np.ndarray]:
    """Strided (e, f, c) slice of the padded map for filter offset (ri, si)."""

    def at(ri: int, si: int) -> np.ndarray:
        rows = slice(ri, ri + stride * (e - 1) + 1, stride)
        cols = slice(si, si + stride * (f - 1) + 1, stride)
        return xp[rows, cols, :]

    return at


def conv_forward(x: Tensor, w: np.ndarray, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate x (h, w, c) with filters w [m][c][r][s]."""
    xm = x.as_map()
    w = np.asarray(w, dtype=DTYPE)
    if w.ndim != 4:
        raise ShapeMismatchError(
            f"weight block must be 4-D [m][c][r][s], got {w.shape}"
        )
    h, wd, c = xm.shape
    m, wc, r, s = w.shape
    if wc != c:
        raise ShapeMismatchError(f"input has {c} channels, filters expect {wc}")
    e = _out_size(h, pad, r, stride)
    f = _out_size(wd, pad, s, stride)
    if e < 1 or f < 1:
        raise ShapeMismatchError("filter larger than padded input")

    xp = np.pad(xm, ((pad, pad), (pad, pad), (0, 0))) if pad else xm
    at = _windows(xp, r, s, stride, e, f)
    out = np.zeros((e, f, m), dtype=DTYPE)
    for ci in range(c):
        for ri in range(r):
            for si in range(s):
                out += at(ri, si)[:, :, ci, None] * w[None, None, :, ci, ri, si]
    return Tensor.wrap(out)


def fc_forward(x: Tensor, w: np.ndarray) -> Tensor:
    """Fully-connected layer: a convolution whose filter covers the input map."""
    h, wd, _ = x.as_map().shape
    if w.shape[2:] != (h, wd):
        raise ShapeMismatchError(
            f"fc filter {w.shape[2]}x{w.shape[3]} must cover the {h}x{wd} input"
        )
    return conv_forward(x, w, stride=1, pad=0)


def relu(x: Tensor) -> Tensor:
    return Tensor.wrap(np.maximum(x.data, DTYPE(0)))


def maxpool(x: Tensor, r: int, s: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Window maximum; padded cells never win."""
    xm = x.as_map()
    h, wd, c = xm.shape
    e, f = _out_size(h, pad, r, stride), _out_size(wd, pad, s, stride)
    if e < 1 or f < 1:
        raise ShapeMismatchError("pool window larger than padded input")
    xp = xm
    if pad:
        xp = np.pad(xm, ((pad, pad), (pad, pad), (0, 0)), constant_values=-np.inf)
    at = _windows(xp, r, s, stride, e, f)
    out = np.full((e, f, c), -np.inf, dtype=DTYPE)
    for ri in range(r):
        for si in range(s):
            np.maximum(out, at(ri, si), out=out)
    return Tensor.wrap(out)


def avgpool(x: Tensor, r: int, s: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Window mean over r*s cells, zero padding included in the divisor."""
    xm = x.as_map()
    h, wd, c = xm.shape
    e, f = _out_size(h, pad, r, stride), _out_size(wd, pad, s, stride)
    if e < 1 or f < 1:
        raise ShapeMismatchError("pool window larger than padded input")
    xp = np.pad(xm, ((pad, pad), (pad, pad), (0, 0))) if pad else xm
    at = _windows(xp, r, s, stride, e, f)
    out = np.zeros((e, f, c), dtype=DTYPE)
    for ri in range(r):
        for si in range(s):
            out += at(ri, si)
    return Tensor.wrap(out / DTYPE(r * s))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.dims != b.dims:
        raise ShapeMismatchError(f"add operands differ: {a.dims} vs {b.dims}")
    return Tensor.wrap(a.data + b.data)


def apply_layer(layer: LayerSpec, args: List[Tensor], weights: WeightSet) -> Tensor:
    """Evaluate one layer on its (already computed) inputs."""
    kind = layer.kind
    if kind in ("conv", "fc"):
        if layer.id not in weights:
            raise ShapeMismatchError(f"missing weights for layer '{layer.id}'")
        w = weights[layer.id]
        if kind == "fc":
            return fc_forward(args[0], w)
        return conv_forward(args[0], w, layer.stride, layer.pad)
    if kind == "relu":
        return relu(args[0])
    if kind == "maxpool":
        return maxpool(args[0], layer.r, layer.s, layer.stride, layer.pad)
    if kind == "avgpool":
        return avgpool(args[0], layer.r, layer.s, layer.stride, layer.pad)
    if kind == "add":
        return add(args[0], args[1])
    raise ShapeMismatchError(f"unsupported layer kind '{kind}'")


def check_weights(
    net: NetworkSpec, weights: WeightSet, shapes: Optional[ShapeInfo] = None
) -> None:
    """Every weighted layer needs a block of dims (m, c, r, s)."""
    shapes = shapes or infer_shapes(net)
    for layer in net.weighted_layers():
        if layer.id not in weights:
            raise ShapeMismatchError(f"missing weights for layer '{layer.id}'")
        expected = (layer.m, shapes[layer.id].c, layer.r, layer.s)
        got = tuple(np.shape(weights[layer.id]))
        if got != expected:
            raise ShapeMismatchError(
                f"weights for '{layer.id}' have dims {got}, expected {expected}"
            )
    known = {layer.id for layer in net.weighted_layers()}
    for extra in sorted(set(weights) - known):
        logger.warning(f"Ignoring weights for unknown or unweighted layer '{extra}'")


def run_layers(
    net: NetworkSpec,
    weights: WeightSet,
    x: Tensor,
    tap: Optional[LayerTap] = None,
) -> Dict[str, Tensor]:
    """Evaluate every layer in order; `tap` may replace each layer's output."""
    outputs: Dict[str, Tensor] = {}
    for layer in net.layers:
        args = [outputs[src] for src in layer.inputs] if layer.inputs else [x]
        y = apply_layer(layer, args, weights)
        if tap is not None:
            y = tap(layer, y)
        outputs[layer.id] = y
    return outputs


def network_forward(net: NetworkSpec, weights: WeightSet, x: Tensor) -> Tensor:
    """Logits of the terminal layer."""
    return run_layers(net, weights, x)[net.layers[-1].id]


def classify(logits: Tensor) -> int:
    """Argmax over channels, ties to the lowest index.

    A single logit is a binary decision by sign: class 1 iff it is > 0.
    """
    flat = logits.data.reshape(-1)
    if flat.size == 1:
        return int(flat[0] > 0)
    return int(np.argmax(flat))


# File formats
class WeightEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dims: List[PositiveInt]
    offset: int = Field(ge=0)
    length: int = Field(ge=0)


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_samples: int = Field(ge=0)
    dims: List[PositiveInt]
    labels: List[int]


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray  # (n, h, w, c) float32
    labels: np.ndarray  # (n,) int

    def __len__(self) -> int:
        return len(self.labels)

    def sample(self, i: int) -> Tensor:
        return Tensor(self.samples[i])


def blob_path(manifest_path: Union[str, Path]) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def save_weights(path: Union[str, Path], weights: Mapping[str, np.ndarray]) -> None:
    manifest = {}
    blocks = []
    offset = 0
    for layer_id, block in weights.items():
        arr = np.ascontiguousarray(block, dtype=BLOB_DTYPE)
        manifest[layer_id] = {
            "dims": list(arr.shape),
            "offset": offset,
            "length": int(arr.size),
        }
        blocks.append(arr.reshape(-1))
        offset += arr.size
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    blob = np.concatenate(blocks) if blocks else np.zeros(0, dtype=BLOB_DTYPE)
    blob.astype(BLOB_DTYPE).tofile(blob_path(path))


def load_weights(path: Union[str, Path]) -> WeightSet:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        entries = {k: WeightEntry.model_validate(v) for k, v in raw.items()}
    except (json.JSONDecodeError, ValidationError, AttributeError) as e:
        raise DataFileError(f"invalid weights manifest {path}: {e}") from e
    blob = np.fromfile(blob_path(path), dtype=BLOB_DTYPE)

    weights: WeightSet = {}
    for layer_id, entry in entries.items():
        if int(np.prod(entry.dims)) != entry.length or len(entry.dims) != 4:
            raise DataFileError(
                f"weights for '{layer_id}': dims {entry.dims} != length {entry.length}"
            )
        end = entry.offset + entry.length
        if end > blob.size:
            raise DataFileError(
                f"weights for '{layer_id}' run past the end of the blob"
            )
        weights[layer_id] = blob[entry.offset : end].astype(DTYPE).reshape(entry.dims)
    logger.info(f"Loaded weights for {len(weights)} layers from {path}")
    return weights


def save_dataset(path: Union[str, Path], dataset: Dataset) -> None:
    manifest = {
        "n_samples": len(dataset),
        "dims": list(dataset.samples.shape[1:]),
        "labels": [int(v) for v in dataset.labels],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    np.ascontiguousarray(dataset.samples, dtype=BLOB_DTYPE).tofile(blob_path(path))


def load_dataset(path: Union[str, Path]) -> Dataset:
    try:
        with open(path, encoding="utf-8") as f:
            manifest = DatasetManifest.model_validate(json.load(f))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DataFileError(f"invalid dataset manifest {path}: {e}") from e
    if len(manifest.labels) != manifest.n_samples:
        raise DataFileError(
            f"{path}: {manifest.n_samples} samples but {len(manifest.labels)} labels"
        )
    blob = np.fromfile(blob_path(path), dtype=BLOB_DTYPE)
    per_sample = int(np.prod(manifest.dims))
    expected = per_sample * manifest.n_samples
    if blob.size != expected:
        raise DataFileError(f"{path}: blob has {blob.size} floats, expected {expected}")
    samples = blob.astype(DTYPE).reshape([manifest.n_samples] + manifest.dims)
    logger.info(f"Loaded {manifest.n_samples} samples from {path}")
    return Dataset(samples=samples, labels=np.asarray(manifest.labels, dtype=np.int64))
