"""
Noise-injection and weight-precision robustness experiments.

Two additive zero-mean Gaussian noise models are injected into the output
activations of weighted layers:

- fixed: std = sigma, independent of the activation magnitude
- rescaled: std = ratio * (max |activation| of that layer in a clean pass)

Weights can be quantized to a symmetric uniform per-tensor grid. Accuracy is
estimated with Monte Carlo sweeps whose random streams are derived from
(master_seed, axis_index, trial_index, sample_index, layer_index), so a sweep
gives the same numbers for any thread count or execution order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, FrozenSet, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from infer import (
    DTYPE,
    Dataset,
    Tensor,
    WeightSet,
    check_weights,
    classify,
    run_layers,
)
from net_ir import LayerSpec, NetworkSpec, infer_shapes
from setting import get_thread_count

logger = logging.getLogger(__name__)

SEED_MASK = 2**64 - 1

StreamFactory = Callable[[int], np.random.Generator]


class SweepError(ValueError):
    """Invalid robustness experiment configuration or input."""


class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["fixed", "rescaled"] = "fixed"
    sigma: float = Field(default=0.0, ge=0.0)
    ratio: float = Field(default=0.0, ge=0.0)
    # noise after the relu that follows a weighted layer, or right at its output
    placement: Literal["post", "pre"] = "post"
    # rescaled mode: per-sample layer max, or max over the whole dataset
    calibration: Literal["sample", "dataset"] = "sample"
    # weighted layer ids that receive noise; None means all
    layers: Optional[FrozenSet[str]] = None

    @property
    def level(self) -> float:
        return self.sigma if self.mode == "fixed" else self.ratio

    def at(self, value: float) -> "NoiseSpec":
        """Same spec with the noise level set to `value`."""
        key = "sigma" if self.mode == "fixed" else "ratio"
        return self.model_copy(update={key: float(value)})


class QuantSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    bits: int = Field(ge=2, le=16)
    scheme: Literal["symmetric-uniform-per-tensor"] = "symmetric-uniform-per-tensor"

    @property
    def levels(self) -> int:
        return 2 ** (self.bits - 1) - 1


def _check_axis(points: Sequence[float]) -> Sequence[float]:
    if not points:
        raise ValueError("sweep axis is empty")
    if min(points) < 0:
        raise ValueError("sweep axis values must be >= 0")
    if any(b <= a for a, b in zip(points, points[1:])):
        raise ValueError("sweep axis must be strictly increasing")
    return points


class EvalConfig(BaseModel):
    trials: int = Field(default=1, ge=1)
    master_seed: int = 0
    points: List[float]
    threads: Optional[int] = None

    @field_validator("points")
    @classmethod
    def check_points(cls, v: List[float]) -> List[float]:
        return list(_check_axis(v))


class EvalPoint(BaseModel):
    axis_value: float
    accuracy_mean: float
    accuracy_std: float
    trials: int
    master_seed: int


class EvalReport(BaseModel):
    network: str
    axis: str  # sigma | ratio | bits
    points: List[EvalPoint]

    def accuracy(self) -> List[float]:
        return [p.accuracy_mean for p in self.points]


class RankChange(BaseModel):
    axis_value: float
    ranking: List[str]


def rng_stream(
    master_seed: int,
    axis_index: int,
    trial_index: int,
    sample_index: int,
    layer_index: int,
) -> np.random.Generator:
    """Counter-based Philox stream for one (point, trial, sample, layer) cell."""
    seq = np.random.SeedSequence(
        entropy=master_seed & SEED_MASK,
        spawn_key=(axis_index, trial_index, sample_index, layer_index),
    )
    return np.random.Generator(np.random.Philox(seq))


def inject_noise(
    activations: Tensor,
    spec: NoiseSpec,
    layer_max: Optional[float],
    rng: np.random.Generator,
) -> Tensor:
    """activations + N(0, std^2) elementwise; the input tensor is untouched."""
    if spec.mode == "fixed":
        std = spec.sigma
    else:
        if layer_max is None or not np.isfinite(layer_max) or layer_max < 0:
            raise SweepError(f"rescaled noise needs a layer_max, got {layer_max}")
        std = spec.ratio * layer_max
    if std == 0:
        return activations
    noise = (std * rng.standard_normal(activations.dims)).astype(DTYPE)
    return Tensor.wrap(activations.data + noise)


def injection_points(net: NetworkSpec, spec: NoiseSpec) -> Dict[str, int]:
    """Map the id of each layer whose output gets noise to its weighted-layer index."""
    weighted = [layer.id for layer in net.weighted_layers()]
    if spec.layers is not None:
        unknown = sorted(set(spec.layers) - set(weighted))
        if unknown:
            raise SweepError(f"noise layers are not weighted layers: {unknown}")
    consumers = net.consumers()
    kinds = {layer.id: layer.kind for layer in net.layers}

    points = {}
    for index, layer_id in enumerate(weighted):
        if spec.layers is not None and layer_id not in spec.layers:
            continue
        target = layer_id
        nxt = consumers[layer_id]
        if spec.placement == "post" and len(nxt) == 1 and kinds[nxt[0]] == "relu":
            target = nxt[0]
        points[target] = index
    return points


def clean_layer_max(
    net: NetworkSpec, weights: WeightSet, x: Tensor, points: Dict[str, int]
) -> Dict[str, float]:
    """Max |activation| at each injection point in a noise-free pass."""
    outputs = run_layers(net, weights, x)
    return {lid: float(np.max(np.abs(outputs[lid].data))) for lid in points}


def noisy_forward(
    net: NetworkSpec,
    weights: WeightSet,
    x: Tensor,
    spec: NoiseSpec,
    rng: Union[np.random.Generator, StreamFactory],
    layer_max: Optional[Dict[str, float]] = None,
    points: Optional[Dict[str, int]] = None,
) -> Tensor:
    """Forward pass with noise injected at every injection point.

    `rng` is either one generator shared by all layers or a factory returning
    the stream for a weighted-layer index. In rescaled mode `layer_max` is
    taken from a clean pass of the same input unless given.
    """
    points = points if points is not None else injection_points(net, spec)
    if spec.mode == "rescaled" and layer_max is None:
        layer_max = clean_layer_max(net, weights, x, points)
    layer_max = layer_max or {}
    streams: StreamFactory = rng if callable(rng) else (lambda _: rng)

    def tap(layer: LayerSpec, y: Tensor) -> Tensor:
        index = points.get(layer.id)
        if index is None:
            return y
        return inject_noise(y, spec, layer_max.get(layer.id), streams(index))

    return run_layers(net, weights, x, tap)[net.layers[-1].id]


def quantize_tensor(w: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Symmetric uniform quantization, rounding half away from zero."""
    w = np.asarray(w, dtype=DTYPE)
    amax = float(np.max(np.abs(w))) if w.size else 0.0
    if amax == 0.0:
        return w.copy()
    levels = spec.levels
    scale = amax / levels
    q = w.astype(np.float64) / scale
    q = np.sign(q) * np.floor(np.abs(q) + 0.5)
    q = np.clip(q, -levels, levels)
    return (q * scale).astype(DTYPE)


def quantize_weights(weights: WeightSet, spec: QuantSpec) -> WeightSet:
    return {layer_id: quantize_tensor(w, spec) for layer_id, w in weights.items()}


def evaluate(net: NetworkSpec, weights: WeightSet, dataset: Dataset) -> float:
    """Clean accuracy over the dataset."""
    if len(dataset) == 0:
        raise SweepError("dataset is empty")
    correct = 0
    for i in range(len(dataset)):
        logits = run_layers(net, weights, dataset.sample(i))[net.layers[-1].id]
        correct += classify(logits) == int(dataset.labels[i])
    return correct / len(dataset)


def make_config(points: Sequence[float], **kwargs) -> EvalConfig:
    """Build an EvalConfig, reporting bad axes or trial counts as SweepError."""
    try:
        return EvalConfig(points=list(points), **kwargs)
    except ValidationError as e:
        raise SweepError(e.errors()[0]["msg"]) from e


def sweep_noise(
    net: NetworkSpec,
    weights: WeightSet,
    dataset: Dataset,
    spec: NoiseSpec,
    cfg: EvalConfig,
) -> EvalReport:
    """Monte Carlo accuracy at every noise level of the axis."""
    if len(dataset) == 0:
        raise SweepError("dataset is empty")
    check_weights(net, weights, infer_shapes(net))
    points = injection_points(net, spec)
    samples = [dataset.sample(i) for i in range(len(dataset))]
    labels = [int(v) for v in dataset.labels]

    maxima: List[Dict[str, float]] = [{} for _ in samples]
    if spec.mode == "rescaled":
        maxima = [clean_layer_max(net, weights, x, points) for x in samples]
        if spec.calibration == "dataset":
            pooled = {lid: max(m[lid] for m in maxima) for lid in points}
            maxima = [pooled for _ in samples]

    def run_trial(job) -> float:
        axis_index, trial_index = job
        point_spec = spec.at(cfg.points[axis_index])
        correct = 0
        for sample_index, x in enumerate(samples):

            def streams(layer_index: int) -> np.random.Generator:
                return rng_stream(
                    cfg.master_seed, axis_index, trial_index, sample_index, layer_index
                )

            logits = noisy_forward(
                net, weights, x, point_spec, streams, maxima[sample_index], points
            )
            correct += classify(logits) == labels[sample_index]
        return correct / len(samples)

    jobs = [(a, t) for a in range(len(cfg.points)) for t in range(cfg.trials)]
    workers = min(get_thread_count(cfg.threads), len(jobs))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_trial, jobs))

    axis = "sigma" if spec.mode == "fixed" else "ratio"
    report = []
    for axis_index, value in enumerate(cfg.points):
        start = axis_index * cfg.trials
        acc = np.array(results[start : start + cfg.trials])
        report.append(
            EvalPoint(
                axis_value=value,
                accuracy_mean=float(acc.mean()),
                accuracy_std=float(acc.std()),
                trials=cfg.trials,
                master_seed=cfg.master_seed,
            )
        )
        logger.info(
            f"{net.name} {axis}={value}: accuracy {acc.mean():.4f} +/- {acc.std():.4f}"
        )
    return EvalReport(network=net.name, axis=axis, points=report)


def sweep_quant(
    net: NetworkSpec,
    weights: WeightSet,
    dataset: Dataset,
    bits: Sequence[int],
) -> EvalReport:
    """Clean accuracy with weights quantized to each bit width."""
    if len(dataset) == 0:
        raise SweepError("dataset is empty")
    make_config([float(b) for b in bits])
    check_weights(net, weights, infer_shapes(net))

    points = []
    for b in bits:
        try:
            spec = QuantSpec(bits=b)
        except ValidationError as e:
            raise SweepError(f"bits={b}: {e.errors()[0]['msg']}") from e
        acc = evaluate(net, quantize_weights(weights, spec), dataset)
        logger.info(f"{net.name} bits={b}: accuracy {acc:.4f}")
        points.append(
            EvalPoint(
                axis_value=b,
                accuracy_mean=acc,
                accuracy_std=0.0,
                trials=1,
                master_seed=0,
            )
        )
    return EvalReport(network=net.name, axis="bits", points=points)


def rank_changes(reports: Dict[str, EvalReport]) -> List[RankChange]:
    """Axis points where the accuracy ranking differs from the first point.

    Rankings sort by accuracy (highest first), ties by name.
    """
    if not reports:
        return []
    axes = {tuple(p.axis_value for p in r.points) for r in reports.values()}
    if len(axes) != 1:
        raise SweepError("reports must share the same sweep axis")
    axis = axes.pop()

    def ranking(i: int) -> List[str]:
        return sorted(reports, key=lambda n: (-reports[n].points[i].accuracy_mean, n))

    base = ranking(0)
    changes = []
    for i, value in enumerate(axis):
        order = ranking(i)
        if order != base:
            changes.append(RankChange(axis_value=value, ranking=order))
    return changes
