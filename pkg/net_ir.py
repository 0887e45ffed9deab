"""
Architecture IR for DNN layer graphs.

A network is an ordered list of layers (conv, fc, maxpool, avgpool, relu, add)
forming a DAG. This module validates the graph, infers feature-map shapes and
computes weight / MAC / activation counts. A fully-connected layer is treated
as a convolution whose filter covers the whole input map (r = H, s = W).
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from setting import get_settings

logger = logging.getLogger(__name__)

LAYER_KINDS = ("conv", "fc", "maxpool", "avgpool", "relu", "add")
WEIGHTED_KINDS = ("conv", "fc")
POOL_KINDS = ("maxpool", "avgpool")


class SpecError(ValueError):
    """Invalid network spec (schema, graph or shape rule)."""


class CountOverflowError(SpecError):
    """A count exceeded the configured maximum."""


# Pydantic models
class InputShape(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    h: int = Field(ge=1)
    w: int = Field(ge=1)
    c: int = Field(ge=1)


class LayerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    kind: str
    r: Optional[int] = None
    s: Optional[int] = None
    m: Optional[int] = None
    stride: int = 1
    pad: int = 0
    inputs: List[str] = Field(default_factory=list)

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED_KINDS


class NetworkSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    name: str
    input_shape: InputShape = Field(alias="input")
    layers: List[LayerSpec]

    def layer(self, layer_id: str) -> LayerSpec:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def weighted_layers(self) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.weighted]

    def consumers(self) -> Dict[str, List[str]]:
        """Map each layer id to the ids of the layers reading its output."""
        out: Dict[str, List[str]] = {layer.id: [] for layer in self.layers}
        for layer in self.layers:
            for src in layer.inputs:
                if src in out:
                    out[src].append(layer.id)
        return out


class Violation(BaseModel):
    layer_id: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.layer_id}: {self.message}"


class LayerShape(BaseModel):
    model_config = ConfigDict(frozen=True)

    # input map
    h: int
    w: int
    c: int
    # output map
    e: int
    f: int
    m_out: int

    @property
    def out_dims(self) -> Tuple[int, int, int]:
        return (self.e, self.f, self.m_out)


class ShapeInfo(BaseModel):
    network: str
    layers: Dict[str, LayerShape]

    def __getitem__(self, layer_id: str) -> LayerShape:
        return self.layers[layer_id]


class LayerCounts(BaseModel):
    layer_id: str
    kind: str
    num_weights: int = 0
    num_macs: int = 0
    num_input_activations: int = 0
    num_output_activations: int = 0


class CountReport(BaseModel):
    network: str
    layers: List[LayerCounts]
    total: LayerCounts


COUNT_FIELDS = (
    "num_weights",
    "num_macs",
    "num_input_activations",
    "num_output_activations",
)


def _out_size(size: int, pad: int, window: int, stride: int) -> int:
    return (size + 2 * pad - window) // stride + 1


def _walk(net: NetworkSpec) -> Tuple[Dict[str, LayerShape], List[Violation]]:
    """Propagate shapes through the graph, collecting every rule violation."""
    violations: List[Violation] = []
    shapes: Dict[str, LayerShape] = {}
    seen: set = set()

    def flag(layer_id: str, rule: str, message: str) -> None:
        violations.append(Violation(layer_id=layer_id, rule=rule, message=message))

    for idx, layer in enumerate(net.layers):
        lid = layer.id
        if lid in seen:
            flag(lid, "unique-id", f"duplicate layer id '{lid}'")
            continue
        seen.add(lid)

        if layer.kind not in LAYER_KINDS:
            flag(lid, "kind", f"unknown kind '{layer.kind}'")
            continue

        ok = True
        geometry = (layer.r, layer.s, layer.m)
        if layer.kind in WEIGHTED_KINDS:
            if any(v is None or v < 1 for v in geometry):
                flag(lid, "geometry", f"{layer.kind} requires r, s, m >= 1")
                ok = False
        elif layer.kind in POOL_KINDS:
            if any(v is None or v < 1 for v in geometry[:2]):
                flag(lid, "geometry", f"{layer.kind} requires r, s >= 1")
                ok = False
            if layer.m is not None:
                flag(lid, "geometry", f"{layer.kind} takes m from its input")
                ok = False
        elif any(v is not None for v in geometry):
            flag(lid, "geometry", f"{layer.kind} carries no r/s/m")
            ok = False

        if layer.stride < 1:
            flag(lid, "stride", "stride must be a positive integer")
            ok = False
        if layer.pad < 0:
            flag(lid, "pad", "pad must be non-negative")
            ok = False

        arity = 2 if layer.kind == "add" else 1
        need = f"{layer.kind} requires {arity} input" + ("s" if arity > 1 else "")
        if not layer.inputs:
            if idx != 0 or arity != 1:
                flag(lid, "arity", need)
                ok = False
        elif len(layer.inputs) != arity:
            flag(lid, "arity", need)
            ok = False

        for src in layer.inputs:
            if src not in seen or src == lid:
                flag(lid, "order", f"input '{src}' is not an earlier layer")
                ok = False

        if not ok:
            continue

        if layer.inputs:
            in_shapes = [shapes.get(src) for src in layer.inputs]
            if any(s is None for s in in_shapes):
                # upstream already reported
                continue
            in_dims = [s.out_dims for s in in_shapes]
        else:
            ishape = net.input_shape
            in_dims = [(ishape.h, ishape.w, ishape.c)]

        if layer.kind == "add" and in_dims[0] != in_dims[1]:
            flag(lid, "add-shape", f"add inputs differ: {in_dims[0]} vs {in_dims[1]}")
            continue

        h, w, c = in_dims[0]
        if layer.kind in WEIGHTED_KINDS or layer.kind in POOL_KINDS:
            if layer.kind == "fc" and (layer.r != h or layer.s != w or layer.pad):
                flag(
                    lid,
                    "fc-shape",
                    f"fc requires r = input H and s = input W with pad 0 "
                    f"(r={layer.r}, s={layer.s}, input {h}x{w})",
                )
                continue
            e = _out_size(h, layer.pad, layer.r, layer.stride)
            f = _out_size(w, layer.pad, layer.s, layer.stride)
            if e < 1 or f < 1:
                flag(lid, "shape", "filter larger than padded input")
                continue
            m_out = layer.m if layer.kind in WEIGHTED_KINDS else c
        else:
            e, f, m_out = h, w, c

        shapes[lid] = LayerShape(h=h, w=w, c=c, e=e, f=f, m_out=m_out)

    consumed = {src for layer in net.layers for src in layer.inputs}
    terminals = [layer.id for layer in net.layers if layer.id not in consumed]
    if len(terminals) != 1:
        flag(
            net.name,
            "terminal",
            f"expected exactly one terminal layer, found {len(terminals)}",
        )

    return shapes, violations


def validate(net: NetworkSpec) -> List[Violation]:
    """Return every rule violation in the network; empty iff well-formed."""
    _, violations = _walk(net)
    for v in violations:
        logger.debug(f"Violation in {net.name}: {v}")
    return violations


def infer_shapes(net: NetworkSpec) -> ShapeInfo:
    """Annotate every layer with its input and output dimensions."""
    shapes, violations = _walk(net)
    if violations:
        raise SpecError("; ".join(str(v) for v in violations))
    return ShapeInfo(network=net.name, layers=shapes)


def count(net: NetworkSpec, shapes: Optional[ShapeInfo] = None) -> CountReport:
    """Weights, MACs and activations per layer and for the whole network."""
    shapes = shapes or infer_shapes(net)
    limit = get_settings().MAX_COUNT
    rows: List[LayerCounts] = []

    for layer in net.layers:
        sh = shapes[layer.id]
        weights = macs = 0
        if layer.weighted:
            weights = layer.r * layer.s * sh.c * layer.m
            macs = weights * sh.e * sh.f
        in_acts = sh.h * sh.w * sh.c * max(1, len(layer.inputs))
        row = LayerCounts(
            layer_id=layer.id,
            kind=layer.kind,
            num_weights=weights,
            num_macs=macs,
            num_input_activations=in_acts,
            num_output_activations=sh.m_out * sh.e * sh.f,
        )
        for name in COUNT_FIELDS:
            if getattr(row, name) > limit:
                raise CountOverflowError(
                    f"{layer.id}: {name} exceeds {limit} ({getattr(row, name)})"
                )
        rows.append(row)

    totals = {name: sum(getattr(r, name) for r in rows) for name in COUNT_FIELDS}
    for name, value in totals.items():
        if value > limit:
            raise CountOverflowError(f"network total {name} exceeds {limit}")

    return CountReport(
        network=net.name,
        layers=rows,
        total=LayerCounts(layer_id="TOTAL", kind="", **totals),
    )


class CountComparison(BaseModel):
    first: str
    second: str
    totals: Dict[str, Tuple[int, int]]
    activation_inversion: bool


def compare_counts(a: CountReport, b: CountReport) -> CountComparison:
    """Compare two networks' totals and flag the weights-vs-activations inversion.

    The inversion holds when one network has fewer weights (or fewer MACs) but
    more output activations than the other.
    """
    totals = {
        name: (getattr(a.total, name), getattr(b.total, name)) for name in COUNT_FIELDS
    }
    wa, wb = totals["num_weights"]
    ma, mb = totals["num_macs"]
    oa, ob = totals["num_output_activations"]
    inversion = ((wb < wa or mb < ma) and ob > oa) or ((wa < wb or ma < mb) and oa > ob)
    return CountComparison(
        first=a.network,
        second=b.network,
        totals=totals,
        activation_inversion=inversion,
    )


def _describe_validation_error(raw: dict, err: ValidationError) -> str:
    first = err.errors()[0]
    loc = first.get("loc", ())
    where = ".".join(str(p) for p in loc)
    if len(loc) >= 2 and loc[0] == "layers" and isinstance(loc[1], int):
        try:
            layer_id = raw["layers"][loc[1]].get("id", f"#{loc[1]}")
        except (KeyError, IndexError, TypeError, AttributeError):
            layer_id = f"#{loc[1]}"
        field = ".".join(str(p) for p in loc[2:]) or "layer"
        return f"layer '{layer_id}': {field}: {first['msg']}"
    return f"{where or 'network'}: {first['msg']}"


def parse_network(text: str) -> NetworkSpec:
    """Parse a network spec from JSON text; unknown keys are rejected."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"invalid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise SpecError("network spec must be a JSON object")
    try:
        return NetworkSpec.model_validate(raw)
    except ValidationError as e:
        raise SpecError(_describe_validation_error(raw, e)) from e


def load_network(path: Union[str, Path]) -> NetworkSpec:
    with open(path, encoding="utf-8") as f:
        net = parse_network(f.read())
    logger.info(f"Loaded network '{net.name}' with {len(net.layers)} layers")
    return net


def dump_network(net: NetworkSpec) -> str:
    return json.dumps(net.model_dump(by_alias=True, exclude_none=True), indent=2)
