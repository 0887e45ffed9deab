"""
Weight-stationary mapping of DNN layers onto PIM memory arrays.

One filter (r*s*c weights) occupies one column; m filters occupy m columns.
Filters taller or wider than the array are tiled by ceil-division into
T_r x T_c sub-arrays that are activated one after another. When a layer fits,
optional block-diagonal replication places several copies on disjoint row and
column ranges so each pass serves several output positions.

Costs are counts: passes (latency proxy), pass-weighted cell utilization,
activation values streamed in, outputs written and partial sums moved out.
"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict

from net_ir import LayerShape, LayerSpec, NetworkSpec, ShapeInfo, infer_shapes
from setting import get_settings, get_thread_count

logger = logging.getLogger(__name__)

UTILIZATION_WEIGHTING = "pass-weighted"


class MappingError(ValueError):
    """Layer cannot be mapped onto the given array."""


class ArraySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: int
    cols: int

    @property
    def cells(self) -> int:
        return self.rows * self.cols

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


class MappingOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    replication: bool = False


class Tile(BaseModel):
    row_start: int
    rows: int
    col_start: int
    cols: int

    @property
    def cells(self) -> int:
        return self.rows * self.cols


class LayerMapping(BaseModel):
    layer_id: str
    filter_rows: int  # r*s*c
    filters: int  # m
    row_tiles: int
    col_tiles: int
    replication_factor: int = 1
    used_cells_per_pass: int


class LayerCost(BaseModel):
    layer_id: str
    rows: int
    cols: int
    passes: int = 0
    utilization: float = 0.0
    used_cells: int = 0
    input_reads: int = 0
    output_writes: int = 0
    psum_updates: int = 0
    num_macs: int = 0

    @property
    def activation_reuse(self) -> float:
        """Mean number of columns each streamed activation is used by."""
        return self.num_macs / self.input_reads if self.input_reads else 0.0


class MappingReport(BaseModel):
    network: str
    rows: int
    cols: int
    replication: bool
    utilization_weighting: str = UTILIZATION_WEIGHTING
    layers: List[LayerCost]
    total: LayerCost

    @property
    def mean_utilization(self) -> float:
        return self.total.utilization


class SweepTable(BaseModel):
    network: str
    replication: bool
    reports: List[MappingReport]


def ceildiv(a: int, b: int) -> int:
    return -(a // -b)


def _check_array(array: ArraySpec) -> None:
    if array.rows < 1 or array.cols < 1:
        raise MappingError(f"array must have rows, cols >= 1 (got {array})")


def tile_layer(mapping: LayerMapping, array: ArraySpec) -> List[Tile]:
    """Row-major list of tiles; edge tiles carry the remainder dimensions."""
    tiles = []
    for i in range(mapping.row_tiles):
        row_start = i * array.rows
        rows = min(array.rows, mapping.filter_rows - row_start)
        for j in range(mapping.col_tiles):
            col_start = j * array.cols
            cols = min(array.cols, mapping.filters - col_start)
            tiles.append(
                Tile(row_start=row_start, rows=rows, col_start=col_start, cols=cols)
            )
    return tiles


def map_layer(
    layer: LayerSpec,
    shape: LayerShape,
    array: ArraySpec,
    opts: Optional[MappingOptions] = None,
) -> LayerMapping:
    """Place a weighted layer's R*S*C x M filter matrix on the array."""
    opts = opts or MappingOptions()
    _check_array(array)
    if not layer.weighted:
        raise MappingError(f"{layer.id}: {layer.kind} layer has no weights to map")

    k = layer.r * layer.s * shape.c
    m = layer.m
    row_tiles = ceildiv(k, array.rows)
    col_tiles = ceildiv(m, array.cols)

    rho = 1
    if opts.replication and row_tiles == 1 and col_tiles == 1:
        rho = max(1, min(array.rows // k, array.cols // m))

    if rho > 1:
        used = rho * k * m
    else:
        used = min(k, array.rows) * min(m, array.cols)

    return LayerMapping(
        layer_id=layer.id,
        filter_rows=k,
        filters=m,
        row_tiles=row_tiles,
        col_tiles=col_tiles,
        replication_factor=rho,
        used_cells_per_pass=used,
    )


def layer_cost(
    layer: LayerSpec,
    shape: LayerShape,
    array: ArraySpec,
    opts: Optional[MappingOptions] = None,
) -> LayerCost:
    """Passes, utilization and data movement of one layer; zero if unweighted."""
    if not layer.weighted:
        _check_array(array)
        return LayerCost(layer_id=layer.id, rows=array.rows, cols=array.cols)

    mapping = map_layer(layer, shape, array, opts)
    positions = shape.e * shape.f
    k, m = mapping.filter_rows, mapping.filters
    rho = mapping.replication_factor

    if rho > 1:
        full, rest = divmod(positions, rho)
        passes = full + (1 if rest else 0)
        # last pass may run fewer copies
        used = full * rho * k * m + rest * k * m
    else:
        tiles = tile_layer(mapping, array)
        passes = positions * len(tiles)
        used = positions * sum(t.cells for t in tiles)

    return LayerCost(
        layer_id=layer.id,
        rows=array.rows,
        cols=array.cols,
        passes=passes,
        utilization=used / (passes * array.cells),
        used_cells=used,
        input_reads=positions * mapping.col_tiles * k,
        output_writes=positions * m,
        psum_updates=positions * m * mapping.row_tiles,
        num_macs=positions * k * m,
    )


def report(
    net: NetworkSpec,
    array: ArraySpec,
    opts: Optional[MappingOptions] = None,
    shapes: Optional[ShapeInfo] = None,
) -> MappingReport:
    """Per weighted layer costs plus network totals on a single array size."""
    opts = opts or MappingOptions()
    _check_array(array)
    shapes = shapes or infer_shapes(net)

    rows = [
        layer_cost(layer, shapes[layer.id], array, opts)
        for layer in net.weighted_layers()
    ]

    passes = sum(r.passes for r in rows)
    used = sum(r.used_cells for r in rows)
    total = LayerCost(
        layer_id="TOTAL",
        rows=array.rows,
        cols=array.cols,
        passes=passes,
        utilization=used / (passes * array.cells) if passes else 0.0,
        used_cells=used,
        input_reads=sum(r.input_reads for r in rows),
        output_writes=sum(r.output_writes for r in rows),
        psum_updates=sum(r.psum_updates for r in rows),
        num_macs=sum(r.num_macs for r in rows),
    )
    logger.debug(
        f"{net.name} on {array}: {passes} passes, utilization {total.utilization:.4f}"
    )
    return MappingReport(
        network=net.name,
        rows=array.rows,
        cols=array.cols,
        replication=opts.replication,
        layers=rows,
        total=total,
    )


def sweep_arrays(
    net: NetworkSpec,
    sizes: List[ArraySpec],
    opts: Optional[MappingOptions] = None,
    threads: Optional[int] = None,
) -> SweepTable:
    """One report per array size, in input order."""
    if not sizes:
        raise MappingError("array size list is empty")
    opts = opts or MappingOptions()
    shapes = infer_shapes(net)
    for array in sizes:
        _check_array(array)

    workers = min(get_thread_count(threads), len(sizes))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(lambda a: report(net, a, opts, shapes), sizes))

    logger.info(f"Swept {net.name} over {len(sizes)} array sizes")
    return SweepTable(network=net.name, replication=opts.replication, reports=reports)


SIZE_RE = re.compile(r"^\s*(\d+)\s*(?:[xX]\s*(\d+))?\s*$")


def parse_array_sizes(text: str) -> List[ArraySpec]:
    """Parse "128,512,1024x256" into array specs; a bare number is square."""
    sizes = []
    for token in text.split(","):
        if not token.strip():
            continue
        match = SIZE_RE.match(token)
        if not match:
            raise MappingError(f"invalid array size '{token.strip()}'")
        rows = int(match.group(1))
        cols = int(match.group(2)) if match.group(2) else rows
        sizes.append(ArraySpec(rows=rows, cols=cols))
    if not sizes:
        raise MappingError("array size list is empty")
    return sizes


def load_array_sizes(path: Optional[Union[str, Path]] = None) -> List[ArraySpec]:
    """Default sweep sizes from the JSON config file."""
    path = Path(path or get_settings().ARRAY_SIZES_PATH)
    if not path.is_absolute() and not path.exists():
        path = Path(__file__).parent / path
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    sizes = [ArraySpec(rows=n, cols=n) for n in data.get("square", [])]
    sizes += [ArraySpec(rows=r, cols=c) for r, c in data.get("rectangular", [])]
    logger.info(f"Loaded {len(sizes)} array sizes from {path}")
    return sizes
