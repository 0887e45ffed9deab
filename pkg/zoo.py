"""
Shape-level model zoo and toy robustness fixtures.

Architectures follow the published layer tables of each family (no pretrained
weights). Batch norm is folded away, AlexNet is a single ungrouped tower, and
ResNets use projection shortcuts with the stride on the 3x3 convolution.

AlexNet filter-size variants (alexnet-k3, -k7, -k11) set every conv filter to
k x k. conv2-conv5 use pad (k-1)/2 to keep their output sizes; conv1 keeps its
55x55 output by resizing the input to 216 + k.

Toy fixtures carry weights and a labeled dataset with closed-form accuracy under
Gaussian noise (Phi = standard normal CDF, margin m, noise std sigma):

- toy-chain-D: D unit-weight 1x1 layers, sign-classified; P = Phi(m / (sigma sqrt D))
- toy-avg-k: a copy layer fans a scalar out to k channels (noise injected there),
  then a 1/k averaging layer; P = Phi(m sqrt k / sigma)
- rank-deep / rank-shallow: a pair whose accuracy order flips under noise and
  at 2-bit weights
"""

import logging
import re
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from infer import DTYPE, Dataset, WeightSet
from net_ir import LayerSpec, NetworkSpec, SpecError

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 1.0

RESNET_BLOCKS = {
    18: ("basic", [2, 2, 2, 2]),
    50: ("bottleneck", [3, 4, 6, 3]),
    152: ("bottleneck", [3, 8, 36, 3]),
}

VGG16_CFG = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M"]
VGG16_CFG += [512, 512, 512, "M", 512, 512, 512, "M"]


class ZooEntry(BaseModel):
    name: str
    family: str
    params: Dict[str, float] = {}
    description: str = ""
    has_weights: bool = False


@dataclass
class Fixture:
    net: NetworkSpec
    weights: WeightSet
    dataset: Dataset
    noise_layers: Optional[FrozenSet[str]] = None
    margin: float = DEFAULT_MARGIN


class NetBuilder:
    """Appends layers in topological order, tracking the most recent output."""

    def __init__(self, name: str, h: int, w: int, c: int):
        self.name = name
        self.input = {"h": h, "w": w, "c": c}
        self.layers: List[LayerSpec] = []
        self.last: Optional[str] = None

    def _push(self, layer_id: str, kind: str, inputs: List[str], **geometry) -> str:
        self.layers.append(
            LayerSpec(id=layer_id, kind=kind, inputs=inputs, **geometry)
        )
        self.last = layer_id
        return layer_id

    def _src(self, src: Optional[str]) -> List[str]:
        src = src or self.last
        return [src] if src else []

    def conv(self, lid, k, m, stride=1, pad=0, src=None) -> str:
        return self._push(
            lid, "conv", self._src(src), r=k, s=k, m=m, stride=stride, pad=pad
        )

    def fc(self, lid, r, s, m, src=None) -> str:
        return self._push(lid, "fc", self._src(src), r=r, s=s, m=m)

    def relu(self, lid, src=None) -> str:
        return self._push(lid, "relu", self._src(src))

    def pool(self, lid, kind, k, stride, pad=0, src=None) -> str:
        return self._push(lid, kind, self._src(src), r=k, s=k, stride=stride, pad=pad)

    def add(self, lid, a, b) -> str:
        return self._push(lid, "add", [a, b])

    def build(self) -> NetworkSpec:
        return NetworkSpec(name=self.name, input=self.input, layers=self.layers)


def alexnet(k: Optional[int] = None) -> NetworkSpec:
    """AlexNet; with k, every conv filter becomes k x k."""
    if k is not None and (k < 1 or k % 2 == 0):
        raise SpecError(f"alexnet variant filter size must be odd, got {k}")
    name = "alexnet" if k is None else f"alexnet-k{k}"
    k1 = 11 if k is None else k
    side = 216 + k1
    b = NetBuilder(name, side, side, 3)

    b.conv("conv1", k1, 96, stride=4)
    b.relu("relu1")
    b.pool("pool1", "maxpool", 3, 2)
    convs = [("conv2", 5, 256), ("conv3", 3, 384), ("conv4", 3, 384), ("conv5", 3, 256)]
    for lid, size, m in convs:
        size = size if k is None else k
        b.conv(lid, size, m, pad=(size - 1) // 2)
        b.relu(f"relu{lid[-1]}")
        if lid == "conv2":
            b.pool("pool2", "maxpool", 3, 2)
    b.pool("pool5", "maxpool", 3, 2)
    b.fc("fc6", 6, 6, 4096)
    b.relu("relu6")
    b.fc("fc7", 1, 1, 4096)
    b.relu("relu7")
    b.fc("fc8", 1, 1, 1000)
    return b.build()


def vgg16() -> NetworkSpec:
    b = NetBuilder("vgg16", 224, 224, 3)
    block, idx = 1, 1
    for item in VGG16_CFG:
        if item == "M":
            b.pool(f"pool{block}", "maxpool", 2, 2)
            block, idx = block + 1, 1
            continue
        b.conv(f"conv{block}_{idx}", 3, item, pad=1)
        b.relu(f"relu{block}_{idx}")
        idx += 1
    b.fc("fc6", 7, 7, 4096)
    b.relu("relu6")
    b.fc("fc7", 1, 1, 4096)
    b.relu("relu7")
    b.fc("fc8", 1, 1, 1000)
    return b.build()


def resnet(
    depth: int, width_factor: int = 1, name: Optional[str] = None
) -> NetworkSpec:
    """ResNet-18/50/152; width_factor widens the bottleneck 3x3 stage (WRN)."""
    if depth not in RESNET_BLOCKS:
        raise SpecError(f"unsupported resnet depth {depth}")
    block_kind, counts = RESNET_BLOCKS[depth]
    b = NetBuilder(name or f"resnet{depth}", 224, 224, 3)
    b.conv("conv1", 7, 64, stride=2, pad=3)
    b.relu("relu1")
    b.pool("pool1", "maxpool", 3, 2, pad=1)

    in_c = 64
    for stage, n_blocks in enumerate(counts, start=2):
        planes = 64 * 2 ** (stage - 2)
        for i in range(n_blocks):
            stride = 2 if (i == 0 and stage > 2) else 1
            tag = f"res{stage}{chr(ord('a') + i) if i < 26 else i}"
            entry = b.last
            if block_kind == "basic":
                out_c = planes
                b.conv(f"{tag}_conv1", 3, planes, stride=stride, pad=1, src=entry)
                b.relu(f"{tag}_relu1")
                main = b.conv(f"{tag}_conv2", 3, planes, pad=1)
            else:
                width = planes * width_factor
                out_c = planes * 4
                b.conv(f"{tag}_conv1", 1, width, src=entry)
                b.relu(f"{tag}_relu1")
                b.conv(f"{tag}_conv2", 3, width, stride=stride, pad=1)
                b.relu(f"{tag}_relu2")
                main = b.conv(f"{tag}_conv3", 1, out_c)
            shortcut = entry
            if stride != 1 or in_c != out_c:
                shortcut = b.conv(f"{tag}_proj", 1, out_c, stride=stride, src=entry)
            b.add(f"{tag}_add", main, shortcut)
            b.relu(f"{tag}_out")
            in_c = out_c

    b.pool("pool5", "avgpool", 7, 1)
    b.fc("fc", 1, 1, 1000)
    return b.build()


def plain_stack(name: str, depth: int, channels: int, side: int = 14) -> NetworkSpec:
    """`depth` 3x3 conv+relu layers with C = M = channels on side x side maps."""
    b = NetBuilder(name, side, side, channels)
    for i in range(1, depth + 1):
        b.conv(f"conv{i}", 3, channels, pad=1)
        if i < depth:
            b.relu(f"relu{i}")
    return b.build()


def toy_chain(depth: int) -> NetworkSpec:
    if depth < 1:
        raise SpecError("toy chain depth must be >= 1")
    b = NetBuilder(f"toy-chain-{depth}", 1, 1, 1)
    for i in range(1, depth + 1):
        b.fc(f"fc{i}", 1, 1, 1)
    return b.build()


def toy_avg(k: int) -> NetworkSpec:
    if k < 1:
        raise SpecError("averaging filter size must be >= 1")
    b = NetBuilder(f"toy-avg-{k}", 1, 1, 1)
    b.fc("copy", 1, 1, k)
    b.fc("avg", 1, 1, 1)
    return b.build()


def rank_pair_net(deep: bool) -> NetworkSpec:
    b = NetBuilder("rank-deep" if deep else "rank-shallow", 1, 1, 3)
    b.fc("fc1", 1, 1, 1)
    if deep:
        for i in range(2, 17):
            b.fc(f"fc{i}", 1, 1, 1)
    return b.build()


PATTERNS: List[Tuple[re.Pattern, str]] = [
    (re.compile(r"^toy-chain-(\d+)$"), "toy-chain"),
    (re.compile(r"^toy-avg-(\d+)$"), "toy-avg"),
    (re.compile(r"^alexnet-k(\d+)$"), "alexnet-variant"),
]

FIXED_BUILDERS = {
    "alexnet": alexnet,
    "vgg16": vgg16,
    "resnet18": lambda: resnet(18),
    "resnet50": lambda: resnet(50),
    "resnet152": lambda: resnet(152),
    "wide-resnet": lambda: resnet(50, width_factor=2, name="wide-resnet"),
    "deep-narrow": lambda: plain_stack("deep-narrow", 16, 64),
    "shallow-wide": lambda: plain_stack("shallow-wide", 4, 128),
    "rank-deep": lambda: rank_pair_net(True),
    "rank-shallow": lambda: rank_pair_net(False),
}


CATALOG = [
    ("alexnet", "alexnet", {}, False, "AlexNet, 227 input"),
    ("alexnet-k3", "alexnet-variant", {"k": 3}, False, "AlexNet with 3x3 filters"),
    ("alexnet-k7", "alexnet-variant", {"k": 7}, False, "AlexNet with 7x7 filters"),
    ("vgg16", "vgg", {}, False, "VGG-16"),
    ("resnet18", "resnet", {"depth": 18}, False, "ResNet-18, basic blocks"),
    ("resnet50", "resnet", {"depth": 50}, False, "ResNet-50, bottleneck blocks"),
    ("resnet152", "resnet", {"depth": 152}, False, "ResNet-152, bottleneck blocks"),
    (
        "wide-resnet",
        "resnet",
        {"depth": 50, "width": 2},
        False,
        "Wide ResNet-50-2: fewer but larger layers",
    ),
    (
        "toy-chain-D",
        "toy-chain",
        {"D": 4, "m": DEFAULT_MARGIN},
        True,
        "D unit-weight scalar layers (e.g. toy-chain-4)",
    ),
    (
        "toy-avg-k",
        "toy-avg",
        {"k": 4, "m": DEFAULT_MARGIN},
        True,
        "k-copy averaging filter (e.g. toy-avg-4)",
    ),
    (
        "deep-narrow",
        "plain",
        {"depth": 16, "channels": 64},
        False,
        "16 conv 3x3, C=M=64, 14x14 maps",
    ),
    (
        "shallow-wide",
        "plain",
        {"depth": 4, "channels": 128},
        False,
        "4 conv 3x3, C=M=128, 14x14 maps",
    ),
    ("rank-deep", "rank-pair", {}, True, "deep, accurate when clean, fragile"),
    ("rank-shallow", "rank-pair", {}, True, "shallow, less accurate, robust"),
]


def list_entries() -> List[ZooEntry]:
    """Catalog shown by `zoo list`; parameterized families list one example."""
    return [
        ZooEntry(
            name=name,
            family=family,
            params=params,
            has_weights=has_weights,
            description=description,
        )
        for name, family, params, has_weights, description in CATALOG
    ]


def build(name: str) -> NetworkSpec:
    """NetworkSpec for a zoo name (toy-chain-D, toy-avg-k, alexnet-kN accepted)."""
    if name in FIXED_BUILDERS:
        return FIXED_BUILDERS[name]()
    for pattern, family in PATTERNS:
        match = pattern.match(name)
        if not match:
            continue
        n = int(match.group(1))
        if family == "toy-chain":
            return toy_chain(n)
        if family == "toy-avg":
            return toy_avg(n)
        return alexnet(n)
    raise SpecError(f"unknown zoo entry '{name}'")


def _sign_dataset(margin: float) -> Dataset:
    samples = np.array([margin, -margin], dtype=DTYPE).reshape(2, 1, 1, 1)
    return Dataset(samples=samples, labels=np.array([1, 0]))


def _rank_pair_dataset() -> Dataset:
    rows = [(1.0, 0.0, 0.0, 1)] * 8 + [(-1.0, 0.0, 0.0, 0)] * 7
    rows += [(1.0, -1.5, 0.0, 1)] * 3  # distractor fools 2-bit rank-deep
    rows += [(1.0, 0.0, -2.0, 1)] * 2  # distractor always fools rank-shallow
    samples = np.array([r[:3] for r in rows], dtype=DTYPE).reshape(-1, 1, 1, 3)
    return Dataset(samples=samples, labels=np.array([r[3] for r in rows]))


def fixture(name: str, margin: float = DEFAULT_MARGIN) -> Fixture:
    """Network, weights and labeled dataset for a toy zoo entry."""
    net = build(name)
    logger.debug(f"Building fixture {net.name}")
    unit = np.ones((1, 1, 1, 1), dtype=DTYPE)

    if net.name.startswith("toy-chain-"):
        weights = {layer.id: unit.copy() for layer in net.layers}
        dataset = _sign_dataset(margin)
        return Fixture(net=net, weights=weights, dataset=dataset, margin=margin)

    if net.name.startswith("toy-avg-"):
        k = net.layer("copy").m
        weights = {
            "copy": np.ones((k, 1, 1, 1), dtype=DTYPE),
            "avg": np.full((1, k, 1, 1), 1.0 / k, dtype=DTYPE),
        }
        return Fixture(
            net=net,
            weights=weights,
            dataset=_sign_dataset(margin),
            noise_layers=frozenset({"copy"}),
            margin=margin,
        )

    if net.name in ("rank-deep", "rank-shallow"):
        first = [1.0, 0.55, 0.0] if net.name == "rank-deep" else [1.0, 0.0, 1.0]
        weights = {layer.id: unit.copy() for layer in net.layers}
        weights["fc1"] = np.array(first, dtype=DTYPE).reshape(1, 3, 1, 1)
        return Fixture(net=net, weights=weights, dataset=_rank_pair_dataset())

    raise SpecError(f"zoo entry '{name}' is shape-level only (no weights)")
