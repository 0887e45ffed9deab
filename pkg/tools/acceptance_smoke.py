#!/usr/bin/env python3
"""
Acceptance smoke run for the PIM design cost model.
Runs the headline scenarios end to end and saves the numbers as JSON.
"""

import json
import math
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from net_ir import count  # noqa: E402
from pim_map import ArraySpec, MappingOptions, report  # noqa: E402
from robustness import (  # noqa: E402
    NoiseSpec,
    make_config,
    rank_changes,
    sweep_noise,
    sweep_quant,
)
from zoo import build, fixture  # noqa: E402

TRIALS = 2000
DEPTHS = [1, 4, 16]
FILTER_SIZES = [1, 4, 16]


def phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def check_counts() -> Dict[str, Any]:
    """AlexNet conv1 golden row."""
    row = count(build("alexnet")).layers[0]
    ok = (row.num_weights, row.num_macs) == (34_848, 105_415_200)
    mark = "✓" if ok else "✗"
    print(f"{mark} alexnet conv1: {row.num_weights} weights, {row.num_macs} MACs")
    return {"conv1": row.model_dump(), "ok": ok}


def check_wide_vs_deep() -> Dict[str, Any]:
    """Equal MACs, different latency, reads and utilization on 4096x4096."""
    array = ArraySpec(rows=4096, cols=4096)
    expected = {False: (3136, 784), True: (448, 264)}
    result: Dict[str, Any] = {}
    ok = True
    for replication, passes in expected.items():
        mode = "replicated" if replication else "plain"
        opts = MappingOptions(replication=replication)
        runs = {}
        for name in ("deep-narrow", "shallow-wide"):
            rep = report(build(name), array, opts)
            runs[name] = {
                "macs": rep.total.num_macs,
                "passes": rep.total.passes,
                "input_reads": rep.total.input_reads,
                "utilization": rep.total.utilization,
            }
            print(
                f"✓ {name} ({mode}): {rep.total.passes} passes, "
                f"{rep.total.input_reads} reads"
            )
        deep, wide = runs["deep-narrow"], runs["shallow-wide"]
        ok = ok and (
            deep["macs"] == wide["macs"] == 115_605_504
            and (deep["passes"], wide["passes"]) == passes
            and (deep["input_reads"], wide["input_reads"]) == (1_806_336, 903_168)
        )
        result[mode] = runs
    result["ok"] = ok
    return result


def _oracle_sweep(name: str, sigma: float, expected: float) -> Dict[str, Any]:
    fx = fixture(name)
    spec = NoiseSpec(layers=fx.noise_layers)
    cfg = make_config([sigma], trials=TRIALS, master_seed=0)
    point = sweep_noise(fx.net, fx.weights, fx.dataset, spec, cfg).points[0]
    se = point.accuracy_std / math.sqrt(point.trials)
    ok = abs(point.accuracy_mean - expected) <= 3 * se
    print(
        f"{'✓' if ok else '✗'} {name}: {point.accuracy_mean:.4f} "
        f"(expected {expected:.4f} +/- {3 * se:.4f})"
    )
    return {"accuracy": point.accuracy_mean, "expected": expected, "ok": ok}


def check_oracles() -> Dict[str, Any]:
    """Depth and filter-size trends against the Gaussian closed forms."""
    depth = {
        d: _oracle_sweep(f"toy-chain-{d}", 0.5, phi(1.0 / (0.5 * math.sqrt(d))))
        for d in DEPTHS
    }
    width = {
        k: _oracle_sweep(f"toy-avg-{k}", 2.0, phi(math.sqrt(k) / 2.0))
        for k in FILTER_SIZES
    }
    return {"depth": depth, "filter_size": width}


def check_rank_changes() -> Dict[str, Any]:
    """The rank fixtures swap places under noise and at 2-bit weights."""
    noise, quant = {}, {}
    cfg = make_config([0.0, 1.0], trials=300, master_seed=0)
    for name in ("rank-deep", "rank-shallow"):
        fx = fixture(name)
        noise[name] = sweep_noise(fx.net, fx.weights, fx.dataset, NoiseSpec(), cfg)
        quant[name] = sweep_quant(fx.net, fx.weights, fx.dataset, [2, 8, 16])
    result = {}
    for label, reports in (("noise", noise), ("quant", quant)):
        changes = rank_changes(reports)
        result[label] = [c.model_dump() for c in changes]
        print(f"{'✓' if changes else '✗'} {label}: {len(changes)} rank change(s)")
    return result


def main():
    """Run every scenario and save the results."""
    print("🚀 Starting PIM design cost acceptance smoke run")
    print("=" * 50)
    start = time.time()

    results = {
        "counts": check_counts(),
        "wide_vs_deep": check_wide_vs_deep(),
        "oracles": check_oracles(),
        "rank_changes": check_rank_changes(),
    }
    results["elapsed_s"] = round(time.time() - start, 2)

    timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    filename = Path(__file__).parent / f"acceptance_smoke_{timestamp}.json"
    with open(filename, "w") as f:
        json.dump(results, f, indent=2)

    print(f"📊 Results saved to {filename}")
    print("🎉 Acceptance smoke run completed!")


if __name__ == "__main__":
    main()
