"""
Command-line front end for the PIM design cost model.

    analyze      per-layer weights, MACs and activations (CSV)
    map          per-layer mapping costs on one array size (CSV or JSON)
    sweep-array  mapping costs over several array sizes (CSV, optional SVG)
    sweep-noise  accuracy under Gaussian activation noise (CSV, optional SVG)
    sweep-quant  accuracy with quantized weights (CSV, optional SVG)
    zoo          list | emit NAME | fixture NAME

Results go to stdout unless --out DIR is given; logs go to stderr. Exit codes:
0 ok, 1 runtime error, 2 usage or spec error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import report_io
import zoo
from infer import (
    DataFileError,
    Dataset,
    ShapeMismatchError,
    WeightSet,
    check_weights,
    load_dataset,
    load_weights,
    save_dataset,
    save_weights,
)
from net_ir import (
    NetworkSpec,
    SpecError,
    compare_counts,
    count,
    dump_network,
    load_network,
    parse_network,
    validate,
)
from pim_map import (
    ArraySpec,
    MappingError,
    MappingOptions,
    load_array_sizes,
    parse_array_sizes,
    report,
    sweep_arrays,
)
from robustness import (
    EvalReport,
    NoiseSpec,
    SweepError,
    make_config,
    rank_changes,
    sweep_noise,
    sweep_quant,
)
from setting import get_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

USAGE_ERRORS = (SpecError, MappingError, SweepError, DataFileError)


class UsageError(ValueError):
    """Bad flags or unreadable input files."""


Files = Dict[str, str]


def _split(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in _split(text)]
    except ValueError as e:
        raise UsageError(f"expected a comma-separated list of numbers: {text}") from e


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in _split(text)]
    except ValueError as e:
        raise UsageError(f"expected a comma-separated list of integers: {text}") from e


def read_network(source: str) -> NetworkSpec:
    """Load a spec from a file, or from stdin when `source` is "-"."""
    if source == "-":
        return parse_network(sys.stdin.read())
    try:
        return load_network(source)
    except OSError as e:
        raise UsageError(f"cannot read network spec {source}: {e.strerror}") from e


def checked(net: NetworkSpec) -> NetworkSpec:
    violations = validate(net)
    if violations:
        raise SpecError("; ".join(str(v) for v in violations))
    return net


def resolve_network(args: argparse.Namespace) -> NetworkSpec:
    if args.net:
        return checked(read_network(args.net))
    if args.zoo:
        return checked(zoo.build(args.zoo))
    raise UsageError("one of --net or --zoo is required")


def _by_name_or_path(ref: str) -> NetworkSpec:
    if ref == "-" or Path(ref).is_file():
        return checked(read_network(ref))
    return checked(zoo.build(ref))


def emit(args: argparse.Namespace, files: Files) -> None:
    """Write result files under --out, or their contents to stdout in order."""
    out = getattr(args, "out", None)
    if not out:
        for content in files.values():
            sys.stdout.write(content)
        return
    _write_dir(out, files)


def _write_dir(directory: str, files: Files) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (root / name).write_text(content, encoding="utf-8")
        logger.info(f"Wrote {root / name}")


def _require_single_or_out(args: argparse.Namespace, n: int) -> None:
    if n > 1 and not args.out:
        raise UsageError("several networks need --out DIR (one CSV per network)")


def cmd_analyze(args: argparse.Namespace) -> int:
    net = resolve_network(args)
    counts = count(net)
    files = {"counts.csv": report_io.counts_csv(counts)}
    if args.compare:
        other = _by_name_or_path(args.compare)
        cmp = compare_counts(counts, count(other))
        for name, (a, b) in cmp.totals.items():
            print(f"{name}: {cmp.first}={a} {cmp.second}={b}", file=sys.stderr)
        if cmp.activation_inversion:
            print(
                "fewer weights or MACs does not mean fewer activations here",
                file=sys.stderr,
            )
        if args.out:
            files["comparison.json"] = cmp.model_dump_json(indent=2) + "\n"
    emit(args, files)
    return EXIT_OK


def cmd_map(args: argparse.Namespace) -> int:
    net = resolve_network(args)
    array = ArraySpec(rows=args.rows, cols=args.cols)
    rep = report(net, array, MappingOptions(replication=args.replication))
    if args.json:
        emit(args, {"mapping.json": report_io.mapping_json([rep]) + "\n"})
    else:
        emit(args, {"mapping.csv": report_io.mapping_csv([rep])})
    return EXIT_OK


def _networks(args: argparse.Namespace) -> List[NetworkSpec]:
    nets = [checked(read_network(path)) for path in args.net or []]
    nets += [checked(zoo.build(name)) for name in args.zoo or []]
    if not nets:
        raise UsageError("at least one --net or --zoo is required")
    return nets


def cmd_sweep_array(args: argparse.Namespace) -> int:
    nets = _networks(args)
    _require_single_or_out(args, len(nets))
    sizes = parse_array_sizes(args.sizes) if args.sizes else load_array_sizes()
    opts = MappingOptions(replication=args.replication)
    tables = [sweep_arrays(net, sizes, opts, args.threads) for net in nets]

    if len(tables) == 1:
        files = {"sweep.csv": report_io.mapping_csv(tables[0].reports)}
    else:
        files = {f"{t.network}.csv": report_io.mapping_csv(t.reports) for t in tables}
    emit(args, files)
    if args.svg:
        _write_dir(args.svg, report_io.sweep_charts(tables))
    return EXIT_OK


Experiment = Tuple[NetworkSpec, WeightSet, Dataset, Optional[frozenset]]


def _experiments(args: argparse.Namespace) -> List[Experiment]:
    """Networks with weights and data: zoo fixtures and/or --net/--weights/--data."""
    runs: List[Experiment] = []
    if args.net:
        if not (args.weights and args.data):
            raise UsageError("--net needs --weights and --data")
        net = checked(read_network(args.net))
        try:
            weights = load_weights(args.weights)
            dataset = load_dataset(args.data)
        except OSError as e:
            raise UsageError(f"cannot read input file: {e}") from e
        try:
            check_weights(net, weights)
        except ShapeMismatchError as e:
            raise UsageError(str(e)) from e
        runs.append((net, weights, dataset, None))
    for name in args.zoo or []:
        fx = zoo.fixture(name, margin=args.margin)
        runs.append((fx.net, fx.weights, fx.dataset, fx.noise_layers))
    if not runs:
        raise UsageError("one of --net or --zoo is required")
    return runs


def _finish_eval(args: argparse.Namespace, reports: List[EvalReport]) -> int:
    if len(reports) == 1:
        files = {"accuracy.csv": report_io.eval_csv(reports[0])}
    else:
        files = {f"{r.network}.csv": report_io.eval_csv(r) for r in reports}
    emit(args, files)
    if args.svg:
        _write_dir(args.svg, {"accuracy.svg": report_io.eval_chart(reports)})
    if len(reports) > 1:
        axis = reports[0].axis
        for change in rank_changes({r.network: r for r in reports}):
            order = " > ".join(change.ranking)
            value = report_io.fmt_float(change.axis_value)
            print(f"rank change at {axis}={value}: {order}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep_noise(args: argparse.Namespace) -> int:
    runs = _experiments(args)
    _require_single_or_out(args, len(runs))
    settings = get_settings()
    cfg = make_config(
        _floats(args.points),
        trials=args.trials if args.trials is not None else settings.DEFAULT_TRIALS,
        master_seed=args.seed if args.seed is not None else settings.DEFAULT_SEED,
        threads=args.threads,
    )
    reports = []
    for net, weights, dataset, fixture_layers in runs:
        layers = frozenset(_split(args.layers)) if args.layers else fixture_layers
        if layers is not None:
            known = {layer.id for layer in net.weighted_layers()}
            unknown = sorted(layers - known)
            if unknown:
                missing = ", ".join(unknown)
                raise UsageError(f"{net.name}: no weighted layer(s) {missing}")
        spec = NoiseSpec(
            mode=args.mode,
            placement=args.placement,
            calibration=args.calibration,
            layers=layers,
        )
        reports.append(sweep_noise(net, weights, dataset, spec, cfg))
    return _finish_eval(args, reports)


def cmd_sweep_quant(args: argparse.Namespace) -> int:
    runs = _experiments(args)
    _require_single_or_out(args, len(runs))
    bits = _ints(args.bits)
    reports = [sweep_quant(net, w, data, bits) for net, w, data, _ in runs]
    return _finish_eval(args, reports)


def cmd_zoo(args: argparse.Namespace) -> int:
    if args.action == "list":
        entries = [e.model_dump() for e in zoo.list_entries()]
        sys.stdout.write(json.dumps(entries, indent=2) + "\n")
        return EXIT_OK
    if not args.name:
        raise UsageError(f"zoo {args.action} needs a NAME")
    if args.action == "emit":
        sys.stdout.write(dump_network(zoo.build(args.name)) + "\n")
        return EXIT_OK

    if not args.out:
        raise UsageError("zoo fixture needs --out DIR")
    fx = zoo.fixture(args.name, margin=args.margin)
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "net.json").write_text(dump_network(fx.net) + "\n", encoding="utf-8")
    save_weights(root / "weights.json", fx.weights)
    save_dataset(root / "data.json", fx.dataset)
    logger.info(f"Wrote fixture {fx.net.name} to {root}")
    return EXIT_OK


def _add_source(p: argparse.ArgumentParser, many: bool = False) -> None:
    action = "append" if many else "store"
    p.add_argument("--net", action=action, metavar="FILE", help="spec JSON, - = stdin")
    p.add_argument("--zoo", action=action, metavar="NAME", help="zoo entry")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--net", metavar="FILE", help="spec JSON, - = stdin")
    p.add_argument("--weights", metavar="FILE", help="weights manifest JSON")
    p.add_argument("--data", metavar="FILE", help="dataset manifest JSON")
    p.add_argument("--zoo", action="append", metavar="NAME", help="toy fixture")
    p.add_argument("--margin", type=float, default=zoo.DEFAULT_MARGIN)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--svg", metavar="DIR", help="also write an accuracy chart")
    p.add_argument("--out", metavar="DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pimdc", description="PIM design cost model and robustness sweeps"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="weights, MACs and activations per layer")
    _add_source(p)
    p.add_argument("--compare", metavar="NAME_OR_FILE", help="second network")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("map", help="mapping costs on one array size")
    _add_source(p)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--replication", action="store_true")
    p.add_argument("--json", action="store_true", help="JSON with reuse metrics")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(handler=cmd_map)

    p = sub.add_parser("sweep-array", help="mapping costs over array sizes")
    _add_source(p, many=True)
    p.add_argument("--sizes", help="e.g. 128,512,1024x256 (default from config)")
    p.add_argument("--replication", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--svg", metavar="DIR", help="also write latency/reads/util charts")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(handler=cmd_sweep_array)

    p = sub.add_parser("sweep-noise", help="accuracy under activation noise")
    _add_eval_flags(p)
    p.add_argument("--mode", choices=["fixed", "rescaled"], default="fixed")
    p.add_argument("--points", required=True, help="noise levels, e.g. 0,0.5,1")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--layers", help="weighted layer ids that receive noise")
    p.add_argument("--placement", choices=["post", "pre"], default="post")
    p.add_argument("--calibration", choices=["sample", "dataset"], default="sample")
    p.set_defaults(handler=cmd_sweep_noise)

    p = sub.add_parser("sweep-quant", help="accuracy with quantized weights")
    _add_eval_flags(p)
    p.add_argument("--bits", required=True, help="bit widths, e.g. 2,4,8,16")
    p.set_defaults(handler=cmd_sweep_quant)

    p = sub.add_parser("zoo", help="list, emit or export zoo entries")
    p.add_argument("action", choices=["list", "emit", "fixture"])
    p.add_argument("name", nargs="?")
    p.add_argument("--margin", type=float, default=zoo.DEFAULT_MARGIN)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(handler=cmd_zoo)

    return parser


def configure_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else get_settings().LOG_LEVEL.upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose)

    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (UsageError, *USAGE_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.debug("Unhandled error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
