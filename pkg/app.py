"""
Precis command line: evaluate, sweep and search customized-precision formats
for a network, trace single-neuron accumulation and query the cost model.

    python app.py eval --net lenet_toy --data digits-toy --format float:m7e6
    python app.py sweep --space float:m1-8e4-6 --out sweep.csv
    python app.py fit-model --sweeps sweep.csv --out model.json
    python app.py search --model model.json --target 0.99 --refine 2
    python app.py trace --data-index 0 --layer fc1 --neuron 3 --format fixed:i8f8
    python app.py cost float:m7e6 float:m8e6
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import pandas as pd

# Add project root to sys.path for module imports
sys.path.append(str(Path(__file__).parent))

from config.settings import (
    APP_NAME, DEFAULT_REFINE, DEFAULT_SAMPLES, DEFAULT_TARGET, EXIT_CODES,
    LOG_FORMAT, LOG_LEVEL, SWEEP_COLUMNS, TRACE_COLUMNS, VERSION,
)
from modules.costmodel import apply_overrides, cost_for, default_tables
from modules.inference import accumulation_trace, evaluate_accuracy, normalized_accuracy
from modules.numeric import BASELINE, format_literal, parse_format
from modules.reporting import RunReport
from modules.search import (
    DesignPoint, exhaustive_search, fast_search, fit_accuracy_model, load_accuracy_model,
    pairs_from_sweeps, parse_space, predict_accuracy, save_accuracy_model, select_samples, sweep,
)
from utils.data_loader import DataLoader
from utils.errors import DomainError, FormatError, PrecisError

logger = logging.getLogger(APP_NAME.lower())

METRICS = {'top1': 1, 'top5': 5}


def _tables(args):
    return apply_overrides(default_tables(), args.cost_table)


def _dataset(args):
    return DataLoader(args.data_dir).load_dataset(args.data, limit=args.limit)


def _network(args):
    return DataLoader(args.data_dir).load_network(args.net)


def _echo(args):
    """Command inputs echoed into the report (and its digest)."""
    skipped = {'func', 'json', 'verbose', 'command'}
    return {key: value for key, value in sorted(vars(args).items()) if key not in skipped}


# ============================================================
# COMMANDS
# ============================================================

def cmd_eval(args):
    fmt = parse_format(args.format)
    net, data, tables = _network(args), _dataset(args), _tables(args)
    k = METRICS[args.metric]
    baseline_accuracy = evaluate_accuracy(net, data.images, data.labels, BASELINE, k)
    accuracy = evaluate_accuracy(net, data.images, data.labels, fmt, k)
    normalized = normalized_accuracy(accuracy, baseline_accuracy)
    speed, energy = cost_for(fmt, tables)
    rows = [
        {'format': 'baseline', 'accuracy': baseline_accuracy, 'normalized_accuracy': 1.0,
         'speedup': 1.0, 'energy_savings': 1.0},
        {'format': format_literal(fmt), 'accuracy': accuracy, 'normalized_accuracy': normalized,
         'speedup': speed, 'energy_savings': energy},
    ]
    summary = {
        'format': format_literal(fmt), 'metric': args.metric, 'inputs': len(data.labels),
        'accuracy': accuracy, 'baseline_accuracy': baseline_accuracy,
        'normalized_accuracy': normalized, 'speedup': speed, 'energy_savings': energy,
    }
    return RunReport('eval', _echo(args), rows, summary), EXIT_CODES['ok']


def _samples(data, args):
    indices = select_samples(data.images, args.samples, args.seed)
    return data.images[indices], [int(i) for i in indices]


def cmd_sweep(args):
    space = parse_space(args.space)
    net, data, tables = _network(args), _dataset(args), _tables(args)
    model = load_accuracy_model(args.model) if args.model else None
    samples, indices = _samples(data, args)
    frame = sweep(net, samples, data, space, tables, mode=args.mode, model=model, k=METRICS[args.metric])
    summary = {'formats': len(frame) - 1, 'mode': args.mode, 'seed': args.seed, 'sample_indices': indices}
    report = RunReport('sweep', _echo(args), frame.to_dict('records'), summary, columns=SWEEP_COLUMNS)
    if args.out:
        report.write(args.out)
    return report, EXIT_CODES['ok']


def _read_sweep(path):
    path = Path(path)
    try:
        if path.suffix.lower() == '.json':
            return pd.DataFrame(json.loads(path.read_text())['rows'])
        return pd.read_csv(path)
    except FileNotFoundError:
        raise FormatError("sweep file not found", source=path)
    except (KeyError, ValueError, pd.errors.ParserError) as exc:
        raise FormatError(f"unreadable sweep file: {exc}", source=path)


def cmd_fit_model(args):
    pairs = pairs_from_sweeps([_read_sweep(path) for path in args.sweeps])
    model = fit_accuracy_model(pairs)
    save_accuracy_model(model, args.out)
    summary = {
        'slope': model.slope, 'intercept': model.intercept,
        'fit_correlation': model.fit_correlation, 'pairs': model.pairs, 'out': str(args.out),
    }
    return RunReport('fit-model', _echo(args), [], summary), EXIT_CODES['ok']


def cmd_search(args):
    if args.model:
        model = load_accuracy_model(args.model)
    else:
        model = fit_accuracy_model(pairs_from_sweeps([_read_sweep(path) for path in args.sweep]))
    space = parse_space(args.space)
    net, data, tables = _network(args), _dataset(args), _tables(args)
    samples, indices = _samples(data, args)
    k = METRICS[args.metric]

    point = fast_search(net, samples, data, model, space, tables, args.target, args.refine, k)
    # baseline was measured as the reference whenever refinement ran
    baseline = DesignPoint(BASELINE, 1.0, 1.0, r2=1.0, predicted=predict_accuracy(model, 1.0),
                           measured=1.0 if args.refine else None, evaluated=bool(args.refine))
    summary = {
        'format': point.literal, 'evaluated': point.evaluated, 'fallback': point.fallback,
        'validation_passes': point.validation_passes, 'r2': point.r2,
        'predicted_normalized_accuracy': point.predicted,
        'measured_normalized_accuracy': point.measured,
        'speedup': point.speedup, 'energy_savings': point.energy_savings,
        'target': args.target, 'refine': args.refine, 'seed': args.seed, 'sample_indices': indices,
    }
    if args.exhaustive:
        oracle = exhaustive_search(net, data, space, tables, args.target, k)
        summary.update({
            'exhaustive_format': oracle.literal, 'exhaustive_validation_passes': oracle.validation_passes,
            'agree': oracle.fmt == point.fmt,
        })
    report = RunReport('search', _echo(args), [point.to_row(), baseline.to_row()], summary)
    return report, EXIT_CODES['fallback'] if point.fallback else EXIT_CODES['ok']


def _layer_index(net, layer):
    if str(layer).lstrip('-').isdigit():
        return int(layer)
    for index, candidate in enumerate(net.layers):
        if candidate.name == layer:
            return index
    raise DomainError(f"network '{net.name}' has no layer '{layer}'")


def cmd_trace(args):
    fmt = parse_format(args.format)
    net, data = _network(args), _dataset(args)
    if not 0 <= args.data_index < len(data.labels):
        raise DomainError(f"data index {args.data_index} outside [0, {len(data.labels)})")
    records = accumulation_trace(net, data.images[args.data_index], _layer_index(net, args.layer), args.neuron, fmt)
    rows = [vars(record) for record in records]
    summary = {
        'format': format_literal(fmt), 'layer': args.layer, 'neuron': args.neuron,
        'data_index': args.data_index, 'steps': len(rows) - 1,
        'final_sum': rows[-1]['running_sum'], 'exact_final_sum': rows[-1]['exact_running_sum'],
    }
    report = RunReport('trace', _echo(args), rows, summary, columns=TRACE_COLUMNS)
    if args.out:
        report.write(args.out)
    return report, EXIT_CODES['ok']


def cmd_cost(args):
    tables = _tables(args)
    rows = []
    for literal in args.formats:
        fmt = parse_format(literal)
        speed, energy = cost_for(fmt, tables)
        rows.append({'format': format_literal(fmt), 'kind': fmt.kind, 'total_bits': fmt.total_bits,
                     'speedup': speed, 'energy_savings': energy})
    return RunReport('cost', _echo(args), rows, {'formats': len(rows)}), EXIT_CODES['ok']


# ============================================================
# PARSER
# ============================================================

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="Emit the report as JSON")
    common.add_argument("--cost-table", action="append", default=[], metavar="FILE",
                        help="Cost table file; its 'kind:' header decides which default it replaces")
    common.add_argument("--data-dir", type=Path, default=None, help="Root of bundled networks and datasets")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--net", default="lenet_toy", help="Bundled network name or manifest path")
    data.add_argument("--data", default="digits-toy", help="Bundled dataset name, IDX directory or CIFAR .bin")
    data.add_argument("--limit", type=int, default=None, help="Use only the first N inputs")
    data.add_argument("--metric", choices=sorted(METRICS), default="top1")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="Inputs used for correlation scoring")
    sampling.add_argument("--seed", type=int, default=None, help="Random sample selection (default: first N)")
    sampling.add_argument("--space", default="default", help="'default', a JSON file or range literals")

    parser = argparse.ArgumentParser(prog="precis", description=f"{APP_NAME} {VERSION}: customized-precision inference explorer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", parents=[common, data], help="Accuracy, speedup and energy of one format")
    p.add_argument("--format", required=True, help="e.g. float:m7e6, fixed:i8f8, baseline")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common, data, sampling], help="Score every format of a design space")
    p.add_argument("--mode", choices=["measured", "predicted"], default="measured")
    p.add_argument("--model", type=Path, default=None, help="Accuracy model for --mode predicted")
    p.add_argument("--out", type=Path, default=None, help="Write rows to .csv or .json")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("search", parents=[common, data, sampling], help="Fast correlation-based format search")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", type=Path, help="Accuracy model JSON from fit-model")
    source.add_argument("--sweep", type=Path, nargs="+", help="Measured sweep files to fit the model on the fly")
    p.add_argument("--target", type=float, default=DEFAULT_TARGET)
    p.add_argument("--refine", type=int, default=DEFAULT_REFINE, help="Validation evaluations spent refining")
    p.add_argument("--exhaustive", action="store_true", help="Also run the exhaustive oracle and compare")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("trace", parents=[common, data], help="Running sum of one neuron, step by step")
    p.add_argument("--data-index", type=int, default=0)
    p.add_argument("--layer", required=True, help="Layer index or name")
    p.add_argument("--neuron", type=int, required=True)
    p.add_argument("--format", required=True)
    p.add_argument("--out", type=Path, default=None, help="Write rows to .csv or .json")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("fit-model", parents=[common], help="Fit the accuracy model on measured sweeps")
    p.add_argument("--sweeps", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fit_model)

    p = sub.add_parser("cost", parents=[common], help="Speedup and energy savings of format literals")
    p.add_argument("formats", nargs="+")
    p.set_defaults(func=cmd_cost)
    return parser


def _configure_logging(verbose):
    level = {0: LOG_LEVEL, 1: "INFO"}.get(verbose, "DEBUG")
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    started = time.perf_counter()
    try:
        report, code = args.func(args)
    except PrecisError as exc:
        if args.json:
            print(json.dumps({'error': str(exc), 'type': type(exc).__name__}, sort_keys=True), file=sys.stderr)
        else:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES['error']
    report.duration_s = time.perf_counter() - started
    print(report.to_json() if args.json else report.to_table())
    return code


if __name__ == "__main__":
    sys.exit(main())
