"""
Search - Fast Customized-Precision Selection
Correlation-scored design space, linear accuracy model, threshold selection
with bit-level refinement, and the exhaustive oracle it is checked against.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from config.settings import DEFAULT_SPACE, PREDICTION_CLAMP, SWEEP_COLUMNS, THREADS
from modules.costmodel import cost_for
from modules.inference import evaluate_accuracy, final_scores, normalized_accuracy
from modules.numeric import BASELINE, Baseline, FixedFormat, FloatFormat, adjust_precision, format_literal
from utils.errors import DegenerateFitError, DomainError, FormatError

logger = logging.getLogger(__name__)

# ============================================================
# 1. DESIGN SPACE
# ============================================================


@dataclass(frozen=True)
class DesignSpaceConfig:
    """Inclusive bit ranges per kind; a kind with no ranges is left out."""

    float_mantissa: tuple[int, int] | None = None
    float_exponent: tuple[int, int] | None = None
    float_step: int = 1
    fixed_integer: tuple[int, int] | None = None
    fixed_fraction: tuple[int, int] | None = None
    fixed_step: int = 1
    bias: int | None = None

    def __post_init__(self):
        for name in ('float_mantissa', 'float_exponent', 'fixed_integer', 'fixed_fraction'):
            bounds = getattr(self, name)
            if bounds is None:
                continue
            bounds = tuple(int(b) for b in bounds)
            if len(bounds) != 2 or bounds[0] > bounds[1] or bounds[0] < 0:
                raise DomainError(f"{name} must be an ascending pair of nonnegative bounds, got {bounds}")
            object.__setattr__(self, name, bounds)
        if (self.float_mantissa is None) != (self.float_exponent is None):
            raise DomainError("float ranges need both mantissa and exponent bounds")
        if (self.fixed_integer is None) != (self.fixed_fraction is None):
            raise DomainError("fixed ranges need both integer and fraction bounds")
        if self.float_step < 1 or self.fixed_step < 1:
            raise DomainError("range steps must be at least 1")

    @classmethod
    def default(cls):
        return cls(**DEFAULT_SPACE)

    def to_dict(self):
        return {
            'float_mantissa': self.float_mantissa, 'float_exponent': self.float_exponent,
            'float_step': self.float_step, 'fixed_integer': self.fixed_integer,
            'fixed_fraction': self.fixed_fraction, 'fixed_step': self.fixed_step, 'bias': self.bias,
        }


def _span(bounds, step):
    return range(bounds[0], bounds[1] + 1, step)


def enumerate_design_space(cfg):
    """Floats first (exponent outer, mantissa inner), then fixed (integer outer, fraction inner)."""
    formats = []
    if cfg.float_mantissa is not None:
        for exponent in _span(cfg.float_exponent, cfg.float_step):
            for mantissa in _span(cfg.float_mantissa, cfg.float_step):
                formats.append(FloatFormat(mantissa, exponent, cfg.bias))
    if cfg.fixed_integer is not None:
        for integer in _span(cfg.fixed_integer, cfg.fixed_step):
            for fraction in _span(cfg.fixed_fraction, cfg.fixed_step):
                formats.append(FixedFormat(integer, fraction))
    if not formats:
        raise DomainError("design space is empty")
    return formats


def space_formats(space):
    """A DesignSpaceConfig or an explicit sequence of formats, as an ordered list."""
    if isinstance(space, DesignSpaceConfig):
        return enumerate_design_space(space)
    formats = list(space)
    if not formats:
        raise DomainError("design space is empty")
    return formats


_FLOAT_RANGE = re.compile(r'^float:m(\d+)-(\d+)e(\d+)-(\d+)(?:s(\d+))?(?:b(-?\d+))?$')
_FIXED_RANGE = re.compile(r'^fixed:i(\d+)-(\d+)f(\d+)-(\d+)(?:s(\d+))?$')


def parse_space(text):
    """
    `default`, a JSON file with DesignSpaceConfig fields, or comma-separated
    range literals such as `float:m1-2e1-2,fixed:i8-8f8-8` (optional `s<step>`,
    float-only `b<bias>`).
    """
    text = str(text).strip()
    if text.lower() == 'default':
        return DesignSpaceConfig.default()

    path = Path(text)
    if path.suffix.lower() == '.json':
        try:
            fields = json.loads(path.read_text())
        except FileNotFoundError:
            raise FormatError("design space file not found", source=path)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", offset=exc.pos, source=path)
        if not isinstance(fields, dict):
            raise FormatError("design space file must hold an object", source=path)
        try:
            return DesignSpaceConfig(**fields)
        except TypeError as exc:
            raise FormatError(f"unknown design space field: {exc}", source=path)

    fields = {}
    for part in text.lower().split(','):
        part = part.strip()
        match = _FLOAT_RANGE.match(part)
        if match:
            m_lo, m_hi, e_lo, e_hi, step, bias = match.groups()
            fields.update(float_mantissa=(int(m_lo), int(m_hi)), float_exponent=(int(e_lo), int(e_hi)),
                          float_step=int(step or 1), bias=int(bias) if bias is not None else None)
            continue
        match = _FIXED_RANGE.match(part)
        if match:
            i_lo, i_hi, f_lo, f_hi, step = match.groups()
            fields.update(fixed_integer=(int(i_lo), int(i_hi)), fixed_fraction=(int(f_lo), int(f_hi)),
                          fixed_step=int(step or 1))
            continue
        raise FormatError(f"unrecognized design space range '{part}'")
    return DesignSpaceConfig(**fields)


# ============================================================
# 2. CORRELATION SCORING
# ============================================================

def select_samples(images, count, seed=None):
    """Indices of the scoring samples: the first `count` inputs, or a seeded random draw."""
    total = len(images)
    if count < 1:
        raise DomainError("sample count must be at least 1")
    if count > total:
        raise DomainError(f"requested {count} samples from {total} inputs")
    if seed is None:
        return np.arange(count)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(total, size=count, replace=False))


def _pearson(x, y):
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    # unit max magnitude: squares of saturated outputs stay finite
    x, y = x / np.max(np.abs(x)), y / np.max(np.abs(y))
    dx, dy = x - np.mean(x), y - np.mean(y)
    denominator = np.sqrt(np.sum(dx ** 2) * np.sum(dy ** 2))
    if denominator == 0 or not np.isfinite(denominator):
        return 0.0
    return float(np.sum(dx * dy) / denominator)


def coefficient_of_determination(reference, custom):
    """Squared Pearson correlation of two paired vectors; 0 when either is constant."""
    reference = np.asarray(reference, dtype=np.float64).ravel()
    custom = np.asarray(custom, dtype=np.float64).ravel()
    if reference.shape != custom.shape:
        raise DomainError(f"paired vectors differ in length: {reference.size} vs {custom.size}")
    return float(np.clip(_pearson(reference, custom) ** 2, 0.0, 1.0))


def baseline_scores(net, samples):
    return final_scores(net, samples, BASELINE, pre_softmax=True)


def last_layer_r2(net, samples, fmt, reference=None):
    """r2 between baseline and fmt pre-softmax outputs over all samples."""
    if len(samples) == 0:
        raise DomainError("last_layer_r2: no samples")
    if isinstance(fmt, Baseline):
        return 1.0
    if reference is None:
        reference = baseline_scores(net, samples)
    return coefficient_of_determination(reference, final_scores(net, samples, fmt, pre_softmax=True))


# ============================================================
# 3. ACCURACY MODEL
# ============================================================

@dataclass(frozen=True)
class AccuracyModel:
    slope: float
    intercept: float
    fit_correlation: float
    pairs: int = 0


def fit_accuracy_model(pairs):
    """Least-squares line through (r2, normalized accuracy) pairs."""
    data = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    if len(data) < 2:
        raise DegenerateFitError(f"accuracy model needs at least 2 pairs, got {len(data)}")
    x, y = data[:, 0], data[:, 1]
    if np.ptp(x) == 0:
        raise DegenerateFitError("accuracy model: all r2 values are equal")
    slope, intercept = np.polyfit(x, y, 1)
    model = AccuracyModel(float(slope), float(intercept), _pearson(x, y), len(data))
    logger.info("fitted accuracy model slope=%.4f intercept=%.4f r=%.4f over %d pairs",
                model.slope, model.intercept, model.fit_correlation, model.pairs)
    return model


def predict_accuracy(model, r2):
    low, high = PREDICTION_CLAMP
    return float(np.clip(model.slope * r2 + model.intercept, low, high))


def save_accuracy_model(model, path):
    payload = {
        'slope': model.slope,
        'intercept': model.intercept,
        'fit_correlation': model.fit_correlation,
        'pairs': model.pairs,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')


def load_accuracy_model(path):
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError("accuracy model file not found", source=path)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", offset=exc.pos, source=path)
    try:
        return AccuracyModel(
            float(payload['slope']), float(payload['intercept']),
            float(payload['fit_correlation']), int(payload.get('pairs', 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"accuracy model missing or invalid field: {exc}", source=path)


def pairs_from_sweeps(frames):
    """Measured (r2, normalized accuracy) pairs of every custom format in the sweep tables."""
    pairs = []
    for frame in frames:
        missing = {'format', 'mode', 'r2', 'normalized_accuracy'} - set(frame.columns)
        if missing:
            raise FormatError(f"sweep table lacks columns {sorted(missing)}")
        rows = frame[(frame['mode'] == 'measured') & (frame['format'] != 'baseline')]
        rows = rows.dropna(subset=['r2', 'normalized_accuracy'])
        pairs.extend(zip(rows['r2'].astype(float), rows['normalized_accuracy'].astype(float)))
    return pairs


# ============================================================
# 4. DESIGN POINTS
# ============================================================

@dataclass
class DesignPoint:
    fmt: object
    speedup: float
    energy_savings: float
    r2: float | None = None
    predicted: float | None = None
    measured: float | None = None
    measured_accuracy: float | None = None
    evaluated: bool = False
    fallback: bool = False
    validation_passes: int = 0
    order: int = field(default=0, repr=False)

    @property
    def literal(self):
        return format_literal(self.fmt)

    def to_row(self):
        return {
            'format': self.literal,
            'total_bits': self.fmt.total_bits,
            'r2': self.r2,
            'predicted_normalized_accuracy': self.predicted,
            'measured_normalized_accuracy': self.measured,
            'measured_accuracy': self.measured_accuracy,
            'speedup': self.speedup,
            'energy_savings': self.energy_savings,
            'evaluated': self.evaluated,
            'fallback': self.fallback,
            'validation_passes': self.validation_passes,
        }


def _rank(point):
    """Highest speedup first, then fewer bits, then enumeration order."""
    return (-point.speedup, point.fmt.total_bits, point.order)


def _base_points(formats, tables):
    points = []
    for order, fmt in enumerate(formats):
        speed, energy = cost_for(fmt, tables)
        points.append(DesignPoint(fmt, speed, energy, order=order))
    return points


def _parallel_map(func, items):
    workers = min(THREADS, len(items)) or 1
    if workers == 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def score_formats(net, samples, formats, model, tables):
    """Unevaluated design points carrying r2 and predicted normalized accuracy."""
    reference = baseline_scores(net, samples)
    points = _base_points(formats, tables)

    def score(point):
        point.r2 = last_layer_r2(net, samples, point.fmt, reference)
        point.predicted = predict_accuracy(model, point.r2)
        logger.debug("scored %s r2=%.6f predicted=%.4f", point.literal, point.r2, point.predicted)
        return point

    return _parallel_map(score, points)


def _fallback_point(baseline_accuracy, passes):
    point = DesignPoint(BASELINE, 1.0, 1.0, r2=1.0, measured=1.0, measured_accuracy=baseline_accuracy,
                        evaluated=True, fallback=True, validation_passes=passes)
    return point


# ============================================================
# 5. SEARCH
# ============================================================

def measure_normalized_accuracy(net, validation, fmt, baseline_accuracy, k=1):
    """(normalized, raw) accuracy of fmt over the validation set."""
    images, labels = validation
    accuracy = evaluate_accuracy(net, images, labels, fmt, k)
    return normalized_accuracy(accuracy, baseline_accuracy), accuracy


def _baseline_accuracy(net, validation, k):
    images, labels = validation
    accuracy = evaluate_accuracy(net, images, labels, BASELINE, k)
    if accuracy <= 0:
        raise DomainError("baseline accuracy on the validation set is zero; normalized accuracy is undefined")
    return accuracy


def _check_target(target):
    if not 0 < target <= 1:
        raise DomainError(f"target normalized accuracy must be in (0, 1], got {target}")


def pick_candidate(points, target):
    """Fastest point predicted to reach the target, else the best-predicted one."""
    passing = [p for p in points if p.predicted >= target]
    if passing:
        return min(passing, key=_rank)
    logger.info("no format predicted to reach %.4f; taking the highest prediction", target)
    return min(points, key=lambda p: (-p.predicted,) + _rank(p))


def _precision_neighbour(by_format, fmt, direction):
    """
    Closest point in the space with the same exponent/integer field and more
    (direction > 0) or fewer precision bits. Spaces enumerated with a step
    skip the exact one-bit neighbour, so the next grid entry stands in for it.
    """
    exact = by_format.get(adjust_precision(fmt, direction))
    if exact is not None:
        return exact
    family = adjust_precision(fmt, 0)
    if family is None:
        return None
    bits = fmt.precision_bits
    siblings = [
        point for point in by_format.values()
        if point.fmt.kind == fmt.kind
        and adjust_precision(point.fmt, bits - point.fmt.precision_bits) == family
        and (point.fmt.precision_bits - bits) * direction > 0
    ]
    if not siblings:
        return None
    return min(siblings, key=lambda point: abs(point.fmt.precision_bits - bits))


def fast_search(net, samples, validation, model, space, tables, target, refine_budget, k=1):
    """
    Score every format by last-layer correlation, pick the fastest predicted
    to pass, then spend up to `refine_budget` validation passes moving one
    precision step at a time toward the narrowest format that truly passes.
    """
    _check_target(target)
    if refine_budget < 0:
        raise DomainError("refine budget must be nonnegative")
    formats = space_formats(space)
    points = score_formats(net, samples, formats, model, tables)
    by_format = {point.fmt: point for point in points}

    current = pick_candidate(points, target)
    logger.info("model candidate %s (predicted %.4f, speedup %.2f)", current.literal, current.predicted, current.speedup)
    if refine_budget == 0:
        return current

    baseline_accuracy = _baseline_accuracy(net, validation, k)
    failed = set()
    passing = None
    passes = 0
    while passes < refine_budget:
        norm, raw = measure_normalized_accuracy(net, validation, current.fmt, baseline_accuracy, k)
        passes += 1
        logger.info("refinement %d: %s normalized accuracy %.4f", passes, current.literal, norm)
        if norm >= target:
            current.measured, current.measured_accuracy, current.evaluated = norm, raw, True
            passing = current
            neighbour = _precision_neighbour(by_format, current.fmt, -1)
            if neighbour is None or neighbour.fmt in failed:
                break
            current = neighbour
            continue

        failed.add(current.fmt)
        if passing is not None:
            break
        neighbour = _precision_neighbour(by_format, current.fmt, +1)
        if neighbour is None:
            logger.warning("widening %s leaves the design space; falling back to baseline", current.literal)
            return _fallback_point(baseline_accuracy, passes)
        current = neighbour

    result = passing if passing is not None else current
    result.validation_passes = passes
    return result


def exhaustive_search(net, validation, space, tables, target, k=1):
    """Measure every format and return the fastest that reaches the target."""
    _check_target(target)
    formats = space_formats(space)
    baseline_accuracy = _baseline_accuracy(net, validation, k)
    points = _base_points(formats, tables)

    def measure(point):
        point.measured, point.measured_accuracy = measure_normalized_accuracy(
            net, validation, point.fmt, baseline_accuracy, k)
        point.evaluated = True
        logger.debug("measured %s normalized accuracy %.4f", point.literal, point.measured)
        return point

    points = _parallel_map(measure, points)
    passing = [p for p in points if p.measured >= target]
    if not passing:
        logger.warning("no format in the space reaches %.4f; falling back to baseline", target)
        return _fallback_point(baseline_accuracy, len(points))
    best = min(passing, key=_rank)
    best.validation_passes = len(points)
    return best


# ============================================================
# 6. SWEEP
# ============================================================

def sweep(net, samples, validation, space, tables, mode='measured', model=None, k=1):
    """
    One row per format plus a leading baseline row. `measured` runs the
    validation set for every format; `predicted` maps r2 through the model.
    """
    if mode not in ('measured', 'predicted'):
        raise DomainError(f"sweep mode must be 'measured' or 'predicted', got '{mode}'")
    if mode == 'predicted' and model is None:
        raise DomainError("predicted sweep needs an accuracy model")
    formats = space_formats(space)
    reference = baseline_scores(net, samples)
    baseline_accuracy = _baseline_accuracy(net, validation, k) if mode == 'measured' else None
    rows = [{
        'format': 'baseline', 'mode': mode, 'accuracy': baseline_accuracy,
        'normalized_accuracy': 1.0, 'r2': 1.0, 'speedup': 1.0, 'energy_savings': 1.0,
    }]

    def row(point):
        point.r2 = last_layer_r2(net, samples, point.fmt, reference)
        if mode == 'measured':
            normalized, accuracy = measure_normalized_accuracy(net, validation, point.fmt, baseline_accuracy, k)
        else:
            normalized, accuracy = predict_accuracy(model, point.r2), None
        logger.debug("sweep %s r2=%.6f normalized=%.4f", point.literal, point.r2, normalized)
        return {
            'format': point.literal, 'mode': mode, 'accuracy': accuracy,
            'normalized_accuracy': normalized, 'r2': point.r2,
            'speedup': point.speedup, 'energy_savings': point.energy_savings,
        }

    rows.extend(_parallel_map(row, _base_points(formats, tables)))
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
