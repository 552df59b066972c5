"""
Cost Model - Speedup and Energy per Format
Table-driven delay/area/energy ratios relative to the single-precision MAC.

Speedup combines the faster clock of a narrower unit (1 / delay ratio) with
the extra replicas that fit in the same area (1 / area ratio).
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from config.settings import BASELINE_WIDTH, FIXED_TABLE_WIDTHS, FLOAT_COST_ANCHORS, FLOAT_TABLE_WIDTHS
from modules.numeric import Baseline
from utils.errors import CostTableError, DomainError

logger = logging.getLogger(__name__)

TABLE_KINDS = ('float', 'fixed')
ENTRY_COLUMNS = ['total_bits', 'delay_ratio', 'area_ratio', 'energy_ratio']

# ============================================================
# 1. TABLES
# ============================================================


@dataclass(frozen=True)
class CostEntry:
    total_bits: int
    delay_ratio: float
    area_ratio: float
    energy_ratio: float


@dataclass(frozen=True)
class CostTable:
    """Entries sorted by width, linearly interpolated; queries outside the range clamp."""

    kind: str
    entries: tuple[CostEntry, ...]
    source: str = 'default'

    def __post_init__(self):
        object.__setattr__(self, 'entries', tuple(self.entries))
        if self.kind not in TABLE_KINDS:
            raise CostTableError(f"cost table kind must be one of {TABLE_KINDS}, got '{self.kind}'", source=self.source)
        if len(self.entries) < 2:
            raise CostTableError("cost table needs at least two entries", source=self.source)
        widths = [entry.total_bits for entry in self.entries]
        if any(b <= a for a, b in zip(widths, widths[1:])):
            raise CostTableError(f"cost table widths must be strictly increasing, got {widths}", source=self.source)
        for entry in self.entries:
            if min(entry.delay_ratio, entry.area_ratio, entry.energy_ratio) <= 0:
                raise CostTableError(f"nonpositive ratio at width {entry.total_bits}", source=self.source)
            ratios = (entry.delay_ratio, entry.area_ratio, entry.energy_ratio)
            if entry.total_bits == BASELINE_WIDTH and ratios != (1, 1, 1):
                raise CostTableError(f"ratios at the baseline width {BASELINE_WIDTH} must all be 1", source=self.source)

    @property
    def widths(self):
        return np.array([entry.total_bits for entry in self.entries], dtype=np.float64)

    def ratios(self, width):
        """(delay, area, energy) ratios at `width`."""
        widths = self.widths
        return tuple(
            float(np.interp(width, widths, [getattr(entry, column) for entry in self.entries]))
            for column in ENTRY_COLUMNS[1:]
        )

    def to_frame(self):
        return pd.DataFrame([vars(entry) for entry in self.entries], columns=ENTRY_COLUMNS)


class CostTables(NamedTuple):
    float: CostTable
    fixed: CostTable

    def for_kind(self, kind):
        return self.float if kind == 'float' else self.fixed


# ============================================================
# 2. QUERIES
# ============================================================

def _table_ratios(fmt, table):
    if fmt.kind != table.kind:
        raise DomainError(f"{fmt} is a {fmt.kind} format but the cost table is for {table.kind}")
    return table.ratios(fmt.total_bits)


def speedup(fmt, table):
    if isinstance(fmt, Baseline):
        return 1.0
    delay, area, _ = _table_ratios(fmt, table)
    return 1.0 / (delay * area)


def energy_savings(fmt, table):
    if isinstance(fmt, Baseline):
        return 1.0
    _, _, energy = _table_ratios(fmt, table)
    return 1.0 / energy


def cost_for(fmt, tables):
    """(speedup, energy savings) from the table matching the format kind."""
    if isinstance(fmt, Baseline):
        return 1.0, 1.0
    table = tables.for_kind(fmt.kind)
    return speedup(fmt, table), energy_savings(fmt, table)


# ============================================================
# 3. DEFAULT TABLES
# ============================================================

def _affine_slopes():
    """
    Slopes p (delay) and q (area) with delay = 1 - p(32 - w), area = 1 - q(32 - w)
    whose product hits the speedup anchors at the two narrow widths.
    """
    (w1, (s1, _)), (w2, (s2, _)) = sorted(
        (w, v) for w, v in FLOAT_COST_ANCHORS.items() if w != BASELINE_WIDTH
    )
    d1, d2 = BASELINE_WIDTH - w1, BASELINE_WIDTH - w2
    # (1 - p d)(1 - q d) = 1/s  ->  d(p+q) - d^2 pq = 1 - 1/s, linear in (p+q, pq)
    total, prod = np.linalg.solve([[d1, -d1 ** 2], [d2, -d2 ** 2]], [1 - 1 / s1, 1 - 1 / s2])
    root = np.sqrt(total ** 2 - 4 * prod)
    steep, shallow = (total + root) / 2, (total - root) / 2
    # area scales linearly with width, delay more slowly
    return float(shallow), float(steep)


def _default_float_table():
    delay_slope, area_slope = _affine_slopes()
    anchor_widths = sorted(FLOAT_COST_ANCHORS)
    anchor_energy = [1.0 / FLOAT_COST_ANCHORS[w][1] for w in anchor_widths]
    low_slope = (anchor_energy[1] - anchor_energy[0]) / (anchor_widths[1] - anchor_widths[0])
    entries = []
    for width in range(FLOAT_TABLE_WIDTHS[0], FLOAT_TABLE_WIDTHS[1] + 1):
        gap = BASELINE_WIDTH - width
        if width < anchor_widths[0]:
            energy = anchor_energy[0] - low_slope * (anchor_widths[0] - width)
        else:
            energy = float(np.interp(width, anchor_widths, anchor_energy))
        entries.append(CostEntry(width, 1.0 - delay_slope * gap, 1.0 - area_slope * gap, energy))
    return CostTable('float', entries)


def _default_fixed_table():
    # Synthetic: delay, area and energy all proportional to width
    entries = [
        CostEntry(width, width / BASELINE_WIDTH, width / BASELINE_WIDTH, width / BASELINE_WIDTH)
        for width in range(FIXED_TABLE_WIDTHS[0], FIXED_TABLE_WIDTHS[1] + 1)
    ]
    return CostTable('fixed', entries)


def default_tables():
    return CostTables(_default_float_table(), _default_fixed_table())


# ============================================================
# 4. TABLE FILES
# ============================================================

def load_cost_table(path):
    """
    Read a cost table file:

        kind: float
        # width delay_ratio area_ratio energy_ratio
        14 0.7347 0.1891 0.2941
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise CostTableError("cost table file not found", source=path)

    kind, rows = None, []
    for number, line in enumerate(lines, start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if kind is None:
            key, _, value = stripped.partition(':')
            if key.strip().lower() != 'kind' or not value.strip():
                raise CostTableError(f"line {number}: expected 'kind: float|fixed' header", source=path)
            kind = value.strip().lower()
            continue
        rows.append(stripped)
    if kind is None:
        raise CostTableError("missing 'kind:' header", source=path)

    try:
        frame = pd.read_csv(io.StringIO('\n'.join(rows)), sep=r'\s+', header=None, names=ENTRY_COLUMNS,
                            float_precision='round_trip')
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=ENTRY_COLUMNS)
    except (ValueError, pd.errors.ParserError) as exc:
        raise CostTableError(f"unreadable cost rows: {exc}", source=path)
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    if numeric.isna().any().any():
        raise CostTableError("cost rows must hold four numbers: width delay area energy", source=path)
    if not (numeric['total_bits'] == numeric['total_bits'].round()).all():
        raise CostTableError("cost table widths must be integers", source=path)

    entries = [
        CostEntry(int(row.total_bits), float(row.delay_ratio), float(row.area_ratio), float(row.energy_ratio))
        for row in numeric.itertuples(index=False)
    ]
    table = CostTable(kind, entries, source=str(path))
    logger.info("loaded %s cost table with %d entries from %s", kind, len(entries), path)
    return table


def save_cost_table(table, path):
    body = table.to_frame().to_csv(sep=' ', index=False, header=False)
    Path(path).write_text(f"kind: {table.kind}\n# {' '.join(ENTRY_COLUMNS)}\n{body}")


def apply_overrides(tables, paths):
    """Replace default tables with the ones read from `paths`, slotted by their kind header."""
    replaced = dict(tables._asdict())
    for path in paths or []:
        table = load_cost_table(path)
        replaced[table.kind] = table
    return CostTables(**replaced)
