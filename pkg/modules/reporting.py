"""
Run reports: one record per CLI command, rendered as a text table, stable JSON or CSV.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from config.settings import FLOAT_DIGITS


def _clean(value):
    """JSON-ready copy with numpy scalars unwrapped and floats rounded."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if not math.isfinite(value) else round(value, FLOAT_DIGITS)
    if value is None or isinstance(value, str):
        return value
    return str(value)


def config_digest(args):
    """Short sha256 over the canonical JSON of the command's inputs."""
    canonical = json.dumps(_clean(args), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


@dataclass
class RunReport:
    command: str
    args: dict
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    columns: list | None = None
    duration_s: float = 0.0

    @property
    def config_digest(self):
        return config_digest({'command': self.command, **self.args})

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=self.columns)

    def to_dict(self):
        return {
            'command': self.command,
            'args': _clean(self.args),
            'config_digest': self.config_digest,
            'summary': _clean(self.summary),
            'rows': _clean(self.rows),
            'duration_s': round(self.duration_s, 3),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self):
        lines = [f"{self.command} [{self.config_digest}]"]
        width = max((len(key) for key in self.summary), default=0)
        for key, value in self.summary.items():
            if isinstance(value, float):
                value = f"{value:.6g}"
            lines.append(f"  {key.ljust(width)}  {value}")
        if self.rows:
            lines.append('')
            lines.append(self.to_frame().to_string(index=False))
        return '\n'.join(lines)

    def to_csv(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)

    def write(self, path):
        """CSV or JSON by extension."""
        path = Path(path)
        if path.suffix.lower() == '.json':
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_json() + '\n')
        else:
            self.to_csv(path)
