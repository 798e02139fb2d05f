"""Metrics CSV schema shared by the trainer and the evaluation protocols.

Files begin with '#'-prefixed key=value lines echoing the fully resolved
run configuration, then a mandatory column-header row, then one row per
evaluation. Floats are written with repr so parsing round-trips exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

COLUMNS = [
    "step",
    "episode_return_mean",
    "episode_return_std",
    "surrogate_return_mean",
    "disc_expert_mean",
    "disc_policy_mean",
    "diff_loss_expert",
    "diff_loss_policy",
    "wallclock_s",
]


@dataclass
class MetricsRow:
    step: int
    episode_return_mean: float
    episode_return_std: float
    surrogate_return_mean: float
    disc_expert_mean: float
    disc_policy_mean: float
    diff_loss_expert: float
    diff_loss_policy: float
    wallclock_s: float


class MetricsWriter:
    """Incremental writer: header immediately, one flushed row per eval."""

    def __init__(self, path, config_echo: dict):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        for key in sorted(config_echo):
            self._fh.write(f"# {key}={config_echo[key]}\n")
        self._fh.write(",".join(COLUMNS) + "\n")
        self._fh.flush()
        self._last_step = None

    def write(self, row: MetricsRow) -> None:
        if self._last_step is not None and row.step <= self._last_step:
            raise ConfigError("metrics steps must be strictly increasing")
        self._last_step = row.step
        values = [getattr(row, f.name) for f in fields(MetricsRow)]
        self._fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in values))
        self._fh.write("\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics(path) -> tuple[dict, np.ndarray]:
    """Returns (config echo dict, structured array over COLUMNS)."""
    config = {}
    rows = []
    with open(path, newline="") as fh:
        header = None
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    config[k.strip()] = v.strip()
                continue
            if header is None:
                header = line.strip().split(",")
                if header != COLUMNS:
                    raise ConfigError(
                        f"{path}: unexpected metrics columns {header}"
                    )
                continue
            rows.append(line)
    if header is None:
        raise ConfigError(f"{path}: missing metrics header row")
    parsed = list(csv.reader(rows))
    data = np.array(
        [[float(v) for v in row] for row in parsed], dtype=np.float64
    ).reshape(len(parsed), len(COLUMNS))
    out = np.rec.fromarrays(
        [data[:, i] for i in range(len(COLUMNS))], names=COLUMNS
    )
    return config, out
