"""Experiment reports and their on-disk form."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..fitting import FitResult


def atomic_write(path: str | os.PathLike, text: str) -> Path:
    """Write ``text`` to a temporary file next to ``path``, then rename it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def table_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


@dataclass
class ExperimentReport:
    """Sweep results of one protocol.

    ``metrics`` maps a name to one value per sweep point.  ``tables`` holds
    the figure data written as CSV files.  Timestamps are kept out of the
    serialized report so identical runs give identical files.
    """

    protocol: str
    sweep_var: str
    sweep_values: list
    metrics: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0
    started: str | None = field(default=None, compare=False)
    finished: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.sweep_values = _clean(list(self.sweep_values))
        n = len(self.sweep_values)
        for name, vals in self.metrics.items():
            if len(vals) != n:
                raise ValueError(f"metric {name!r} has {len(vals)} values for {n} sweep points")
        self.metrics = {k: _clean(list(v)) for k, v in self.metrics.items()}

    def fit(self, name: str) -> FitResult | None:
        return self.fits.get(name)

    def stamp(self, started: datetime | None = None) -> None:
        now = datetime.now(timezone.utc).isoformat()
        self.started = started.isoformat() if started else self.started or now
        self.finished = now

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "sweep_var": self.sweep_var,
            "sweep_values": _clean(self.sweep_values),
            "metrics": _clean(self.metrics),
            "fits": {k: (_clean(v.to_dict()) if v is not None else None) for k, v in self.fits.items()},
            "summary": _clean(self.summary),
            "tables": _clean(self.tables),
            "config": _clean(self.config),
            "config_hash": self.config_hash,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        fits = {k: (FitResult.from_dict(v) if v is not None else None) for k, v in d["fits"].items()}
        return cls(
            d["protocol"], d["sweep_var"], d["sweep_values"], d["metrics"], fits, d["summary"],
            d["tables"], d["config"], d["config_hash"], d["seed"],
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def table_files(self) -> dict[str, str]:
        return {name: table_csv(t["columns"], t["rows"]) for name, t in self.tables.items()}

    def write(self, outdir: str | os.PathLike) -> list[Path]:
        """Write ``report.json``, the figure CSVs and a timestamp sidecar."""
        outdir = Path(outdir)
        written = [atomic_write(outdir / "report.json", self.to_json())]
        for name, text in self.table_files().items():
            written.append(atomic_write(outdir / name, text))
        meta = {"started": self.started, "finished": self.finished, "protocol": self.protocol}
        written.append(atomic_write(outdir / "report.meta.json", json.dumps(meta, indent=1) + "\n"))
        return written
