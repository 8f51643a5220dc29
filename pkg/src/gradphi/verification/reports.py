"""Check reports and the report bundle writer."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["CheckReport", "STATUSES", "combine", "mc_status", "write_bundle", "read_bundle"]

STATUSES = ("pass", "fail", "inconclusive")


def _plain(x):
    """JSON-safe copy of nested numpy containers."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


@dataclass
class CheckReport:
    """Outcome of one executable check.

    ``constants`` holds the fitted constants (``C``, ``c``, ``alpha``, ...),
    ``margin`` the signed slack of the tightest instance (positive means the
    inequality holds with room), and ``evidence`` the per-instance rows written
    to the CSV side table.  Monte-Carlo checks pass only at a 3-sigma margin and
    are ``inconclusive`` when the noise covers the sign of the effect.
    """

    check_id: str
    status: str
    provenance: str
    inputs: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    margin: float = float("nan")
    details: dict = field(default_factory=dict)
    evidence: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")
        if self.provenance not in ("oracle", "mc", "deterministic"):
            raise ValueError("provenance must be oracle, mc or deterministic")

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def summary(self) -> str:
        consts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.constants.items())
        return f"{self.check_id}: {self.status.upper()} [{self.provenance}] margin={_fmt(self.margin)} {consts}".rstrip()

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("evidence")
        out["passed"] = self.passed
        return _plain(out)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def combine(statuses: Iterable[str]) -> str:
    """``fail`` dominates ``inconclusive`` which dominates ``pass``."""
    statuses = list(statuses)
    if "fail" in statuses:
        return "fail"
    if "inconclusive" in statuses:
        return "inconclusive"
    return "pass"


def mc_status(effect: float, stderr: float, z: float = 3.0) -> str:
    """Three-way verdict for a claim ``effect > 0`` measured with noise.

    ``pass`` if the effect exceeds ``z`` standard errors, ``fail`` if it is
    below ``-z`` standard errors, otherwise ``inconclusive``.
    """
    if effect > z * stderr:
        return "pass"
    if effect < -z * stderr:
        return "fail"
    return "inconclusive"


def write_bundle(reports: Sequence[CheckReport], out_dir) -> Path:
    """Write ``reports.json`` plus one ``<check_id>.csv`` evidence table per report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "reports.json"
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
    for r in reports:
        if not r.evidence:
            continue
        cols = list(dict.fromkeys(k for row in r.evidence for k in row))
        with open(out / f"{r.check_id}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in r.evidence:
                w.writerow({k: _cell(row.get(k, "")) for k in cols})
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_cell(x) for x in np.ravel(v))
    return v


def read_bundle(path) -> list[dict]:
    with open(path) as fh:
        return json.load(fh)
