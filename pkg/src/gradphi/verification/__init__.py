"""Numerical verification of the structural results: reports, oracles and checks."""

from __future__ import annotations

from . import (agreement, contraction, elliptic, inequalities, patching_checks, properties, quadrature, reports,
               variational)
from .reports import STATUSES, CheckReport, combine, mc_status, read_bundle, write_bundle

__all__ = [
    "CheckReport",
    "STATUSES",
    "combine",
    "mc_status",
    "read_bundle",
    "write_bundle",
    "agreement",
    "contraction",
    "elliptic",
    "inequalities",
    "patching_checks",
    "properties",
    "quadrature",
    "reports",
    "variational",
]
