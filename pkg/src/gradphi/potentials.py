"""Even, normalized, uniformly convex elastic potentials.

Every potential exposes vectorized ``eval``/``deriv``/``second_deriv`` and an
ellipticity constant ``lam`` with ``lam <= V'' <= 1/lam``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "Potential",
    "Quadratic",
    "LogCosh",
    "TablePotential",
    "Interpolated",
    "EllipticityReport",
    "PotentialError",
    "validate",
    "parse_potential",
    "format_potential",
    "PROBE_GRID",
]

PROBE_GRID = np.arange(-50_000, 50_001) * 1e-3


class PotentialError(ValueError):
    """Invalid potential parameters or an ellipticity violation."""

    def __init__(self, message: str, x: float | None = None):
        super().__init__(message if x is None else f"{message} (at x={x:.6g})")
        self.x = x


class Potential:
    """Base class; subclasses implement the three vectorized evaluations."""

    kind: str = "custom"
    lam: float = 1.0

    def eval(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def second_deriv(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.eval(x)

    @property
    def curvature_at_zero(self) -> float:
        return float(self.second_deriv(np.zeros(1))[0])

    @property
    def is_quadratic(self) -> bool:
        return False


@dataclass(frozen=True)
class Quadratic(Potential):
    """``V(x) = beta x^2``; ``V'' = 2 beta`` and ``lam = min(2 beta, 1/(2 beta))``."""

    beta: float = 1.0
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise PotentialError(f"quadratic potential needs beta > 0, got {self.beta}")

    @property
    def lam(self) -> float:
        return min(2 * self.beta, 1 / (2 * self.beta))

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return self.beta * x * x

    def deriv(self, x):
        return 2 * self.beta * np.asarray(x, dtype=float)

    def second_deriv(self, x):
        return np.full(np.shape(x), 2 * self.beta)

    @property
    def is_quadratic(self) -> bool:
        return True


def _log_cosh(x):
    # ln cosh x = |x| + log1p(exp(-2|x|)) - ln 2, stable for large |x|
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2 * ax)) - np.log(2.0)


@dataclass(frozen=True)
class LogCosh(Potential):
    """``V(x) = x^2/2 + a ln cosh x`` with ``1 <= V'' <= 1 + a``."""

    a: float = 1.0
    kind: str = field(default="logcosh", init=False)

    def __post_init__(self):
        if not np.isfinite(self.a) or self.a < 0:
            raise PotentialError(f"logcosh potential needs a >= 0, got {self.a}")

    @property
    def lam(self) -> float:
        return 1.0 / (1.0 + self.a)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x * x + self.a * _log_cosh(x)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.a * np.tanh(x)

    def second_deriv(self, x):
        t = np.tanh(np.asarray(x, dtype=float))
        return 1.0 + self.a * (1.0 - t * t)


@dataclass(frozen=True, eq=False)
class TablePotential(Potential):
    """Potential given by samples ``(x_i, V(x_i))``, interpolated by a cubic spline.

    Outside the table the spline is continued quadratically using the end
    curvature.  Symmetry and normalization are not enforced here; use
    :func:`validate` to reject inadmissible tables.
    """

    xs: np.ndarray
    values: np.ndarray
    lam: float = 0.5
    kind: str = field(default="custom-table", init=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        vs = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.shape != vs.shape or len(xs) < 4:
            raise PotentialError("table needs at least 4 matching samples")
        if np.any(np.diff(xs) <= 0):
            raise PotentialError("table abscissae must be strictly increasing")
        if not 0 < self.lam <= 1:
            raise PotentialError("lambda must lie in (0, 1]")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", vs)
        object.__setattr__(self, "_spline", CubicSpline(xs, vs, bc_type="natural"))

    def _extend(self, x, order):
        x = np.asarray(x, dtype=float)
        lo, hi = self.xs[0], self.xs[-1]
        xc = np.clip(x, lo, hi)
        s = self._spline
        out = s(xc, order)
        for edge, mask in ((lo, x < lo), (hi, x > hi)):
            if np.any(mask):
                dx = x[mask] - edge
                v0, v1 = s(edge), s(edge, 1)
                v2 = max(float(s(edge, 2)), self.lam)
                if order == 0:
                    out[mask] = v0 + v1 * dx + 0.5 * v2 * dx * dx
                elif order == 1:
                    out[mask] = v1 + v2 * dx
                else:
                    out[mask] = v2
        return out

    def eval(self, x):
        return self._extend(np.atleast_1d(x), 0).reshape(np.shape(x))

    def deriv(self, x):
        return self._extend(np.atleast_1d(x), 1).reshape(np.shape(x))

    def second_deriv(self, x):
        return self._extend(np.atleast_1d(x), 2).reshape(np.shape(x))


@dataclass(frozen=True, eq=False)
class Interpolated(Potential):
    """The path potential ``(1 - t) beta_ref x^2 + t V`` used for thermodynamic integration."""

    target: Potential
    t: float
    beta_ref: float
    kind: str = field(default="interpolated", init=False)

    @property
    def lam(self) -> float:
        lo = min(2 * self.beta_ref, self.target.lam)
        return min(lo, 1.0 / max(2 * self.beta_ref, 1 / self.target.lam))

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return (1 - self.t) * self.beta_ref * x * x + self.t * self.target.eval(x)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return 2 * (1 - self.t) * self.beta_ref * x + self.t * self.target.deriv(x)

    def second_deriv(self, x):
        return 2 * (1 - self.t) * self.beta_ref + self.t * self.target.second_deriv(x)

    def difference(self, x):
        """``V(x) - beta_ref x^2``: the t-derivative of the path potential."""
        x = np.asarray(x, dtype=float)
        return self.target.eval(x) - self.beta_ref * x * x


@dataclass(frozen=True)
class EllipticityReport:
    min_second: float
    max_second: float
    symmetry_residual: float
    value_at_zero: float
    deriv_at_zero: float
    lam: float
    admissible: bool
    offending_x: float | None = None
    reason: str = ""


def validate(V: Potential, grid: np.ndarray | None = None, tol: float = 1e-9) -> EllipticityReport:
    """Probe ``V`` on a grid and check symmetry, normalization and ellipticity.

    Raises:
        PotentialError: with the offending abscissa on any violation.
    """
    xs = PROBE_GRID if grid is None else np.asarray(grid, dtype=float)
    v = V.eval(xs)
    v_neg = V.eval(-xs)
    sym = np.abs(v - v_neg)
    scale = np.maximum(1.0, np.abs(v))
    v2 = V.second_deriv(xs)
    v0 = float(V.eval(np.zeros(1))[0])
    d0 = float(V.deriv(np.zeros(1))[0])
    lam = V.lam
    report = dict(
        min_second=float(v2.min()),
        max_second=float(v2.max()),
        symmetry_residual=float(sym.max()),
        value_at_zero=v0,
        deriv_at_zero=d0,
        lam=lam,
    )

    def fail(reason, x):
        raise PotentialError(reason, x)

    bad = np.nonzero(sym > tol * scale)[0]
    if len(bad):
        fail("potential is not even", float(xs[bad[0]]))
    if abs(v0) > tol:
        fail("V(0) != 0", 0.0)
    if abs(d0) > tol:
        fail("V'(0) != 0", 0.0)
    if not 0 < lam <= 1:
        fail(f"lambda={lam} is not in (0, 1]", None)
    bad = np.nonzero((v2 < lam - tol) | (v2 > 1 / lam + tol))[0]
    if len(bad):
        fail(f"V'' outside [{lam:.6g}, {1 / lam:.6g}]", float(xs[bad[0]]))
    # integrated growth bound lam x^2/2 <= V(x) <= x^2/(2 lam)
    x2 = xs * xs
    bad = np.nonzero((v < 0.5 * lam * x2 - tol * scale) | (v > 0.5 * x2 / lam + tol * scale))[0]
    if len(bad):
        fail("growth bound violated", float(xs[bad[0]]))
    return EllipticityReport(admissible=True, **report)


def parse_potential(text: str) -> Potential:
    """Parse ``kind:param[,param]`` (``quadratic:1.0``, ``logcosh:1.0``)."""
    kind, _, params = text.strip().partition(":")
    kind = kind.strip().lower()
    try:
        vals = [float(s) for s in params.split(",") if s.strip()]
    except ValueError as exc:
        raise PotentialError(f"bad potential parameters in {text!r}") from exc
    if kind == "quadratic":
        return Quadratic(vals[0] if vals else 1.0)
    if kind == "logcosh":
        return LogCosh(vals[0] if vals else 1.0)
    raise PotentialError(f"unknown potential kind {kind!r}")


def format_potential(V: Potential | Sequence[Potential]) -> str:
    if isinstance(V, (tuple, list)):
        return ";".join(format_potential(v) for v in V)
    if isinstance(V, Quadratic):
        return f"quadratic:{V.beta!r}"
    if isinstance(V, LogCosh):
        return f"logcosh:{V.a!r}"
    return V.kind
