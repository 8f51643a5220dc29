"""Gibbs variational principle in one or two dimensions.

For ``f`` bounded below with ``exp(-f)`` integrable,

    -log int exp(-f) = min over densities rho of  int f rho + int rho log rho,

attained at the Gibbs density ``rho = exp(-f) / Z``.  Both sides are computed
by quadrature; competitors are Gibbs densities tilted by smooth random
perturbations, whose excess over the minimum equals a relative entropy.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import logsumexp

from .reports import CheckReport

__all__ = ["check_variational_formula_lowdim", "entropy_functional", "log_partition"]


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested accuracy."""


@lru_cache(maxsize=8)
def _tensor_rule(dim: int, half_width: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(nodes)
    x, w = x * half_width, w * half_width
    if dim == 1:
        return x[:, None], w
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), np.outer(w, w).ravel()


def log_partition(f: Callable, dim: int = 1, half_width: float = 12.0, nodes: int = 400) -> float:
    """``log int exp(-f)`` over ``R^dim`` (truncated to a box in two dimensions)."""
    if dim == 1:
        shift = float(np.min(f(np.linspace(-half_width, half_width, 2001)[:, None])))
        val, err = integrate.quad(lambda x: math.exp(shift - float(f(np.array([[x]]))[0])), -np.inf, np.inf,
                                  epsabs=1e-14, epsrel=1e-13, limit=200)
        if not err <= 1e-10 * max(val, 1e-300):
            raise QuadratureError(f"partition function error estimate {err:.2e}")
        return math.log(val) - shift
    pts, w = _tensor_rule(dim, half_width, nodes)
    return float(logsumexp(-f(pts), b=w))


def entropy_functional(log_rho: Callable, f: Callable, dim: int = 1, half_width: float = 12.0,
                       nodes: int = 400) -> float:
    """``int f rho + int rho log rho`` for a density given through its logarithm."""
    if dim == 1:
        def integrand(x):
            pt = np.array([[x]])
            lr = float(log_rho(pt)[0])
            return math.exp(lr) * (float(f(pt)[0]) + lr)

        val, err = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
        if not err <= 1e-9:
            raise QuadratureError(f"functional error estimate {err:.2e}")
        return val
    pts, w = _tensor_rule(dim, half_width, nodes)
    lr = log_rho(pts)
    return float(np.sum(w * np.exp(lr) * (f(pts) + lr)))


def _perturbation(rng: np.random.Generator, dim: int) -> Callable:
    """A bounded smooth function ``g`` with random amplitude, frequency and phase."""
    amp = rng.uniform(0.05, 1.0)
    freq = rng.uniform(0.3, 3.0, size=dim)
    phase = rng.uniform(0, 2 * np.pi)
    amp2 = rng.uniform(0.0, 0.5)
    centre = rng.normal(size=dim)

    def g(x):
        return amp * np.sin(x @ freq + phase) + amp2 * np.exp(-np.sum((x - centre) ** 2, axis=1))

    return g


def check_variational_formula_lowdim(f: Callable, dim: int = 1, competitors: int = 20, seed: int = 0,
                                     tol: float = 1e-6, half_width: float = 12.0) -> CheckReport:
    """Compare ``-log int exp(-f)`` with the free-energy functional.

    ``f`` maps an ``(m, dim)`` array of points to ``m`` values.  Competitor
    densities are ``rho_k proportional to exp(-f + g_k)`` with bounded smooth
    ``g_k``; each must give a strictly larger functional value.
    """
    if dim not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    log_z = log_partition(f, dim, half_width)
    lhs = -log_z

    def gibbs_log(x):
        return -f(x) - log_z

    at_gibbs = entropy_functional(gibbs_log, f, dim, half_width)
    gap = abs(at_gibbs - lhs)
    rng = np.random.default_rng(seed)
    rows = [{"density": "gibbs", "functional": at_gibbs, "excess": at_gibbs - lhs}]
    excesses = []
    for k in range(competitors):
        g = _perturbation(rng, dim)
        # competitors use the fixed tensor rule; their excess is far above its error
        pts, w = _tensor_rule(dim, half_width, 400 if dim == 1 else 200)
        fx, gx = f(pts), g(pts)
        lr = -fx + gx - float(logsumexp(-fx + gx, b=w))
        val = float(np.sum(w * np.exp(lr) * (fx + lr)))
        excesses.append(val - lhs)
        rows.append({"density": f"competitor_{k}", "functional": val, "excess": val - lhs})
    min_excess = min(excesses) if excesses else float("inf")
    ok = gap <= tol and min_excess > tol
    return CheckReport(
        "variational_formula",
        "pass" if ok else "fail",
        "deterministic",
        inputs={"dim": dim, "competitors": competitors, "seed": seed, "tol": tol},
        constants={"minus_log_partition": lhs},
        margin=min(tol - gap, min_excess),
        details={"functional_at_gibbs": at_gibbs, "gap": gap, "min_competitor_excess": min_excess},
        evidence=rows,
    )
