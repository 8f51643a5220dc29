"""MCMC for both Gibbs families, exact Gaussian draws, and chain diagnostics.

The Langevin sampler is a Metropolis-adjusted Langevin algorithm run on a batch
of independent chains.  Proposals are preconditioned by the precision of the
quadratic reference ``beta_ref x^2`` with ``beta_ref = V''(0)/2``, whose
eigenbasis is a fast sine or cosine transform on boxes; the chain state is kept
both in vertex and in eigen-coordinates so that each step costs one transform
in each direction plus one force evaluation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ensembles import DirichletEnsemble, NeumannEnsemble
from .gff import LaplacianSpectrum, slope_functionals
from .potentials import Potential, Quadratic

__all__ = [
    "ChainConfig",
    "ChainStats",
    "ChainResult",
    "Observable",
    "ScalarDiagnostics",
    "SamplerError",
    "mala_chain",
    "exact_gaussian_sample",
    "diagnostics",
    "iact",
    "batch_means",
    "jackknife",
    "standard_observables",
    "write_trace_csv",
    "write_manifest",
]

Ensemble = DirichletEnsemble | NeumannEnsemble


class SamplerError(ValueError):
    """Invalid chain configuration or sampler input."""


@dataclass(frozen=True)
class ChainConfig:
    """Run parameters for :func:`mala_chain`.

    ``steps`` counts all iterations including ``burn_in``; the step size is
    adapted toward ``target_accept`` during burn-in and frozen afterwards.
    """

    steps: int = 20_000
    burn_in: int = 2_000
    step_size: float = 0.5
    seed: int = 0
    thin: int = 1
    n_chains: int = 8
    target_accept: float = 0.574
    adapt: bool = True
    batches: int | None = None

    def __post_init__(self):
        if not self.steps > self.burn_in >= 0:
            raise SamplerError("need steps > burn_in >= 0")
        if not self.step_size > 0:
            raise SamplerError("step_size must be positive")
        if self.thin < 1 or self.n_chains < 1:
            raise SamplerError("thin and n_chains must be >= 1")
        if not 0 < self.target_accept < 1:
            raise SamplerError("target_accept must lie in (0, 1)")

    @property
    def retained(self) -> int:
        return (self.steps - self.burn_in) // self.thin


@dataclass
class ScalarDiagnostics:
    mean: float
    stderr: float
    iact: float
    ess: float
    length: int
    flags: tuple[str, ...] = ()


@dataclass
class ChainStats:
    acceptance: float
    step_size: float
    iact: dict[str, np.ndarray] = field(default_factory=dict)
    ess: dict[str, np.ndarray] = field(default_factory=dict)
    stderr: dict[str, np.ndarray] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.flags


@dataclass(frozen=True)
class Observable:
    """A function of a batch of states ``(C, dim) -> (C,)`` or ``(C, k)``.

    ``kind="trace"`` keeps the full time series (for scalars and small
    vectors); ``kind="mean"`` keeps only per-chain batch means, which is the
    right choice for heavy per-bond statistics.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "trace"


@dataclass
class ChainResult:
    traces: dict[str, np.ndarray]
    batch_means: dict[str, np.ndarray]
    stats: ChainStats
    config: ChainConfig

    def estimate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Mean and batch-means standard error of an observable."""
        if name in self.traces:
            tr = self.traces[name]
            bm = _batch(tr, self.config.batches)
        else:
            bm = self.batch_means[name]
        flat = bm.reshape((-1,) + bm.shape[2:])
        mean = flat.mean(axis=0)
        se = flat.std(axis=0, ddof=1) / math.sqrt(len(flat))
        return mean, se

    def scalar(self, name: str, component: int | None = None) -> ScalarDiagnostics:
        tr = self.traces[name]
        if component is not None:
            tr = tr[..., component]
        return diagnostics(tr, batches=self.config.batches)


def _reference_beta(potential) -> float:
    pots = (potential,) if isinstance(potential, Potential) else potential
    return float(np.mean([v.curvature_at_zero for v in pots])) / 2.0


def _spectrum(ens: Ensemble) -> LaplacianSpectrum:
    kind = "dirichlet" if isinstance(ens, DirichletEnsemble) else "neumann"
    return LaplacianSpectrum(ens.region, kind)


_BLOCK = 64


def _chain_generators(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _normals(gens: list[np.random.Generator], n: int) -> np.ndarray:
    return np.stack([g.standard_normal(n) for g in gens])


def _reference_mean(ens: Ensemble, spec: LaplacianSpectrum, beta: float) -> np.ndarray:
    if isinstance(ens, DirichletEnsemble):
        return np.zeros(ens.dim)
    return spec.pinv_apply(ens.tilt_functional) / (2 * beta)


def exact_gaussian_sample(ens: Ensemble, seed: int, count: int) -> np.ndarray:
    """Independent exact draws from a quadratic-potential ensemble.

    Returns a ``(count, dim)`` array of states (interior values for Dirichlet,
    mean-zero vertex values for Neumann).  Draws come from the factorized
    precision ``2 beta K``: ``u = mean + K^{-1/2} xi / sqrt(2 beta)`` computed in
    the Laplacian eigenbasis.
    """
    pots = (ens.potential,) if isinstance(ens.potential, Potential) else ens.potential
    if not all(isinstance(v, Quadratic) for v in pots) or len({v.beta for v in pots}) != 1:
        raise SamplerError("exact sampling requires a single quadratic potential")
    if count < 1:
        raise SamplerError("count must be >= 1")
    beta = pots[0].beta
    spec = _spectrum(ens)
    lam = spec.eigenvalues
    if np.any(lam[spec.positive] <= 0):
        raise np.linalg.LinAlgError("precision factorization failed")
    scale = np.zeros(spec.size)
    scale[spec.positive] = 1.0 / np.sqrt(2 * beta * lam[spec.positive])
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((count, spec.size))
    draws = spec.inverse(xi * scale) + _reference_mean(ens, spec, beta)
    if isinstance(ens, NeumannEnsemble):
        draws = ens.project(draws)
    return draws


def mala_chain(ens: Ensemble, cfg: ChainConfig, observables: Sequence[Observable]) -> ChainResult:
    """Run ``cfg.n_chains`` preconditioned MALA chains and record observables.

    Chain ``c`` draws its randomness from ``SeedSequence(cfg.seed).spawn`` entry
    ``c``, so results are reproducible from ``(seed, chain index)``.  Neumann
    states are re-projected to mean zero after every accepted move.
    """
    names = [o.name for o in observables]
    if len(set(names)) != len(names):
        raise SamplerError("duplicate observable names")
    C = cfg.n_chains
    spec = _spectrum(ens)
    beta_ref = _reference_beta(ens.potential)
    prec = 2 * beta_ref * spec.eigenvalues
    pos = spec.positive
    m = np.zeros(spec.size)
    m[pos] = 1.0 / prec[pos]
    sqrt_m = np.sqrt(m)
    prec_z = np.where(pos, prec, 0.0)
    neumann = isinstance(ens, NeumannEnsemble)

    gens = _chain_generators(cfg.seed, C)
    init_gens = _chain_generators(cfg.seed + 0x9E3779B9, C)
    u = spec.inverse(_normals(init_gens, spec.size) * sqrt_m) + _reference_mean(ens, spec, beta_ref)
    if neumann:
        u = ens.project(u)
    z = spec.forward(u)
    e, f = ens.energies_and_forces(u)
    fz = spec.forward(f)
    log_h = math.log(cfg.step_size)

    T = cfg.retained
    nb = cfg.batches or max(2, int(math.isqrt(T)))
    if T < nb:
        raise SamplerError("too few retained samples for the requested batches")
    per_batch = T // nb
    traces: dict[str, list] = {o.name: [] for o in observables if o.kind == "trace"}
    sums: dict[str, np.ndarray | None] = {o.name: None for o in observables if o.kind == "mean"}
    bmeans: dict[str, list] = {o.name: [] for o in observables if o.kind == "mean"}
    accepted = 0
    recorded = 0
    in_batch = 0

    for step in range(cfg.steps):
        h = math.exp(log_h)
        drift = 0.5 * h * m * fz
        j = step % _BLOCK
        if j == 0:
            xi_buf = np.stack([g.standard_normal((_BLOCK, spec.size)) for g in gens], axis=1)
            un_buf = np.stack([g.random(_BLOCK) for g in gens], axis=1)
        xi = xi_buf[j]
        uniforms = un_buf[j]
        z_new = z + drift + math.sqrt(h) * sqrt_m * xi
        z_new[:, ~pos] = 0.0 if neumann else z_new[:, ~pos]
        u_new = spec.inverse(z_new)
        if neumann:
            u_new = ens.project(u_new)
        e_new, f_new = ens.energies_and_forces(u_new)
        fz_new = spec.forward(f_new)
        fwd = z_new - z - drift
        bwd = z - z_new - 0.5 * h * m * fz_new
        log_q_fwd = -np.sum(prec_z * fwd * fwd, axis=1) / (2 * h)
        log_q_bwd = -np.sum(prec_z * bwd * bwd, axis=1) / (2 * h)
        log_alpha = (e - e_new) + log_q_bwd - log_q_fwd
        acc = np.log(uniforms) < log_alpha
        u = np.where(acc[:, None], u_new, u)
        z = np.where(acc[:, None], z_new, z)
        e = np.where(acc, e_new, e)
        fz = np.where(acc[:, None], fz_new, fz)
        if step < cfg.burn_in:
            if cfg.adapt:
                rate = float(np.mean(np.exp(np.minimum(log_alpha, 0.0))))
                log_h += (rate - cfg.target_accept) / (1.0 + step) ** 0.6
                log_h = min(max(log_h, math.log(1e-6)), math.log(8.0))
            continue
        accepted += int(acc.sum())
        if (step - cfg.burn_in) % cfg.thin:
            continue
        if recorded >= per_batch * nb:
            continue
        recorded += 1
        for o in observables:
            val = np.asarray(o.fn(u), dtype=float)
            if o.kind == "trace":
                traces[o.name].append(val)
            else:
                sums[o.name] = val.copy() if sums[o.name] is None else sums[o.name] + val
        in_batch += 1
        if in_batch == per_batch:
            for name in sums:
                bmeans[name].append(sums[name] / per_batch)
                sums[name] = None
            in_batch = 0

    acceptance = accepted / (C * (cfg.steps - cfg.burn_in))
    out_traces = {k: np.moveaxis(np.asarray(v), 0, 1) for k, v in traces.items()}
    out_means = {k: np.moveaxis(np.asarray(v), 0, 1) for k, v in bmeans.items()}
    stats = ChainStats(acceptance=acceptance, step_size=math.exp(log_h))
    flags = []
    if not 0.1 <= acceptance <= 0.9:
        flags.append("acceptance")
    for name, tr in out_traces.items():
        comps = tr.reshape(tr.shape[0], tr.shape[1], -1)
        diag = [diagnostics(comps[..., k], batches=cfg.batches) for k in range(comps.shape[-1])]
        stats.iact[name] = np.array([x.iact for x in diag])
        stats.ess[name] = np.array([x.ess for x in diag])
        stats.stderr[name] = np.array([x.stderr for x in diag])
    stats.flags = tuple(flags)
    return ChainResult(out_traces, out_means, stats, cfg)


def _batch(trace: np.ndarray, batches: int | None = None) -> np.ndarray:
    """Per-chain batch means ``(C, B, ...)`` of a ``(C, T, ...)`` trace."""
    tr = np.asarray(trace, dtype=float)
    if tr.ndim == 1:
        tr = tr[None]
    T = tr.shape[1]
    nb = batches or max(2, int(math.isqrt(T)))
    size = T // nb
    tr = tr[:, T - nb * size:]
    return tr.reshape((tr.shape[0], nb, size) + tr.shape[2:]).mean(axis=2)


def batch_means(trace: np.ndarray, batches: int | None = None) -> tuple[float, float]:
    """Mean and standard error from ``floor(sqrt(T))`` batches per chain, pooled."""
    bm = _batch(trace, batches).reshape(-1)
    return float(bm.mean()), float(bm.std(ddof=1) / math.sqrt(len(bm)))


def iact(trace: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window.

    ``trace`` is ``(T,)`` or ``(C, T)``; autocovariances are averaged over
    chains around the pooled mean.  Returns ``nan`` for a constant trace.
    """
    x = np.asarray(trace, dtype=float)
    if x.ndim == 1:
        x = x[None]
    T = x.shape[1]
    x = x - x.mean()
    nfft = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(x, n=nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :T].mean(axis=0) / T
    if acov[0] <= 0:
        return float("nan")
    rho = acov / acov[0]
    tau = 1.0
    for w in range(1, T):
        tau = 1.0 + 2.0 * float(np.sum(rho[1 : w + 1]))
        if w >= c * tau:
            break
    return max(tau, 1e-12)


def diagnostics(trace: np.ndarray, batches: int | None = None, c: float = 5.0) -> ScalarDiagnostics:
    """IACT, ESS and batch-means standard error of a scalar trace.

    Raises:
        SamplerError: if the trace has fewer than 100 samples per chain.
    """
    x = np.asarray(trace, dtype=float)
    if x.ndim == 1:
        x = x[None]
    C, T = x.shape
    if T < 100:
        raise SamplerError("trace too short for diagnostics (need >= 100 samples)")
    mean, se = batch_means(x, batches)
    if np.all(x == x.flat[0]):
        return ScalarDiagnostics(mean, 0.0, float("nan"), float("nan"), C * T, ("constant",))
    tau = iact(x, c)
    ess = min(C * T / tau, float(C * T))
    return ScalarDiagnostics(mean, se, tau, ess, C * T)


def jackknife(batch_means_: Sequence[np.ndarray], fn: Callable[..., float]) -> tuple[float, float]:
    """Delete-one-batch jackknife for a smooth function of several means.

    ``batch_means_`` are arrays of shape ``(B, ...)`` sharing the batch axis.
    """
    arrays = [np.asarray(b, dtype=float) for b in batch_means_]
    B = arrays[0].shape[0]
    totals = [a.sum(axis=0) for a in arrays]
    full = fn(*[t / B for t in totals])
    loo = np.array([fn(*[(t - a[i]) / (B - 1) for t, a in zip(totals, arrays)]) for i in range(B)])
    bias_corrected = B * full - (B - 1) * loo.mean()
    se = math.sqrt((B - 1) / B * float(np.sum((loo - loo.mean()) ** 2)))
    return float(bias_corrected), se


def standard_observables(ens: Ensemble, which: Sequence[str]) -> list[Observable]:
    """Built-in observables by name.

    ``energy``: energy per vertex.  ``grad_energy``: ``|Q|^-1 sum_e |grad u|^2``.
    ``slope``: slope vector of ``grad u`` (Neumann).  ``grad_nu``: the
    ``p``-derivative integrand ``|Q|^-1 sum_e V'(p(e) + grad phi(e)) e``
    (Dirichlet).  ``l2``: ``|Q|^-1 sum_x u(x)^2``.  ``bond_sq``: per-bond
    second moments, kept as batch means.
    """
    region = ens.region
    vol = region.size
    out = []
    for name in which:
        if name == "energy":
            out.append(Observable(name, lambda u: ens.energies(u) / vol))
        elif name == "grad_energy":
            out.append(Observable(name, lambda u: np.sum(ens.gradients(u) ** 2, axis=-1) / vol))
        elif name == "slope":
            ell = slope_functionals(region)
            if isinstance(ens, DirichletEnsemble):
                ell = ell[:, ens.free]
            out.append(Observable(name, lambda u, ell=ell: u @ ell.T))
        elif name == "grad_nu":
            if not isinstance(ens, DirichletEnsemble):
                raise SamplerError("grad_nu is a Dirichlet observable")
            axes = region.bond_axes
            onehot = np.eye(region.d)[axes] / vol

            def gnu(u, onehot=onehot):
                return ens._potential_derivs(ens.tilted_gradients(u)) @ onehot

            out.append(Observable(name, gnu))
        elif name == "l2":
            out.append(Observable(name, lambda u: np.sum(u * u, axis=-1) / vol))
        elif name == "bond_sq":
            out.append(Observable(name, lambda u: ens.gradients(u) ** 2, kind="mean"))
        else:
            raise SamplerError(f"unknown observable {name!r}")
    return out


def _config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def write_trace_csv(result: ChainResult, path) -> None:
    """CSV with columns ``chain,step,<observable...>`` (vector observables expand to ``name_k``)."""
    import csv

    cols, arrays = [], []
    for name, tr in result.traces.items():
        tr2 = tr.reshape(tr.shape[0], tr.shape[1], -1)
        if tr2.shape[-1] == 1:
            cols.append(name)
            arrays.append(tr2[..., 0])
        else:
            for k in range(tr2.shape[-1]):
                cols.append(f"{name}_{k}")
                arrays.append(tr2[..., k])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "step"] + cols)
        if not arrays:
            return
        C, T = arrays[0].shape
        for c in range(C):
            for t in range(T):
                w.writerow([c, t] + [format(a[c, t], ".17g") for a in arrays])


def write_manifest(cfg: ChainConfig, ensemble_desc: dict, path, extra: dict | None = None) -> dict:
    payload = {"config": asdict(cfg), "ensemble": ensemble_desc}
    manifest = dict(payload, content_hash=_config_hash(payload), **(extra or {}))
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return manifest
