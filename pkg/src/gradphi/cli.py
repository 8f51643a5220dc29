"""Command-line runner: configuration, experiment dispatch, persistence and run manifests.

Usage::

    gradphi <subcommand> --config run.ini --out results/ [--threads N]
            [--seed-override S] [--cap-minutes M]
    gradphi report BUNDLE_DIR [BUNDLE_DIR ...] --out summary/

Configuration files are INI-style with the sections and keys below (all
optional except that the file must not be empty)::

    [lattice]     d = 2            n = 1-5   (a level, a range a-b, or a list)
    [potential]   spec = quadratic:1.0       (or logcosh:<a>)
    [tilt]        p = 0.5, 0        q = 1, 0
    [chain]       steps burn_in seed n_chains step_size thin
    [experiment]  which = <comma list>       count samples bundles name

Exit status is 0 when every check passes (inconclusive Monte-Carlo checks
are counted as warnings), 1 when a check fails, 2 for usage and
configuration errors, and 3 when a resource cap is hit or a run errors out.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .ensembles import DirichletEnsemble, NeumannEnsemble
from .free_energy import defects, nu_estimate, nustar_estimate, write_estimates_csv
from .gff import nu_exact, nustar_exact
from .lattice import cube
from .potentials import Potential, PotentialError, parse_potential, validate
from .sampler import ChainConfig, SamplerError, mala_chain, standard_observables, write_trace_csv
from .verification import contraction, elliptic, inequalities, patching_checks, properties, variational
from .verification.reports import CheckReport, combine, read_bundle, write_bundle

__all__ = ["ConfigError", "CapExceeded", "RunConfig", "RunManifest", "config_parse", "run", "main", "SUBCOMMANDS"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

MAX_LEVEL = {2: 5, 3: 3}

SCHEMA: dict[str, dict[str, str]] = {
    "lattice": {"d": "int", "n": "levels"},
    "potential": {"spec": "potential"},
    "tilt": {"p": "vector", "q": "vector"},
    "chain": {"steps": "int", "burn_in": "int", "seed": "int", "n_chains": "int", "step_size": "float",
              "thin": "int"},
    "experiment": {"which": "list", "count": "int", "samples": "int", "bundles": "list", "name": "str"},
}

SUMMARY_HEADER = ["check_id", "status", "provenance", "margin", "constants", "source"]
SERIES_HEADER = ["check_id", "level", "value", "stderr"]


class ConfigError(ValueError):
    """Configuration problem, reported with its line and key when known."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


class CapExceeded(RuntimeError):
    """A size or time cap was hit."""


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults applied."""

    d: int = 2
    levels: tuple[int, ...] = (1,)
    potential_spec: str = "quadratic:1.0"
    p: tuple[float, ...] | None = None
    q: tuple[float, ...] | None = None
    chain: ChainConfig = field(default_factory=lambda: ChainConfig(steps=4000, burn_in=1000, n_chains=8))
    which: tuple[str, ...] = ()
    count: int = 1000
    samples: int = 32
    bundles: tuple[str, ...] = ()
    name: str = ""

    @property
    def potential(self) -> Potential:
        return parse_potential(self.potential_spec)

    @property
    def tilt_p(self) -> np.ndarray:
        return np.zeros(self.d) if self.p is None else np.asarray(self.p, dtype=float)

    @property
    def tilt_q(self) -> np.ndarray:
        return np.zeros(self.d) if self.q is None else np.asarray(self.q, dtype=float)

    @property
    def seed(self) -> int:
        return self.chain.seed

    def snapshot(self) -> dict:
        out = asdict(self)
        out["chain"] = asdict(self.chain)
        return out


@dataclass
class RunManifest:
    """Provenance record written next to every run's outputs."""

    experiment: str
    config: dict
    seeds: dict
    version: str
    started: str
    finished: str = ""
    outputs: dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = ""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, ""), i)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section:
            lines.setdefault((section, m.group(1).strip().lower()), i)
    return lines


def _parse_levels(text: str) -> tuple[int, ...]:
    text = text.strip()
    m = re.fullmatch(r"(-?\d+)\s*(?:-|\.\.)\s*(-?\d+)", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise ValueError(f"empty level range {text!r}")
        return tuple(range(a, b + 1))
    return tuple(int(s) for s in re.split(r"[,\s]+", text) if s)


def _parse_vector(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in re.split(r"[,\s]+", text.strip().strip("()[]")) if s)


def _convert(kind: str, value: str):
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "levels":
        return _parse_levels(value)
    if kind == "vector":
        return _parse_vector(value)
    if kind == "list":
        return tuple(s.strip() for s in value.split(",") if s.strip())
    if kind == "potential":
        parse_potential(value)
        return value.strip()
    return value.strip()


def config_parse(text: str) -> RunConfig:
    """Parse and validate an INI configuration.

    Raises:
        ConfigError: on empty input, syntax errors, unknown sections or keys,
            type mismatches and admissibility violations (dimension, level
            caps, potential ellipticity, tilt length).
    """
    if not text.strip():
        raise ConfigError("empty configuration")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", line=exc.lineno) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key in [{exc.section}]", line=exc.lineno, key=exc.option) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("cannot parse line", line=line) from exc
    lines = _key_lines(text)
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line=lines.get((sec, "")))
        for key, raw in parser.items(section):
            kind = SCHEMA[sec].get(key)
            line = lines.get((sec, key))
            if kind is None:
                raise ConfigError(f"unknown key in [{section}]", line=line, key=key)
            try:
                values.setdefault(sec, {})[key] = _convert(kind, raw)
            except (ValueError, PotentialError) as exc:
                raise ConfigError(f"expected {kind}, got {raw!r} ({exc})", line=line, key=key) from exc
    if not values and not parser.sections():
        raise ConfigError("empty configuration")

    def get(sec, key, default):
        return values.get(sec, {}).get(key, default)

    def line_of(sec, key):
        return lines.get((sec, key))

    d = get("lattice", "d", 2)
    if d not in MAX_LEVEL:
        raise ConfigError(f"dimension must be 2 or 3, got {d}", line=line_of("lattice", "d"), key="d")
    levels = get("lattice", "n", (1,))
    if not levels or min(levels) < 1:
        raise ConfigError("levels must be >= 1", line=line_of("lattice", "n"), key="n")
    if max(levels) > MAX_LEVEL[d]:
        raise ConfigError(f"level {max(levels)} exceeds the cap n <= {MAX_LEVEL[d]} for d = {d}",
                          line=line_of("lattice", "n"), key="n")
    spec = get("potential", "spec", "quadratic:1.0")
    try:
        validate(parse_potential(spec))
    except PotentialError as exc:
        raise ConfigError(f"inadmissible potential {spec!r}: {exc}", line=line_of("potential", "spec"),
                          key="spec") from exc
    tilts = {}
    for key in ("p", "q"):
        v = get("tilt", key, None)
        if v is not None and len(v) != d:
            raise ConfigError(f"tilt has {len(v)} components, expected {d}", line=line_of("tilt", key), key=key)
        tilts[key] = v
    chain_kw = {k: v for k, v in values.get("chain", {}).items()}
    base = RunConfig().chain
    try:
        chain = replace(base, **chain_kw)
    except SamplerError as exc:
        key = next(iter(chain_kw), None)
        raise ConfigError(str(exc), line=line_of("chain", key) if key else None, key=key) from exc
    for key in ("count", "samples"):
        if get("experiment", key, 1) < 1:
            raise ConfigError("must be positive", line=line_of("experiment", key), key=key)
    return RunConfig(d=d, levels=tuple(sorted(set(levels))), potential_spec=spec, p=tilts["p"], q=tilts["q"],
                     chain=chain, which=tuple(w.lower() for w in get("experiment", "which", ())),
                     count=get("experiment", "count", 1000), samples=get("experiment", "samples", 32),
                     bundles=get("experiment", "bundles", ()), name=get("experiment", "name", ""))


class _Context:
    """Output directory, digest bookkeeping, worker pool and time cap for one run."""

    def __init__(self, out: Path, threads: int, cap_minutes: float | None):
        self.out = out
        self.threads = max(1, threads)
        self.deadline = None if cap_minutes is None else time.monotonic() + 60.0 * cap_minutes
        self.outputs: list[Path] = []
        self.aggregated: list[str] | None = None

    def check_time(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise CapExceeded("time cap exceeded")

    def map(self, fn: Callable, items: Sequence):
        """Apply ``fn`` to ``items`` on the worker pool, in input order."""

        def guarded(x):
            self.check_time()
            return fn(x)

        if self.threads == 1 or len(items) < 2:
            return [guarded(x) for x in items]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(guarded, items))

    def csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([format(float(x), ".17g") if isinstance(x, (float, np.floating)) else x for x in row])
        self.outputs.append(path)
        return path

    def track(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def bundle(self, reports: Sequence[CheckReport]) -> None:
        path = write_bundle(reports, self.out)
        self.track(path)
        for r in reports:
            if r.evidence:
                self.track(self.out / f"{r.check_id}.csv")


def _require_quadratic(cfg: RunConfig, what: str) -> float:
    pot = cfg.potential
    if not pot.is_quadratic:
        raise ConfigError(f"{what} needs the quadratic potential, got {cfg.potential_spec!r}", key="spec")
    return pot.beta


def _selected(cfg: RunConfig, available: Sequence[str], default: Sequence[str] | None = None) -> list[str]:
    chosen = list(cfg.which) or list(default if default is not None else available)
    unknown = [w for w in chosen if w not in available]
    if unknown:
        raise ConfigError(f"unknown experiment(s) {unknown}; choose from {list(available)}", key="which")
    return chosen


def _cmd_gff_exact(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    beta = _require_quadratic(cfg, "gff-exact")
    p, q = cfg.tilt_p, cfg.tilt_q
    rows = ctx.map(lambda n: [cfg.d, n, beta, *p, nu_exact(cfg.d, n, beta, p), *q, nustar_exact(cfg.d, n, beta, q)],
                   list(cfg.levels))
    header = (["d", "n", "beta"] + [f"p_{i}" for i in range(cfg.d)] + ["nu"]
              + [f"q_{i}" for i in range(cfg.d)] + ["nustar"])
    ctx.csv("gff_exact.csv", header, rows)
    return []


def _cmd_sample(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    n = max(cfg.levels)
    region = cube(cfg.d, n)
    if cfg.q is not None and cfg.p is None:
        ens = NeumannEnsemble(region, cfg.tilt_q, cfg.potential)
        names = ["energy", "slope", "grad_energy"]
    else:
        ens = DirichletEnsemble(region, cfg.tilt_p, cfg.potential)
        names = ["energy", "grad_nu", "l2"]
    res = mala_chain(ens, cfg.chain, standard_observables(ens, names))
    write_trace_csv(res, ctx.out / "trace.csv")
    ctx.track(ctx.out / "trace.csv")
    rows = []
    for name in names:
        m, s = res.estimate(name)
        for k, (mk, sk) in enumerate(zip(np.ravel(m), np.ravel(s))):
            rows.append([name, k, float(mk), float(sk), float(res.stats.ess[name][k]), float(res.stats.iact[name][k])])
    ctx.csv("estimates.csv", ["observable", "component", "mean", "stderr", "ess", "iact"], rows)
    status = "pass" if res.stats.ok else "fail"
    return [CheckReport("sampler_diagnostics", status, "mc",
                        inputs={"ensemble": type(ens).__name__, "n": n},
                        constants={"acceptance": res.stats.acceptance, "step_size": res.stats.step_size},
                        margin=float(min(np.min(v) for v in res.stats.ess.values())),
                        details={"flags": list(res.stats.flags)})]


def _level_seed(cfg: RunConfig, n: int) -> ChainConfig:
    return replace(cfg.chain, seed=cfg.chain.seed + 1000 * n)


def _estimates(cfg: RunConfig, ctx: _Context, quantity: str):
    fn = nu_estimate if quantity == "nu" else nustar_estimate
    tilt = cfg.tilt_p if quantity == "nu" else cfg.tilt_q
    return ctx.map(lambda n: fn(cfg.d, n, tilt, cfg.potential, _level_seed(cfg, n)), list(cfg.levels))


def _cmd_nu(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    ests = _estimates(cfg, ctx, "nu")
    write_estimates_csv(ests, ctx.track(ctx.out / "estimates.csv"))
    return []


def _cmd_nustar(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    ests = _estimates(cfg, ctx, "nustar")
    write_estimates_csv(ests, ctx.track(ctx.out / "estimates.csv"))
    return []


PROPERTY_CHECKS = ("subadditivity", "one_sided_duality", "quadratic_bounds", "uniform_convexity")


def _cmd_defects(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    ests = _estimates(cfg, ctx, "nu")
    write_estimates_csv(ests, ctx.track(ctx.out / "estimates.csv"))
    rows = [[dd.n, *dd.tilt, dd.tau, dd.stderr] for dd in defects(ests)]
    ctx.csv("defects.csv", ["n"] + [f"p_{i}" for i in range(cfg.d)] + ["tau", "stderr"], rows)
    if not cfg.potential.is_quadratic:
        return []
    chosen = _selected(cfg, PROPERTY_CHECKS)
    table = properties.gff_table(cfg.d, cfg.levels, cfg.potential.beta)
    fns = {"subadditivity": properties.check_subadditivity, "one_sided_duality": properties.check_one_sided_duality,
           "quadratic_bounds": properties.check_quadratic_bounds,
           "uniform_convexity": properties.check_uniform_convexity}
    return ctx.map(lambda w: fns[w](table), chosen)


def _default_qs(d: int) -> list[np.ndarray]:
    return [np.zeros(d), np.eye(d)[0], np.ones(d)]


def _cmd_duality(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    chosen = _selected(cfg, ("duality", "variational"))
    reports = []
    if "duality" in chosen:
        beta = _require_quadratic(cfg, "duality")
        model = "lattice" if len(cfg.levels) >= 5 else "geometric"
        nu_bar, ns_bar = properties.gff_limit_functions(cfg.d, beta, cfg.levels, model=model)
        qs = [cfg.tilt_q] if cfg.q is not None else _default_qs(cfg.d)
        reports.append(properties.check_duality(nu_bar, ns_bar, qs))
    if "variational" in chosen:
        ens = DirichletEnsemble(cube(cfg.d, 1), cfg.tilt_p, cfg.potential)
        reports.append(variational.check_variational_formula_lowdim(lambda x: ens.energies(x), dim=1,
                                                                    seed=cfg.seed))
    return reports


def _cmd_rate(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    if len(cfg.levels) < 3:
        raise ConfigError("rate needs at least three levels", key="n")
    model = "lattice" if len(cfg.levels) >= 5 else "geometric"
    if cfg.potential.is_quadratic:
        vals = ctx.map(lambda n: nu_exact(cfg.d, n, cfg.potential.beta, cfg.tilt_p), list(cfg.levels))
    else:
        vals = [e.value for e in _estimates(cfg, ctx, "nu")]
    return [properties.check_rate(cfg.levels, vals, tilt=cfg.tilt_p.tolist(), model=model)]


def _cmd_contraction(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    if cfg.potential.is_quadratic:
        vals = contraction.flatness_gff(cfg.d, cfg.levels, cfg.potential.beta)
        return [contraction.check_flatness(cfg.levels, vals)]
    out = ctx.map(lambda n: contraction.flatness_mc(cfg.d, n, cfg.potential, _level_seed(cfg, n)), list(cfg.levels))
    r = contraction.check_flatness(cfg.levels, [o[0] for o in out], [o[1] for o in out], "mc", check_id="flatness_mc")
    r.details["chains"] = [o[2] for o in out]
    return [r]


def _cmd_slope_variance(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    q = cfg.tilt_q
    if cfg.potential.is_quadratic:
        vals = contraction.slope_variance_gff(cfg.d, cfg.levels, cfg.potential.beta)
        return [contraction.check_slope_variance_contraction(cfg.levels, vals, q=q)]
    out = ctx.map(lambda n: contraction.slope_variance_mc(cfg.d, n, q, cfg.potential, _level_seed(cfg, n)),
                  list(cfg.levels))
    r = contraction.check_slope_variance_contraction(cfg.levels, [o[0] for o in out], [o[1] for o in out], q, "mc",
                                                     check_id="slope_variance_contraction_mc")
    r.details["chains"] = [o[2] for o in out]
    return [r]


INEQUALITY_CHECKS = ("poincare", "caccioppoli", "reverse_holder", "meyers")


def _cmd_inequalities(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    chosen = _selected(cfg, INEQUALITY_CHECKS, default=("poincare",))
    pot = cfg.potential
    mc = not pot.is_quadratic
    beta = 1.0 if mc else pot.beta
    n = max(cfg.levels)

    def job(which):
        if which == "poincare":
            return inequalities.inequality_suite(cfg.d, cfg.levels, count=cfg.count, seed=cfg.seed)
        if which == "caccioppoli":
            return [elliptic.check_caccioppoli(n, cfg.d, potential=pot if mc else None, cfg=cfg.chain,
                                               beta=beta, seed=cfg.seed)]
        if which == "reverse_holder":
            return [elliptic.check_reverse_holder(n, cfg.d, potential=pot if mc else None, cfg=cfg.chain,
                                                  beta=beta, seed=cfg.seed)]
        return [elliptic.check_meyers(d=cfg.d, potential=pot if mc else None, cfg=cfg.chain, beta=beta)]

    return [r for group in ctx.map(job, chosen) for r in group]


PATCHING_CHECKS = ("operator", "block_integral", "energy")


def _cmd_patching(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    if max(cfg.levels) > 2:
        raise ConfigError("patching experiments are limited to n <= 2 (dense operators)", key="n")
    chosen = _selected(cfg, PATCHING_CHECKS)
    levels = list(cfg.levels)

    def job(which):
        if which == "operator":
            fit = min(levels)
            return patching_checks.check_patching_operator(cfg.d, fit_level=fit,
                                                           check_levels=[m for m in levels if m != fit],
                                                           seed=cfg.seed)
        if which == "block_integral":
            return patching_checks.check_block_integral(cfg.d, seed=cfg.seed)
        return patching_checks.check_patching_energy(cfg.tilt_q, levels, None if cfg.potential.is_quadratic
                                                     else cfg.potential, samples=cfg.samples, seed=cfg.seed,
                                                     cfg=cfg.chain, d=cfg.d)

    return ctx.map(job, chosen)


_LEVEL_KEYS = ("level", "n")
_VALUE_KEYS = ("value", "statistic", "variance", "estimate", "lhs")


def _series_rows(check_id: str, csv_path: Path) -> list[list]:
    if not csv_path.exists():
        return []
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    cols = rows[0].keys()
    lk = next((k for k in _LEVEL_KEYS if k in cols), None)
    vk = next((k for k in _VALUE_KEYS if k in cols), None)
    if lk is None or vk is None:
        return []
    sk = next((k for k in ("stderr", "lhs_se") if k in cols), None)
    out = []
    for r in rows:
        try:
            out.append([check_id, int(float(r[lk])), float(r[vk]), float(r[sk]) if sk and r[sk] != "" else 0.0])
        except ValueError:
            continue
    return out


def _cmd_report(cfg: RunConfig, ctx: _Context) -> list[CheckReport]:
    if not cfg.bundles:
        raise ConfigError("report needs at least one bundle directory", key="bundles")
    summary, series, statuses = [], [], []
    for b in cfg.bundles:
        path = Path(b)
        js = path / "reports.json" if path.is_dir() else path
        if not js.exists():
            raise ConfigError(f"no report bundle at {b}", key="bundles")
        for r in read_bundle(js):
            consts = ";".join(f"{k}={v}" for k, v in r.get("constants", {}).items())
            summary.append([r["check_id"], r["status"], r["provenance"], r.get("margin"), consts, str(js.parent)])
            statuses.append(r["status"])
            series.extend(_series_rows(r["check_id"], js.parent / f"{r['check_id']}.csv"))
    ctx.csv("summary.csv", SUMMARY_HEADER, summary)
    ctx.csv("series.csv", SERIES_HEADER, series)
    ctx.aggregated = statuses
    return []


SUBCOMMANDS: dict[str, Callable[[RunConfig, _Context], list[CheckReport]]] = {
    "gff-exact": _cmd_gff_exact,
    "sample": _cmd_sample,
    "nu": _cmd_nu,
    "nustar": _cmd_nustar,
    "defects": _cmd_defects,
    "duality": _cmd_duality,
    "rate": _cmd_rate,
    "contraction": _cmd_contraction,
    "slope-variance": _cmd_slope_variance,
    "inequalities": _cmd_inequalities,
    "patching": _cmd_patching,
    "report": _cmd_report,
}


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(subcommand: str, cfg: RunConfig, out: Path | str, threads: int = 1,
        cap_minutes: float | None = None, log=None) -> int:
    """Run one subcommand, write its artifacts and manifest, and return the exit status."""
    log = log or (lambda msg: print(msg, file=sys.stderr))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(out, threads, cap_minutes)
    manifest = RunManifest(experiment=cfg.name or subcommand, config=cfg.snapshot(),
                           seeds={"chain": cfg.chain.seed, "corpus": cfg.seed}, version=__version__,
                           started=_now())
    try:
        reports = SUBCOMMANDS[subcommand](cfg, ctx)
        if reports:
            ctx.bundle(reports)
    except CapExceeded as exc:
        log(f"error: {exc}")
        manifest.summary = {"error": str(exc)}
        code = EXIT_RUNTIME
    except (SamplerError, np.linalg.LinAlgError, RuntimeError) as exc:
        log(f"error: {type(exc).__name__}: {exc}")
        manifest.summary = {"error": f"{type(exc).__name__}: {exc}"}
        code = EXIT_RUNTIME
    else:
        statuses = ctx.aggregated if ctx.aggregated is not None else [r.status for r in reports]
        for r in reports:
            log(r.summary())
        overall = combine(statuses) if statuses else "pass"
        warnings = statuses.count("inconclusive")
        manifest.summary = {"checks": len(statuses), "passed": statuses.count("pass"),
                            "failed": statuses.count("fail"), "inconclusive": warnings, "overall": overall}
        if statuses:
            log(f"{statuses.count('pass')}/{len(statuses)} checks passed, {statuses.count('fail')} failed, "
                f"{warnings} warning(s) (inconclusive)")
        code = EXIT_FAIL if overall == "fail" else EXIT_OK
    manifest.finished = _now()
    manifest.outputs = {p.name: _digest(p) for p in ctx.outputs if p.exists()}
    manifest.write(out / "manifest.json")
    return code


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradphi", description="Numerical experiments for the gradient interface model.")
    ap.add_argument("--version", action="version", version=f"gradphi {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name != "report", help="INI configuration file")
        sp.add_argument("--out", type=Path, default=Path("gradphi-out"), help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for independent jobs")
        sp.add_argument("--seed-override", type=int, default=None, help="replace the configured seed")
        sp.add_argument("--cap-minutes", type=float, default=None, help="wall-clock budget")
        if name == "report":
            sp.add_argument("bundles", nargs="*", help="bundle directories or reports.json files")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from exc
            cfg = config_parse(text)
        else:
            cfg = RunConfig()
        if args.subcommand == "report" and args.bundles:
            cfg = replace(cfg, bundles=tuple(args.bundles))
        if args.seed_override is not None:
            cfg = replace(cfg, chain=replace(cfg.chain, seed=args.seed_override))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return run(args.subcommand, cfg, args.out, threads=args.threads, cap_minutes=args.cap_minutes)
    except ConfigError as exc:
        print(f"gradphi: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
