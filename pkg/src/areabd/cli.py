"""Command line entry point: ``areabd <subcommand> --config run.yaml``.

Each subcommand reads one YAML configuration, writes CSV files into the
output directory and finishes with ``manifest.json`` holding the resolved
configuration, warnings and a SHA-256 digest of every output.  Replicas are
addressed by index and seeded from ``(seed, index)``, so the worker count
changes wall-clock time only.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    CoupleExp,
    DvExp,
    EntropyMicroExp,
    FisherExp,
    GibbsSampleExp,
    GnzExp,
    LocalizedExp,
    RunConfig,
    SimulateExp,
    Source,
    StationarityExp,
    load_config,
    parse_config,
)
from .core import Box, ConfigurationError, ModelParams, PointConfiguration, _union_volume
from .dynamics import BoundarySamplerConfig, couple, event_rows, simulate, simulate_localized
from .estimators import (
    PoissonDensity,
    TestFunctionFamily,
    dv_entropy_lower_bound,
    fisher_mc,
    gnz_residual,
    summary_stats,
)
from .gibbs import GibbsSpec, poisson_sample, sample_mcmc, sample_rejection
from .micro import MicroSystem, entropy_path
from .stream import SAMPLE, EventStream, mix

COMMANDS = ("gibbs-sample", "simulate", "simulate-localized", "couple", "entropy-micro", "gnz",
            "fisher", "stationarity", "dv-entropy")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


# -- helpers -------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Pool:
    """Ordered map over replica indices, serial or across processes."""

    def __init__(self, threads: int):
        self.threads = threads
        self._ex = ProcessPoolExecutor(threads) if threads > 1 else None

    def map(self, fn, items):
        items = list(items)
        if self._ex is None:
            return [fn(i) for i in items]
        chunk = max(1, len(items) // (8 * self.threads))
        return list(self._ex.map(fn, items, chunksize=chunk))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()


def _region(reg, params: ModelParams) -> Box | None:
    return reg.box() if reg is not None else None


def _spec(params: ModelParams, window: Box | None) -> GibbsSpec:
    if window is not None and window == params.domain.box:
        window = None
    return GibbsSpec(params, window=window)


def draw_source(source: Source, params: ModelParams, window: Box | None, seed: int, tag: int,
                index: int) -> PointConfiguration:
    """Configuration number ``index`` of a source, seeded from ``(seed, tag, index)``."""
    box = window if window is not None else params.domain.box
    if source.kind == "empty":
        return PointConfiguration.empty(params)
    rng = EventStream(seed, index).rng(SAMPLE, tag)
    if source.kind == "poisson":
        pts = poisson_sample(box, source.intensity, rng)
        return PointConfiguration(params.domain.wrap(pts), params)
    spec = _spec(params, window)
    if source.kind == "gibbs":
        return sample_rejection(spec, rng, max_attempts=source.max_attempts).configuration
    return sample_mcmc(spec, mix(seed, SAMPLE, tag), source.burn_in, replica=index).configuration


def _draw_many(pool, source, params, window, seed, tag, n):
    return pool.map(partial(draw_source, source, params, window, seed, tag), range(n))


# -- workers (module level so they pickle) ------------------------------------------------


def _gibbs_worker(cfg: RunConfig, i: int):
    exp, params = cfg.experiment, cfg.model.params()
    spec = _spec(params, _region(exp.window, params))
    if exp.sampler == "rejection":
        rep = sample_rejection(spec, EventStream(cfg.seed, i).rng(SAMPLE, 0), exp.max_attempts)
    else:
        rep = sample_mcmc(spec, cfg.seed, exp.burn_in, replica=i)
    return rep.configuration.to_text() if exp.dump_samples else None, len(rep.configuration), rep.attempts


def _trajectory_worker(cfg: RunConfig, i: int):
    exp, params = cfg.experiment, cfg.model.params()
    stream = EventStream(cfg.seed, i)
    if isinstance(exp, SimulateExp):
        window = _region(exp.window, params)
        init = draw_source(exp.initial, params, window, cfg.seed, 1, i)
        tr = simulate(init, _spec(params, window), exp.T, stream, exp.snapshots.grid(exp.T),
                      record_events=exp.write_events)
    else:
        lam = exp.Lambda.box()
        whole = draw_source(exp.initial, params, None, cfg.seed, 1, i)
        init = whole.restrict(lam)
        b = exp.boundary
        tr = simulate_localized(init, lam, GibbsSpec(params), exp.T, stream,
                                BoundarySamplerConfig(b.mode, b.width, b.burn_in, b.max_attempts),
                                exp.snapshots.grid(exp.T), record_events=exp.write_events)
    snaps = [(t, c.to_text(), len(c)) for t, c in zip(tr.times, tr.snapshots)]
    rows = event_rows(tr) if exp.write_events else None
    return snaps, rows, tr.warnings, tr.stats


def _couple_worker(cfg: RunConfig, i: int):
    exp, params = cfg.experiment, cfg.model.params()
    lam = exp.Lambda.box()
    regions = [lam.grow(e) for e in exp.ells] + [lam.grow(exp.reference_ell)]
    init = draw_source(exp.initial, params, regions[-1], cfg.seed, 1, i)
    rep = couple(init, lam, regions, exp.T, EventStream(cfg.seed, i))
    return rep.disagree[:-1], rep.first_time[:-1], rep.monotone


def _stationarity_worker(cfg: RunConfig, i: int):
    exp, params = cfg.experiment, cfg.model.params()
    window = _region(exp.window, params)
    init = draw_source(exp.start, params, window, cfg.seed, 1, i)
    T = max(exp.times)
    tr = simulate(init, _spec(params, window), T, EventStream(cfg.seed, i), exp.times,
                  record_events=False)
    return [c.points for c in tr.snapshots]


# -- runners -------------------------------------------------------------------------------


def run_gibbs_sample(cfg, params, out: Path, pool):
    exp: GibbsSampleExp = cfg.experiment
    res = pool.map(partial(_gibbs_worker, cfg), range(exp.n_samples))
    counts = np.bincount([r[1] for r in res])
    n = exp.n_samples
    rows = [(k, int(c), c / n, math.sqrt((c / n) * (1 - c / n) / n)) for k, c in enumerate(counts)]
    write_csv(out / "histogram.csv", ["k", "count", "freq", "stderr"], rows)
    files = ["histogram.csv"]
    if exp.dump_samples:
        (out / "samples.txt").write_text("\n".join(r[0] for r in res))
        files.append("samples.txt")
    attempts = [r[2] for r in res]
    return files, [], {"mean_attempts": float(np.mean(attempts)), "max_attempts_used": max(attempts)}


def run_trajectories(cfg, params, out: Path, pool):
    exp = cfg.experiment
    res = pool.map(partial(_trajectory_worker, cfg), range(exp.replicas))
    files, warnings, index, counts = [], [], [], []
    for i, (snaps, rows, warns, stats) in enumerate(res):
        for w in warns:
            warnings.append(f"replica {i}: {w}")
        for j, (t, text, npts) in enumerate(snaps):
            counts.append((i, t, npts))
            if exp.write_events:
                rel = f"snapshots/replica_{i:05d}_{j:05d}.txt"
                (out / "snapshots").mkdir(exist_ok=True)
                (out / rel).write_text(text)
                index.append((i, j, t, rel, npts))
                files.append(rel)
        if exp.write_events:
            rel = f"events/replica_{i:05d}.csv"
            (out / "events").mkdir(exist_ok=True)
            write_csv(out / rel, ["time", "kind", *(f"x{k}" for k in range(params.d)), "point_id",
                                  "region_id"], rows)
            files.append(rel)
    write_csv(out / "counts.csv", ["replica", "t", "n_points"], counts)
    files.append("counts.csv")
    if index:
        write_csv(out / "snapshots.csv", ["replica", "index", "time", "file", "n_points"], index)
        files.append("snapshots.csv")
    info = {"proposals": int(sum(r[3]["proposals"] for r in res)),
            "accepted": int(sum(r[3]["accepted"] for r in res))}
    if isinstance(exp, LocalizedExp):
        info["boundary_mode"] = exp.boundary.mode
        info["annulus_width"] = exp.boundary.width if exp.boundary.width else 4 * params.R
        info["boundary_burn_in"] = exp.boundary.burn_in
    return files, warnings, info


def run_couple(cfg, params, out: Path, pool):
    exp: CoupleExp = cfg.experiment
    res = pool.map(partial(_couple_worker, cfg), range(exp.replicas))
    n = exp.replicas
    dis = np.array([r[0] for r in res], dtype=bool).reshape(n, len(exp.ells))
    rows = []
    for j, ell in enumerate(exp.ells):
        k = int(dis[:, j].sum())
        p = k / n
        times = [r[1][j] for r in res if r[1][j] is not None]
        rows.append((ell, k, n, p, math.sqrt(p * (1 - p) / n),
                     float(np.mean(times)) if times else float("nan")))
    write_csv(out / "coupling.csv", ["ell", "disagreements", "replicas", "p", "stderr",
                                     "mean_first_time"], rows)
    violations = sum(not r[2] for r in res)
    warnings = [f"{violations} replicas violated monotone disagreement"] if violations else []
    return ["coupling.csv"], warnings, {"monotone_violations": violations,
                                       "reference_ell": exp.reference_ell}


def _initial_law(exp: EntropyMicroExp, sys: MicroSystem, seed: int) -> np.ndarray:
    if isinstance(exp.initial, list):
        if len(exp.initial) != sys.n_states:
            raise ConfigurationError(f"initial law must have {sys.n_states} entries")
        return sys.check(exp.initial)
    if exp.initial == "empty":
        return sys.delta(0)
    if exp.initial == "stationary":
        return sys.stationary()
    w = np.random.default_rng(seed).exponential(size=sys.n_states)
    return w / w.sum()


def run_entropy_micro(cfg, params, out: Path, pool):
    exp: EntropyMicroExp = cfg.experiment
    sys = MicroSystem(np.asarray(exp.sites, dtype=float), params)
    p0 = _initial_law(exp, sys, cfg.seed)
    rows = entropy_path(sys, p0, exp.times.grid(exp.T), h=exp.h)
    cols = ["t", "entropy", "fisher", "xi", "debruijn_residual"]
    write_csv(out / "entropy.csv", cols, [[r[c] for c in cols] for r in rows])
    return ["entropy.csv"], [], {"states": sys.n_states}


def run_gnz(cfg, params, out: Path, pool):
    exp: GnzExp = cfg.experiment
    window = _region(exp.window, params)
    samples = _draw_many(pool, exp.source, params, window, cfg.seed, 2, exp.n_samples)
    family = TestFunctionFamily.from_names(exp.family, params)
    B = exp.B.box()
    rows = []
    for f in family:
        r = gnz_residual(samples, f, B, params, window=window, spacing=exp.spacing,
                         n_boot=exp.n_boot, seed=cfg.seed)
        rows.append((f.name, r.estimate, r.stderr, r.n, r.t))
    write_csv(out / "gnz.csv", ["name", "estimate", "stderr", "n", "t"], rows)
    return ["gnz.csv"], [], {}


def run_fisher(cfg, params, out: Path, pool):
    exp: FisherExp = cfg.experiment
    src = Source(kind="poisson", intensity=exp.intensity)
    rows = []
    for j, reg in enumerate(exp.windows):
        win = reg.box()
        samples = _draw_many(pool, src, params, win, cfg.seed, 10 + j, exp.n_samples)
        r = fisher_mc(samples, PoissonDensity(exp.intensity), win, params, spacing=exp.spacing)
        rows.append(("fisher", r.estimate, r.stderr, r.n, win.volume,
                     ";".join(map(repr, win.lo)), ";".join(map(repr, win.hi))))
    write_csv(out / "fisher.csv", ["name", "estimate", "stderr", "n", "volume", "lo", "hi"], rows)
    return ["fisher.csv"], [], {}


def run_stationarity(cfg, params, out: Path, pool):
    exp: StationarityExp = cfg.experiment
    window = _region(exp.window, params)
    ref_samples = _draw_many(pool, Source(kind="gibbs"), params, window, cfg.seed, 3,
                             exp.reference_samples)
    ref = summary_stats(ref_samples, params, window)
    res = pool.map(partial(_stationarity_worker, cfg), range(exp.replicas))
    times = sorted(set(exp.times))
    rows = []
    for j, t in enumerate(times):
        confs = [PointConfiguration(r[j], params) for r in res]
        st = summary_stats(confs, params, window)
        for name, e in st.items():
            r = ref[name]
            sigma = math.hypot(e.stderr, r.stderr)
            z = (e.estimate - r.estimate) / sigma if sigma > 0 else 0.0
            rows.append((t, name, e.estimate, e.stderr, e.n, r.estimate, r.stderr, z,
                         int(abs(z) <= 3)))
    write_csv(out / "stationarity.csv",
              ["t", "stat", "estimate", "stderr", "n", "reference", "reference_stderr", "z",
               "within_3sigma"], rows)
    return ["stationarity.csv"], [], {}


def run_dv(cfg, params, out: Path, pool):
    exp: DvExp = cfg.experiment
    win = exp.window.box()
    sw = exp.sample_window.box() if exp.sample_window else win
    mu = _draw_many(pool, exp.mu, params, sw, cfg.seed, 4, exp.n_samples)
    nu = _draw_many(pool, exp.nu, params, sw, cfg.seed, 5, exp.n_samples)
    family = TestFunctionFamily.from_names(exp.family, params)
    res = dv_entropy_lower_bound(mu, nu, family, win, params, seed=cfg.seed,
                                 maxiter=exp.maxiter, restarts=exp.restarts)
    rows = [("dv_bound", res.estimate, res.stderr, res.n, int(res.converged),
             ";".join(repr(float(t)) for t in res.theta))]
    write_csv(out / "dv.csv", ["name", "estimate", "stderr", "n", "converged", "theta"], rows)
    warnings = [] if res.converged else ["optimizer did not converge; best value reported"]
    return ["dv.csv"], warnings, {"trace": res.trace, "family": family.names}


RUNNERS = {
    "gibbs-sample": run_gibbs_sample,
    "simulate": run_trajectories,
    "simulate-localized": run_trajectories,
    "couple": run_couple,
    "entropy-micro": run_entropy_micro,
    "gnz": run_gnz,
    "fisher": run_fisher,
    "stationarity": run_stationarity,
    "dv-entropy": run_dv,
}


# -- validation report --------------------------------------------------------------------


def derived_quantities(cfg: RunConfig) -> dict:
    """Static cost estimates for a configuration."""
    params = cfg.model.params()
    exp = cfg.experiment
    out: dict = {"kind": exp.kind, "d": params.d, "R": params.R}
    region = None
    for name in ("window", "Lambda"):
        reg = getattr(exp, name, None)
        if reg is not None:
            region = reg.box()
    region = region or params.domain.box
    T = getattr(exp, "T", None)
    if T is not None:
        out["dominating_event_rate"] = region.volume * T
        out["dominating_events_total"] = region.volume * T * getattr(exp, "replicas", 1)
    if isinstance(exp, EntropyMicroExp):
        out["state_count"] = 2 ** len(exp.sites)
    uses_gibbs = (isinstance(exp, (GibbsSampleExp, StationarityExp, LocalizedExp))
                  or any(isinstance(getattr(exp, s, None), Source) and getattr(exp, s).kind == "gibbs"
                         for s in ("source", "initial", "mu", "nu", "start")))
    if uses_gibbs and params.interaction == "area":
        box = params.domain.box if isinstance(exp, LocalizedExp) else region
        rng = np.random.default_rng(cfg.seed)
        H = [_union_volume(params.domain.wrap(poisson_sample(box, 1.0, rng)), params)
             for _ in range(200)]
        out["expected_rejection_attempts"] = math.exp(float(np.mean(H)))
    return out


# -- entry point ----------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="areabd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"areabd {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("validate",):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, help="worker processes (overrides the config)")
        p.add_argument("--seed-override", type=int, help="replace the configured seed (u64)")
    return ap


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    update = {}
    if args.threads is not None:
        update["threads"] = args.threads
    if args.seed_override is not None:
        update["seed"] = args.seed_override
    if args.out is not None:
        update["output"] = args.out
    if update:
        data = cfg.model_dump(mode="json")
        data.update(update)
        cfg = parse_config(json.dumps(data))
    return cfg


def run(command: str, cfg: RunConfig, out: Path) -> dict:
    """Execute one experiment and write its outputs and manifest into ``out``."""
    if cfg.experiment.kind != command:
        raise ConfigError([f"experiment.kind: config describes {cfg.experiment.kind!r}, "
                           f"not {command!r}"])
    params = cfg.model.params()
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    pool = _Pool(cfg.threads)
    try:
        files, warnings, info = RUNNERS[command](cfg, params, out, pool)
    finally:
        pool.close()
    manifest = {
        "tool": "areabd",
        "version": __version__,
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "wall_clock_seconds": time.perf_counter() - start,
        "warnings": warnings,
        "info": info,
        "outputs": {f: _digest(out / f) for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except ConfigError as err:
        for m in err.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        report = {"errors": [], "config": cfg.model_dump(mode="json"),
                  "derived": derived_quantities(cfg)}
        print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK
    out = Path(cfg.output or "out")
    try:
        manifest = run(args.command, cfg, out)
    except ConfigError as err:
        for m in err.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - any failure of the run maps to exit 3
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    for w in manifest["warnings"][:20]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(manifest['outputs'])} files to {out}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
