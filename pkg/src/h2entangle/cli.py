"""Command-line harness: ground-state, scan, local-entropy and compare subcommands.

Every command writes plot-ready CSV files, a resolved ``config.json`` and a
``manifest.json`` (timings, convergence flags, warning counters, checksums)
into the output directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import io as fio
from .density import DensityMatrix
from .entropy import (
    ProfileShapeError,
    build_partition,
    linear_entropy,
    local_entropy_profile,
    local_rdms,
    profile_width,
)
from .exact import exact_rdm, save_snapshot, solve_ground_state
from .grid import Grid1D
from .model import NuclearConfig
from .sampling import conditional_waves, sample_configurations
from .tdqmc import relax_tdqmc, save_checkpoint, tdqmc_rdm

log = logging.getLogger("h2entangle")

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG, EXIT_THRESHOLD = 0, 1, 2, 3
WORKERS_ENV = "H2ENTANGLE_WORKERS"
METHODS = ("exact", "tdqmc", "both")


class ConfigError(ValueError):
    pass


class IntegrityError(ValueError):
    pass


@dataclass
class RunConfig:
    d: list[float] = field(default_factory=lambda: [3.0])
    d_min: float | None = None
    d_max: float | None = None
    d_step: float | None = None
    method: str = "both"
    grid_n: int = 256
    grid_extent: float = 12.0
    dtau: float = 0.01
    tol: float = 1e-8
    max_iters: int = 20000
    walkers: int = 200000
    regions: int = 50
    min_region_walkers: int = 10
    tdqmc_walkers: int = 1000
    tdqmc_dtau: float = 0.03
    tdqmc_tol: float = 2e-3
    tdqmc_min_iters: int = 400
    tdqmc_max_iters: int = 3000
    alpha: float = 1.0
    seed: int = 1234
    max_entropy_gap: float = 0.05
    max_rdm_distance: float | None = None
    max_fwhm_gap: float = 0.15
    pair: str = "exact,tdqmc"
    source: str | None = None
    out: str = "out"

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        positive = ["dtau", "tol", "grid_extent", "tdqmc_dtau", "tdqmc_tol", "alpha"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("walkers", "regions", "tdqmc_walkers", "max_iters", "tdqmc_max_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if any(d < 0 for d in self.d):
            raise ConfigError("internuclear distances must be non-negative")
        if self.d_min is not None or self.d_max is not None:
            if None in (self.d_min, self.d_max, self.d_step):
                raise ConfigError("--d-min, --d-max and --d-step must be given together")
            if not (0 <= self.d_min < self.d_max) or not self.d_step > 0:
                raise ConfigError("d-range must satisfy 0 <= d_min < d_max and d_step > 0")
        try:
            Grid1D(self.grid_n, -self.grid_extent, self.grid_extent)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.grid_n, -self.grid_extent, self.grid_extent)

    def distances(self) -> list[float]:
        if self.d_min is None:
            return list(self.d)
        count = int(np.floor((self.d_max - self.d_min) / self.d_step + 1e-9)) + 1
        return [round(self.d_min + i * self.d_step, 10) for i in range(count)]

    def methods(self) -> list[str]:
        return ["exact", "tdqmc"] if self.method == "both" else [self.method]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FLAG_NAMES = {f.name: "--" + f.name.replace("_", "-") for f in dataclasses.fields(RunConfig)}
FLAG_NAMES["source"] = "--from"


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def _add_run_options(p: argparse.ArgumentParser):
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    p.add_argument("--config", help="YAML file of key: value settings (flags override it)")
    for name, flag in FLAG_NAMES.items():
        kind = types[name]
        if name == "d":
            conv = _float_list
        elif "int" in str(kind):
            conv = int
        elif "float" in str(kind):
            conv = float
        else:
            conv = str
        kw = {"dest": name, "type": conv, "default": argparse.SUPPRESS}
        if name == "method":
            kw["choices"] = METHODS
        p.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="h2entangle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("ground-state", "walker cloud and reduced density matrices at one distance"),
        ("scan", "energy and global entropy over a range of distances"),
        ("local-entropy", "local entropy profiles at a list of distances"),
        ("compare", "exact versus TDQMC agreement report"),
    ]:
        _add_run_options(sub.add_parser(name, help=helptext))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: expected a mapping of settings")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for name in FLAG_NAMES:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown settings: {sorted(unknown)}")
    if "d" in values and not isinstance(values["d"], list):
        values["d"] = _float_list(values["d"]) if isinstance(values["d"], str) else [float(values["d"])]
    return RunConfig(**values).validate()


def config_to_argv(command: str, config: RunConfig) -> list[str]:
    """Flags that reproduce ``config`` exactly when parsed."""
    argv = [command]
    for name, flag in FLAG_NAMES.items():
        value = getattr(config, name)
        if value is None:
            continue
        if name == "d":
            value = ",".join(repr(float(v)) for v in value)
        argv += [flag, repr(value) if isinstance(value, float) else str(value)]
    return argv


# -- computations -------------------------------------------------------------


def _dtag(d: float) -> str:
    return f"d{d:.3f}"


def _exact(cfg: RunConfig, d: float):
    return solve_ground_state(
        NuclearConfig.from_distance(d), cfg.grid, dtau=cfg.dtau, tol=cfg.tol, max_iters=cfg.max_iters
    )


def _tdqmc(cfg: RunConfig, d: float):
    return relax_tdqmc(
        NuclearConfig.from_distance(d),
        M=cfg.tdqmc_walkers,
        dtau=cfg.tdqmc_dtau,
        tol=cfg.tdqmc_tol,
        max_iters=cfg.tdqmc_max_iters,
        min_iters=cfg.tdqmc_min_iters,
        seed=cfg.seed,
        grid=cfg.grid,
        alpha=cfg.alpha,
    )


def _profile(cfg: RunConfig, d: float, walkers, waves, counters: Counter):
    part = build_partition(d, walkers, cfg.regions)
    regions = local_rdms(part, walkers, waves, 0, cfg.min_region_walkers)
    prof = local_entropy_profile(regions, part, total=len(walkers))
    counters["unpopulated_regions"] += prof.unpopulated
    counters["uncovered_walkers"] += prof.uncovered
    if not prof.entries:
        counters["empty_profiles"] += 1
        log.warning("d=%g: no region holds %d walkers; local profile is empty", d, cfg.min_region_walkers)
    return prof


def _peak_or_none(prof):
    return prof.peak() if prof.entries else None


def _exact_walkers(cfg: RunConfig, psi, counters: Counter):
    walkers = sample_configurations(psi, cfg.walkers, cfg.seed)
    waves = conditional_waves(psi, walkers)
    counters["dead_slices"] += waves.dead_count
    return walkers, waves


def _write_profile(path, prof) -> Path:
    norm = prof.normalized()
    rows = [
        (e.s, e.S, en.S, e.count, prof.side) for e, en in zip(prof.entries, norm.entries)
    ]
    return fio.write_rows(path, fio.PROFILE_COLUMNS, rows)


class Run:
    """Bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, Path] = {}
        self.timings: dict[str, float] = {}
        self.convergence: dict[str, dict] = {}
        self.counters: Counter = Counter()
        self.failures: list[str] = []
        self.extra: dict = {}
        self._t0 = time.perf_counter()

    def add(self, key: str, path: Path):
        self.files[key] = Path(path)

    def timed(self, key: str, t0: float):
        self.timings[key] = round(time.perf_counter() - t0, 3)

    def finish(self, status: int) -> int:
        self.timings["total"] = round(time.perf_counter() - self._t0, 3)
        config_path = fio.write_json(self.out / "config.json", self.cfg.to_dict())
        manifest = {
            "command": self.command,
            "argv": config_to_argv(self.command, self.cfg),
            "config": self.cfg.to_dict(),
            "version": __version__,
            "status": status,
            "failures": self.failures,
            "timings": self.timings,
            "convergence": self.convergence,
            "counters": dict(sorted(self.counters.items())),
            "files": {
                key: {"path": p.name, "sha256": fio.sha256(p)}
                for key, p in sorted({**self.files, "config": config_path}.items())
            },
            **self.extra,
        }
        fio.write_json(self.out / "manifest.json", manifest)
        return status


def cmd_ground_state(cfg: RunConfig) -> int:
    run = Run("ground-state", cfg)
    ds = cfg.distances()
    if len(ds) != 1:
        raise ConfigError("ground-state takes a single distance")
    d = ds[0]
    tag = _dtag(d)
    status = EXIT_OK
    if "exact" in cfg.methods():
        t0 = time.perf_counter()
        res = _exact(cfg, d)
        run.timed("exact", t0)
        run.convergence[f"exact/{tag}"] = {"converged": res.converged, "iterations": res.iterations, "energy": res.energy}
        if not res.converged:
            run.failures.append(f"exact solver did not converge at d={d}")
            return run.finish(EXIT_NONCONVERGED)
        walkers, waves = _exact_walkers(cfg, res.psi, run.counters)
        run.add("walkers_exact", fio.write_walkers(run.out / f"walkers_exact_{tag}.csv", walkers.x1, walkers.x2))
        run.add("rdm_exact", fio.write_matrix(run.out / f"rdm_exact_{tag}.csv", cfg.grid.x, exact_rdm(res.psi).entries))
        run.add("snapshot_exact", save_snapshot(run.out / f"psi_exact_{tag}.bin", res.psi, d))
    if "tdqmc" in cfg.methods():
        t0 = time.perf_counter()
        res = _tdqmc(cfg, d)
        run.timed("tdqmc", t0)
        run.counters.update(res.counters)
        run.convergence[f"tdqmc/{tag}"] = {"converged": res.converged, "iterations": res.iterations, "energy": res.energy}
        run.add("walkers_tdqmc", fio.write_walkers(run.out / f"walkers_tdqmc_{tag}.csv", res.walkers.x1, res.walkers.x2))
        run.add("rdm_tdqmc", fio.write_matrix(run.out / f"rdm_tdqmc_{tag}.csv", cfg.grid.x, tdqmc_rdm(res.waves).entries))
        run.add("checkpoint_tdqmc", save_checkpoint(run.out / f"tdqmc_{tag}.ckpt", res, d))
        if not res.converged:
            run.failures.append(f"tdqmc did not converge at d={d}")
            status = EXIT_NONCONVERGED
    return run.finish(status)


def scan_point(cfg: RunConfig, d: float) -> dict:
    """One row of the scan curve plus its diagnostics."""
    counters: Counter = Counter()
    row = {"d": d, "energy_exact": None, "energy_tdqmc": None, "S_global_exact": None,
           "S_global_tdqmc": None, "S_local_peak": None}
    conv, timings, failures = {}, {}, []
    tdqmc_res = None
    if "exact" in cfg.methods():
        t0 = time.perf_counter()
        res = _exact(cfg, d)
        timings["exact"] = round(time.perf_counter() - t0, 3)
        conv["exact"] = {"converged": res.converged, "iterations": res.iterations}
        if res.converged:
            row["energy_exact"] = res.energy
            row["S_global_exact"] = linear_entropy(exact_rdm(res.psi))
            walkers, waves = _exact_walkers(cfg, res.psi, counters)
            pk = _peak_or_none(_profile(cfg, d, walkers, waves, counters))
            row["S_local_peak"] = None if pk is None else pk.S
        else:
            failures.append(f"exact solver did not converge at d={d}")
    if "tdqmc" in cfg.methods():
        t0 = time.perf_counter()
        tdqmc_res = _tdqmc(cfg, d)
        timings["tdqmc"] = round(time.perf_counter() - t0, 3)
        counters.update(tdqmc_res.counters)
        conv["tdqmc"] = {"converged": tdqmc_res.converged, "iterations": tdqmc_res.iterations}
        if tdqmc_res.converged:
            row["energy_tdqmc"] = tdqmc_res.energy
            row["S_global_tdqmc"] = linear_entropy(tdqmc_rdm(tdqmc_res.waves))
            if row["S_local_peak"] is None:
                pk = _peak_or_none(_profile(cfg, d, tdqmc_res.walkers, tdqmc_res.waves, counters))
                row["S_local_peak"] = None if pk is None else pk.S
        else:
            failures.append(f"tdqmc did not converge at d={d}")
    return {"row": row, "convergence": conv, "timings": timings, "failures": failures, "counters": counters}


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc


def cmd_scan(cfg: RunConfig) -> int:
    ds = cfg.distances()
    if len(ds) < 3:
        raise ConfigError("a scan needs at least three distances")
    run = Run("scan", cfg)
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            points = list(pool.map(scan_point, [cfg] * len(ds), ds))
    else:
        points = [scan_point(cfg, d) for d in ds]
    for d, pt in zip(ds, points):
        for method, c in pt["convergence"].items():
            run.convergence[f"{method}/{_dtag(d)}"] = c
        for key, t in pt["timings"].items():
            run.timings[f"{key}/{_dtag(d)}"] = t
        run.failures += pt["failures"]
        run.counters.update(pt["counters"])
    rows = [[pt["row"][c] for c in fio.CURVE_COLUMNS] for pt in points]
    run.add("curve", fio.write_rows(run.out / "curve.csv", fio.CURVE_COLUMNS, rows))
    return run.finish(EXIT_NONCONVERGED if run.failures else EXIT_OK)


def cmd_local_entropy(cfg: RunConfig) -> int:
    run = Run("local-entropy", cfg)
    peaks = {}
    for d in cfg.distances():
        tag = _dtag(d)
        for method in cfg.methods():
            t0 = time.perf_counter()
            if method == "exact":
                res = _exact(cfg, d)
                ok = res.converged
                if ok:
                    walkers, waves = _exact_walkers(cfg, res.psi, run.counters)
            else:
                res = _tdqmc(cfg, d)
                run.counters.update(res.counters)
                ok = res.converged
                walkers, waves = res.walkers, res.waves
            run.convergence[f"{method}/{tag}"] = {"converged": ok, "iterations": res.iterations}
            if not ok:
                run.failures.append(f"{method} did not converge at d={d}")
                continue
            prof = _profile(cfg, d, walkers, waves, run.counters)
            run.timed(f"{method}/{tag}", t0)
            pk = _peak_or_none(prof)
            peaks[f"{method}/{tag}"] = None if pk is None else {"s": pk.s, "S": pk.S, "stderr": pk.stderr, "M_m": pk.count}
            run.add(f"profile_{method}_{tag}", _write_profile(run.out / f"profile_{method}_{tag}.csv", prof))
    run.extra["peaks"] = peaks
    return run.finish(EXIT_NONCONVERGED if run.failures else EXIT_OK)


def verify_manifest(directory) -> dict:
    """Load a manifest and check every listed file against its checksum."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    for key, entry in manifest["files"].items():
        path = directory / entry["path"]
        if not path.exists():
            raise IntegrityError(f"{key}: {path} is missing")
        if fio.sha256(path) != entry["sha256"]:
            raise IntegrityError(f"{key}: checksum mismatch for {path}")
    return manifest


def _load_products(cfg: RunConfig, directory) -> dict:
    directory = Path(directory)
    manifest = verify_manifest(directory)
    grid = RunConfig(**manifest["config"]).grid
    products = {}
    for key, entry in manifest["files"].items():
        path = directory / entry["path"]
        if key.startswith("rdm_"):
            method = key.split("_", 1)[1]
            _, m = fio.read_matrix(path)
            products.setdefault(method, {})["rdm"] = DensityMatrix(grid, m.astype(complex))
        elif key.startswith("profile_"):
            method = key.split("_")[1]
            rows = fio.read_rows(path, fio.PROFILE_COLUMNS)
            from .entropy import EntropyProfile, ProfileEntry

            entries = [ProfileEntry(float(r["s"]), float(r["S_local"]), int(r["M_m"]), float("nan")) for r in rows]
            side = float(rows[0]["region_side"]) if rows else float("nan")
            products.setdefault(method, {})["profile"] = EntropyProfile(entries, side)
    return products


def _compute_products(cfg: RunConfig, run: Run, d: float, methods) -> dict:
    products = {}
    tag = _dtag(d)
    for method in methods:
        if method in products:
            continue
        if method == "exact":
            res = _exact(cfg, d)
            ok = res.converged
            if ok:
                rho = exact_rdm(res.psi)
                walkers, waves = _exact_walkers(cfg, res.psi, run.counters)
        else:
            res = _tdqmc(cfg, d)
            run.counters.update(res.counters)
            ok = res.converged
            rho = tdqmc_rdm(res.waves)
            walkers, waves = res.walkers, res.waves
        run.convergence[f"{method}/{tag}"] = {"converged": ok, "iterations": res.iterations}
        if not ok:
            run.failures.append(f"{method} did not converge at d={d}")
            continue
        prof = _profile(cfg, d, walkers, waves, run.counters)
        run.add(f"rdm_{method}", fio.write_matrix(run.out / f"rdm_{method}_{tag}.csv", cfg.grid.x, rho.entries))
        run.add(f"profile_{method}", _write_profile(run.out / f"profile_{method}_{tag}.csv", prof))
        products[method] = {"rdm": rho, "profile": prof}
    return products


def compare_products(a: dict, b: dict) -> dict:
    report = {
        "rdm_frobenius": a["rdm"].frobenius_distance(b["rdm"]),
        "entropy_gap": abs(linear_entropy(a["rdm"]) - linear_entropy(b["rdm"])),
        "fwhm_gap": None,
    }
    if "profile" in a and "profile" in b:
        try:
            wa, wb = profile_width(a["profile"]), profile_width(b["profile"])
            report["fwhm_gap"] = abs(wa - wb) / max(wa, wb)
        except ProfileShapeError as exc:
            report["fwhm_error"] = str(exc)
    return report


def cmd_compare(cfg: RunConfig) -> int:
    pair = [m.strip() for m in cfg.pair.split(",")]
    if len(pair) != 2 or any(m not in ("exact", "tdqmc") for m in pair):
        raise ConfigError("--pair takes two of exact,tdqmc separated by a comma")
    run = Run("compare", cfg)
    ds = cfg.distances()
    if len(ds) != 1:
        raise ConfigError("compare takes a single distance")
    if cfg.source:
        products = _load_products(cfg, cfg.source)
    else:
        products = _compute_products(cfg, run, ds[0], pair)
        if run.failures:
            return run.finish(EXIT_NONCONVERGED)
    missing = [m for m in pair if m not in products]
    if missing:
        raise ConfigError(f"missing method output: {missing}")
    report = compare_products(products[pair[0]], products[pair[1]])
    exceeded = []
    if report["entropy_gap"] > cfg.max_entropy_gap:
        exceeded.append("entropy_gap")
    if cfg.max_rdm_distance is not None and report["rdm_frobenius"] > cfg.max_rdm_distance:
        exceeded.append("rdm_frobenius")
    if report["fwhm_gap"] is not None and report["fwhm_gap"] > cfg.max_fwhm_gap:
        exceeded.append("fwhm_gap")
    report.update({"d": ds[0], "pair": pair, "exceeded": exceeded})
    run.add("report", fio.write_json(run.out / "report.json", report))
    return run.finish(EXIT_THRESHOLD if exceeded else EXIT_OK)


COMMANDS = {
    "ground-state": cmd_ground_state,
    "scan": cmd_scan,
    "local-entropy": cmd_local_entropy,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, IntegrityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
