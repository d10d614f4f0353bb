"""Command-line front end: single runs, seed sweeps and scenario export.

Exit codes: 0 on success, 2 on a validation error, 3 on an I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigValidationError, ScenarioConfig, config_hash, parse_config, serialize
from .diagnostics import RunMetrics, format_grid
from .engine import ConfigError, run
from .rng import check_seed
from .scenarios import BUILTINS, builtin

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3
NA = "N/A"


class UsageError(ValueError):
    """Bad command-line input; reported like a validation error."""


@dataclass
class RunArtifacts:
    out_dir: Path
    metrics: RunMetrics
    manifest: dict
    files: list[str] = field(default_factory=list)

    @property
    def onset(self) -> float | None:
        return self.metrics.first_onset()


# -- scenario resolution ---------------------------------------------------------


def load_scenario(source: str) -> ScenarioConfig:
    """``builtin:<name>`` or a path to a YAML scenario file."""
    if source.startswith("builtin:"):
        name = source.split(":", 1)[1]
        if name not in BUILTINS:
            raise UsageError(f"unknown builtin scenario {name!r}; choose from {sorted(BUILTINS)}")
        return builtin(name)
    return parse_config(source)


def apply_overrides(cfg: ScenarioConfig, *, seed=None, policy=None, duration=None, dt=None,
                    density_grid=None, noncompliance=None) -> ScenarioConfig:
    kw = {}
    if seed is not None:
        kw["seed"] = check_seed(seed)
    if policy is not None:
        kw["policy_kind"] = policy
    if noncompliance is not None:
        kw["policy_noncompliance_prob"] = noncompliance
    if duration is not None:
        kw["duration"] = duration
    if dt is not None:
        kw["dt"] = dt
    if density_grid is not None:
        kw["density_grid"] = density_grid
    if not kw:
        return cfg
    try:
        return cfg.with_overrides(**kw)
    except ConfigValidationError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigValidationError("<override>", str(exc)) from None


def parse_seeds(text: str) -> list[int]:
    """``a..b`` (inclusive) or a comma-separated list."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        try:
            if ".." in part:
                a, b = part.split("..", 1)
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise UsageError(f"empty seed range {part!r}")
                seeds.extend(range(lo, hi + 1))
            elif part:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    if not seeds:
        raise UsageError("no seeds given")
    for s in seeds:
        check_seed(s)
    return seeds


# -- artifacts -------------------------------------------------------------------


def _onset_text(t: float | None) -> str:
    return NA if t is None else f"{t:.9g}"


def lyapunov_csv(m: RunMetrics) -> str:
    buf = io.StringIO()
    cols = ("t", "V", "phi_S", "kinetic", "energy_rate")
    buf.write(",".join(cols) + "\n")
    for row in zip(*(m.columns[c] for c in cols)):
        buf.write(",".join(f"{x:.9g}" for x in row) + "\n")
    return buf.getvalue()


def congestion_csv(m: RunMetrics) -> str:
    buf = io.StringIO()
    buf.write("segment,onset\n")
    for r in m.congestion:
        buf.write(f"{r.segment},{_onset_text(r.onset_time)}\n")
    return buf.getvalue()


def versions() -> dict:
    return {"artifact": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "pyyaml": yaml.__version__}


def _write(path: Path, text: str, files: list[str], root: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    files.append(str(path.relative_to(root)))


def run_command(cfg: ScenarioConfig, out_dir) -> RunArtifacts:
    """Run one scenario and write its artifacts under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run(cfg)
    m = result.metrics
    files: list[str] = []
    _write(out / "config.yaml", serialize(cfg), files, out)
    _write(out / "metrics.csv", m.to_csv(), files, out)
    _write(out / "lyapunov.csv", lyapunov_csv(m), files, out)
    _write(out / "congestion.csv", congestion_csv(m), files, out)
    if m.grids:
        gdir = out / "grids"
        gdir.mkdir(exist_ok=True)
        for t, grid in m.grids:
            _write(gdir / f"grid_t{t:012.3f}.txt", format_grid(grid), files, out)
    manifest = {
        "scenario": cfg.name,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "policy": cfg.policy.kind,
        "noncompliance_prob": cfg.policy.noncompliance_prob,
        "duration": cfg.duration,
        "dt": cfg.dt,
        "steps": result.steps,
        "arrived": int(result.state.arrived.count),
        "first_onset": m.first_onset(),
        "versions": versions(),
        "files": sorted(files),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n", files, out)
    return RunArtifacts(out, m, manifest, files)


# -- sweeps ----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    seed: int
    policy: str
    onset: float | None
    status: str


def _sweep_job(job) -> SweepRow:
    cfg, seed, policy, out_dir = job
    try:
        art = run_command(cfg, out_dir)
        return SweepRow(seed, policy, art.onset, "ok")
    except Exception as exc:  # recorded per row; the sweep carries on
        return SweepRow(seed, policy, None, f"error: {type(exc).__name__}: {exc}")


def sweep_command(cfg: ScenarioConfig, seeds, policies, out_dir, jobs: int = 1) -> list[SweepRow]:
    """Cross product of seeds and policies; writes per-run artifacts and summaries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    work = []
    for policy in policies:
        for seed in seeds:
            run_cfg = apply_overrides(cfg, seed=seed, policy=policy)
            work.append((run_cfg, seed, policy, out / policy / f"seed_{seed}"))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_job, work))
    else:
        rows = [_sweep_job(w) for w in work]
    write_summary(rows, out, policies, seeds)
    return rows


def write_summary(rows, out: Path, policies, seeds) -> None:
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "policy", "onset", "status"])
        for r in rows:
            w.writerow([r.seed, r.policy, _onset_text(r.onset), r.status])
    table = {(r.seed, r.policy): r for r in rows}
    with open(out / "onset_table.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", *(f"{p}_onset" for p in policies)])
        for s in seeds:
            cells = []
            for p in policies:
                r = table[(s, p)]
                cells.append(_onset_text(r.onset) if r.status == "ok" else "error")
            w.writerow([s, *cells])


def format_summary(rows, policies) -> str:
    lines = [f"{'seed':>6} " + " ".join(f"{p + ' onset':>14}" for p in policies)]
    by_seed: dict[int, dict[str, SweepRow]] = {}
    for r in rows:
        by_seed.setdefault(r.seed, {})[r.policy] = r
    for seed, cells in by_seed.items():
        vals = []
        for p in policies:
            r = cells[p]
            vals.append(_onset_text(r.onset) if r.status == "ok" else "error")
        lines.append(f"{seed:>6} " + " ".join(f"{v:>14}" for v in vals))
    for p in policies:
        n = sum(1 for r in rows if r.policy == p and r.onset is not None)
        total = sum(1 for r in rows if r.policy == p)
        lines.append(f"{p}: congested in {n}/{total} runs")
    return "\n".join(lines)


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sphtraffic",
                                 description="SPH traffic simulation runs and sweeps.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="builtin:<name> or a YAML file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--duration", type=float, help="simulated seconds")
        p.add_argument("--dt", type=float, help="time step, seconds")
        p.add_argument("--noncompliance", type=float, help="probability of ignoring the policy")

    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--seed", type=int, help="64-bit unsigned seed")
    p.add_argument("--policy", choices=("sph", "blind"))
    p.add_argument("--density-grid", type=int, dest="density_grid",
                   help="density-map resolution in cells per smoothing length")

    p = sub.add_parser("sweep", help="run seeds x policies")
    common(p)
    p.add_argument("--seeds", required=True, help="a..b or a comma-separated list")
    p.add_argument("--policies", default="sph,blind", help="comma-separated policy kinds")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")

    p = sub.add_parser("export", help="write a builtin scenario as an editable YAML file")
    p.add_argument("--scenario", required=True, help="builtin:<name>")
    p.add_argument("--out", required=True, help="output YAML path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_scenario(args.scenario)
        if args.command == "export":
            Path(args.out).write_text(serialize(cfg), encoding="utf-8")
            print(f"wrote {args.out}")
            return EXIT_OK
        base = apply_overrides(cfg, duration=args.duration, dt=args.dt,
                               noncompliance=args.noncompliance)
        if args.command == "run":
            run_cfg = apply_overrides(base, seed=args.seed, policy=args.policy,
                                      density_grid=args.density_grid)
            art = run_command(run_cfg, args.out)
            print(f"{run_cfg.name} seed={run_cfg.seed} policy={run_cfg.policy.kind} "
                  f"steps={art.manifest['steps']} arrived={art.manifest['arrived']} "
                  f"first_onset={_onset_text(art.onset)}")
            print(f"artifacts in {args.out}")
            return EXIT_OK
        policies = [p.strip() for p in args.policies.split(",") if p.strip()]
        for p in policies:
            if p not in ("sph", "blind"):
                raise UsageError(f"unknown policy {p!r}")
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        rows = sweep_command(base, parse_seeds(args.seeds), policies, args.out, args.jobs)
        print(format_summary(rows, policies))
        return EXIT_OK
    except (ConfigValidationError, ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"I/O error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
