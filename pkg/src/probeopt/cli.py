"""Experiment runner.

Subcommands:
  optimize         seesaw optimization for each requested strategy class
  greedy           trajectory-averaged batched greedy simulation
  sweep            one run per value of a swept config field, aggregated CSV
  plot             score-vs-parameter curves from sweep CSVs
  validate-config  check a config file and echo it with all defaults filled

Every run lands in a timestamped directory under --out with a `latest`
symlink, and contains a manifest (config echo, seed, package versions), the
materialized config as config.json (directly reusable via --config), a score
report JSON, and CSV traces.  Exit codes: 0 success, 2 config/schema error,
3 solver failure (partial outputs are kept).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import importlib.metadata
import importlib.resources
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Invalid config; the message names the offending field."""


# ---------------------------------------------------------------- loading


def _read_config(path: str) -> dict:
    p = Path(path)
    if not p.exists() and "/" not in path and "\\" not in path:
        bundled = importlib.resources.files("probeopt") / "configs" / path
        for candidate in (bundled, bundled.parent / f"{path}.toml"):
            if candidate.is_file():
                p = Path(str(candidate))
                break
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    if p.suffix == ".json":
        with open(p) as fh:
            raw = json.load(fh)
    else:
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(p, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"config parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    return raw


# ------------------------------------------------------------- validation

_CLASS_NAMES = ("parallel", "sequential", "general")
_CHANNEL_KINDS = ("su2", "phase", "thermometry")
_PRIOR_KINDS = ("haar_su2", "uniform", "sine_exp")
_COST_KINDS = ("fidelity_su2", "relative_mse", "cos_squared")
_NOISE_KINDS = ("", "amplitude_damping")
_ENGINES = ("optimize", "greedy")


def _want(section: str, key: str, value, typ, choices=None):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{section}.{key}: expected integer, got {value!r}")
    if not isinstance(value, typ):
        raise ConfigError(f"{section}.{key}: expected {typ.__name__}, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{section}.{key}: {value!r} not in {sorted(c for c in choices if c != '')}")
    return value


def _section(raw: dict, name: str, fields: dict) -> dict:
    """Materialize one section: defaults filled, unknown keys rejected.

    fields: key -> (type, default_or_None_for_required[, choices])
    """
    src = raw.get(name, {})
    if not isinstance(src, dict):
        raise ConfigError(f"{name}: expected a table")
    for key in src:
        if key not in fields:
            raise ConfigError(f"{name}.{key}: unknown field (allowed: {sorted(fields)})")
    out = {}
    for key, spec in fields.items():
        typ, default, choices = (spec + (None,))[:3]
        if key in src:
            out[key] = _want(name, key, src[key], typ, choices)
        elif default is None:
            raise ConfigError(f"{name}.{key}: required field is missing")
        else:
            out[key] = default
    return out


def materialize_config(raw: dict, source_name: str = "run") -> dict:
    """Validate a parsed config and fill in every default.

    The result is the schema-complete dict echoed into manifests; field
    errors raise ConfigError with the dotted field name.
    """
    for key in raw:
        if key not in ("schema", "experiment", "channel", "prior", "cost", "seesaw", "greedy", "sweep"):
            raise ConfigError(f"{key}: unknown section")
    schema = raw.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"schema: version {schema!r} unsupported (this build reads {SCHEMA_VERSION})")

    experiment = _section(raw, "experiment", {
        "name": (str, source_name),
        "k": (int, None),
        "classes": (list, ["parallel"]),
    })
    if experiment["k"] < 1:
        raise ConfigError("experiment.k: must be >= 1")
    if not experiment["classes"]:
        raise ConfigError("experiment.classes: must not be empty")
    for c in experiment["classes"]:
        if c not in _CLASS_NAMES:
            raise ConfigError(f"experiment.classes: {c!r} not in {sorted(_CLASS_NAMES)}")
    if "general" in experiment["classes"] and experiment["k"] > 2:
        raise ConfigError("experiment.classes: the general class is supported for k <= 2 only")

    channel = _section(raw, "channel", {
        "kind": (str, None, _CHANNEL_KINDS),
        "t": (float, 1.0),
        "eps": (float, 1.0),
        "j_spectral": (float, 1.0),
        "noise": (str, "", _NOISE_KINDS),
        "noise_p": (float, 0.0),
    })
    if not 0.0 <= channel["noise_p"] <= 1.0:
        raise ConfigError("channel.noise_p: must lie in [0, 1]")

    prior = _section(raw, "prior", {
        "kind": (str, None, _PRIOR_KINDS),
        "n_points": (int, None),
        "mode": (str, "grid", ("grid", "sample")),
        "seed": (int, 0),
        "lo": (float, 1.0),
        "hi": (float, 20.0),
        "alpha": (float, 100.0),
        "theta_min": (float, 0.0),
        "theta_max": (float, 2 * math.pi),
    })
    if prior["n_points"] < 2:
        raise ConfigError("prior.n_points: must be >= 2")
    if prior["kind"] == "uniform" and prior["hi"] <= prior["lo"]:
        raise ConfigError("prior.hi: must exceed prior.lo")
    if prior["kind"] == "sine_exp" and prior["theta_max"] <= prior["theta_min"]:
        raise ConfigError("prior.theta_max: must exceed prior.theta_min")

    cost = _section(raw, "cost", {"kind": (str, None, _COST_KINDS)})

    # the rotation-average kernel needs group structure the scalar models
    # lack, and vice versa; catch the mismatch here with a field message
    if cost["kind"] == "fidelity_su2":
        if channel["kind"] != "su2":
            raise ConfigError("cost.kind: fidelity_su2 requires channel.kind = 'su2'")
        if prior["kind"] != "haar_su2":
            raise ConfigError("cost.kind: fidelity_su2 requires prior.kind = 'haar_su2'")
    else:
        if channel["kind"] == "su2":
            raise ConfigError(f"cost.kind: {cost['kind']} requires a scalar-parameter channel")
        if prior["kind"] == "haar_su2":
            raise ConfigError(f"cost.kind: {cost['kind']} requires a scalar prior")

    seesaw = _section(raw, "seesaw", {
        "epsilon": (float, 1e-6),
        "max_iters": (int, 50),
        "n_restarts": (int, 5),
        "seed": (int, 0),
        "n_outcomes": (int, 0),  # 0 picks the kernel default
        "tol": (float, 1e-8),
        "solver": (str, "auto"),
    })
    if seesaw["epsilon"] <= 0:
        raise ConfigError("seesaw.epsilon: must be positive")
    if seesaw["max_iters"] < 1 or seesaw["n_restarts"] < 1:
        raise ConfigError("seesaw.max_iters and seesaw.n_restarts must be >= 1")

    greedy = _section(raw, "greedy", {
        "n_traj": (int, 100),
        "rounds": (int, 2),
        "batch": (int, 1),
        "class": (str, "sequential", _CLASS_NAMES),
        "adaptive": (bool, True),
        "seed": (int, 0),
        "n_outcomes": (int, 0),
        "inner_epsilon": (float, 1e-5),
        "inner_max_iters": (int, 20),
        "inner_restarts": (int, 3),
        "warm_restarts": (int, 1),
        "tol": (float, 1e-8),
        "solver": (str, "auto"),
        "resample_threshold": (float, 0.0),
        "jitter_scale": (float, 0.1),
    })
    if min(greedy["n_traj"], greedy["rounds"], greedy["batch"]) < 1:
        raise ConfigError("greedy.n_traj, greedy.rounds, greedy.batch must be >= 1")
    if greedy["class"] == "general" and greedy["batch"] > 2:
        raise ConfigError("greedy.class: the general class is supported for batch <= 2 only")

    sweep = _section(raw, "sweep", {
        "parameter": (str, ""),
        "values": (list, []),
        "engines": (list, ["optimize"]),
    })
    for e in sweep["engines"]:
        if e not in _ENGINES:
            raise ConfigError(f"sweep.engines: {e!r} not in {sorted(_ENGINES)}")
    for v in sweep["values"]:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"sweep.values: {v!r} is not a number")

    return {
        "schema": SCHEMA_VERSION,
        "experiment": experiment,
        "channel": channel,
        "prior": prior,
        "cost": cost,
        "seesaw": seesaw,
        "greedy": greedy,
        "sweep": sweep,
    }


def load_config(path: str, seed: Optional[int] = None, tol: Optional[float] = None) -> dict:
    raw = _read_config(path)
    cfg = materialize_config(raw, source_name=Path(path).stem)
    if seed is not None:
        cfg["seesaw"]["seed"] = seed
        cfg["greedy"]["seed"] = seed
    if tol is not None:
        cfg["seesaw"]["tol"] = tol
        cfg["greedy"]["tol"] = tol
    return cfg


# ---------------------------------------------------------------- builders


def _build_channel(cfg: dict):
    from . import channels

    c = cfg["channel"]
    if c["kind"] == "su2":
        model = channels.su2_channel()
    elif c["kind"] == "phase":
        model = channels.phase_channel(t=c["t"])
    else:
        model = channels.thermometry_channel(eps=c["eps"], j_spectral=c["j_spectral"], t=c["t"])
    if c["noise"] == "amplitude_damping":
        model = channels.compose(channels.amplitude_damping_channel(c["noise_p"]), model)
    return model


def _build_prior(cfg: dict):
    from . import priors

    p = cfg["prior"]
    if p["kind"] == "haar_su2":
        return priors.haar_prior_su2(p["n_points"], mode=p["mode"], seed=p["seed"])
    if p["kind"] == "uniform":
        return priors.uniform_prior(p["lo"], p["hi"], p["n_points"])
    return priors.sine_exp_prior(p["alpha"], p["theta_min"], p["theta_max"], p["n_points"])


def _strategy(name: str, k: int):
    from . import sdp

    return {"parallel": sdp.parallel, "sequential": sdp.sequential, "general": sdp.general}[name](k)


# ----------------------------------------------------------------- engines


def run_optimize_engine(cfg: dict, out_dir: Path) -> dict:
    """Seesaw for each requested class; returns the report dict."""
    from .costs import kernel_by_name
    from .priors import with_channel
    from .seesaw import SeesawConfig, SeesawProblem, run_seesaw

    model = _build_channel(cfg)
    kernel = kernel_by_name(cfg["cost"]["kind"])
    k = cfg["experiment"]["k"]
    h = with_channel(_build_prior(cfg), model, k)
    s = cfg["seesaw"]
    results = {}
    for name in cfg["experiment"]["classes"]:
        scfg = SeesawConfig(
            epsilon=s["epsilon"],
            max_iters=s["max_iters"],
            n_restarts=s["n_restarts"],
            seed=s["seed"],
            n_outcomes=s["n_outcomes"] or None,
            tol=s["tol"],
            solver=s["solver"],
            trace_csv=str(out_dir / f"trace_{name}.csv"),
        )
        res = run_seesaw(SeesawProblem(_strategy(name, k), h, kernel), scfg)
        results[name] = {
            "score": res.score,
            "converged": res.converged,
            "iterations": res.n_iterations,
            "restart": res.restart_index,
            "solve_time": res.solve_time,
        }
    return {
        "schema": SCHEMA_VERSION,
        "kind": "optimize",
        "k": k,
        "cost": cfg["cost"]["kind"],
        "channel": cfg["channel"]["kind"],
        "n_hypotheses": cfg["prior"]["n_points"],
        "results": results,
    }


def run_greedy_engine(cfg: dict, out_dir: Path) -> dict:
    """Batched greedy simulation; returns the report dict."""
    from .costs import kernel_by_name
    from .greedy import GreedyConfig, run_greedy
    from .priors import with_channel
    from .seesaw import SeesawProblem

    model = _build_channel(cfg)
    kernel = kernel_by_name(cfg["cost"]["kind"])
    g = cfg["greedy"]
    h = with_channel(_build_prior(cfg), model, g["batch"])
    gcfg = GreedyConfig(
        n_traj=g["n_traj"],
        rounds=g["rounds"],
        batch=g["batch"],
        adaptive=g["adaptive"],
        seed=g["seed"],
        n_outcomes=g["n_outcomes"] or None,
        inner_epsilon=g["inner_epsilon"],
        inner_max_iters=g["inner_max_iters"],
        inner_restarts=g["inner_restarts"],
        warm_restarts=g["warm_restarts"],
        tol=g["tol"],
        solver=g["solver"],
        resample_threshold=g["resample_threshold"],
        jitter_scale=g["jitter_scale"],
    )
    rep = run_greedy(SeesawProblem(_strategy(g["class"], g["batch"]), h, kernel), gcfg)
    rep.to_csv(str(out_dir / "greedy_scores.csv"))
    return {
        "schema": SCHEMA_VERSION,
        "kind": "greedy",
        "adaptive": g["adaptive"],
        "rounds": g["rounds"],
        "batch": g["batch"],
        "mean": rep.mean.tolist(),
        "stderr": rep.stderr.tolist(),
        "final_mean": rep.final_mean,
        "final_stderr": rep.final_stderr,
        "n_traj": rep.n_traj,
        "n_valid": rep.n_valid,
        "n_aborted": rep.n_aborted,
        "cache_hits": rep.cache_hits,
        "cache_misses": rep.cache_misses,
    }


# ------------------------------------------------------------ run plumbing


def _versions() -> dict:
    import cvxpy
    import numpy
    import scipy

    try:
        pkg = importlib.metadata.version("artifact")
    except importlib.metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "python": sys.version.split()[0],
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "cvxpy": cvxpy.__version__,
        "package": pkg,
    }


def make_run_dir(base: str, name: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    root = Path(base)
    root.mkdir(parents=True, exist_ok=True)
    run = root / f"{stamp}-{name}"
    n = 1
    while run.exists():
        run = root / f"{stamp}-{name}-{n}"
        n += 1
    run.mkdir()
    latest = root / "latest"
    tmp = root / f".latest-{os.getpid()}"
    try:
        tmp.symlink_to(run.name)
        os.replace(tmp, latest)
    except OSError:  # filesystems without symlinks: plain pointer file
        latest.write_text(run.name + "\n")
    return run


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_manifest(out_dir: Path, command: str, cfg: dict, args) -> None:
    _write_json(out_dir / "config.json", cfg)
    _write_json(out_dir / "manifest.json", {
        "schema": SCHEMA_VERSION,
        "command": command,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config_source": str(args.config),
        "overrides": {"seed": args.seed, "tol": args.tol},
        "config": cfg,
        "versions": _versions(),
    })


# ------------------------------------------------------------------- sweep


def _set_by_path(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.get(p) if isinstance(node, dict) else None
        if not isinstance(node, dict):
            raise ConfigError(f"sweep.parameter: no config section {p!r}")
    if parts[-1] not in node:
        raise ConfigError(f"sweep.parameter: unknown config field {dotted!r}")
    node[parts[-1]] = value


def _sweep_point(cfg: dict, engines: Sequence[str], value: float, point_dir: str):
    """One sweep point, isolated so failures are recorded without stopping."""
    rows = []
    try:
        pdir = Path(point_dir)
        pdir.mkdir(parents=True, exist_ok=True)
        _write_json(pdir / "config.json", cfg)
        if "optimize" in engines:
            rep = run_optimize_engine(cfg, pdir)
            _write_json(pdir / "report_optimize.json", rep)
            for cls, rr in rep["results"].items():
                rows.append((value, cls, rr["score"], 0.0))
        if "greedy" in engines:
            rep = run_greedy_engine(cfg, pdir)
            _write_json(pdir / "report_greedy.json", rep)
            label = "greedy" if rep["adaptive"] else "greedy-nonadaptive"
            rows.append((value, label, rep["final_mean"], rep["final_stderr"]))
        return value, rows, None
    except Exception as exc:  # noqa: BLE001 - per-point failures must not kill the sweep
        return value, rows, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed, args.tol)
    sw = cfg["sweep"]
    if not sw["parameter"]:
        raise ConfigError("sweep.parameter: required for the sweep command")
    if not sw["values"]:
        raise ConfigError("sweep.values: must not be empty")
    out_dir = make_run_dir(args.out, cfg["experiment"]["name"])
    _write_manifest(out_dir, "sweep", cfg, args)

    jobs = []
    for i, value in enumerate(sw["values"]):
        point_cfg = copy.deepcopy(cfg)
        _set_by_path(point_cfg, sw["parameter"], value)
        point_cfg = materialize_config(point_cfg, cfg["experiment"]["name"])
        jobs.append((point_cfg, sw["engines"], value, str(out_dir / f"point_{i}")))

    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            outcomes = list(pool.map(_sweep_point, *zip(*jobs)))
    else:
        outcomes = [_sweep_point(*job) for job in jobs]

    rows, failures = [], []
    for value, point_rows, err in outcomes:
        rows.extend(point_rows)
        if err is not None:
            failures.append({"value": value, "error": err})

    csv_path = out_dir / f"sweep_{sw['parameter'].split('.')[-1]}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "class", "score", "stderr"])
        for value, cls, score, stderr in rows:
            writer.writerow([repr(float(value)), cls, repr(float(score)), repr(float(stderr))])
    if failures:
        _write_json(out_dir / "failures.json", {"failures": failures})
        print(f"{len(failures)} of {len(jobs)} sweep points failed; see failures.json", file=sys.stderr)
    print(out_dir)
    return 0 if rows else 3


# -------------------------------------------------------------------- plot


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out) if args.out else None
    written = []
    for path in args.reports:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"report file not found: {path}")
        with open(p, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = set(reader.fieldnames or [])
            missing = {"value", "class", "score", "stderr"} - cols
            if missing:
                raise ConfigError(f"{path}: missing columns {sorted(missing)}")
            rows = list(reader)
        if not rows:
            raise ConfigError(f"{path}: report has no data rows")
        series: dict[str, list[tuple[float, float, float]]] = {}
        for row in rows:
            series.setdefault(row["class"], []).append(
                (float(row["value"]), float(row["score"]), float(row["stderr"]))
            )
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for cls in sorted(series):
            pts = sorted(series[cls])
            xs = [a for a, _, _ in pts]
            ys = [b for _, b, _ in pts]
            es = [c for _, _, c in pts]
            ax.errorbar(xs, ys, yerr=es if any(es) else None, marker="o", capsize=3, label=cls)
        param = p.stem[6:] if p.stem.startswith("sweep_") else "value"
        ax.set_xlabel(param)
        ax.set_ylabel("score")
        ax.legend()
        fig.tight_layout()
        target = (out or p.parent) / f"{p.stem}.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(target, dpi=150)
        plt.close(fig)
        written.append(target)
        print(target)
    return 0


# ------------------------------------------------------------- entry point


def cmd_optimize(args) -> int:
    cfg = load_config(args.config, args.seed, args.tol)
    out_dir = make_run_dir(args.out, cfg["experiment"]["name"])
    _write_manifest(out_dir, "optimize", cfg, args)
    try:
        report = run_optimize_engine(cfg, out_dir)
    except RuntimeError as exc:
        _write_json(out_dir / "error.json", {"error": str(exc)})
        print(f"solver failure: {exc}", file=sys.stderr)
        print(f"partial outputs kept in {out_dir}", file=sys.stderr)
        return 3
    _write_json(out_dir / "report.json", report)
    for name, rr in report["results"].items():
        print(f"{name}: score={rr['score']:.9f} converged={rr['converged']} iters={rr['iterations']}")
    print(out_dir)
    return 0


def cmd_greedy(args) -> int:
    cfg = load_config(args.config, args.seed, args.tol)
    out_dir = make_run_dir(args.out, cfg["experiment"]["name"])
    _write_manifest(out_dir, "greedy", cfg, args)
    try:
        report = run_greedy_engine(cfg, out_dir)
    except RuntimeError as exc:
        _write_json(out_dir / "error.json", {"error": str(exc)})
        print(f"solver failure: {exc}", file=sys.stderr)
        print(f"partial outputs kept in {out_dir}", file=sys.stderr)
        return 3
    _write_json(out_dir / "report.json", report)
    print(
        f"greedy: final={report['final_mean']:.9f} +- {report['final_stderr']:.2e} "
        f"({report['n_valid']}/{report['n_traj']} trajectories)"
    )
    print(out_dir)
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    json.dump(cfg, sys.stdout, indent=2)
    print()
    print(f"config OK (schema {SCHEMA_VERSION})", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probeopt", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=False):
        p.add_argument("--config", required=True, help="TOML or JSON config (or a bundled config name)")
        p.add_argument("--out", default="runs", help="base output directory (default: runs)")
        p.add_argument("--seed", type=int, default=None, help="override seesaw and greedy seeds")
        p.add_argument("--tol", type=float, default=None, help="override solver tolerances")
        if workers:
            p.add_argument("--workers", type=int, default=1, help="concurrent sweep points")

    common(sub.add_parser("optimize", help="seesaw optimization per strategy class"))
    common(sub.add_parser("greedy", help="batched greedy simulation"))
    common(sub.add_parser("sweep", help="run once per swept value"), workers=True)

    plot = sub.add_parser("plot", help="score-vs-parameter curves from sweep CSVs")
    plot.add_argument("reports", nargs="+", help="sweep CSV files")
    plot.add_argument("--out", default=None, help="image directory (default: next to each CSV)")

    val = sub.add_parser("validate-config", help="check a config and echo it with defaults")
    val.add_argument("--config", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "optimize": cmd_optimize,
        "greedy": cmd_greedy,
        "sweep": cmd_sweep,
        "plot": cmd_plot,
        "validate-config": cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
