"""Command-line front end: training experiments, gradient self-checks and scaling sweeps.

Every subcommand writes plain data (CSV and JSON) into ``--out``; plotting
is left to external tools.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checks
from .adjoint import parse_shots, shots_label
from .hamiltonians import network_schedule_values
from .training import TASKS, ExperimentConfig, build_model, preset, train

log = logging.getLogger("qnode")

EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NAN = 3


def replicate_seed(master: int, r: int) -> int:
    """Per-replicate seed derived from the master seed."""
    return int(np.random.SeedSequence(master, spawn_key=(r,)).generate_state(1, np.uint32)[0])


def _split(arg: str | None) -> list[str] | None:
    return None if arg is None else [a.strip() for a in arg.split(",") if a.strip()]


def load_config(task: str, model: str | None, path: str | None) -> ExperimentConfig:
    """Preset for (task, model), overlaid with the JSON file if given."""
    data = {}
    if path:
        data = json.loads(Path(path).read_text())
        if data.get("task", task) != task:
            raise ValueError(f"config is for task {data['task']!r}, not {task!r}")
    name = model or data.get("model") or ""
    cfg = preset(task, name)
    if data:
        base = cfg.to_dict()
        base.update(data)
        if model:
            base["model"] = model
        cfg = ExperimentConfig.from_dict(base)
    return cfg


def schedule_csv(cfg: ExperimentConfig, theta) -> str:
    """Learned and target transverse-field schedules on [0, 2]."""
    model = build_model(cfg.model, np.random.default_rng(cfg.model_seed), cfg.network_width)
    ts = np.linspace(0.0, 2.0, 201)
    learned = network_schedule_values(model, theta, ts)
    target = model.target.terms[-1].schedule.values(ts, np.zeros(0))
    lines = ["t,learned,target"] + [f"{float(t)!r},{float(a)!r},{float(b)!r}"
                                 for t, a, b in zip(ts, learned, target)]
    return "\n".join(lines) + "\n"


def _run_one(job: tuple) -> dict:
    cfg, root, path, timing = job
    run = train(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(run.to_csv(timing=timing))
    out = run.summary()
    out["csv"] = str(path.relative_to(root))
    if cfg.model.startswith("td-ising"):
        sched = path.with_name(path.stem + "_schedule.csv")
        sched.write_text(schedule_csv(cfg, run.final_theta))
        out["schedule_csv"] = str(sched.relative_to(root))
    return out


def cmd_train(args) -> int:
    models = _split(args.model) or [None]
    base_cfgs = [load_config(args.command, m, args.config) for m in models]
    shot_list = _split(args.shots)
    jobs = []
    for cfg in base_cfgs:
        for s in (shot_list or [shots_label(cfg.shots)]):
            for r in range(args.replicates):
                kw = {"seed": replicate_seed(args.seed, r), "shots": parse_shots(s)}
                if args.iterations is not None:
                    kw["iterations"] = args.iterations
                c = cfg.replace(**kw)
                path = args.out / c.task / c.model / f"shots-{shots_label(c.shots)}" / f"rep{r}.csv"
                jobs.append((c, args.out, path, args.timing))
    log.info("running %d training jobs", len(jobs))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    groups: dict[str, dict] = {}
    for (c, *_), res in zip(jobs, results):
        key = f"{c.model}/shots-{shots_label(c.shots)}"
        g = groups.setdefault(key, {"model": c.model, "shots": shots_label(c.shots), "replicates": []})
        g["replicates"].append(res)
    for g in groups.values():
        errs = [r["final_test_error"] for r in g["replicates"]]
        g["median_final_test_error"] = float(np.median(errs))
        g["max_final_test_error"] = float(np.max(errs))
        g["min_final_test_error"] = float(np.min(errs))
    summary = {"command": args.command, "master_seed": args.seed, "replicates": args.replicates,
               "groups": groups}
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for key, g in groups.items():
        print(f"{key}: median final test error {g['median_final_test_error']:.3e}")
    return 0


def _write_rows(path: Path, rows: list[dict]) -> None:
    cols = list(rows[0])
    lines = [",".join(cols)] + [",".join(repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else str(r[c])
                                         for c in cols) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    report = checks.grad_check(args.instances, rng)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_rows(args.out / "grad_check.csv", report["instances"])
    (args.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name, c in report["checks"].items():
        print(f"{name}: max |diff| {c['max_abs_diff']:.2e} (tol {c['tolerance']:.0e}) "
              f"{'PASS' if c['pass'] else 'FAIL'}")
    return 0 if report["pass"] else EXIT_FAIL


SWEEPS = {"shots": checks.shot_sweep, "grid": checks.grid_sweep, "clock": checks.clock_sweep}


def cmd_scaling(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    report = SWEEPS[args.sweep](rng)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_rows(args.out / f"sweep_{args.sweep}.csv", report["rows"])
    (args.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    slopes = {k: v for k, v in report.items() if k.startswith("slope")}
    for k, v in slopes.items():
        print(f"{k}: {v:.3f} (target {report['target']} +/- {report['tolerance']})")
    print("PASS" if report["pass"] else "FAIL")
    return 0 if report["pass"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnode", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="master seed")

    for task in TASKS:
        sp = sub.add_parser(task, help=f"train a {task} experiment")
        common(sp)
        sp.add_argument("--config", help="JSON file overriding preset hyperparameters")
        sp.add_argument("--replicates", type=int, default=5)
        sp.add_argument("--shots", help="shots per estimate: integer or inf; comma list for a sweep")
        sp.add_argument("--model", help="model name; comma list runs several")
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--timing", action="store_true", help="fill the elapsed_ms column")
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("grad-check", help="estimator vs oracle vs finite differences")
    common(sp)
    sp.add_argument("--instances", type=int, default=50)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("scaling-study", help="shot-noise and quadrature convergence sweeps")
    common(sp)
    sp.add_argument("--sweep", choices=sorted(SWEEPS), required=True)
    sp.set_defaults(func=cmd_scaling)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "replicates", 1) < 1:
        print("error: --replicates must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except FloatingPointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NAN
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
