"""Command-line entry point: ``rlscale {run,sweep,fit,check,eval}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, FitError, NumericError, RLScaleError
from .grpo import EvalResult, evaluate, train_run
from .lawfit import check_consistency, emit_table, fit_per_model, plot_data
from .policy import init_policy, load_policy, save_policy
from .runlog import MANIFEST_NAME, STEPS_NAME, RunManifest, RunWriter, load_runs, write_manifest
from .schedule import make_reuse_schedule, save_stream
from .seeding import hash_seed
from .taskgen import build_dataset, load_tasks, save_tasks

log = logging.getLogger("rlscale")

AXES = ("model_size", "data_budget", "reuse_tau", "group_size")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CONSISTENCY_HEADER = ("model_n", "variant", "k_c", "k_d", "k_gap", "E_c", "E_d", "phi",
                      "phi_dispersion", "intercept_residual", "exact", "error")


def execute_run(cfg: ExperimentConfig, run_id: str, out_dir, seed: int | None = None,
                schedule_seed: int | None = None, hidden_dim: int | None = None,
                tags: dict | None = None) -> Path:
    """Train one policy and write ``<out_dir>/<run_id>/``.

    ``seed`` drives policy init and rollouts (default ``train.seed``);
    ``schedule_seed`` picks the data subset (default ``schedule.seed``).
    """
    cfg.validate()
    seed = cfg.train.seed if seed is None else seed
    schedule_seed = cfg.schedule.seed if schedule_seed is None else schedule_seed
    train_cfg = replace(cfg.train, seed=seed)
    arch = cfg.model.arch(hidden_dim)
    pool = build_dataset(cfg.data.pool_spec(), cfg.data.seed)
    eval_set = build_dataset(cfg.data.eval_spec(), cfg.data.eval_seed).instances
    sched_spec = cfg.schedule_spec(schedule_seed)
    stream = make_reuse_schedule(pool, sched_spec)
    policy = init_policy(arch, seed)

    run_dir = Path(out_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    train_json = cfg.to_dict()["train"]
    train_json["seed"] = seed
    manifest = RunManifest(
        run_id=run_id,
        arch=arch.to_json(),
        n_nonembed=policy.n_nonembed,
        train=train_json,
        schedule=sched_spec.to_json(),
        dataset={
            "pool": dict(cfg.data.pool_spec().__dict__, seed=cfg.data.seed),
            "eval": dict(cfg.data.eval_spec().__dict__, seed=cfg.data.eval_seed),
        },
        variant=cfg.model.variant,
        tags={"eval_size": len(eval_set), "eval_every": cfg.run.eval_every,
              "max_flops": cfg.run.max_flops, "init_seed": seed, **(tags or {})},
        code_version=f"rlscale {__version__}",
    )
    write_manifest(manifest, run_dir)
    save_tasks(eval_set, run_dir / "eval.jsonl")
    save_stream(stream, run_dir / "schedule.txt")
    with RunWriter(run_dir / STEPS_NAME) as sink:
        result = train_run(train_cfg, policy, stream.resolve(pool), eval_set, cfg.run.eval_every,
                           sink=sink, max_flops=cfg.run.max_flops)
    save_policy(result.state.policy, run_dir / "policy.ckpt")
    return run_dir


def cmd_run(config_path, out=None, seed=None) -> Path:
    cfg = load_config(config_path)
    seed = cfg.train.seed if seed is None else seed
    run_id = cfg.run.run_id or f"run-s{seed}"
    return execute_run(cfg, run_id, out or cfg.run.out_dir, seed=seed)


def sweep_plan(cfg: ExperimentConfig, axis: str, values, replicates: int, base_seed: int):
    """(run_id, config, run kwargs) for every (value, replicate) pair."""
    if axis not in AXES:
        raise ConfigError(f"--axis: expected one of {AXES}, got {axis!r}")
    if not values:
        raise ConfigError("--values: at least one value is required")
    if replicates < 1:
        raise ConfigError("--replicates: must be >= 1")
    plan = []
    for value in values:
        run_cfg = cfg
        hidden = None
        if axis == "model_size":
            hidden = int(value)
        elif axis == "data_budget":
            total = int(value) * cfg.schedule.reuse_factor
            run_cfg = replace(cfg, schedule=replace(cfg.schedule, total_samples=total))
        elif axis == "reuse_tau":
            run_cfg = replace(cfg, schedule=replace(cfg.schedule, reuse_factor=int(value)))
        elif axis == "group_size":
            run_cfg = replace(cfg, train=replace(cfg.train, group_size=int(value)))
        run_cfg.validate()
        for r in range(replicates):
            seed = hash_seed(base_seed, axis, value, r)
            run_id = f"{axis}={value}-r{r}"
            plan.append((run_id, run_cfg, dict(seed=seed, schedule_seed=seed, hidden_dim=hidden,
                                               tags={"axis": axis, "value": value, "replicate": r})))
    return plan


def _run_planned(args):
    run_id, run_cfg, out_dir, kwargs = args
    try:
        execute_run(run_cfg, run_id, out_dir, **kwargs)
        return run_id, None
    except RLScaleError as exc:
        return run_id, f"{type(exc).__name__}: {exc}"


def cmd_sweep(config_path, axis: str, values, replicates: int | None = None, out=None,
              seed: int | None = None, jobs: int = 1) -> tuple[Path, list[dict]]:
    """Run every (value, replicate); returns the sweep directory and the failed entries."""
    cfg = load_config(config_path)
    replicates = cfg.run.replicates if replicates is None else replicates
    base_seed = cfg.train.seed if seed is None else seed
    out_dir = Path(out or cfg.run.out_dir)
    plan = sweep_plan(cfg, axis, values, replicates, base_seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    work = [(run_id, run_cfg, out_dir, kw) for run_id, run_cfg, kw in plan]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_planned, work))
    else:
        outcomes = [_run_planned(w) for w in work]
    errors = dict(outcomes)
    summary = {
        "axis": axis,
        "values": list(values),
        "replicates": replicates,
        "base_seed": base_seed,
        "runs": [
            {"run_id": run_id, "seed": kw["seed"], "value": kw["tags"]["value"],
             "replicate": kw["tags"]["replicate"],
             "status": "ok" if errors[run_id] is None else "failed", "error": errors[run_id]}
            for run_id, _, kw in plan
        ],
    }
    (out_dir / "sweep.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    failed = [r for r in summary["runs"] if r["status"] != "ok"]
    for r in failed:
        log.error("run %s failed: %s", r["run_id"], r["error"])
    log.info("sweep finished: %d runs, %d failed", len(plan), len(failed))
    return out_dir, failed


def _group_name(model_n: int, variant: str) -> str:
    return f"N{model_n}_{variant}"


def cmd_fit(runs_dir, x_axis: str = "flops", y: str = "loss", burn_in: float = 0.0, out=None,
            loss_floor=None):
    """Fit every (model_n, variant) group; writes the table and plot data."""
    _require_dir(runs_dir)
    runset = load_runs(runs_dir)
    if not len(runset):
        raise FitError(f"no runs found under {runs_dir}")
    rows = fit_per_model(runset, x_axis, y, burn_in=burn_in, loss_floor=loss_floor)
    out_dir = Path(out or runs_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / f"fit_{x_axis}_{y}.csv"
    emit_table(rows, table_path)
    plot_dir = out_dir / f"plot_{x_axis}_{y}"
    plot_dir.mkdir(exist_ok=True)
    for row in rows:
        if row.error:
            log.error("group N=%d %s: %s", row.model_n, row.variant, row.error)
        with (plot_dir / f"{_group_name(row.model_n, row.variant)}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("x", "y", "fitted_y"))
            writer.writerows((repr(a), repr(b), repr(c)) for a, b, c in plot_data(runset, row, x_axis, y))
    return table_path, rows


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v) + 0.0)  # no "-0.0"


def _require_dir(path) -> None:
    if not Path(path).is_dir():
        raise DataError(f"{path}: not a directory")


def cmd_check(runs_dir, out=None, burn_in: float = 0.0):
    """Per-group slope/intercept consistency between the compute and data fits."""
    _require_dir(runs_dir)
    runset = load_runs(runs_dir)
    out_dir = Path(out or runs_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "consistency.csv"
    lines = []
    if not len(runset):
        log.warning("no runs found under %s; writing an empty report", runs_dir)
    else:
        fits_c = {(r.model_n, r.variant): r for r in fit_per_model(runset, "flops", "loss", burn_in)}
        fits_d = {(r.model_n, r.variant): r for r in fit_per_model(runset, "data", "loss", burn_in)}
        for key in sorted(fits_c):
            fc, fd = fits_c[key], fits_d[key]
            error = fc.error or fd.error
            if error is None:
                try:
                    rep = check_consistency(fc, fd, key[0], runset)
                    lines.append((key[0], key[1], _num(rep.k_c), _num(rep.k_d), _num(rep.k_gap),
                                  _num(rep.E_c), _num(rep.E_d), _num(rep.phi),
                                  _num(rep.phi_dispersion), _num(rep.intercept_residual),
                                  str(rep.exact).lower(), ""))
                    continue
                except (FitError, DataError) as exc:
                    error = str(exc)
            log.error("group N=%d %s: %s", key[0], key[1], error)
            lines.append((key[0], key[1], *(["nan"] * 8), "false", error))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONSISTENCY_HEADER)
        writer.writerows(lines)
    return path, lines


def _run_train_settings(checkpoint) -> dict:
    """Train settings from the manifest beside a checkpoint, if there is one."""
    path = Path(checkpoint).parent / MANIFEST_NAME
    if not path.exists():
        return {}
    try:
        return dict(json.loads(path.read_text(encoding="utf-8")).get("train", {}))
    except (json.JSONDecodeError, AttributeError):
        log.warning("%s: unreadable manifest; using default eval settings", path)
        return {}


def cmd_eval(checkpoint, dataset, temperature: float | None = None, seed: int = 0,
             max_len: int | None = None) -> EvalResult:
    """Held-out loss of a checkpoint.

    Unset ``temperature`` and ``max_len`` come from the run's manifest when
    the checkpoint sits in a run directory, else 0.7 and longest answer + 2.
    A policy trained without room for EOS fails any longer budget.
    """
    policy = load_policy(checkpoint)
    tasks = load_tasks(dataset)
    train = _run_train_settings(checkpoint)
    if temperature is None:
        temperature = train.get("rollout_temperature_eval", 0.7)
    if max_len is None:
        max_len = train.get("max_response_len") or max(len(t.answer) for t in tasks) + 2
    return evaluate(policy, tasks, temperature, seed, max_len)


def _parse_values(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"--values: expected integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlscale", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one run from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="one run per (value, replicate) along an axis")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--replicates", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("fit", help="fit ln y = -k ln x + E per model group")
    p.add_argument("runs")
    p.add_argument("--x-axis", default="flops", choices=("flops", "data", "steps"))
    p.add_argument("--y", default="loss", choices=("loss", "length"))
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--loss-floor", default=None,
                   help="raise losses below this value (or 'auto' = 1/(2 R_max)) instead of dropping them")
    p.add_argument("--out")

    p = sub.add_parser("check", help="compute-vs-data coefficient consistency report")
    p.add_argument("runs")
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="held-out test loss of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--temperature", type=float, default=None,
                   help="default: the run's eval temperature, else 0.7")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            print(cmd_run(args.config, args.out, args.seed))
        elif args.command == "sweep":
            out_dir, failed = cmd_sweep(args.config, args.axis, _parse_values(args.values),
                                        args.replicates, args.out, args.seed, args.jobs)
            print(out_dir)
            if failed:
                print(f"error: {len(failed)} run(s) failed; see {out_dir / 'sweep.json'}",
                      file=sys.stderr)
                return EXIT_DATA
        elif args.command == "fit":
            floor = args.loss_floor
            if floor is not None and floor != "auto":
                floor = float(floor)
            path, _ = cmd_fit(args.runs, args.x_axis, args.y, args.burn_in, args.out, floor)
            sys.stdout.write(path.read_text())
        elif args.command == "check":
            path, _ = cmd_check(args.runs, args.out, args.burn_in)
            sys.stdout.write(path.read_text())
        elif args.command == "eval":
            res = cmd_eval(args.checkpoint, args.dataset, args.temperature, args.seed, args.max_len)
            print(f"L={res.loss:.6f} R={res.correct} R_max={res.total}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RLScaleError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
