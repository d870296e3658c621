"""Configuration-driven experiment runner.

A declarative INI file names the task, the data source, the training and
inference methods, and the training hyperparameters; `run` executes it per
seed and writes `runs.jsonl`, `report.json`, `timings.json`, `report.txt`,
and per-seed training traces under the output directory.

    [experiment]
    task = digit_sum          ; see nclkit.tasks.TASK_NAMES
    variant = simple
    train = pd                ; none | pd | sampl | seml
    infer = ilp               ; argmax | ilp | viterbi | astar
    seeds = 0, 1, 2
    fraction = 1.0
    out = runs/digit_sum_pd

    [data]
    n = 600                   ; forwarded to the task generator
    seed = 0

    [train]
    optimizer = adam
    lr = 0.005
    epochs = 40
    batch_size = 64

Exit codes: 0 success, 1 run failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .autodiff import Graph
from .errors import NclError
from .evaluate import (EvalReport, config_fingerprint, make_report,
                       split_low_data, time_block, violation_rate)
from .infer import (IlpSolver, PredictionTable, astar_decode, ilp_map,
                    solve_lp_file, viterbi_decode)
from .lang import (gf_render, parse_program, structure_signature,
                   validate_program)
from .lower import capability_matrix, linearize, to_lp_text
from .tasks import TASK_NAMES, make_task
from .train import TrainConfig, train

TRAIN_METHODS = ("none", "pd", "sampl", "seml")
INFER_METHODS = ("argmax", "ilp", "viterbi", "astar")


class ConfigError(NclError):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    task: str
    variant: str
    train_method: str
    infer_method: str
    seeds: list
    fraction: float
    out: str
    data: dict
    train_cfg: dict
    timeout_ms: float = 30000.0
    jobs: int = 1


def parse_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")
    exp = parser["experiment"]
    task = exp.get("task", "")
    if task not in TASK_NAMES:
        raise ConfigError(f"unknown task {task!r}; choose from {TASK_NAMES}")
    train_method = exp.get("train", "none").lower()
    infer_method = exp.get("infer", "argmax").lower()
    if train_method not in TRAIN_METHODS:
        raise ConfigError(f"unknown training method {train_method!r}")
    if infer_method not in INFER_METHODS:
        raise ConfigError(f"unknown inference method {infer_method!r}")
    seeds = [int(s) for s in exp.get("seeds", "0").replace(",", " ").split()]
    fraction = exp.getfloat("fraction", 1.0)
    if not 0 < fraction <= 1:
        raise ConfigError("fraction must be in (0, 1]")
    data = dict(parser["data"]) if "data" in parser else {}
    train_cfg = dict(parser["train"]) if "train" in parser else {}
    return ExperimentConfig(
        task=task, variant=exp.get("variant", "simple"),
        train_method=train_method, infer_method=infer_method,
        seeds=seeds, fraction=fraction,
        out=exp.get("out", "runs/" + task), data=data, train_cfg=train_cfg,
        timeout_ms=exp.getfloat("timeout_ms", 30000.0),
        jobs=exp.getint("jobs", 1))


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def build_train_config(cfg: ExperimentConfig, seed) -> TrainConfig:
    kw = {"seed": seed, "method": cfg.train_method}
    casts = {
        "optimizer": str, "lr": float, "batch_size": int, "epochs": int,
        "n_samples": int, "tnorm": str, "lambda_lr": float,
        "lambda_mode": str, "eps_floor": float, "space_cap": int,
        "constraint_scale": str,
    }
    for key, raw in cfg.train_cfg.items():
        if key in casts:
            kw[key] = casts[key](raw)
        elif key in ("stop_at_full_satisfaction", "supervised"):
            kw[key] = _BOOL[raw.strip().lower()]
        else:
            raise ConfigError(f"unknown [train] key {key!r}")
    if cfg.train_method != "none" and "supervised" not in kw:
        kw["supervised"] = False  # constraint methods default to no labels
    return TrainConfig(**kw)


def _data_kwargs(cfg: ExperimentConfig):
    out = {}
    for key, raw in cfg.data.items():
        try:
            out[key] = int(raw)
        except ValueError:
            try:
                out[key] = float(raw)
            except ValueError:
                out[key] = raw
    return out


def check_methods(task, cfg: ExperimentConfig):
    """Validate the method combination against the capability matrix."""
    model = task.build_model(cfg.variant, 0)
    group = task.eval_groups(task.test)[0]
    batch = task.make_batch(model, task.test, group, False)
    wanted = []
    if cfg.train_method != "none":
        wanted.append(cfg.train_method)
    if cfg.infer_method != "argmax":
        wanted.append(cfg.infer_method)
    if not wanted:
        return
    report = capability_matrix(wanted, batch.g, task.program)
    for m in wanted:
        ok, cat = report.supports(m)
        if not ok:
            cell = report.table[m][cat]
            raise ConfigError(
                f"method {m!r} cannot express the task's {cat!r} constraints "
                f"({cell.status}{': ' + cell.note if cell.note else ''})")
    if cfg.infer_method in ("viterbi", "astar") and task.sequence is None:
        raise ConfigError(
            f"{cfg.infer_method!r} needs a sequential task with a transition mask")


def _decode_group(task, batch, table, infer_method, timeout_s, solver_cache):
    if infer_method == "argmax":
        return table.argmax_labels(), None
    if infer_method == "ilp":
        # per-example systems usually share one structure; solve against a
        # cached solver with this group's probabilities as the objective
        sig = structure_signature(batch.g)
        hit = solver_cache.get(sig)
        if hit is None:
            ls = linearize(batch.g)
            hit = (ls, IlpSolver(ls))
            if len(solver_cache) > 64:
                solver_cache.clear()
            solver_cache[sig] = hit
        ls, solver = hit
        canon = PredictionTable(ls.var_names, ls.var_labels, table.probs)
        sol = ilp_map(canon, ls, timeout_s, solver=solver)
    elif infer_method in ("viterbi", "astar"):
        start, pair = task.sequence
        decode = viterbi_decode if infer_method == "viterbi" else astar_decode
        sol = decode(table, pair, start)
    else:
        raise ConfigError(f"unknown inference method {infer_method!r}")
    if not sol.feasible:
        raise NclError(f"{infer_method} returned {sol.status} on an eval group")
    return sol.labels, sol


def run_single(cfg: ExperimentConfig, seed) -> tuple:
    """One seed: generate, train, decode, measure."""
    task = make_task(cfg.task, **_data_kwargs(cfg))
    check_methods(task, cfg)
    if cfg.fraction < 1.0:
        task.train = split_low_data(task.train, cfg.fraction, seed)
    tcfg = build_train_config(cfg, seed)
    trace_path = os.path.join(cfg.out, f"trace_seed{seed}.jsonl")
    os.makedirs(cfg.out, exist_ok=True)
    result = train(task, cfg.variant, tcfg, trace_path=trace_path)
    if result.aborted:
        raise NclError(f"training diverged for seed {seed}")

    test = task.test
    groups = task.eval_groups(test)
    make_infer = task.make_infer_batch or task.make_batch

    solver_cache = {}

    def infer_pass():
        results = []
        sat_num, sat_den = 0, 0
        for group in groups:
            batch = make_infer(result.model, test, group, False)
            graph = Graph(result.params)
            flat = batch.forward(graph).value
            table = PredictionTable.from_flat(batch.g, flat, batch.offsets)
            labels, _ = _decode_group(task, batch, table, cfg.infer_method,
                                      cfg.timeout_ms / 1000.0, solver_cache)
            if batch.g.constraints:
                rate = violation_rate(np.asarray(labels), batch.g)
                sat_num += rate * len(batch.g.constraints)
                sat_den += len(batch.g.constraints)
            results.append((group, table.assignment(labels), table))
        violation = sat_num / sat_den if sat_den else 0.0
        return results, violation

    infer_ms, _stats, (results, violation) = time_block(
        "infer", infer_pass, n_examples=len(test), repeats=3)
    metric = task.score(test, results)
    fingerprint = config_fingerprint(tcfg.fingerprint_dict(), task.program_text)
    report = EvalReport(
        task=cfg.task, train_method=cfg.train_method,
        infer_method=cfg.infer_method, variant=cfg.variant,
        fraction=cfg.fraction, seed=seed, metric_name=task.metric,
        metric_value=metric, violation=violation,
        train_ms_per_example=result.ms_per_example,
        infer_ms_per_example=infer_ms, fingerprint=fingerprint)
    return report, result


def run_experiment(config_path, seed_override=None, out_override=None,
                   timeout_ms=None, jobs=None) -> int:
    """Execute every seed of an experiment config; returns an exit code."""
    try:
        cfg = parse_config(config_path)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if seed_override is not None:
        cfg.seeds = [seed_override]
    if out_override is not None:
        cfg.out = out_override
    if timeout_ms is not None:
        cfg.timeout_ms = timeout_ms
    if jobs is not None:
        cfg.jobs = jobs

    try:
        try:
            probe = make_task(cfg.task, **_data_kwargs(cfg))
            check_methods(probe, cfg)
            if cfg.variant not in probe.variants:
                raise ConfigError(
                    f"unknown variant {cfg.variant!r}; task offers "
                    f"{sorted(probe.variants)}")
            build_train_config(cfg, 0)
        except (ConfigError, ValueError, KeyError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2

        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                outcomes = list(pool.map(lambda s: run_single(cfg, s), cfg.seeds))
        else:
            outcomes = [run_single(cfg, s) for s in cfg.seeds]
    except NclError as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return 1

    reports = [r for r, _ in outcomes]
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "runs.jsonl"), "w") as fh:
        for r in reports:
            fh.write(json.dumps(dataclasses.asdict(r), sort_keys=True) + "\n")
    make_report(reports, cfg.out)
    print(open(os.path.join(cfg.out, "report.txt")).read(), end="")
    return 0


# ---------------------------------------------------------------- commands

def _cmd_run(args):
    return run_experiment(args.config, args.seed, args.out,
                          args.timeout_ms, args.jobs)


def _cmd_validate(args):
    if args.config.endswith(".ncl"):
        try:
            with open(args.config) as fh:
                prog = parse_program(fh.read())
        except NclError as exc:
            print(f"{args.config}:{exc}", file=sys.stderr)
            return 2
        diags = validate_program(prog)
        for d in diags:
            print(d.render(args.config))
        return 1 if diags else 0
    try:
        cfg = parse_config(args.config)
        task = make_task(cfg.task, **_data_kwargs(cfg))
        check_methods(task, cfg)
        build_train_config(cfg, 0)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {cfg.task} train={cfg.train_method} infer={cfg.infer_method} "
          f"seeds={cfg.seeds}")
    return 0


def _task_probe_batch(args):
    cfg = parse_config(args.config)
    task = make_task(cfg.task, **_data_kwargs(cfg))
    model = task.build_model(cfg.variant, 0)
    group = task.eval_groups(task.test)[0]
    make_infer = task.make_infer_batch or task.make_batch
    return cfg, task, model, make_infer(model, task.test, group, False)


def _cmd_ground(args):
    cfg, task, model, batch = _task_probe_batch(args)
    g = batch.g
    lines = [f"# ground program for {cfg.task} (first test group)",
             f"# {len(g.variables)} variables, {len(g.constraints)} constraints"]
    for v in g.variables:
        lines.append(f"var {v.name} labels {list(v.labels)}")
    for c in g.constraints:
        lines.append(f"constraint {c.name}: {gf_render(c.formula, g)}")
    text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


def _cmd_compile(args):
    cfg, task, model, batch = _task_probe_batch(args)
    ls = linearize(batch.g)
    graph = Graph(model.params)
    flat = batch.forward(graph).value
    table = PredictionTable.from_flat(batch.g, flat, batch.offsets)
    obj = np.zeros(ls.n_cols)
    logs = table.log_probs()
    for i in range(len(ls.var_names)):
        obj[ls.indicator_cols[i]] = logs[i]
    _emit(to_lp_text(ls, obj), args.out)
    return 0


def _cmd_solve(args):
    sol = solve_lp_file(args.lp, args.probs, args.timeout_ms / 1000.0)
    print(f"status: {sol.status}")
    print(f"objective: {sol.objective}")
    print(f"nodes: {sol.nodes}")
    if sol.assignment:
        for name in sorted(sol.assignment):
            print(f"{name} = {sol.assignment[name]}")
    return 0 if sol.feasible else 1


def _cmd_report(args):
    rows = []
    for path in args.runs:
        with open(path) as fh:
            for line in fh:
                rows.append(EvalReport(**json.loads(line)))
    if not rows:
        print("no runs found", file=sys.stderr)
        return 1
    make_report(rows, args.out)
    print(open(os.path.join(args.out, "report.txt")).read(), end="")
    return 0


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="nclkit", description="constraint-integration experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--timeout-ms", type=float, default=None, dest="timeout_ms")
    run_p.add_argument("--jobs", type=int, default=None)
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="check a config or .ncl program")
    val_p.add_argument("config")
    val_p.set_defaults(func=_cmd_validate)

    ground_p = sub.add_parser("ground", help="dump the ground program")
    ground_p.add_argument("--config", required=True)
    ground_p.add_argument("--out", default=None)
    ground_p.set_defaults(func=_cmd_ground)

    compile_p = sub.add_parser("compile", help="dump the 0-1 system as LP text")
    compile_p.add_argument("--config", required=True)
    compile_p.add_argument("--out", default=None)
    compile_p.set_defaults(func=_cmd_compile)

    solve_p = sub.add_parser("solve", help="file-driven MAP solve")
    solve_p.add_argument("--lp", required=True)
    solve_p.add_argument("--probs", required=True)
    solve_p.add_argument("--timeout-ms", type=float, default=30000.0,
                         dest="timeout_ms")
    solve_p.set_defaults(func=_cmd_solve)

    report_p = sub.add_parser("report", help="merge run files into a report")
    report_p.add_argument("--runs", nargs="+", required=True)
    report_p.add_argument("--out", required=True)
    report_p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
