"""Command-line surface for the pipeline.

Subcommands mirror the library stages: demo generation, constraint
mining, constrained training, the full alternating game, policy
evaluation, and two inspectors (robustness, dfa).  File-producing
commands write only below --out and render figures next to the
delimited logs.

Exit codes: 0 ok, 2 config error, 3 data error, 4 training divergence,
5 partial result.  Inline arguments that fail to parse are config
errors; files with bad content are data errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import config, crl, game, plots
from .automaton import to_dfa
from .crl import CrlConfig, DivergenceError
from .formulas import ParseError, collect_aps, format_formula, parse_formula, robustness
from .mining import Dataset, mine
from .nav import NAV_FEATURES, EnvSpec, NavEnv, default_spec_for, gt_constraints

OK, CONFIG_ERR, DATA_ERR, DIVERGENCE_ERR, PARTIAL = 0, 2, 3, 4, 5


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _load_config(path: str | None) -> config.RunConfig:
    return config.RunConfig() if path is None else config.load(path)


def _parse_inline_formula(text: str):
    try:
        return parse_formula(text, NAV_FEATURES)
    except ParseError as e:
        raise _Fail(CONFIG_ERR, f"bad formula: {e}") from e


def _read_text(path, what: str) -> str:
    try:
        return open(path).read()
    except OSError as e:
        raise _Fail(DATA_ERR, f"cannot read {what}: {e}") from e


def _load_traj_file(path, what: str) -> list[crl.Trajectory]:
    try:
        trajs = crl.load_trajectories(path)
    except OSError as e:
        raise _Fail(DATA_ERR, f"cannot read {what}: {e}") from e
    except ValueError as e:
        raise _Fail(DATA_ERR, str(e)) from e
    if not trajs:
        raise _Fail(DATA_ERR, f"empty {what}: {path}")
    return trajs


def _load_env(path: str | None, task: str, cfg: config.RunConfig) -> EnvSpec:
    if path is not None:
        try:
            return EnvSpec.from_json(_read_text(path, "env spec"))
        except (KeyError, TypeError, ValueError) as e:
            raise _Fail(DATA_ERR, f"bad env spec {path}: {e}") from e
    return cfg.env or default_spec_for(task)


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _check_workers(n: int) -> None:
    if n != 1:
        raise _Fail(
            CONFIG_ERR,
            "this build rolls out single-worker for reproducibility; use --workers 1",
        )


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_demos(args) -> int:
    if args.n <= 0:
        raise _Fail(CONFIG_ERR, "--n must be positive")
    cfg = _load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    spec = cfg.env or default_spec_for(args.task)
    phi = gt_constraints()[args.task]
    crl_cfg = replace(cfg.crl, seed=seed)

    from .nav import gen_expert_demos

    demos, partial = gen_expert_demos(spec, phi, args.n, crl_config=crl_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(spec.to_json())
    crl.save_trajectories(out / "demos.jsonl", demos)
    _write_csv(
        out / "demos.csv",
        ["demo", "episode_return", "rho"],
        [(i, t.episode_return, t.rho) for i, t in enumerate(demos)],
    )
    plots.plot_layout(
        spec, [("demos", [t.states for t in demos])],
        out / "layout.png", title=f"{args.task}: {len(demos)} demos",
    )
    print(json.dumps({"demos": len(demos), "partial": partial, "out": str(out)}))
    if partial:
        print(f"warning: collected {len(demos)} of {args.n} demos", file=sys.stderr)
        return PARTIAL
    return OK


def cmd_mine(args) -> int:
    cfg = _load_config(args.config)
    experts = _load_traj_file(args.demos, "expert file")
    negatives = _load_traj_file(args.negatives, "negative file")
    try:
        data = Dataset.build([t.states for t in experts],
                             [t.states for t in negatives])
    except ValueError as e:
        raise _Fail(DATA_ERR, str(e)) from e

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    best = mine(data, cfg.mining, log_path=str(out / "generations.jsonl"))
    wall = time.monotonic() - t0

    report = {
        "formula": format_formula(best.formula),
        "fitness": best.fitness,
        "reg_fitness": best.reg_fitness,
        "nodes": best.node_count,
        "wall_time": wall,
        "config": asdict(cfg.mining),
    }
    (out / "formula.txt").write_text(report["formula"] + "\n")
    (out / "report.json").write_text(json.dumps(report, indent=2))
    records = [json.loads(l) for l in
               (out / "generations.jsonl").read_text().splitlines()]
    _write_csv(
        out / "generations.csv",
        ["generation", "best", "fitness", "reg_fitness", "nodes", "wall_time"],
        [[r[k] for k in ("generation", "best", "fitness", "reg_fitness",
                         "nodes", "wall_time")] for r in records],
    )
    plots.plot_mining(records, out / "fitness_curve.png")
    print(json.dumps({k: report[k] for k in ("formula", "fitness", "nodes")}))
    return OK


def cmd_train(args) -> int:
    _check_workers(args.workers)
    cfg = _load_config(args.config)
    spec = _load_env(args.env, "nav1", cfg)
    text = _read_text(args.constraint, "constraint file")
    try:
        phi = parse_formula(text.strip(), NAV_FEATURES)
    except ParseError as e:
        raise _Fail(DATA_ERR, f"bad constraint file {args.constraint}: {e}") from e

    env = NavEnv(spec)
    aps = collect_aps(phi)
    if aps and max(ap.dim for ap in aps) >= env.state_dim:
        raise _Fail(DATA_ERR, "constraint references dimensions beyond the env state")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log: list[dict] = []
    stride = max(1, cfg.crl.steps // 400)

    def record(step, losses):
        if step % stride == 0:
            log.append({"step": step, **losses})

    policy = crl.train_policy(env, phi, [], cfg.crl, callback=record)
    crl.save_policy(policy, out / "policy.ckpt")
    (out / "train.json").write_text(json.dumps({
        "constraint": format_formula(phi),
        "env": json.loads(spec.to_json()),
        "config": asdict(cfg.crl),
    }, indent=2))
    if log:
        keys = ["step", "q", "c", "pi", "temp", "lam"]
        _write_csv(out / "training_log.csv", keys,
                   [[r[k] for k in keys] for r in log])
        plots.plot_training(log, out / "training_curves.png")
    print(json.dumps({"out": str(out), "updates_logged": len(log),
                      "lambda": policy.lam}))
    return OK


def cmd_ilcl(args) -> int:
    _check_workers(args.workers)
    cfg = _load_config(args.config)
    spec = cfg.env or default_spec_for(args.task)
    experts = _load_traj_file(args.demos, "expert file")
    env = NavEnv(spec)
    out = Path(args.out)

    try:
        phi, policy, state = game.run(
            env, experts, out,
            iterations=cfg.ilcl.iterations,
            mining_cfg=cfg.mining,
            crl_cfg=cfg.crl,
            bootstrap_m=cfg.ilcl.bootstrap_m,
            select_samples=cfg.ilcl.select_samples,
        )
    except RuntimeError as e:
        raise _Fail(DATA_ERR, str(e)) from e

    metrics = json.loads((out / "metrics.json").read_text())
    selected = metrics["selected"]
    for k in range(1, state.iteration + 1):
        records = [json.loads(l) for l in
                   (out / "mining" / f"{k}.jsonl").read_text().splitlines()]
        plots.plot_mining(records, out / "mining" / f"{k}.png")
    chosen_trajs = crl.load_trajectories(out / "trajs" / f"{selected}.jsonl")
    names = {dim: name for name, dim in NAV_FEATURES.items()}
    plots.plot_layout(
        spec,
        [("experts", [t.states for t in experts]),
         ("policy", [t.states for t in chosen_trajs])],
        out / "layout.png",
        title=format_formula(phi, names),
    )
    keys = ["k", "constraint", "fitness", "nodes", "accepts_all_experts",
            "n_negatives", "n_fresh", "lambda", "vr_own", "rew", "wall_time"]
    _write_csv(out / "iterations.csv", keys,
               [[rec[k] for k in keys] for rec in state.metrics])
    print(json.dumps(metrics, indent=2))
    return OK


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    phi = _parse_inline_formula(args.gt)
    try:
        policy = crl.load_policy(args.policy)
    except OSError as e:
        raise _Fail(DATA_ERR, f"cannot read checkpoint: {e}") from e
    except (KeyError, ValueError) as e:
        raise _Fail(DATA_ERR, f"bad checkpoint: {e}") from e
    spec = _load_env(args.env, "nav1", cfg)
    env = NavEnv(spec)
    if collect_aps(phi) and max(ap.dim for ap in collect_aps(phi)) >= env.state_dim:
        raise _Fail(DATA_ERR, "formula references dimensions beyond the env state")

    torch.manual_seed(cfg.seed)
    rollouts = [crl.rollout(policy, env, phi) for _ in range(args.n)]
    m = crl.metrics_from([t.rho for t in rollouts],
                         [t.episode_return for t in rollouts])
    doc = {"vr": m.vr, "rew": m.rew, "tr": m.tr}
    print(json.dumps(doc))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(doc, indent=2))
        _write_csv(out / "rollouts.csv", ["rollout", "episode_return", "rho"],
                   [(i, t.episode_return, t.rho) for i, t in enumerate(rollouts)])
        plots.plot_layout(spec, [("rollouts", [t.states for t in rollouts])],
                          out / "layout.png")
    return OK


def cmd_robustness(args) -> int:
    phi = _parse_inline_formula(args.formula)
    text = _read_text(args.traj, "trajectory file")
    if text.lstrip().startswith("["):
        try:
            arr = np.asarray(json.loads(text), dtype=float)
        except (json.JSONDecodeError, ValueError) as e:
            raise _Fail(DATA_ERR, f"bad trace file: {e}") from e
        traces = [arr] if arr.ndim == 2 else list(arr)
    else:
        traces = [t.states for t in _load_traj_file(args.traj, "trajectory file")]
    try:
        for tr in traces:
            print(robustness(tr, phi))
    except ValueError as e:
        raise _Fail(DATA_ERR, str(e)) from e
    return OK


def cmd_dfa(args) -> int:
    phi = _parse_inline_formula(args.formula)
    d = to_dfa(phi)
    print(f"{d.num_states} states, {len(d.aps)} atomic predicates, "
          f"initial q{d.initial}")
    for i, ap in enumerate(d.aps):
        op = "<" if ap.sign == 1 else ">"
        print(f"  ap{i}: s{ap.dim} {op} {ap.threshold}")
    for q in range(d.num_states):
        mark = " [accepting]" if d.accepting[q] else ""
        print(f"q{q}{mark}: {format_formula(d.states[q])}")
        for letter in range(d.num_letters):
            true_aps = ",".join(f"ap{i}" for i in range(len(d.aps))
                                if letter >> i & 1)
            print(f"  {{{true_aps}}} -> q{int(d.table[q, letter])}")
    return OK


# ---------------------------------------------------------------------------
# Parser


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tlcl",
        description="Temporal-logic constraint learning pipeline.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="train against a ground-truth "
                       "constraint and rejection-sample demonstrations")
    g.add_argument("--task", choices=("nav1", "nav2"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--config", default=None)
    g.set_defaults(func=cmd_gen_demos)

    m = sub.add_parser("mine", help="mine a separating constraint from "
                       "expert and negative trajectory files")
    m.add_argument("--demos", required=True)
    m.add_argument("--negatives", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--config", default=None)
    m.set_defaults(func=cmd_mine)

    t = sub.add_parser("train", help="train a constrained policy")
    t.add_argument("--env", default=None, help="EnvSpec JSON file")
    t.add_argument("--constraint", required=True, help="formula text file")
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("ilcl", help="run the full alternating game")
    i.add_argument("--task", choices=("nav1", "nav2"), required=True)
    i.add_argument("--demos", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--config", default=None)
    i.add_argument("--workers", type=int, default=1)
    i.set_defaults(func=cmd_ilcl)

    e = sub.add_parser("eval", help="VR/REW/TR of a checkpoint against a "
                       "ground-truth formula")
    e.add_argument("--policy", required=True)
    e.add_argument("--gt", required=True, help="formula text")
    e.add_argument("--env", default=None)
    e.add_argument("--n", type=int, default=20)
    e.add_argument("--out", default=None)
    e.add_argument("--config", default=None)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("robustness", help="robustness of a formula on traces")
    r.add_argument("--formula", required=True)
    r.add_argument("--traj", required=True,
                   help="JSON trace array or trajectory JSONL")
    r.set_defaults(func=cmd_robustness)

    d = sub.add_parser("dfa", help="print a formula's automaton")
    d.add_argument("--formula", required=True)
    d.set_defaults(func=cmd_dfa)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as e:
        print(f"error: {e.message}", file=sys.stderr)
        return e.code
    except config.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return CONFIG_ERR
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return DIVERGENCE_ERR


if __name__ == "__main__":
    sys.exit(main())
