"""Alternating constraint-mining / constrained-policy game.

The mining player proposes a constraint that separates expert
demonstrations from every trajectory any policy has produced so far;
the policy player trains against that constraint and contributes fresh
zero-violation trajectories to the pool.  Iteration zero seeds the pool
with rollouts of an unconstrained reward-only policy, the natural first
adversary.  After the final round the constraint whose policy best
imitates the expert actions is selected.

Every run writes a replayable directory: configs and seeds in
run.json, the expert set and each iteration's trajectories as JSONL,
each constraint as text, each policy as a checkpoint, and one audit
record per iteration.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import crl
from . import formulas as fm
from .crl import CrlConfig, LagrangianPolicy, Trajectory
from .formulas import Formula, format_formula, robustness
from .mining import Dataset, MiningConfig, mine


@dataclass
class GameState:
    """Everything both players have produced, plus the expert set."""

    constraints: list[Formula] = field(default_factory=list)
    policies: list[LagrangianPolicy] = field(default_factory=list)
    bootstrap: list[Trajectory] = field(default_factory=list)
    pool: list[Trajectory] = field(default_factory=list)
    experts: list[Trajectory] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)

    @property
    def iteration(self) -> int:
        return len(self.constraints)

    @property
    def negatives(self) -> list[Trajectory]:
        return self.bootstrap + self.pool


def bootstrap_negatives(env, m: int, cfg: CrlConfig) -> list[Trajectory]:
    """Train a reward-only policy (constraint = true) and roll it out m
    times; its goal-greedy trajectories are the iteration-zero
    adversary."""
    if m < 1:
        raise ValueError("need at least one bootstrap rollout")
    top = fm.Top()
    policy = crl.train_policy(env, top, [], cfg)
    return [crl.rollout(policy, env, top) for _ in range(m)]


def action_error(policy: LagrangianPolicy, experts: list[Trajectory],
                 n_samples: int = 8, seed: int = 0) -> float:
    """Mean Euclidean gap between expert actions and the policy's own
    action distribution at the expert states, Monte Carlo with a fixed
    sample count.  The automaton state is replayed along each expert
    trajectory under the policy's own constraint."""
    torch.manual_seed(seed)
    total, count = 0.0, 0
    for tr in experts:
        q = policy.dfa.reset(tr.states[0])
        for t, a in enumerate(tr.actions):
            draws = [policy.act(tr.states[t], q) for _ in range(n_samples)]
            total += float(np.mean([np.linalg.norm(a - d) for d in draws]))
            count += 1
            q = crl.product_step(policy.dfa, q, tr.states[t + 1])
    return total / count


def select_best(constraints: list[Formula], policies: list[LagrangianPolicy],
                experts: list[Trajectory], n_samples: int = 8,
                seed: int = 0) -> tuple[Formula, LagrangianPolicy]:
    """The candidate whose policy is most expert-like wins."""
    if not constraints or len(constraints) != len(policies):
        raise ValueError("need matching non-empty constraint/policy lists")
    errors = [action_error(p, experts, n_samples, seed) for p in policies]
    i = int(np.argmin(errors))
    return constraints[i], policies[i]


def run(
    env,
    experts: list[Trajectory],
    out_dir,
    iterations: int = 3,
    mining_cfg: MiningConfig | None = None,
    crl_cfg: CrlConfig | None = None,
    bootstrap_m: int = 10,
    select_samples: int = 8,
) -> tuple[Formula, LagrangianPolicy, GameState]:
    """Play the game for the given number of iterations and return the
    selected constraint, its policy, and the full state."""
    if not experts:
        raise ValueError("expert set must be non-empty")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    mining_cfg = mining_cfg or MiningConfig()
    crl_cfg = crl_cfg or CrlConfig()

    out = Path(out_dir)
    for sub in ("constraints", "policies", "trajs", "mining"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(json.dumps({
        "iterations": iterations,
        "bootstrap_m": bootstrap_m,
        "select_samples": select_samples,
        "mining": asdict(mining_cfg),
        "crl": asdict(crl_cfg),
        "env": env.spec.to_json(),
        "n_experts": len(experts),
    }, indent=2))
    crl.save_trajectories(out / "experts.jsonl", experts)

    state = GameState(experts=list(experts))
    state.bootstrap = bootstrap_negatives(env, bootstrap_m, crl_cfg)
    crl.save_trajectories(out / "trajs" / "0.jsonl", state.bootstrap)

    with open(out / "audit.jsonl", "w") as audit:
        for k in range(1, iterations + 1):
            t0 = time.monotonic()
            data = Dataset.build([tr.states for tr in experts],
                                 [tr.states for tr in state.negatives])
            best = mine(
                data,
                replace(mining_cfg, seed=mining_cfg.seed + k),
                priors=state.constraints,
                log_path=str(out / "mining" / f"{k}.jsonl"),
            )
            if k == 1 and best.fitness == 0.0:
                raise RuntimeError(
                    "mining cannot separate the experts from unconstrained "
                    "behavior; check the demonstrations")
            phi = best.formula
            (out / "constraints" / f"{k}.txt").write_text(format_formula(phi) + "\n")
            expert_ok = all(robustness(tr.states, phi) > 0 for tr in experts)

            policy = crl.train_policy(
                env, phi, experts + state.pool, replace(crl_cfg, seed=crl_cfg.seed + k))
            crl.save_policy(policy, out / "policies" / f"{k}.ckpt")

            fresh, attempts = crl.sample_zero_violation(
                policy, env, phi, crl_cfg.n_traj)
            assert all(tr.rho >= 0 for tr in fresh)
            crl.save_trajectories(out / "trajs" / f"{k}.jsonl", fresh)

            own = crl.evaluate_policy(policy, env, phi, n=20)
            record = {
                "k": k,
                "constraint": format_formula(phi),
                "fitness": best.fitness,
                "reg_fitness": best.reg_fitness,
                "nodes": best.node_count,
                "accepts_all_experts": expert_ok,
                "n_negatives": len(state.negatives),
                "n_fresh": len(fresh),
                "sample_attempts": attempts,
                "lambda": policy.lam,
                "vr_own": own.vr,
                "rew": own.rew,
                "tr_own": own.tr,
                "wall_time": time.monotonic() - t0,
            }
            audit.write(json.dumps(record) + "\n")
            audit.flush()

            state.constraints.append(phi)
            state.policies.append(policy)
            state.pool.extend(fresh)
            state.metrics.append(record)

    errors = [action_error(p, experts, select_samples, crl_cfg.seed)
              for p in state.policies]
    chosen = int(np.argmin(errors))
    (out / "metrics.json").write_text(json.dumps({
        "selected": chosen + 1,
        "constraint": format_formula(state.constraints[chosen]),
        "action_errors": errors,
        "iterations": state.metrics,
    }, indent=2))
    return state.constraints[chosen], state.policies[chosen], state
