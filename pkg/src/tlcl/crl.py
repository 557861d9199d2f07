"""Constrained RL: reward maximization subject to a temporal-logic
constraint.

The constraint enters through a bounded dense episode cost (indicator of
violation plus clipped negative robustness), spread uniformly over the
episode's steps in the style of immediate reward redistribution: every
step of a trajectory carries the full trajectory cost as its step cost.
A soft actor-critic learner with twin reward critics, twin cost critics,
and a projected-ascent Lagrange multiplier trades reward against the
redistributed cost; the actor and critics observe the environment state
concatenated with a one-hot encoding of the constraint automaton state,
which is advanced alongside the environment during rollouts.

Episodes are fixed-horizon; the value targets bootstrap through the
time limit (the horizon is a training truncation, not a terminal
state).  Rewards are never reshaped by the constraint; pressure enters
only through the multiplier-weighted cost.  Training is single-worker
and deterministic for a given seed up to floating-point reduction
order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .automaton import Dfa, to_dfa
from .formulas import Formula, collect_aps, format_formula, robustness

HIDDEN = 64          # two hidden layers of this width, all networks
TAU = 0.005          # soft target update rate
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
GRAD_CLIP = 10.0     # max gradient norm per optimizer step
LOG_ALPHA_MIN, LOG_ALPHA_MAX = -10.0, 2.0


class DivergenceError(RuntimeError):
    """A training loss went non-finite; the run is unusable."""


@dataclass
class CrlConfig:
    alpha: float = 0.5        # violation indicator vs clipped robustness mix
    upsilon: float = 1.0      # robustness clip bound
    epsilon: float = 0.5      # cost threshold factor
    n_traj: int = 10          # trajectories per evaluation batch (threshold scale)
    discount: float = 0.99
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_lambda: float = 1e-3
    lr_temp: float = 3e-4
    batch_size: int = 256
    steps: int = 200_000
    seed: int = 0
    capacity: int = 4000      # replay capacity in trajectories
    start_steps: int = 1000   # uniform-random action warmup
    update_every: int = 1     # env steps per gradient update

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.upsilon <= 0.0:
            raise ValueError("upsilon must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")

    @property
    def threshold(self) -> float:
        """Per-step cost budget d."""
        return self.epsilon * self.alpha / self.n_traj


def config_hash(cfg: CrlConfig) -> str:
    return hashlib.sha256(
        json.dumps(asdict(cfg), sort_keys=True).encode()
    ).hexdigest()[:16]


def dense_cost(states: np.ndarray, phi: Formula, alpha: float, upsilon: float) -> float:
    """Bounded dense episode cost in [0, 1]."""
    rho = robustness(np.asarray(states, dtype=float), phi)
    return alpha * float(rho < 0) + ((1.0 - alpha) / upsilon) * float(
        np.clip(-rho, 0.0, upsilon)
    )


def product_step(dfa: Dfa, q: int, state: np.ndarray) -> int:
    """Advance the constraint automaton by one environment state."""
    return dfa.step(q, np.asarray(state, dtype=float))


@dataclass
class Trajectory:
    """One episode: states (T+1, n), actions (T, m), rewards (T,).

    dfa_states, when present, has length T+1 and starts at the
    automaton state reached after consuming the initial environment
    state.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dfa_states: np.ndarray | None = None
    rho: float | None = None
    traj_cost: float = 0.0
    violation: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        t = len(self.actions)
        if len(self.states) != t + 1 or len(self.rewards) != t:
            raise ValueError("inconsistent trajectory lengths")
        if self.dfa_states is not None:
            self.dfa_states = np.asarray(self.dfa_states, dtype=int)
            if len(self.dfa_states) != t + 1:
                raise ValueError("dfa_states must have length T+1")
        if not 0.0 <= self.traj_cost <= 1.0:
            raise ValueError("traj_cost must be in [0, 1]")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))


def score_trajectory(
    states, actions, rewards, phi: Formula, dfa: Dfa, cfg: CrlConfig, meta=None
) -> Trajectory:
    """Build a trajectory scored under phi: robustness, episode cost,
    violation flag, and the automaton state sequence."""
    states = np.asarray(states, dtype=float)
    rho = robustness(states, phi)
    q = dfa.reset(states[0])
    dfa_states = [q]
    for s in states[1:]:
        q = product_step(dfa, q, s)
        dfa_states.append(q)
    return Trajectory(
        states=states,
        actions=np.asarray(actions, dtype=float),
        rewards=np.asarray(rewards, dtype=float),
        dfa_states=np.asarray(dfa_states, dtype=int),
        rho=rho,
        traj_cost=dense_cost(states, phi, cfg.alpha, cfg.upsilon),
        violation=rho < 0,
        meta=meta or {},
    )


def rescore(tr: Trajectory, phi: Formula, dfa: Dfa, cfg: CrlConfig) -> Trajectory:
    return score_trajectory(tr.states, tr.actions, tr.rewards, phi, dfa, cfg, dict(tr.meta))


# ---------------------------------------------------------------------------
# Trajectory files: JSON Lines, one trajectory per line.


def save_trajectories(path, trajs: list[Trajectory]) -> None:
    with open(path, "w") as fh:
        for tr in trajs:
            doc = {
                "states": tr.states.tolist(),
                "actions": tr.actions.tolist(),
                "rewards": tr.rewards.tolist(),
                "meta": {**tr.meta, "traj_cost": tr.traj_cost, "violation": tr.violation},
            }
            if tr.dfa_states is not None:
                doc["dfa_states"] = tr.dfa_states.tolist()
            if tr.rho is not None:
                doc["rho"] = tr.rho
            fh.write(json.dumps(doc) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                meta = dict(doc.get("meta", {}))
                traj_cost = float(meta.pop("traj_cost", 0.0))
                rho = doc.get("rho")
                violation = bool(meta.pop("violation", rho is not None and rho < 0))
                out.append(
                    Trajectory(
                        states=np.asarray(doc["states"], dtype=float),
                        actions=np.asarray(doc["actions"], dtype=float),
                        rewards=np.asarray(doc["rewards"], dtype=float),
                        dfa_states=(
                            np.asarray(doc["dfa_states"]) if "dfa_states" in doc else None
                        ),
                        rho=rho,
                        traj_cost=traj_cost,
                        violation=violation,
                        meta=meta,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}: malformed trajectory line {i}: {e}") from e
    return out


# ---------------------------------------------------------------------------
# Replay


class ReplayBuffer:
    """Ring of trajectories; every stored step resolves back to its
    containing trajectory, whose episode cost is the step's cost."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._trajs: list[Trajectory] = []
        self._next = 0
        self._lengths: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._trajs)

    @property
    def total_steps(self) -> int:
        return int(sum(len(t) for t in self._trajs))

    def insert(self, tr: Trajectory) -> None:
        if tr.dfa_states is None:
            raise ValueError("buffered trajectories need dfa_states")
        if len(self._trajs) < self.capacity:
            self._trajs.append(tr)
        else:
            self._trajs[self._next] = tr
            self._next = (self._next + 1) % self.capacity
        self._lengths = None

    def trajectory_of(self, step) -> Trajectory:
        """Resolve an (s, q, a) step to its containing trajectory."""
        s, q, a = step
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        for tr in self._trajs:
            hits = np.where(tr.dfa_states[:-1] == q)[0]
            for t in hits:
                if np.array_equal(tr.states[t], s) and np.array_equal(tr.actions[t], a):
                    return tr
        raise KeyError("step not found in any buffered trajectory")

    def sample(self, batch_size: int, rng: np.random.Generator, num_q: int) -> dict:
        """Uniform over stored steps; costs are the redistributed
        (episode-level) costs of the containing trajectories."""
        if self._lengths is None:
            self._lengths = np.cumsum([len(t) for t in self._trajs])
        flat = rng.integers(0, self._lengths[-1], size=batch_size)
        ti = np.searchsorted(self._lengths, flat, side="right")
        off = flat - np.concatenate(([0], self._lengths[:-1]))[ti]
        n = self._trajs[0].states.shape[1]
        m = self._trajs[0].actions.shape[1]
        s = np.empty((batch_size, n), dtype=np.float32)
        s2 = np.empty((batch_size, n), dtype=np.float32)
        a = np.empty((batch_size, m), dtype=np.float32)
        r = np.empty(batch_size, dtype=np.float32)
        c = np.empty(batch_size, dtype=np.float32)
        q = np.empty(batch_size, dtype=int)
        q2 = np.empty(batch_size, dtype=int)
        for i, (j, t) in enumerate(zip(ti, off)):
            tr = self._trajs[j]
            s[i] = tr.states[t]
            s2[i] = tr.states[t + 1]
            a[i] = tr.actions[t]
            r[i] = tr.rewards[t]
            c[i] = tr.traj_cost
            q[i] = tr.dfa_states[t]
            q2[i] = tr.dfa_states[t + 1]
        eye = np.eye(num_q, dtype=np.float32)
        return {
            "obs": torch.from_numpy(np.concatenate([s, eye[q]], axis=1)),
            "obs2": torch.from_numpy(np.concatenate([s2, eye[q2]], axis=1)),
            "act": torch.from_numpy(a),
            "rew": torch.from_numpy(r),
            "cost": torch.from_numpy(c),
        }


def redistribute(buffer: ReplayBuffer, step) -> float:
    """Step cost under uniform trajectory-cost redistribution: the
    episode cost of the trajectory containing the step."""
    return buffer.trajectory_of(step).traj_cost


# ---------------------------------------------------------------------------
# Networks


def _mlp(inp: int, out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(inp, HIDDEN), nn.ReLU(),
        nn.Linear(HIDDEN, HIDDEN), nn.ReLU(),
        nn.Linear(HIDDEN, out),
    )


class _Actor(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, limit: float):
        super().__init__()
        self.net = _mlp(obs_dim, 2 * act_dim)
        self.act_dim = act_dim
        self.limit = limit

    def forward(self, obs: torch.Tensor, deterministic: bool = False):
        stats = self.net(obs)
        mu, log_std = stats[..., : self.act_dim], stats[..., self.act_dim:]
        log_std = torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)
        if deterministic:
            u = mu
        else:
            u = mu + torch.randn_like(mu) * log_std.exp()
        dist = torch.distributions.Normal(mu, log_std.exp())
        logp = dist.log_prob(u).sum(-1)
        # tanh squash correction, numerically stable form
        logp = logp - (2.0 * (np.log(2.0) - u - nn.functional.softplus(-2.0 * u))).sum(-1)
        logp = logp - self.act_dim * np.log(self.limit)
        return torch.tanh(u) * self.limit, logp


class _Critic(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int):
        super().__init__()
        self.net = _mlp(obs_dim + act_dim, 1)

    def forward(self, obs: torch.Tensor, act: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, act], dim=-1)).squeeze(-1)


class LagrangianPolicy:
    """Actor, twin reward critics, twin cost critics, entropy
    temperature, and a projected nonnegative Lagrange multiplier."""

    def __init__(self, state_dim: int, action_dim: int, action_limit: float,
                 dfa: Dfa, phi: Formula, cfg: CrlConfig):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.action_limit = action_limit
        self.dfa = dfa
        self.phi = phi
        self.cfg = cfg
        obs_dim = state_dim + dfa.num_states
        self.actor = _Actor(obs_dim, action_dim, action_limit)
        self.q1 = _Critic(obs_dim, action_dim)
        self.q2 = _Critic(obs_dim, action_dim)
        self.c1 = _Critic(obs_dim, action_dim)
        self.c2 = _Critic(obs_dim, action_dim)
        self.q1_t = _Critic(obs_dim, action_dim)
        self.q2_t = _Critic(obs_dim, action_dim)
        self.c1_t = _Critic(obs_dim, action_dim)
        self.c2_t = _Critic(obs_dim, action_dim)
        for t, s in self._target_pairs():
            t.load_state_dict(s.state_dict())
        self.log_alpha = torch.zeros(1, requires_grad=True)
        self.lam = 0.0
        self.opt_actor = torch.optim.Adam(self.actor.parameters(), lr=cfg.lr_actor)
        self.opt_q = torch.optim.Adam(
            list(self.q1.parameters()) + list(self.q2.parameters()), lr=cfg.lr_critic
        )
        self.opt_c = torch.optim.Adam(
            list(self.c1.parameters()) + list(self.c2.parameters()), lr=cfg.lr_critic
        )
        self.opt_temp = torch.optim.Adam([self.log_alpha], lr=cfg.lr_temp)
        self.target_entropy = -float(action_dim)

    def _target_pairs(self):
        return [(self.q1_t, self.q1), (self.q2_t, self.q2),
                (self.c1_t, self.c1), (self.c2_t, self.c2)]

    def _named_modules(self):
        return [("actor", self.actor), ("q1", self.q1), ("q2", self.q2),
                ("c1", self.c1), ("c2", self.c2),
                ("q1_t", self.q1_t), ("q2_t", self.q2_t),
                ("c1_t", self.c1_t), ("c2_t", self.c2_t)]

    def obs(self, state: np.ndarray, q: int) -> torch.Tensor:
        v = np.zeros(self.state_dim + self.dfa.num_states, dtype=np.float32)
        v[: self.state_dim] = state
        v[self.state_dim + q] = 1.0
        return torch.from_numpy(v)

    def act(self, state: np.ndarray, q: int, deterministic: bool = False) -> np.ndarray:
        with torch.no_grad():
            a, _ = self.actor(self.obs(state, q).unsqueeze(0), deterministic)
        return a.squeeze(0).numpy()

    def update(self, batch: dict, step: int) -> dict:
        cfg = self.cfg
        temp = self.log_alpha.exp().detach()

        with torch.no_grad():
            a2, logp2 = self.actor(batch["obs2"])
            qt = torch.min(self.q1_t(batch["obs2"], a2), self.q2_t(batch["obs2"], a2))
            y_r = batch["rew"] + cfg.discount * (qt - temp * logp2)
            # pessimistic (max) twin aggregation on the cost side
            ct = torch.max(self.c1_t(batch["obs2"], a2), self.c2_t(batch["obs2"], a2))
            y_c = batch["cost"] + cfg.discount * ct

        q_loss = nn.functional.mse_loss(self.q1(batch["obs"], batch["act"]), y_r) + \
            nn.functional.mse_loss(self.q2(batch["obs"], batch["act"]), y_r)
        self.opt_q.zero_grad()
        q_loss.backward()
        nn.utils.clip_grad_norm_(
            list(self.q1.parameters()) + list(self.q2.parameters()), GRAD_CLIP)
        self.opt_q.step()

        c_loss = nn.functional.mse_loss(self.c1(batch["obs"], batch["act"]), y_c) + \
            nn.functional.mse_loss(self.c2(batch["obs"], batch["act"]), y_c)
        self.opt_c.zero_grad()
        c_loss.backward()
        nn.utils.clip_grad_norm_(
            list(self.c1.parameters()) + list(self.c2.parameters()), GRAD_CLIP)
        self.opt_c.step()

        a_new, logp = self.actor(batch["obs"])
        q_new = torch.min(self.q1(batch["obs"], a_new), self.q2(batch["obs"], a_new))
        c_new = torch.max(self.c1(batch["obs"], a_new), self.c2(batch["obs"], a_new))
        # maximize Q_r - lambda (Q_c - d) with entropy regularization
        a_loss = (temp * logp - q_new + self.lam * (c_new - cfg.threshold)).mean()
        self.opt_actor.zero_grad()
        a_loss.backward()
        nn.utils.clip_grad_norm_(self.actor.parameters(), GRAD_CLIP)
        self.opt_actor.step()

        t_loss = -(self.log_alpha * (logp.detach() + self.target_entropy)).mean()
        self.opt_temp.zero_grad()
        t_loss.backward()
        self.opt_temp.step()
        with torch.no_grad():
            self.log_alpha.clamp_(LOG_ALPHA_MIN, LOG_ALPHA_MAX)

        # projected ascent on the sampled constraint gap
        gap = float(batch["cost"].mean()) - cfg.threshold
        self.lam = max(0.0, self.lam + cfg.lr_lambda * gap)

        with torch.no_grad():
            for tgt, src in self._target_pairs():
                for pt, ps in zip(tgt.parameters(), src.parameters()):
                    pt.mul_(1.0 - TAU).add_(TAU * ps)

        losses = {"q": q_loss.item(), "c": c_loss.item(), "pi": a_loss.item(),
                  "temp": t_loss.item(), "lam": self.lam}
        if not all(np.isfinite(v) for v in losses.values()):
            raise DivergenceError(f"non-finite loss at update {step}: {losses}")
        return losses


# ---------------------------------------------------------------------------
# Checkpoints: flat float32 binary + JSON sidecar.


def save_policy(policy: LagrangianPolicy, path) -> None:
    path = Path(path)
    params = []
    chunks = []
    for mod_name, mod in policy._named_modules():
        for p_name, p in mod.state_dict().items():
            arr = p.detach().numpy().astype(np.float32)
            params.append({"name": f"{mod_name}.{p_name}", "shape": list(arr.shape)})
            chunks.append(arr.ravel())
    params.append({"name": "log_alpha", "shape": [1]})
    chunks.append(policy.log_alpha.detach().numpy().astype(np.float32).ravel())
    path.write_bytes(np.concatenate(chunks).tobytes())
    sidecar = {
        "params": params,
        "state_dim": policy.state_dim,
        "action_dim": policy.action_dim,
        "action_limit": policy.action_limit,
        "constraint": format_formula(policy.phi),
        "lambda": policy.lam,
        "config": asdict(policy.cfg),
        "config_hash": config_hash(policy.cfg),
        "seed": policy.cfg.seed,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_policy(path) -> LagrangianPolicy:
    from .formulas import parse_formula

    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    phi = parse_formula(sidecar["constraint"])
    cfg = CrlConfig(**sidecar["config"])
    policy = LagrangianPolicy(
        sidecar["state_dim"], sidecar["action_dim"], sidecar["action_limit"],
        to_dfa(phi), phi, cfg,
    )
    flat = np.frombuffer(path.read_bytes(), dtype=np.float32)
    cursor = 0
    tensors = {}
    for entry in sidecar["params"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = flat[cursor : cursor + size].reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
        cursor += size
    if cursor != flat.size:
        raise ValueError("checkpoint size does not match sidecar shapes")
    for mod_name, mod in policy._named_modules():
        state = {
            name[len(mod_name) + 1:]: t
            for name, t in tensors.items()
            if name.startswith(mod_name + ".")
        }
        mod.load_state_dict(state)
    with torch.no_grad():
        policy.log_alpha.copy_(tensors["log_alpha"])
    policy.lam = float(sidecar["lambda"])
    return policy


# ---------------------------------------------------------------------------
# Rollouts and training


def rollout(policy: LagrangianPolicy, env, phi: Formula,
            deterministic: bool = False) -> Trajectory:
    s = env.reset()
    q = policy.dfa.reset(s)
    states, actions, rewards = [s], [], []
    done = False
    while not done:
        a = policy.act(s, q, deterministic)
        s, r, done = env.step(a)
        q = product_step(policy.dfa, q, s)
        states.append(s)
        actions.append(a)
        rewards.append(r)
    return score_trajectory(states, actions, rewards, phi, policy.dfa, policy.cfg)


def train_policy(env, phi: Formula, warm_start: list[Trajectory],
                 cfg: CrlConfig, callback=None) -> LagrangianPolicy:
    """Off-policy constrained training; returns the trained policy.

    Warm-start trajectories are re-scored under phi and inserted only
    when zero-violation under it.  callback(step, losses), when given,
    is invoked after each gradient update.
    """
    aps = collect_aps(phi)
    if aps and max(ap.dim for ap in aps) >= env.state_dim:
        raise ValueError("constraint references dimensions beyond the env state")
    torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    dfa = to_dfa(phi)
    policy = LagrangianPolicy(env.state_dim, env.action_dim, env.action_limit,
                              dfa, phi, cfg)
    buffer = ReplayBuffer(cfg.capacity)
    for tr in warm_start:
        scored = rescore(tr, phi, dfa, cfg)
        if not scored.violation:
            buffer.insert(scored)

    s = env.reset()
    q = dfa.reset(s)
    states, actions, rewards = [s], [], []
    updates = 0
    for step in range(cfg.steps):
        if step < cfg.start_steps:
            a = rng.uniform(-env.action_limit, env.action_limit, size=env.action_dim)
        else:
            a = policy.act(s, q)
        s, r, done = env.step(a)
        q = product_step(dfa, q, s)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        if done:
            buffer.insert(score_trajectory(states, actions, rewards, phi, dfa, cfg))
            s = env.reset()
            q = dfa.reset(s)
            states, actions, rewards = [s], [], []
        ready = step >= cfg.start_steps and buffer.total_steps >= cfg.batch_size
        if ready and step % cfg.update_every == 0:
            batch = buffer.sample(cfg.batch_size, rng, dfa.num_states)
            losses = policy.update(batch, updates)
            updates += 1
            if callback is not None:
                callback(step, losses)
    return policy


def sample_zero_violation(policy: LagrangianPolicy, env, phi: Formula, n: int,
                          attempt_cap: int = 50) -> tuple[list[Trajectory], int]:
    """Rollouts filtered to nonnegative robustness.  Returns (kept,
    attempts); may return fewer than n when the cap (attempt_cap * n
    rollouts) is hit."""
    kept: list[Trajectory] = []
    attempts = 0
    while len(kept) < n and attempts < attempt_cap * n:
        tr = rollout(policy, env, phi)
        attempts += 1
        if tr.rho >= 0:
            kept.append(tr)
    return kept, attempts


@dataclass(frozen=True)
class Metrics:
    vr: float   # violation rate, percent
    rew: float  # mean episode return
    tr: float   # mean truncated negative robustness


def metrics_from(rhos, returns) -> Metrics:
    rhos = np.asarray(rhos, dtype=float)
    return Metrics(
        vr=100.0 * float(np.mean(rhos < 0)),
        rew=float(np.mean(np.asarray(returns, dtype=float))),
        tr=float(np.mean(np.maximum(-rhos, 0.0))),
    )


def evaluate_policy(policy: LagrangianPolicy, envs, phi_gt: Formula,
                    n: int = 20, deterministic: bool = False) -> Metrics:
    """VR/REW/TR over n rollouts per environment."""
    if not isinstance(envs, (list, tuple)):
        envs = [envs]
    rhos, rets = [], []
    for env in envs:
        for _ in range(n):
            tr = rollout(policy, env, phi_gt, deterministic)
            rhos.append(tr.rho)
            rets.append(tr.episode_return)
    return metrics_from(rhos, rets)
