"""2-D navigation CMDP with colored constraint regions.

The agent is a point in a square workspace applying bounded position
deltas.  The 10-d observation is (agent xy, goal xy, and polar features
of the nearest red/green/blue region): distances are to the region
boundary (center distance minus radius, floored at zero) so constraint
thresholds are radius-independent, and angles are world-frame bearings
from the agent, wrapped to (-pi, pi].

Ground-truth constraints for the two navigation variants live here, as
do the wiping/peg constraint texts (parse/compile fixtures; those
environments are not implemented).  Scripted rollout generators provide
deterministic expert demonstrations and stratified violating rollouts
for separation datasets; policy-based demonstration generation wraps the
CRL trainer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .formulas import Formula, parse_formula, robustness

NAV_FEATURES = {
    "x": 0,
    "y": 1,
    "gx": 2,
    "gy": 3,
    "pR_dist": 4,
    "pR_ang": 5,
    "pG_dist": 6,
    "pG_ang": 7,
    "pB_dist": 8,
    "pB_ang": 9,
}

# Wiping state: agent xy relative to start A and goal B, velocities,
# angular velocity, ground clearance, contact force (f_c in the
# constraint texts).
WIPING_FEATURES = {
    "Ax_Agt": 0,
    "Ay_Agt": 1,
    "Bx_Agt": 2,
    "By_Agt": 3,
    "vx_Agt": 4,
    "vy_Agt": 5,
    "w_Agt": 6,
    "d_g": 7,
    "f_c": 8,
}

# Peg-in-shallow-hole state layout (hole frame); angles in degrees.
PEG_FEATURES = {
    "x_grip": 0,
    "y_grip": 1,
    "theta_grip": 2,
    "vx_grip": 3,
    "vy_grip": 4,
    "vtheta_grip": 5,
    "x_peg": 6,
    "y_peg": 7,
    "theta_peg": 8,
    "vx_peg": 9,
    "vy_peg": 10,
    "vtheta_peg": 11,
    "x_grip_des": 12,
    "y_grip_des": 13,
    "theta_grip_des": 14,
    "d_jaw": 15,
    "vd_jaw": 16,
    "d_jaw_des": 17,
    "d_hole_peg": 18,
    "d_jaw_peg": 19,
    "cos_tilt": 20,
    "sin_tilt": 21,
}

COLORS = ("red", "green", "blue")

# Fraction of the workspace side an action may cover per step.
ACTION_FRAC = 0.05


@dataclass(frozen=True)
class Region:
    color: str
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.color not in COLORS:
            raise ValueError(f"unknown region color {self.color!r}")
        if self.radius <= 0:
            raise ValueError("region radius must be positive")


@dataclass(frozen=True)
class EnvSpec:
    """Serializable layout; everything an episode depends on."""

    side: float
    horizon: int
    start: tuple[float, float]
    goal: tuple[float, float]
    regions: tuple[Region, ...]
    seed: int = 0

    def to_json(self) -> str:
        doc = {
            "side": self.side,
            "horizon": self.horizon,
            "start": list(self.start),
            "goal": list(self.goal),
            "regions": [
                {"color": r.color, "center": list(r.center), "radius": r.radius}
                for r in self.regions
            ],
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "EnvSpec":
        doc = json.loads(text)
        return EnvSpec(
            side=float(doc["side"]),
            horizon=int(doc["horizon"]),
            start=tuple(doc["start"]),
            goal=tuple(doc["goal"]),
            regions=tuple(
                Region(r["color"], tuple(r["center"]), float(r["radius"]))
                for r in doc["regions"]
            ),
            seed=int(doc.get("seed", 0)),
        )


def region_features(pos: np.ndarray, spec: EnvSpec) -> np.ndarray:
    """(dist, ang) of the nearest region per color; missing colors get
    the workspace diagonal as distance and a zero bearing."""
    out = np.empty(6)
    sentinel = spec.side * np.sqrt(2.0)
    for ci, color in enumerate(COLORS):
        best_d, best_ang = sentinel, 0.0
        for r in spec.regions:
            if r.color != color:
                continue
            delta = np.asarray(r.center) - pos
            d = max(0.0, float(np.hypot(*delta)) - r.radius)
            if d < best_d:
                best_d = d
                best_ang = float(np.arctan2(delta[1], delta[0]))
        out[2 * ci] = best_d
        out[2 * ci + 1] = best_ang
    return out


class NavEnv:
    """Gym-style episodic environment over an EnvSpec."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.action_limit = ACTION_FRAC * spec.side
        self.state_dim = 10
        self.action_dim = 2
        self._pos = np.array(spec.start, dtype=float)
        self._t = 0

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def observe(self) -> np.ndarray:
        s = np.empty(self.state_dim)
        s[0:2] = self._pos
        s[2:4] = self.spec.goal
        s[4:10] = region_features(self._pos, self.spec)
        return s

    def reset(self) -> np.ndarray:
        self._pos = np.array(self.spec.start, dtype=float)
        self._t = 0
        return self.observe()

    def reward(self) -> float:
        dist = float(np.hypot(*(self._pos - np.asarray(self.spec.goal))))
        return 1.0 - np.tanh(5.0 * dist)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        a = np.clip(np.asarray(action, dtype=float), -self.action_limit, self.action_limit)
        self._pos = np.clip(self._pos + a, 0.0, self.spec.side)
        self._t += 1
        return self.observe(), self.reward(), self._t >= self.spec.horizon


def gt_constraints() -> dict[str, Formula]:
    """Ground-truth constraints keyed by task.

    nav1/nav2 are bound to the navigation feature indices; wiping and
    peg bind to their tasks' symbolic feature tables and exist as
    parse/compile fixtures only.
    """
    return {
        "nav1": parse_formula(
            "G(pR_dist > 0.2) & (pB_dist > 0.25 U pG_dist < 0.08)", NAV_FEATURES
        ),
        "nav2": parse_formula(
            "F(pR_dist < 0.06 & F(pG_dist < 0.05 & F(pB_dist < 0.04)))", NAV_FEATURES
        ),
        "wiping": parse_formula(
            "f_c < 0.05 U (G(f_c > 1.6) R (Ax_Agt > -0.1 & Ax_Agt < 0.1))",
            WIPING_FEATURES,
        ),
        "peg": parse_formula(
            "F(theta_peg > 34.88 & (theta_peg < 4.217 R d_jaw_peg < 0.0053)"
            " & G(d_hole_peg < 0.0072))",
            PEG_FEATURES,
        ),
    }


def default_train_spec() -> EnvSpec:
    """Hand-placed feasible layout for the nav1 task.

    Geometry constraints baked in: the straight start-goal line passes
    through the red margin; a green visit with blue clearance is
    reachable up the left side within the horizon; detour routes that
    skip green or graze blue stay red-safe, so no single-clause formula
    separates expert paths from them.
    """
    return EnvSpec(
        side=1.0,
        horizon=25,
        start=(0.16, 0.18),
        goal=(0.84, 0.90),
        regions=(
            Region("red", (0.56, 0.45), 0.10),
            Region("green", (0.16, 0.68), 0.04),
            Region("blue", (0.52, 0.10), 0.06),
        ),
        seed=0,
    )


def default_nav2_spec() -> EnvSpec:
    """Layout for the ordered-visit task: red, green, blue roughly on
    the start-goal diagonal so the full visit chain fits in T=25."""
    return EnvSpec(
        side=1.0,
        horizon=25,
        start=(0.15, 0.15),
        goal=(0.88, 0.88),
        regions=(
            Region("red", (0.35, 0.38), 0.07),
            Region("green", (0.62, 0.55), 0.06),
            Region("blue", (0.82, 0.78), 0.05),
        ),
        seed=0,
    )


def default_spec_for(task: str) -> EnvSpec:
    if task == "nav1":
        return default_train_spec()
    if task == "nav2":
        return default_nav2_spec()
    raise ValueError(f"unknown task {task!r}")


def randomize(seed: int, kind: str = "train") -> EnvSpec:
    """Random layout; test layouts use a 1.5x workspace and T=50."""
    if kind not in ("train", "test"):
        raise ValueError(f"kind must be 'train' or 'test', got {kind!r}")
    rng = np.random.default_rng(seed)
    side = 1.0 if kind == "train" else 1.5
    horizon = 25 if kind == "train" else 50
    m = 0.08 * side
    while True:
        start = rng.uniform(m, side - m, size=2)
        goal = rng.uniform(m, side - m, size=2)
        if np.hypot(*(goal - start)) >= 0.7 * side:
            break
    regions = []
    for color in COLORS:
        for _ in range(int(rng.integers(1, 3))):
            radius = float(rng.uniform(0.05, 0.12) * side)
            for _ in range(64):
                c = rng.uniform(m + radius, side - m - radius, size=2)
                if (
                    np.hypot(*(c - start)) >= radius + 0.18 * side
                    and np.hypot(*(c - goal)) >= radius + 0.18 * side
                ):
                    regions.append(Region(color, (float(c[0]), float(c[1])), radius))
                    break
    return EnvSpec(
        side=side,
        horizon=horizon,
        start=(float(start[0]), float(start[1])),
        goal=(float(goal[0]), float(goal[1])),
        regions=tuple(regions),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Scripted rollouts


def waypoint_rollout(
    spec: EnvSpec,
    waypoints: Sequence[Sequence[float]],
    rng: np.random.Generator | None = None,
    noise: float = 0.0,
) -> np.ndarray:
    """Follow waypoints under the action box; returns (T+1, 10) states.

    Intermediate waypoints count as reached within half an action step
    (exact arrival is unattainable under noise); the final waypoint is
    homed to for the rest of the episode.
    """
    env = NavEnv(spec)
    states = [env.reset()]
    target = 0
    tol = 0.5 * env.action_limit
    pos = np.array(spec.start, dtype=float)
    for _ in range(spec.horizon):
        while target < len(waypoints) - 1 and np.linalg.norm(
            np.asarray(waypoints[target]) - pos, np.inf
        ) <= tol:
            target += 1
        d = np.asarray(waypoints[target], dtype=float) - pos
        a = np.clip(d, -env.action_limit, env.action_limit)
        if rng is not None and noise > 0.0:
            a = a + rng.uniform(-noise, noise, size=2)
        s, _, _ = env.step(a)
        pos = s[0:2]
        states.append(s)
    return np.asarray(states)


def random_walk_rollout(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    env = NavEnv(spec)
    states = [env.reset()]
    limit = env.action_limit
    drift = rng.uniform(-0.4, 0.4, size=2) * limit
    for _ in range(spec.horizon):
        a = drift + rng.uniform(-limit, limit, size=2)
        s, _, _ = env.step(a)
        states.append(s)
    return np.asarray(states)


def _jitter(rng: np.random.Generator, point, scale=0.015):
    return tuple(np.asarray(point, dtype=float) + rng.uniform(-scale, scale, size=2))


def planted_nav_dataset(
    n_experts: int = 20,
    n_negatives: int = 200,
    seed: int = 0,
    spec: EnvSpec | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Rejection-sampled separation dataset on the nav1 training layout.

    Experts follow the green-first corridor and are kept only when they
    strictly satisfy the ground truth.  Negatives mix eight behavior
    classes (straight goal-seeking, blue-grazing detours, green-then-red
    paths at low and high altitude, goal runs that arc past green, far-
    side runs under red along the bottom wall, red-margin crossings at
    expert blue clearance, and random walks), each kept only when it
    strictly violates the ground truth.  The classes are chosen so that
    no single atom or basis-sized pair separates the sets: an
    exhaustive anneal over all basis trees on the selected feature
    subset tops out below fitness 1.0, so recovering a perfect
    separator requires both ground-truth clauses.
    """
    spec = spec or default_train_spec()
    phi = gt_constraints()["nav1"]
    rng = np.random.default_rng(seed)

    green = (0.16, 0.68)
    experts: list[np.ndarray] = []
    while len(experts) < n_experts:
        wps = [spec.start, _jitter(rng, green), _jitter(rng, spec.goal)]
        tr = waypoint_rollout(spec, wps, rng, noise=0.006)
        if robustness(tr, phi) > 0:
            experts.append(tr)

    makers: list[Callable[[], np.ndarray]] = [
        # straight to goal: through the red margin
        lambda: waypoint_rollout(spec, [spec.start, _jitter(rng, spec.goal)], rng, 0.006),
        # graze blue, then green: red-safe, kills green-only candidates
        lambda: waypoint_rollout(
            spec,
            [spec.start, _jitter(rng, (0.50, 0.12)), _jitter(rng, (0.16, 0.12)),
             _jitter(rng, (0.16, 0.60))],
            rng,
            0.006,
        ),
        # green first, then into red: kills until-only candidates
        lambda: waypoint_rollout(
            spec,
            [spec.start, _jitter(rng, green), _jitter(rng, (0.56, 0.45))],
            rng,
            0.006,
        ),
        # green, then climb above every expert altitude, then dive into
        # red: satisfies any reach-high-ground rule an expert satisfies,
        # so only the red-avoidance clause can reject it
        lambda: waypoint_rollout(
            spec,
            [spec.start, _jitter(rng, green), _jitter(rng, (0.30, 0.93)),
             _jitter(rng, (0.56, 0.45))],
            rng,
            0.006,
        ),
        # arc over green to the goal without touching it: the only
        # goal-reaching line that skips green, at the price of skimming
        # the red margin on the way up
        lambda: waypoint_rollout(
            spec,
            [spec.start, _jitter(rng, (0.35, 0.85)), _jitter(rng, spec.goal)],
            rng,
            0.006,
        ),
        # bottom-wall run under red and blue, then up the right wall
        # past red's latitude: reaches goal-level x and puts red and
        # blue behind-left, all at more red clearance than any expert
        # keeps, so red-safe reach-the-far-side rules cannot reject it
        lambda: waypoint_rollout(
            spec,
            [spec.start, _jitter(rng, (0.93, 0.03), 0.01),
             _jitter(rng, (0.95, 0.48), 0.01)],
            rng,
            0.006,
        ),
        # left wall up, then straight across the red top margin to
        # goal-level x: the whole run keeps expert-level blue clearance,
        # so blue-safe reach-the-far-side rules cannot reject it
        lambda: waypoint_rollout(
            spec,
            [spec.start, _jitter(rng, (0.16, 0.72), 0.01),
             _jitter(rng, (0.84, 0.72), 0.01)],
            rng,
            0.006,
        ),
        # aimless wandering: never reaches green
        lambda: random_walk_rollout(spec, rng),
    ]
    negatives: list[np.ndarray] = []
    i = 0
    while len(negatives) < n_negatives:
        tr = makers[i % len(makers)]()
        i += 1
        if robustness(tr, phi) < 0:
            negatives.append(tr)
    return experts, negatives


def gen_expert_demos(
    spec: EnvSpec,
    phi: Formula,
    n: int,
    crl_config=None,
    seed: int = 0,
    reward_quantile: float = 0.6,
    attempt_cap: int = 400,
):
    """Train a constrained policy on the layout, then rejection-sample
    demonstrations: strict constraint satisfaction plus episode reward at
    or above the given quantile of the policy's own rollouts.

    Returns (trajectories, partial_flag); the flag is set when the
    attempt cap was hit before n demos were collected.
    """
    from . import crl

    cfg = crl_config or crl.CrlConfig(seed=seed)
    env = NavEnv(spec)
    policy = crl.train_policy(env, phi, [], cfg)
    pool = [crl.rollout(policy, env, phi) for _ in range(max(2 * n, 40))]
    floor = float(np.quantile([t.episode_return for t in pool], reward_quantile))
    demos = [
        t for t in pool if t.rho > 0 and t.episode_return >= floor
    ]
    attempts = 0
    while len(demos) < n and attempts < attempt_cap:
        t = crl.rollout(policy, env, phi)
        if t.rho > 0 and t.episode_return >= floor:
            demos.append(t)
        attempts += 1
    demos = demos[:n]
    # bind each demo to the layout it was sampled on
    tag = hashlib.sha256(spec.to_json().encode()).hexdigest()
    for t in demos:
        t.meta["spec_sha256"] = tag
    return demos, len(demos) < n
