import json

import numpy as np
import pytest

from tlcl.formulas import collect_aps, robustness
from tlcl.nav import (
    COLORS,
    EnvSpec,
    NAV_FEATURES,
    NavEnv,
    PEG_FEATURES,
    Region,
    WIPING_FEATURES,
    default_train_spec,
    gt_constraints,
    planted_nav_dataset,
    random_walk_rollout,
    randomize,
    region_features,
    waypoint_rollout,
)


def test_region_validation():
    with pytest.raises(ValueError):
        Region("purple", (0.5, 0.5), 0.1)
    with pytest.raises(ValueError):
        Region("red", (0.5, 0.5), 0.0)


def test_region_features_boundary_distance():
    spec = EnvSpec(
        side=1.0,
        horizon=10,
        start=(0.1, 0.1),
        goal=(0.9, 0.9),
        regions=(Region("red", (0.5, 0.5), 0.2),),
    )
    # 0.4 from center, radius 0.2: boundary distance 0.2
    f = region_features(np.array([0.1, 0.5]), spec)
    assert f[0] == pytest.approx(0.2)
    assert f[1] == pytest.approx(0.0)  # region due +x
    # inside the region: floored at zero
    f = region_features(np.array([0.45, 0.5]), spec)
    assert f[0] == 0.0


def test_region_features_sentinel_for_missing_color():
    spec = EnvSpec(
        side=1.0,
        horizon=10,
        start=(0.1, 0.1),
        goal=(0.9, 0.9),
        regions=(Region("red", (0.5, 0.5), 0.2),),
    )
    f = region_features(np.array([0.1, 0.1]), spec)
    # green and blue absent
    assert f[2] == pytest.approx(np.sqrt(2.0))
    assert f[3] == 0.0
    assert f[4] == pytest.approx(np.sqrt(2.0))
    assert f[5] == 0.0


def test_region_features_nearest_of_color():
    spec = EnvSpec(
        side=1.0,
        horizon=10,
        start=(0.0, 0.0),
        goal=(1.0, 1.0),
        regions=(
            Region("red", (0.5, 0.0), 0.1),
            Region("red", (0.0, 0.9), 0.1),
        ),
    )
    f = region_features(np.array([0.0, 0.0]), spec)
    assert f[0] == pytest.approx(0.4)


def test_env_step_clips_action_and_position():
    spec = default_train_spec()
    env = NavEnv(spec)
    s0 = env.reset()
    assert s0.shape == (10,)
    assert tuple(s0[:2]) == spec.start
    assert tuple(s0[2:4]) == spec.goal
    s1, _, _ = env.step([10.0, -10.0])
    step = s1[:2] - s0[:2]
    assert np.all(np.abs(step) <= env.action_limit + 1e-12)
    # drive into the wall: position stays inside the workspace
    for _ in range(50):
        s, _, done = env.step([-1.0, -1.0])
        if done:
            break
    assert np.all(s[:2] >= 0.0)


def test_env_horizon_and_reward():
    spec = default_train_spec()
    env = NavEnv(spec)
    env.reset()
    done = False
    n = 0
    while not done:
        _, r, done = env.step([0.0, 0.0])
        n += 1
        assert 0.0 < r <= 1.0
    assert n == spec.horizon
    env._pos = np.asarray(spec.goal, dtype=float)
    assert env.reward() == pytest.approx(1.0)


def test_spec_json_roundtrip():
    spec = default_train_spec()
    again = EnvSpec.from_json(spec.to_json())
    assert again == spec
    doc = json.loads(spec.to_json())
    assert set(doc) == {"side", "horizon", "start", "goal", "regions", "seed"}


def test_randomize_deterministic_and_kinds():
    a = randomize(3, "train")
    b = randomize(3, "train")
    assert a == b
    assert a.side == 1.0 and a.horizon == 25
    t = randomize(3, "test")
    assert t.side == 1.5 and t.horizon == 50
    assert t != a
    with pytest.raises(ValueError):
        randomize(0, "validation")


def test_randomize_layout_invariants():
    for seed in range(8):
        for kind in ("train", "test"):
            spec = randomize(seed, kind)
            start, goal = np.asarray(spec.start), np.asarray(spec.goal)
            assert np.hypot(*(goal - start)) >= 0.7 * spec.side
            assert {r.color for r in spec.regions} <= set(COLORS)
            for r in spec.regions:
                c = np.asarray(r.center)
                assert np.all(c - r.radius >= 0.0)
                assert np.all(c + r.radius <= spec.side)
                # start and goal stay clear of every region
                assert np.hypot(*(c - start)) >= r.radius + 0.17 * spec.side
                assert np.hypot(*(c - goal)) >= r.radius + 0.17 * spec.side


def test_gt_constraints_bind_their_feature_tables():
    gts = gt_constraints()
    assert set(gts) == {"nav1", "nav2", "wiping", "peg"}
    dims = {
        "nav1": set(NAV_FEATURES.values()),
        "nav2": set(NAV_FEATURES.values()),
        "wiping": set(WIPING_FEATURES.values()),
        "peg": set(PEG_FEATURES.values()),
    }
    for name, phi in gts.items():
        aps = collect_aps(phi)
        assert aps, name
        assert {ap.dim for ap in aps} <= dims[name]
    # evaluable on traces of the right width
    rng = np.random.default_rng(0)
    assert isinstance(robustness(rng.uniform(0, 2, (12, 9)), gts["wiping"]), float)
    assert isinstance(robustness(rng.uniform(0, 2, (12, 22)), gts["peg"]), float)


def test_default_layout_separates_routes():
    spec = default_train_spec()
    phi = gt_constraints()["nav1"]
    expert = waypoint_rollout(spec, [spec.start, (0.16, 0.68), spec.goal])
    diag = waypoint_rollout(spec, [spec.start, spec.goal])
    assert expert.shape == (spec.horizon + 1, 10)
    assert robustness(expert, phi) > 0.03
    assert robustness(diag, phi) < -0.1
    # the expert actually reaches the goal
    assert np.hypot(*(expert[-1, :2] - np.asarray(spec.goal))) < 1e-6


def test_waypoint_rollout_homes_on_final_waypoint_under_noise():
    spec = default_train_spec()
    rng = np.random.default_rng(1)
    tr = waypoint_rollout(spec, [spec.start, (0.16, 0.68), spec.goal], rng, noise=0.006)
    assert np.hypot(*(tr[-1, :2] - np.asarray(spec.goal))) < 0.05


def test_random_walk_rollout_shape_and_bounds():
    spec = default_train_spec()
    tr = random_walk_rollout(spec, np.random.default_rng(5))
    assert tr.shape == (spec.horizon + 1, 10)
    assert np.all(tr[:, :2] >= 0.0) and np.all(tr[:, :2] <= spec.side)


def test_planted_dataset_signs_and_determinism():
    experts, negs = planted_nav_dataset(6, 24, seed=11)
    phi = gt_constraints()["nav1"]
    assert len(experts) == 6 and len(negs) == 24
    assert all(robustness(t, phi) > 0 for t in experts)
    assert all(robustness(t, phi) < 0 for t in negs)
    again_e, again_n = planted_nav_dataset(6, 24, seed=11)
    assert all(np.array_equal(a, b) for a, b in zip(experts, again_e))
    assert all(np.array_equal(a, b) for a, b in zip(negs, again_n))


def test_planted_dataset_needs_both_clauses():
    # each clause alone leaves some negative unrejected
    from tlcl.formulas import parse_formula

    _, negs = planted_nav_dataset(4, 60, seed=2)
    red = parse_formula("G(pR_dist > 0.2)", NAV_FEATURES)
    until = parse_formula("pB_dist > 0.25 U pG_dist < 0.08", NAV_FEATURES)
    assert any(robustness(t, red) > 0 for t in negs)
    assert any(robustness(t, until) > 0 for t in negs)


def test_gen_expert_demos_binds_spec_hash():
    import hashlib

    from tlcl.crl import CrlConfig
    from tlcl.formulas import Top
    from tlcl.nav import gen_expert_demos

    spec = default_train_spec()
    cfg = CrlConfig(steps=300, start_steps=100, batch_size=32, n_traj=2)
    demos, partial = gen_expert_demos(spec, Top(), 3, crl_config=cfg)
    assert not partial and len(demos) == 3
    tag = hashlib.sha256(spec.to_json().encode()).hexdigest()
    assert all(t.meta["spec_sha256"] == tag for t in demos)
    assert all(t.rho > 0 for t in demos)
