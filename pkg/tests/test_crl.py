import numpy as np
import pytest
import torch

from tlcl.automaton import to_dfa
from tlcl.crl import (
    CrlConfig,
    DivergenceError,
    LagrangianPolicy,
    Metrics,
    ReplayBuffer,
    Trajectory,
    config_hash,
    dense_cost,
    evaluate_policy,
    load_policy,
    load_trajectories,
    metrics_from,
    product_step,
    redistribute,
    rescore,
    rollout,
    sample_zero_violation,
    save_policy,
    save_trajectories,
    score_trajectory,
    train_policy,
)
from tlcl.formulas import Top, parse_formula, robustness
from tlcl.nav import EnvSpec, NavEnv, Region


def small_env(horizon=10):
    return NavEnv(
        EnvSpec(
            side=1.0,
            horizon=horizon,
            start=(0.2, 0.2),
            goal=(0.8, 0.8),
            regions=(Region("red", (0.5, 0.5), 0.1),),
        )
    )


def quick_cfg(**kw):
    base = dict(steps=600, start_steps=100, batch_size=64, update_every=4,
                capacity=200, seed=0)
    base.update(kw)
    return CrlConfig(**base)


def make_traj(rho_state, t=5, cost=None, cfg=None, phi=None):
    """Constant-state trajectory whose robustness under G(s0>0) is rho_state."""
    phi = phi or parse_formula("G(s0 > 0)")
    cfg = cfg or CrlConfig()
    states = np.full((t + 1, 1), float(rho_state))
    actions = np.zeros((t, 1))
    rewards = np.ones(t)
    tr = score_trajectory(states, actions, rewards, phi, to_dfa(phi), cfg)
    if cost is not None:
        tr.traj_cost = cost
    return tr


# ---------------------------------------------------------------------------
# Config


def test_config_validation():
    with pytest.raises(ValueError):
        CrlConfig(alpha=1.5)
    with pytest.raises(ValueError):
        CrlConfig(upsilon=0.0)
    with pytest.raises(ValueError):
        CrlConfig(epsilon=1.0)


def test_threshold():
    assert CrlConfig().threshold == pytest.approx(0.5 * 0.5 / 10)
    assert CrlConfig(alpha=0.0).threshold == 0.0
    assert CrlConfig(epsilon=0.25, alpha=0.8, n_traj=4).threshold == pytest.approx(0.05)


def test_config_hash_sensitivity():
    assert config_hash(CrlConfig()) == config_hash(CrlConfig())
    assert config_hash(CrlConfig()) != config_hash(CrlConfig(seed=1))


# ---------------------------------------------------------------------------
# Cost


def test_dense_cost_examples():
    phi = parse_formula("G(s0 > 0)")
    assert dense_cost([[0.3], [0.5]], phi, 0.5, 1.0) == 0.0
    assert dense_cost([[-0.2]], phi, 0.5, 1.0) == pytest.approx(0.6)
    assert dense_cost([[-10.0]], phi, 0.5, 1.0) == pytest.approx(1.0)


def test_dense_cost_bounds_property(rng):
    phi = parse_formula("G(s0 > 0) & F(s1 < 0.5)")
    for _ in range(200):
        states = rng.uniform(-3, 3, size=(rng.integers(1, 9), 2))
        c = dense_cost(states, phi, 0.5, 1.0)
        assert 0.0 <= c <= 1.0
        if robustness(states, phi) >= 0:
            assert c == 0.0


def test_dense_cost_alpha_zero_is_pure_clipped_term(rng):
    phi = parse_formula("G(s0 > 0)")
    for _ in range(50):
        states = rng.uniform(-2, 2, size=(5, 1))
        rho = robustness(states, phi)
        c = dense_cost(states, phi, 0.0, 1.0)
        assert c == pytest.approx(float(np.clip(-rho, 0.0, 1.0)))


# ---------------------------------------------------------------------------
# Trajectory


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((2, 1)), np.zeros(3))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((2, 1)), np.zeros(2),
                   dfa_states=np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((2, 1)), np.zeros(2), traj_cost=1.5)


def test_score_trajectory_dfa_bookkeeping():
    phi = parse_formula("G(s0 > 0.3) & F(s1 < 0.2)")
    dfa = to_dfa(phi)
    cfg = CrlConfig()
    rng = np.random.default_rng(3)
    states = rng.uniform(0, 1, size=(8, 2))
    tr = score_trajectory(states, np.zeros((7, 1)), np.zeros(7), phi, dfa, cfg)
    q = dfa.reset(states[0])
    replay = [q]
    for s in states[1:]:
        q = product_step(dfa, q, s)
        replay.append(q)
    assert np.array_equal(tr.dfa_states, replay)
    assert tr.rho == pytest.approx(robustness(states, phi))
    assert tr.traj_cost == pytest.approx(dense_cost(states, phi, cfg.alpha, cfg.upsilon))
    assert tr.violation == (tr.rho < 0)


def test_rescore_under_new_constraint():
    cfg = CrlConfig()
    tr = make_traj(0.5)
    assert not tr.violation
    phi2 = parse_formula("G(s0 < 0)")
    again = rescore(tr, phi2, to_dfa(phi2), cfg)
    assert again.violation
    assert again.rho == pytest.approx(-0.5)
    assert np.array_equal(again.states, tr.states)


def test_trajectory_jsonl_roundtrip(tmp_path):
    phi = parse_formula("G(s0 > 0)")
    trs = [make_traj(0.4, t=4), make_traj(-0.7, t=6)]
    trs[0].meta["layout"] = "train"
    path = tmp_path / "trajs.jsonl"
    save_trajectories(path, trs)
    back = load_trajectories(path)
    assert len(back) == 2
    for a, b in zip(trs, back):
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.dfa_states, b.dfa_states)
        assert a.rho == b.rho
        assert a.traj_cost == b.traj_cost
        assert a.violation == b.violation
    assert back[0].meta["layout"] == "train"


# ---------------------------------------------------------------------------
# Replay and redistribution


def test_redistribute_uniform_spread():
    buf = ReplayBuffer(10)
    tr = make_traj(-0.8, t=5)
    buf.insert(tr)
    assert tr.traj_cost == pytest.approx(0.9)
    costs = [
        redistribute(buf, (tr.states[t], int(tr.dfa_states[t]), tr.actions[t]))
        for t in range(5)
    ]
    assert costs == [pytest.approx(0.9)] * 5
    assert np.mean(costs) == pytest.approx(tr.traj_cost)


def test_redistribute_zero_violation_and_isolation():
    buf = ReplayBuffer(10)
    good = make_traj(0.5, t=4)
    bad = make_traj(-2.0, t=4)
    buf.insert(good)
    buf.insert(bad)
    assert redistribute(buf, (good.states[2], int(good.dfa_states[2]), good.actions[2])) == 0.0
    assert redistribute(buf, (bad.states[2], int(bad.dfa_states[2]), bad.actions[2])) == 1.0


def test_redistribute_step_not_found():
    buf = ReplayBuffer(4)
    buf.insert(make_traj(0.5))
    with pytest.raises(KeyError):
        redistribute(buf, (np.array([99.0]), 0, np.array([0.0])))


def test_buffer_ring_eviction():
    buf = ReplayBuffer(2)
    a, b, c = make_traj(0.1), make_traj(0.2), make_traj(0.3)
    buf.insert(a)
    buf.insert(b)
    assert len(buf) == 2
    buf.insert(c)  # evicts the oldest
    assert len(buf) == 2
    with pytest.raises(KeyError):
        buf.trajectory_of((a.states[0], int(a.dfa_states[0]), a.actions[0]))
    assert buf.trajectory_of((c.states[0], int(c.dfa_states[0]), c.actions[0])) is c


def test_buffer_requires_dfa_states():
    buf = ReplayBuffer(2)
    with pytest.raises(ValueError):
        buf.insert(Trajectory(np.zeros((3, 1)), np.zeros((2, 1)), np.zeros(2)))


def test_buffer_sample_costs_match_redistribution():
    buf = ReplayBuffer(8)
    buf.insert(make_traj(0.5, t=6))
    buf.insert(make_traj(-2.0, t=6))
    batch = buf.sample(64, np.random.default_rng(0), num_q=2)
    assert batch["obs"].shape == (64, 3)  # state dim 1 + one-hot 2
    assert batch["act"].shape == (64, 1)
    costs = set(np.round(batch["cost"].numpy(), 6).tolist())
    assert costs <= {0.0, 1.0}
    assert len(costs) == 2  # both trajectories sampled


# ---------------------------------------------------------------------------
# Metrics


def test_metrics_arithmetic():
    m = metrics_from([1.0, -2.0], [3.0, 5.0])
    assert m.vr == pytest.approx(50.0)
    assert m.tr == pytest.approx(1.0)
    assert m.rew == pytest.approx(4.0)
    clean = metrics_from([0.5, 0.1], [1.0, 1.0])
    assert clean.vr == 0.0 and clean.tr == 0.0


# ---------------------------------------------------------------------------
# Training


def test_train_policy_rejects_dim_mismatch():
    env = small_env()
    phi = parse_formula("G(s99 > 0)")
    with pytest.raises(ValueError):
        train_policy(env, phi, [], quick_cfg(steps=10))


def test_lambda_stays_zero_under_top():
    env = small_env()
    policy = train_policy(env, Top(), [], quick_cfg())
    assert policy.lam == 0.0


def test_lambda_increases_under_impossible_constraint():
    env = small_env()
    phi = parse_formula("G(s0 < -1000000)")  # never satisfiable: positions >= 0
    lams = []
    policy = train_policy(env, phi, [], quick_cfg(),
                          callback=lambda step, losses: lams.append(losses["lam"]))
    assert policy.lam > 0.0
    # every cost is 1 > d, so each update strictly increases lambda
    assert all(b > a for a, b in zip(lams, lams[1:]))


def test_train_policy_deterministic_given_seed():
    env = small_env()
    phi = parse_formula("G(s0 > -1)")
    p1 = train_policy(small_env(), phi, [], quick_cfg(steps=300))
    p2 = train_policy(small_env(), phi, [], quick_cfg(steps=300))
    probe = env.reset()
    a1 = p1.act(probe, 0, deterministic=True)
    a2 = p2.act(probe, 0, deterministic=True)
    assert np.array_equal(a1, a2)


def test_warm_start_filtering_keeps_training_running():
    env = small_env()
    phi = parse_formula("G(s0 > -1)")
    good = rollout(train_policy(env, phi, [], quick_cfg(steps=120)), env, phi)
    bad = make_traj(-1.0, t=env.horizon)
    # mixing in a violating warm start must not break training
    policy = train_policy(env, phi, [good, bad], quick_cfg(steps=200))
    assert policy.lam >= 0.0


def test_divergence_guard():
    class NanEnv:
        state_dim = 2
        action_dim = 2
        action_limit = 0.05
        horizon = 5

        def __init__(self):
            self._t = 0

        def reset(self):
            self._t = 0
            return np.zeros(2)

        def step(self, a):
            self._t += 1
            return np.zeros(2), float("nan"), self._t >= 5

    with pytest.raises(DivergenceError):
        train_policy(NanEnv(), Top(), [], quick_cfg(steps=300, start_steps=50,
                                                    batch_size=32, update_every=1))


# ---------------------------------------------------------------------------
# Rollouts, filtering, eval


def test_rollout_structure():
    env = small_env()
    phi = parse_formula("G(s0 > -1)")
    policy = train_policy(env, phi, [], quick_cfg(steps=150))
    tr = rollout(policy, env, phi)
    assert len(tr) == env.horizon
    assert tr.dfa_states is not None and len(tr.dfa_states) == env.horizon + 1
    assert np.all(np.abs(tr.actions) <= env.action_limit + 1e-12)


def test_sample_zero_violation_top_and_impossible():
    env = small_env()
    policy = train_policy(env, Top(), [], quick_cfg(steps=150))
    kept, attempts = sample_zero_violation(policy, env, Top(), 3)
    assert len(kept) == 3 and attempts == 3
    assert all(not t.violation for t in kept)
    phi = parse_formula("G(s0 < -1000000)")
    kept, attempts = sample_zero_violation(policy, env, phi, 2, attempt_cap=4)
    assert kept == [] and attempts == 8


def test_evaluate_policy_runs():
    env = small_env()
    phi = parse_formula("G(s0 > -1)")
    policy = train_policy(env, phi, [], quick_cfg(steps=150))
    m = evaluate_policy(policy, [env, small_env()], phi, n=3)
    assert isinstance(m, Metrics)
    assert m.vr == 0.0 and m.tr == 0.0  # constraint trivially satisfied


# ---------------------------------------------------------------------------
# Checkpoints


def test_checkpoint_roundtrip(tmp_path):
    env = small_env()
    phi = parse_formula("G(s0 > 0.1) & F(s1 < 0.9)")
    policy = train_policy(env, phi, [], quick_cfg(steps=200))
    policy.lam = 0.37
    path = tmp_path / "policy.ckpt"
    save_policy(policy, path)
    again = load_policy(path)
    assert again.lam == pytest.approx(0.37)
    assert str(again.phi) == str(policy.phi)
    assert again.dfa.num_states == policy.dfa.num_states
    probe = env.reset()
    for q in range(policy.dfa.num_states):
        assert np.array_equal(
            policy.act(probe, q, deterministic=True),
            again.act(probe, q, deterministic=True),
        )
    assert again.log_alpha.item() == pytest.approx(policy.log_alpha.item())


def test_checkpoint_size_mismatch_detected(tmp_path):
    env = small_env()
    policy = train_policy(env, Top(), [], quick_cfg(steps=120))
    path = tmp_path / "p.ckpt"
    save_policy(policy, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        load_policy(path)
