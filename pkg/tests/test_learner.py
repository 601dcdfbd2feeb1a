"""A2C losses (with finite-difference checks), optimizer, rollouts, PBT."""

import math

import numpy as np
import pytest

from hanalab import hanabi, learner, matrix_game, nets, pubmdp
from hanalab.beliefs import BeliefConfig
from hanalab.hanabi import GameConfig
from hanalab.learner import (
    Member, OptState, TrainConfig, a2c_losses, assemble_batch, baseline_terms,
    cf_pg_terms, clip_grads, discounted_returns, entropy_terms, eval_matrix,
    init_optimizer, optimizer_step, pbt_lite_evolve, pg_terms, rollout_hanabi,
    rollout_matrix, train_hanabi, train_matrix,
)

from helpers import fd_grad, rel_err

MINI23 = GameConfig(n_color=2, n_rank=3, n_players=2, hand_size=2)
BCFG = BeliefConfig(iterations=40, exhaustive_samples=True)
SMALL = TrainConfig(batch_size=4, hidden_sizes=(8,), population_size=1,
                    grad_clip=None)


def matrix_batch(cf=False, seed=0, n_eps=3):
    payoff, _ = matrix_game.load_fixture()
    cfg = TrainConfig(batch_size=n_eps, hidden_sizes=(8,), cf_gradients=cf,
                      population_size=1)
    params = learner.init_matrix_params(cfg, seed)
    trajs = []
    for i in range(n_eps):
        pair, _ = rollout_matrix(payoff, params, cfg,
                                 pubmdp.derive_seed(seed, i), "bad")
        trajs.extend(pair)
    return params, assemble_batch(trajs, cfg.gamma), cfg


# -- plumbing -----------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd")
    with pytest.raises(ValueError):
        TrainConfig(entropy_weight=-0.1)


def test_discounted_returns():
    r = np.array([1.0, 0.0, 2.0])
    g = discounted_returns(r, 0.5)
    np.testing.assert_allclose(g, [1 + 0.25 * 2, 0.5 * 2, 2.0])


def test_assemble_batch_shapes():
    params, batch, _ = matrix_batch(cf=True)
    n = 3 * 2 * learner.MATRIX_HORIZON
    assert batch["x_policy"].shape[0] == n
    assert batch["cf_x"].shape[:2] == (n, 2)
    assert batch["mask"].sum() == 3 * 2   # one decision per agent per episode


# -- finite-difference gradient checks (small nets, fixed advantages) ---------

def test_fd_pg_loss():
    params, batch, cfg = matrix_batch(seed=1)
    assert nets.n_params(params) <= 200
    adv = learner.advantages(params, batch)
    loss, grads = pg_terms(params, batch, adv, cfg.inv_temp)
    fd = fd_grad(lambda p: pg_terms(p, batch, adv, cfg.inv_temp)[0], params)
    assert rel_err(nets.pack(grads), fd) < 1e-4


def test_fd_baseline_loss():
    params, batch, _ = matrix_batch(seed=2)
    loss, grads = baseline_terms(params, batch)
    fd = fd_grad(lambda p: baseline_terms(p, batch)[0], params)
    assert rel_err(nets.pack(grads), fd) < 1e-4


def test_fd_entropy():
    params, batch, cfg = matrix_batch(seed=3)
    value, grads = entropy_terms(params, batch, cfg.inv_temp)
    fd = fd_grad(lambda p: entropy_terms(p, batch, cfg.inv_temp)[0], params)
    assert rel_err(nets.pack(grads), fd) < 1e-4


def test_fd_cf_loss():
    params, batch, cfg = matrix_batch(cf=True, seed=4)
    adv = learner.advantages(params, batch)
    loss, grads = cf_pg_terms(params, batch, adv, cfg.inv_temp)
    fd = fd_grad(lambda p: cf_pg_terms(p, batch, adv, cfg.inv_temp)[0], params)
    assert rel_err(nets.pack(grads), fd) < 1e-4


def test_fd_total_loss_with_fixed_advantage():
    # combined gradient matches FD when the advantage and the pg/baseline
    # split are reproduced exactly (baseline contributes through its own term)
    params, batch, cfg = matrix_batch(seed=5)
    adv = learner.advantages(params, batch)

    def total(p):
        pg, _ = pg_terms(p, batch, adv, cfg.inv_temp)
        bl, _ = baseline_terms(p, batch)
        ent, _ = entropy_terms(p, batch, cfg.inv_temp)
        return pg + cfg.baseline_weight * bl - cfg.entropy_weight * ent

    report = a2c_losses(params, batch, cfg)
    fd = fd_grad(total, params)
    assert rel_err(nets.pack(report.grads), fd) < 1e-4


# -- loss semantics ------------------------------------------------------------

def test_zero_advantage_zeroes_pg():
    params, batch, cfg = matrix_batch(seed=6)
    loss, grads = pg_terms(params, batch, np.zeros_like(batch["returns"]),
                           cfg.inv_temp)
    assert loss == 0.0
    assert all((g == 0).all() for g in grads.values())


def test_uniform_policy_entropy_is_log_n():
    params, batch, cfg = matrix_batch(seed=7)
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    ent, _ = entropy_terms(zero, batch, cfg.inv_temp)
    assert ent == pytest.approx(math.log(3), abs=1e-12)


def test_masked_rows_contribute_nothing():
    params, batch, cfg = matrix_batch(seed=8)
    report = a2c_losses(params, batch, cfg)
    vandalised = {k: v.copy() for k, v in batch.items()}
    idle = batch["mask"] == 0.0
    vandalised["x_policy"][idle] += 3.0
    vandalised["x_value"][idle] -= 2.0
    vandalised["action"][idle] = 2
    report2 = a2c_losses(params, vandalised, cfg)
    assert report2.pg == report.pg
    assert report2.baseline == report.baseline
    assert report2.entropy == report.entropy
    for k in report.grads:
        np.testing.assert_array_equal(report.grads[k], report2.grads[k])


def test_cf_single_branch_equals_standard_pg():
    params, batch, cfg = matrix_batch(cf=True, seed=9)
    adv = learner.advantages(params, batch)
    solo = {k: (v.copy() if hasattr(v, "copy") else v) for k, v in batch.items()}
    # keep only the branch that was actually played, at the played observation
    solo["cf_x"] = batch["x_policy"][:, None, :]
    solo["cf_action"] = batch["action"][:, None]
    solo["cf_mask"] = np.ones((batch["mask"].size, 1))
    cf_loss, cf_grads = cf_pg_terms(params, solo, adv, cfg.inv_temp)
    pg_loss, pg_grads = pg_terms(params, batch, adv, cfg.inv_temp)
    assert cf_loss == pytest.approx(pg_loss, rel=1e-12)
    for k in pg_grads:
        np.testing.assert_allclose(cf_grads[k], pg_grads[k], atol=1e-12)


def test_non_finite_loss_halts():
    params, batch, cfg = matrix_batch(seed=10)
    with np.errstate(invalid="ignore"):
        params = {k: v * np.inf for k, v in params.items()}
        with pytest.raises(RuntimeError):
            a2c_losses(params, batch, cfg)


# -- optimizer ------------------------------------------------------------------

def test_zero_grads_leave_params():
    cfg = TrainConfig(population_size=1)
    params = nets.init_params([4, 3, 3], seed=0)
    state = init_optimizer(params, cfg)
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    out = optimizer_step(params, zero, state, cfg)
    for k in params:
        np.testing.assert_array_equal(out[k], params[k])


def test_rmsprop_accumulator_shrinks_large_steps():
    cfg = TrainConfig(population_size=1, grad_clip=None, learning_rate=1e-3)
    params = {"W0": np.zeros((2, 2)), "b0": np.zeros(2)}
    state = init_optimizer(params, cfg)
    g = {"W0": np.full((2, 2), 10.0), "b0": np.full(2, 10.0)}
    p1 = optimizer_step(params, g, state, cfg)
    p2 = optimizer_step(p1, g, state, cfg)
    second = np.abs(p2["W0"] - p1["W0"])
    assert (second < cfg.learning_rate * 10.0).all()


def test_nonfinite_grads_skipped():
    cfg = TrainConfig(population_size=1)
    params = nets.init_params([3, 2, 2], seed=1)
    state = init_optimizer(params, cfg)
    bad = {k: np.full_like(v, np.nan) for k, v in params.items()}
    out = optimizer_step(params, bad, state, cfg)
    assert state.skipped == 1 and state.step == 0
    for k in params:
        np.testing.assert_array_equal(out[k], params[k])


def test_clip_grads_global_norm():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([12.0])}
    clipped, norm = clip_grads(grads, 6.5)
    assert norm == pytest.approx(13.0)
    total = np.sqrt(sum(float((g * g).sum()) for g in clipped.values()))
    assert total == pytest.approx(6.5)
    same, norm2 = clip_grads(grads, 100.0)
    assert norm2 == pytest.approx(13.0)
    np.testing.assert_array_equal(same["a"], grads["a"])


def test_adam_bias_correction_first_step():
    cfg = TrainConfig(population_size=1, optimizer="adam", grad_clip=None,
                      learning_rate=0.01)
    params = {"W0": np.zeros((1, 2)), "b0": np.zeros(2)}
    state = init_optimizer(params, cfg)
    g = {"W0": np.full((1, 2), 0.3), "b0": np.full(2, 0.3)}
    out = optimizer_step(params, g, state, cfg)
    # with bias correction the first step is ~lr regardless of g's scale
    expect = -cfg.learning_rate * 0.3 / (0.3 + cfg.adam_eps)
    np.testing.assert_allclose(out["W0"], expect, rtol=1e-6)


# -- matrix rollouts ------------------------------------------------------------

def test_rollout_matrix_deterministic():
    payoff, _ = matrix_game.load_fixture()
    cfg = TrainConfig(hidden_sizes=(8,), population_size=1)
    params = learner.init_matrix_params(cfg, 0)
    a, ia = rollout_matrix(payoff, params, cfg, 123, "bad")
    b, ib = rollout_matrix(payoff, params, cfg, 123, "bad")
    assert [t.digest() for t in a] == [t.digest() for t in b]
    assert ia == ib


def test_rollout_matrix_reward_placement():
    payoff, _ = matrix_game.load_fixture()
    cfg = TrainConfig(hidden_sizes=(8,), population_size=1)
    params = learner.init_matrix_params(cfg, 1)
    trajs, info = rollout_matrix(payoff, params, cfg, 7, "bad")
    for tr in trajs:
        assert tr.reward[0] == 0.0
        assert tr.reward[1] == info["reward"]
    assert trajs[0].mask.tolist() == [1.0, 0.0]
    assert trajs[1].mask.tolist() == [0.0, 1.0]


def test_rollout_matrix_pg_mode_has_no_belief_sections():
    payoff, _ = matrix_game.load_fixture()
    cfg = TrainConfig(hidden_sizes=(8,), population_size=1)
    params = learner.init_matrix_params(cfg, 2, use_beliefs=False)
    trajs, _ = rollout_matrix(payoff, params, cfg, 9, "pg")
    assert trajs[0].x_policy.shape[1] == pubmdp.matrix_input_size(False)
    assert trajs[0].cf_x is None


def test_rollout_matrix_rejects_unknown_mode():
    payoff, _ = matrix_game.load_fixture()
    cfg = TrainConfig(hidden_sizes=(8,), population_size=1)
    params = learner.init_matrix_params(cfg, 0)
    with pytest.raises(ValueError):
        rollout_matrix(payoff, params, cfg, 0, "q-learning")


# -- Hanabi rollouts -------------------------------------------------------------

def hanabi_setup(seed=0):
    cfg = TrainConfig(batch_size=2, hidden_sizes=(16,), population_size=1)
    params = learner.init_hanabi_params(MINI23, cfg, seed)
    return cfg, params


def test_rollout_hanabi_deterministic():
    cfg, params = hanabi_setup()
    a, ia = rollout_hanabi(MINI23, params, BCFG, cfg, 42)
    b, ib = rollout_hanabi(MINI23, params, BCFG, cfg, 42)
    assert [t.digest() for t in a] == [t.digest() for t in b]
    assert ia["score"] == ib["score"]


def test_rollout_hanabi_rewards_sum_to_score():
    cfg, params = hanabi_setup(1)
    for seed in range(5):
        trajs, info = rollout_hanabi(MINI23, params, BCFG, cfg, seed)
        assert info["terminal"]
        assert trajs[0].reward.sum() == pytest.approx(info["score"])
        np.testing.assert_array_equal(trajs[0].reward, trajs[1].reward)


def test_rollout_hanabi_masks_partition_turns():
    cfg, params = hanabi_setup(2)
    trajs, info = rollout_hanabi(MINI23, params, BCFG, cfg, 3)
    m0, m1 = trajs[0].mask, trajs[1].mask
    assert (m0 * m1 == 0).all()
    assert (m0 + m1).sum() == info["length"]
    # players alternate seats from turn 0
    assert m0[0] == 1.0 and m1[1] == 1.0


def test_rollout_hanabi_actions_were_legal():
    cfg, params = hanabi_setup(3)
    trajs, _ = rollout_hanabi(MINI23, params, BCFG, cfg, 11)
    for tr in trajs:
        rows = np.flatnonzero(tr.mask)
        assert all(tr.legal[t, tr.action[t]] for t in rows)


def test_rollout_hanabi_policy_blind_to_own_hand():
    from helpers import card, make_state_with_hands
    # states identical except for the actor's own first card
    cfg, params = hanabi_setup(4)
    base = [[card(MINI23, 0, 1), card(MINI23, 0, 2)],
            [card(MINI23, 1, 1), card(MINI23, 1, 2)]]
    alt = [[card(MINI23, 1, 3), card(MINI23, 0, 2)], base[1]]
    outs = []
    for hands in (base, alt):
        state = make_state_with_hands(MINI23, hands, seed=0)
        feats = hanabi.public_features(state)
        tr = pubmdp.initial_beliefs(MINI23, feats, BCFG)
        pub = pubmdp.encode_public_input(MINI23, feats, tr.v2, 0)
        codec = pubmdp.HanabiObsCodec(MINI23, state, 0)
        pp = pubmdp.sample_partial_policy(params, pub,
                                          pubmdp.xi_schedule(5, 0), 1.0, codec)
        h = np.array(state.hands, dtype=np.int16)
        outs.append(int(pp.act_on_hands(h[None, :])[0]))
    assert outs[0] == outs[1]


# -- training drivers -------------------------------------------------------------

def test_train_matrix_deterministic_and_logged():
    payoff, _ = matrix_game.load_fixture()
    cfg = TrainConfig(batch_size=4, hidden_sizes=(8,), population_size=1)
    r1 = train_matrix(payoff, cfg, run_seed=5, n_updates=3, mode="bad",
                      log_every=1)
    r2 = train_matrix(payoff, cfg, run_seed=5, n_updates=3, mode="bad",
                      log_every=1)
    np.testing.assert_array_equal(nets.pack(r1["params"]),
                                  nets.pack(r2["params"]))
    assert len(r1["metrics"]) == 3
    assert r1["env_steps"] == 3 * 4 * 2


def test_eval_matrix_runs():
    payoff, _ = matrix_game.load_fixture()
    cfg = TrainConfig(hidden_sizes=(8,), population_size=1)
    params = learner.init_matrix_params(cfg, 3)
    v = eval_matrix(payoff, params, cfg, "bad", n_games=50, seed=0)
    assert 0.0 <= v <= 10.0


def test_train_hanabi_smoke_and_rating_ema():
    cfg = TrainConfig(batch_size=2, hidden_sizes=(16,), population_size=1,
                      learning_rate=1e-3)
    out = train_hanabi(MINI23, BCFG, cfg, run_seed=0, n_updates=2,
                       variant="v2", log_every=1)
    assert out["env_steps"] > 0
    assert len(out["metrics"]) == 2
    first = out["metrics"][0]
    assert first["rating"] == pytest.approx(0.01 * first["mean_score"])
    assert np.isfinite(nets.pack(out["params"])).all()


def test_train_hanabi_respects_step_budget():
    cfg = TrainConfig(batch_size=2, hidden_sizes=(16,), population_size=1)
    out = train_hanabi(MINI23, BCFG, cfg, run_seed=1, n_updates=50,
                       variant="v0", max_env_steps=30, log_every=1)
    # stops at the first update boundary past the budget
    assert out["env_steps"] < 30 + 2 * learner.HANABI_HORIZON


# -- PBT -------------------------------------------------------------------------

def _member(rating, lr=1e-3, ew=0.05):
    params = {"W0": np.zeros((2, 3)), "b0": np.zeros(3)}
    cfg = TrainConfig(population_size=1)
    return Member(params=params, opt=init_optimizer(params, cfg), lr=lr,
                  entropy_weight=ew, rating=rating)


def test_pbt_no_copy_when_ratings_equal():
    cfg = TrainConfig(population_size=2)
    members = [_member(1.0), _member(1.0)]
    rng = np.random.default_rng(0)
    assert pbt_lite_evolve(members, rng, cfg) == []


def test_pbt_copy_on_clear_gap():
    cfg = TrainConfig(population_size=2)
    lo, hi = _member(0.2, lr=1e-3), _member(0.8, lr=2e-3)
    hi.params = {"W0": np.full((2, 3), 5.0), "b0": np.full(3, 5.0)}
    events = pbt_lite_evolve([lo, hi], np.random.default_rng(1), cfg)
    assert events == [(0, 1)]
    np.testing.assert_array_equal(lo.params["W0"], hi.params["W0"])
    assert lo.lr in (2e-3 * 0.8, 2e-3 * 1.25)
    assert lo.entropy_weight in (0.05 * 0.8, 0.05 * 1.25)
    # copies are independent buffers
    lo.params["W0"][0, 0] = -1.0
    assert hi.params["W0"][0, 0] == 5.0


def test_pbt_threshold_not_met():
    cfg = TrainConfig(population_size=2)
    members = [_member(0.5), _member(0.9)]   # gap 0.4 < 0.5
    assert pbt_lite_evolve(members, np.random.default_rng(2), cfg) == []
