"""Synchronous advantage actor-critic for both environments.

One update = a batch of full episodes rolled out with the current parameters,
then a single gradient step. Each agent in an episode gets its own trajectory
(fixed length T, zero-padded after terminal); the loss mask marks only the
steps where that agent actually chose an action, so NoAction rows and padding
contribute exactly nothing to any loss term.

All losses are means over masked rows. The advantage is treated as a constant
in the policy-gradient term (computed from the same parameters, then frozen),
which is also what makes the finite-difference checks well-posed. The
counterfactual variant credits the whole sampled deterministic map: the log
probability of the executed action is replaced by the sum of log
probabilities of the map's choice at every private-observation branch.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import beliefs, hanabi, matrix_game, nets, pubmdp
from .beliefs import BeliefConfig
from .hanabi import EMPTY, GameConfig

HANABI_HORIZON = 65
MATRIX_HORIZON = 2


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    gamma: float = 0.999
    baseline_weight: float = 0.25
    entropy_weight: float = 0.05
    learning_rate: float = 2e-4
    optimizer: str = "rmsprop"      # "rmsprop" | "adam"
    rms_decay: float = 0.99
    rms_eps: float = 1e-10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    inv_temp: float = 1.0
    cf_gradients: bool = False
    grad_clip: float | None = 40.0
    hidden_sizes: tuple[int, ...] = (384, 384)
    population_size: int = 4
    evolve_interval: int = 200
    rating_ema: float = 0.01
    pbt_threshold: float = 0.5
    pbt_perturb: tuple[float, float] = (0.8, 1.25)
    warmup_frac: float = 0.05

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("gamma", "baseline_weight", "learning_rate", "inv_temp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")


@dataclass
class Trajectory:
    """One agent's view of one episode, fixed length T."""

    x_policy: np.ndarray   # (T, d) network input, own-hand block zeroed
    x_value: np.ndarray    # (T, d) same rows with the own-hand block filled
    legal: np.ndarray      # (T, n_actions) bool
    action: np.ndarray     # (T,) int64; NoAction id (or 0) when not acting
    reward: np.ndarray     # (T,) team reward, zero after terminal
    mask: np.ndarray       # (T,) 1.0 where this agent chose an action
    cf_x: np.ndarray | None = None        # (T, n_branch, d) branch inputs
    cf_action: np.ndarray | None = None   # (T, n_branch)
    cf_mask: np.ndarray | None = None     # (T, n_branch) float

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for arr in (self.x_policy, self.x_value, self.legal.astype(np.uint8),
                    self.action, self.reward, self.mask):
            h.update(np.ascontiguousarray(arr).tobytes())
        for arr in (self.cf_x, self.cf_action, self.cf_mask):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros_like(rewards, dtype=np.float64)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def assemble_batch(trajectories: list[Trajectory], gamma: float) -> dict:
    """Stack trajectories into flat row arrays with per-step returns."""
    xs, xv, legal, act, ret, mask = [], [], [], [], [], []
    cf_x, cf_a, cf_m = [], [], []
    has_cf = trajectories[0].cf_x is not None
    for tr in trajectories:
        xs.append(tr.x_policy)
        xv.append(tr.x_value)
        legal.append(tr.legal)
        act.append(tr.action)
        ret.append(discounted_returns(tr.reward, gamma))
        mask.append(tr.mask)
        if has_cf:
            cf_x.append(tr.cf_x)
            cf_a.append(tr.cf_action)
            cf_m.append(tr.cf_mask)
    batch = {
        "x_policy": np.concatenate(xs), "x_value": np.concatenate(xv),
        "legal": np.concatenate(legal), "action": np.concatenate(act),
        "returns": np.concatenate(ret), "mask": np.concatenate(mask),
    }
    if has_cf:
        batch["cf_x"] = np.concatenate(cf_x)
        batch["cf_action"] = np.concatenate(cf_a)
        batch["cf_mask"] = np.concatenate(cf_m)
    return batch


# -- loss terms -----------------------------------------------------------

def baseline_values(params: dict, batch: dict) -> np.ndarray:
    _, value, _ = nets.forward(params, batch["x_value"])
    return value


def advantages(params: dict, batch: dict) -> np.ndarray:
    return batch["returns"] - baseline_values(params, batch)


def _coeff(batch: dict) -> tuple[np.ndarray, float]:
    mask = batch["mask"].astype(np.float64)
    return mask, max(float(mask.sum()), 1.0)


def pg_terms(params: dict, batch: dict, adv: np.ndarray, inv_temp: float):
    """(-mean masked advantage-weighted log-prob, grads). adv held constant."""
    mask, denom = _coeff(batch)
    logits, _, cache = nets.forward(params, batch["x_policy"])
    logp = nets.masked_log_softmax(logits, batch["legal"], inv_temp)
    p = np.exp(logp)
    rows = np.arange(logits.shape[0])
    loss = -float((mask * adv * logp[rows, batch["action"]]).sum() / denom)
    coeff = -(mask * adv / denom)
    dlogits = coeff[:, None] * inv_temp * (-p)
    dlogits[rows, batch["action"]] += coeff * inv_temp
    grads = nets.backward(params, cache, dlogits, np.zeros(logits.shape[0]))
    return loss, grads


def cf_pg_terms(params: dict, batch: dict, adv: np.ndarray, inv_temp: float):
    """Policy-gradient term crediting every branch of the sampled map."""
    if "cf_x" not in batch:
        raise ValueError("batch carries no counterfactual branches")
    mask, denom = _coeff(batch)
    n, nb, d = batch["cf_x"].shape
    flat_x = batch["cf_x"].reshape(n * nb, d)
    flat_a = batch["cf_action"].reshape(n * nb).astype(np.int64)
    flat_m = (batch["cf_mask"].reshape(n * nb).astype(np.float64)
              * np.repeat(mask, nb))
    logits, _, cache = nets.forward(params, flat_x)
    legal = np.ones(logits.shape, dtype=bool)   # matrix game: all actions legal
    logp = nets.masked_log_softmax(logits, legal, inv_temp)
    p = np.exp(logp)
    rows = np.arange(n * nb)
    adv_rep = np.repeat(adv, nb)
    loss = -float((flat_m * adv_rep * logp[rows, flat_a]).sum() / denom)
    coeff = -(flat_m * adv_rep / denom)
    dlogits = coeff[:, None] * inv_temp * (-p)
    dlogits[rows, flat_a] += coeff * inv_temp
    grads = nets.backward(params, cache, dlogits, np.zeros(n * nb))
    return loss, grads


def entropy_terms(params: dict, batch: dict, inv_temp: float):
    """(mean masked policy entropy, grads of that mean)."""
    mask, denom = _coeff(batch)
    logits, _, cache = nets.forward(params, batch["x_policy"])
    logp = nets.masked_log_softmax(logits, batch["legal"], inv_temp)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=1)
    value = float((mask * ent).sum() / denom)
    coeff = mask / denom
    dlogits = coeff[:, None] * (-inv_temp) * p * (logp + ent[:, None])
    grads = nets.backward(params, cache, dlogits, np.zeros(logits.shape[0]))
    return value, grads


def baseline_terms(params: dict, batch: dict):
    """(mean masked squared error of the value head, grads)."""
    mask, denom = _coeff(batch)
    _, value, cache = nets.forward(params, batch["x_value"])
    err = value - batch["returns"]
    loss = float((mask * err * err).sum() / denom)
    dvalue = 2.0 * mask * err / denom
    grads = nets.backward(params, cache,
                          np.zeros((value.shape[0],
                                    params[_final_w(params)].shape[1] - 1)),
                          dvalue)
    return loss, grads


def _final_w(params: dict) -> str:
    return f"W{nets.n_layers(params) - 1}"


def cf_pg_loss(params: dict, batch: dict, inv_temp: float = 1.0):
    """Standalone counterfactual policy-gradient loss (value head frozen)."""
    adv = advantages(params, batch)
    return cf_pg_terms(params, batch, adv, inv_temp)


@dataclass
class LossReport:
    pg: float
    baseline: float
    entropy: float
    total: float
    grads: dict[str, np.ndarray]
    grad_norm: float


def a2c_losses(params: dict, batch: dict, cfg: TrainConfig) -> LossReport:
    adv = advantages(params, batch)
    use_cf = cfg.cf_gradients and "cf_x" in batch
    if use_cf:
        pg, g_pg = cf_pg_terms(params, batch, adv, cfg.inv_temp)
    else:
        pg, g_pg = pg_terms(params, batch, adv, cfg.inv_temp)
    bl, g_bl = baseline_terms(params, batch)
    ent, g_ent = entropy_terms(params, batch, cfg.inv_temp)
    total = pg + cfg.baseline_weight * bl - cfg.entropy_weight * ent
    if not np.isfinite(total):
        raise RuntimeError(f"non-finite loss: pg={pg} baseline={bl} entropy={ent}")
    grads = {k: g_pg[k] + cfg.baseline_weight * g_bl[k]
             - cfg.entropy_weight * g_ent[k] for k in params}
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    return LossReport(pg=pg, baseline=bl, entropy=ent, total=total,
                      grads=grads, grad_norm=norm)


# -- optimizer --------------------------------------------------------------

@dataclass
class OptState:
    kind: str
    step: int = 0
    skipped: int = 0
    slots: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(params: dict, cfg: TrainConfig) -> OptState:
    slots = {}
    for k, v in params.items():
        slots[f"acc/{k}"] = np.zeros_like(v)
        if cfg.optimizer == "adam":
            slots[f"mom/{k}"] = np.zeros_like(v)
    return OptState(kind=cfg.optimizer, slots=slots)


def clip_grads(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Global-norm clipping; returns (possibly rescaled grads, original norm)."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def optimizer_step(params: dict, grads: dict, state: OptState, cfg: TrainConfig,
                   lr: float | None = None) -> dict:
    """One update; non-finite gradients skip the step and bump a counter."""
    if any(not np.isfinite(g).all() for g in grads.values()):
        state.skipped += 1
        return params
    lr = cfg.learning_rate if lr is None else lr
    if cfg.grad_clip is not None:
        grads, _ = clip_grads(grads, cfg.grad_clip)
    state.step += 1
    out = {}
    if state.kind == "rmsprop":
        for k, g in grads.items():
            acc = state.slots[f"acc/{k}"]
            acc *= cfg.rms_decay
            acc += (1.0 - cfg.rms_decay) * g * g
            out[k] = params[k] - lr * g / np.sqrt(acc + cfg.rms_eps)
    else:
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        t = state.step
        for k, g in grads.items():
            m = state.slots[f"mom/{k}"]
            v = state.slots[f"acc/{k}"]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            out[k] = params[k] - lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
    return out


# -- matrix-game rollouts -----------------------------------------------------

def init_matrix_params(cfg: TrainConfig, seed: int, use_beliefs: bool = True) -> dict:
    sizes = [pubmdp.matrix_input_size(use_beliefs), *cfg.hidden_sizes,
             pubmdp.MatrixObsCodec.N_ACTIONS + 1]
    return nets.init_params(sizes, seed)


def _matrix_rows(actor: int) -> np.ndarray:
    # branch rows over the actor's two possible cards; other column is padding
    rows = np.zeros((2, 2), dtype=np.int16)
    rows[:, actor] = [0, 1]
    return rows


def rollout_matrix(payoff: matrix_game.PayoffTensor, params: dict,
                   cfg: TrainConfig, episode_seed: int,
                   mode: str = "bad") -> tuple[list[Trajectory], dict]:
    """One episode; mode "bad" uses public beliefs and seeded deterministic
    maps, mode "pg" is vanilla policy gradient on private observations."""
    if mode not in ("bad", "pg"):
        raise ValueError(f"unknown matrix mode {mode!r}")
    use_beliefs = mode == "bad"
    d = pubmdp.matrix_input_size(use_beliefs)
    n_actions = pubmdp.MatrixObsCodec.N_ACTIONS
    state = matrix_game.mg_new(payoff, episode_seed)
    cards = (state.card1, state.card2)
    want_cf = cfg.cf_gradients and use_beliefs
    trajs = [Trajectory(
        x_policy=np.zeros((MATRIX_HORIZON, d)),
        x_value=np.zeros((MATRIX_HORIZON, d)),
        legal=np.zeros((MATRIX_HORIZON, n_actions), dtype=bool),
        action=np.zeros(MATRIX_HORIZON, dtype=np.int64),
        reward=np.zeros(MATRIX_HORIZON),
        mask=np.zeros(MATRIX_HORIZON),
        cf_x=np.zeros((MATRIX_HORIZON, 2, d)) if want_cf else None,
        cf_action=np.zeros((MATRIX_HORIZON, 2), dtype=np.int64) if want_cf else None,
        cf_mask=np.zeros((MATRIX_HORIZON, 2)) if want_cf else None,
    ) for _ in range(2)]
    beliefs_now = [np.array([0.5, 0.5]), np.array([0.5, 0.5])]
    u1 = None
    reward = 0.0
    for t in range(MATRIX_HORIZON):
        actor = t
        if use_beliefs:
            pub = pubmdp.encode_matrix_public(t, beliefs_now[0], beliefs_now[1],
                                              u1, use_beliefs=True)
        else:
            pub = pubmdp.encode_matrix_public(t, None, None, u1, use_beliefs=False)
        codec = pubmdp.MatrixObsCodec(actor)
        rows = _matrix_rows(actor)
        obs_block = codec.encode_hands(rows)          # branch encodings
        own_block = codec.encode_own(
            np.array([[cards[0], cards[1]]] * 2, dtype=np.int16))
        x_branches = np.concatenate(
            [np.tile(pub, (2, 1)), obs_block, np.zeros((2, codec.own_size))],
            axis=1)
        if use_beliefs:
            pp = pubmdp.sample_partial_policy(
                params, pub, pubmdp.xi_schedule(episode_seed, t), cfg.inv_temp,
                codec)
            branch_actions = pp.act_on_hands(rows)
            u = int(branch_actions[cards[actor]])
            beliefs_now[actor] = matrix_game.mg_exact_public_update(
                beliefs_now[actor], branch_actions, u)
        else:
            x_real = x_branches[cards[actor]][None, :]
            logits, _, _ = nets.forward(params, x_real)
            p = nets.masked_softmax(logits, np.ones((1, n_actions), dtype=bool),
                                    cfg.inv_temp)[0]
            rng = np.random.Generator(np.random.PCG64(
                pubmdp.derive_seed(episode_seed, t, 2)))
            u = int(rng.choice(n_actions, p=p))
        state, r, done = matrix_game.mg_step(state, u)
        if r is not None:
            reward = float(r)
        tr = trajs[actor]
        tr.x_policy[t] = x_branches[cards[actor]]
        tr.x_value[t] = np.concatenate(
            [pub, obs_block[cards[actor]], own_block[cards[actor]]])
        tr.legal[t] = True
        tr.action[t] = u
        tr.mask[t] = 1.0
        if want_cf:
            tr.cf_x[t] = x_branches
            tr.cf_action[t] = branch_actions
            tr.cf_mask[t] = 1.0
        # the idle player's row stays zeroed and loss-masked; one action is
        # marked legal so the batched softmax has support everywhere
        trajs[1 - actor].legal[t, 0] = True
        if t == 0:
            u1 = u
    for tr in trajs:
        tr.reward[MATRIX_HORIZON - 1] = reward
    return trajs, {"reward": reward, "cards": cards, "u1": u1}


def eval_matrix(payoff: matrix_game.PayoffTensor, params: dict,
                cfg: TrainConfig, mode: str, n_games: int, seed: int,
                inv_temp: float = 100.0) -> float:
    """Mean reward under near-greedy execution."""
    eval_cfg = replace(cfg, inv_temp=inv_temp, cf_gradients=False)
    total = 0.0
    for i in range(n_games):
        _, info = rollout_matrix(payoff, params, eval_cfg,
                                 pubmdp.derive_seed(seed, i), mode)
        total += info["reward"]
    return total / n_games


def train_matrix(payoff: matrix_game.PayoffTensor, cfg: TrainConfig,
                 run_seed: int, n_updates: int, mode: str = "bad",
                 init_seed: int | None = None,
                 log_every: int = 50) -> dict:
    """Returns {"params", "opt", "metrics", "env_steps"}."""
    params = init_matrix_params(cfg, run_seed if init_seed is None else init_seed,
                                use_beliefs=(mode == "bad"))
    opt = init_optimizer(params, cfg)
    metrics = []
    env_steps = 0
    for update in range(n_updates):
        trajs = []
        rewards = []
        for i in range(cfg.batch_size):
            ep_seed = pubmdp.derive_seed(run_seed, update, i)
            pair, info = rollout_matrix(payoff, params, cfg, ep_seed, mode)
            trajs.extend(pair)
            rewards.append(info["reward"])
            env_steps += MATRIX_HORIZON
        batch = assemble_batch(trajs, cfg.gamma)
        report = a2c_losses(params, batch, cfg)
        params = optimizer_step(params, report.grads, opt, cfg)
        if update % log_every == 0 or update == n_updates - 1:
            metrics.append({
                "update": update, "env_steps": env_steps,
                "mean_reward": float(np.mean(rewards)),
                "pg": report.pg, "baseline": report.baseline,
                "entropy": report.entropy, "total": report.total,
                "grad_norm": report.grad_norm, "skipped": opt.skipped,
            })
    return {"params": params, "opt": opt, "metrics": metrics,
            "env_steps": env_steps}


# -- Hanabi rollouts ----------------------------------------------------------

def init_hanabi_params(game: GameConfig, cfg: TrainConfig, seed: int) -> dict:
    sizes = [pubmdp.hanabi_input_size(game), *cfg.hidden_sizes,
             game.n_actions + 1]
    return nets.init_params(sizes, seed)


def _variant_rows(tr: pubmdp.BeliefTransition, variant: str) -> np.ndarray:
    if variant == "v0":
        return tr.v0
    if variant == "v1":
        return tr.v1
    if variant == "v2":
        return tr.v2
    raise ValueError(f"unknown belief variant {variant!r}")


def _ce_mean(entries: list) -> float:
    """Mean -log P over occupied slots pooled across (sum, count) entries."""
    total = sum(e[0] for e in entries)
    count = sum(e[1] for e in entries)
    return total / count if count else float("nan")


def _ce_entry(belief: pubmdp.BeliefTransition, hands) -> dict:
    """Per-variant (sum of -log P(true card), occupied-slot count)."""
    truth = np.array(hands, dtype=np.int64)
    out = {}
    for name, rows in (("v0", belief.v0), ("v1", belief.v1), ("v2", belief.v2)):
        # empty slots use -1 in hands but the null column in belief rows
        mapped = np.where(truth == EMPTY, rows.shape[-1] - 1, truth)
        vals, occupied = beliefs.per_slot_neg_log(rows, mapped)
        out[name] = (float(vals[occupied].sum()), int(occupied.sum()))
    return out


def rollout_hanabi(game: GameConfig, params: dict, bcfg: BeliefConfig,
                   cfg: TrainConfig, episode_seed: int, variant: str = "v2",
                   horizon: int = HANABI_HORIZON, sample_count: int | None = None,
                   collect_ce: bool = False, record: bool = True,
                   trace: list | None = None) -> tuple[list[Trajectory], dict]:
    """One self-play episode with shared parameters.

    Per turn: encode the public state for every agent, sample the acting
    player's deterministic map with the common seed, execute, and advance the
    shared belief state. V0-variant agents skip the likelihood machinery
    entirely (their input never reads it). record=False skips trajectory
    assembly (evaluation); trace, if given, collects per-turn transcript
    dicts. collect_ce entries are (sum of -log P, occupied slots) per belief
    variant, indexed by "beliefs after t actions" starting at t = 0.
    """
    d = pubmdp.hanabi_input_size(game)
    n_actions = game.n_actions
    a_count = game.n_players
    trajs = []
    if record:
        trajs = [Trajectory(
            x_policy=np.zeros((horizon, d)), x_value=np.zeros((horizon, d)),
            legal=np.zeros((horizon, n_actions), dtype=bool),
            action=np.full(horizon, game.noaction_id, dtype=np.int64),
            reward=np.zeros(horizon), mask=np.zeros(horizon),
        ) for _ in range(a_count)]
        for tr in trajs:
            tr.legal[:, game.noaction_id] = True
    state = hanabi.new_game(game, episode_seed)
    feats = hanabi.public_features(state)
    belief = pubmdp.initial_beliefs(game, feats, bcfg)
    info = {"score": 0, "length": 0, "skipped": 0, "fallbacks": 0,
            "ce": {"v0": [], "v1": [], "v2": []}}
    if collect_ce:
        for name, entry in _ce_entry(belief, state.hands).items():
            info["ce"][name].append(entry)
    own_cols = game.n_cols
    for t in range(horizon):
        if state.terminal:
            break
        actor = state.current_player
        rows_variant = _variant_rows(belief, variant)
        hands_arr = np.array(state.hands, dtype=np.int16)
        hands_arr = np.where(hands_arr == EMPTY, game.n_types, hands_arr)
        real = hands_arr[None, :]
        hands_before = list(state.hands)
        codec = pubmdp.HanabiObsCodec(game, state, actor)
        pp = pubmdp.sample_partial_policy(
            params, pubmdp.encode_public_input(game, feats, rows_variant, actor),
            pubmdp.xi_schedule(episode_seed, t), cfg.inv_temp, codec)
        u = int(pp.act_on_hands(real)[0])
        if record:
            for a in range(a_count):
                tr = trajs[a]
                pub_a = pp.public_input if a == actor else \
                    pubmdp.encode_public_input(game, feats, rows_variant, a)
                order = pubmdp.rotated_slots(game, a)
                obs_a = pubmdp.one_hot_block(hands_arr[order[game.hand_size:]],
                                             own_cols)
                own_a = pubmdp.one_hot_block(hands_arr[order[:game.hand_size]],
                                             own_cols)
                zeros_own = np.zeros_like(own_a)
                tr.x_policy[t] = np.concatenate([pub_a, obs_a, zeros_own])
                tr.x_value[t] = np.concatenate([pub_a, obs_a, own_a])
                if a == actor:
                    tr.legal[t] = codec.legal_masks(real)[0]
                    tr.action[t] = u
                    tr.mask[t] = 1.0
        _, r, _ = hanabi.apply_action(state, u)
        feats_post = hanabi.public_features(state)
        belief = pubmdp.public_belief_transition(
            game, belief.likelihood, feats, feats_post,
            None if variant == "v0" else pp, u, actor, bcfg,
            pubmdp.derive_seed(episode_seed, t, 1), v2_pre=belief.v2,
            sample_count=sample_count)
        info["skipped"] += int(belief.likelihood_skipped)
        info["fallbacks"] += belief.v1_fallbacks + belief.bb_fallbacks
        if collect_ce:
            for name, entry in _ce_entry(belief, state.hands).items():
                info["ce"][name].append(entry)
        if trace is not None:
            la = feats_post.last_action
            trace.append({
                "t": t, "actor": actor, "action": u,
                "meta": {
                    "kind": la.kind, "slot": la.slot, "card": la.card,
                    "success": la.success, "target": la.target,
                    "hint_color": la.hint_color, "hint_rank": la.hint_rank,
                    "touched": la.touched, "refilled": la.refilled,
                },
                "reward": float(r),
                "hands_before": hands_before,
                "state_hash": state.state_hash(),
                "belief": np.round(belief.v2, 9).tolist(),
            })
        if record:
            for a in range(a_count):
                trajs[a].reward[t] = r
        feats = feats_post
        info["length"] = t + 1
    info["score"] = hanabi.score(state, strict=False)
    info["score_strict"] = hanabi.score(state, strict=True)
    info["terminal"] = state.terminal
    return trajs, info


def train_hanabi(game: GameConfig, bcfg: BeliefConfig, cfg: TrainConfig,
                 run_seed: int, n_updates: int, variant: str = "v2",
                 sample_count: int | None = None,
                 max_env_steps: int | None = None,
                 log_every: int = 20, snapshot_every: int = 0,
                 snapshot_hook=None) -> dict:
    """Population-aware training loop; population_size 1 disables PBT.

    Returns {"params", "metrics", "env_steps", "population", "events"}
    where params belong to the best-rated member. snapshot_hook(update,
    params) fires every snapshot_every updates with the best member's
    parameters (checkpoint cadence without file knowledge in here).
    """
    members = []
    for m in range(cfg.population_size):
        params = init_hanabi_params(game, cfg, run_seed + 1000 * m)
        members.append(Member(params=params, opt=init_optimizer(params, cfg),
                              lr=cfg.learning_rate,
                              entropy_weight=cfg.entropy_weight))
    rng = np.random.Generator(np.random.PCG64(pubmdp.derive_seed(run_seed, 99)))
    metrics = []
    events = []
    env_steps = 0
    updates_run = 0
    warmup = int(cfg.warmup_frac * n_updates)
    for update in range(n_updates):
        if max_env_steps is not None and env_steps >= max_env_steps:
            break
        updates_run += 1
        m_idx = update % cfg.population_size
        member = members[m_idx]
        member_cfg = replace(cfg, entropy_weight=member.entropy_weight)
        trajs = []
        scores = []
        ce_acc = {"v0": [], "v1": [], "v2": []}
        collect = update % log_every == 0
        for i in range(cfg.batch_size):
            ep_seed = pubmdp.derive_seed(run_seed, update, i)
            pair, info = rollout_hanabi(game, member.params, bcfg, member_cfg,
                                        ep_seed, variant,
                                        sample_count=sample_count,
                                        collect_ce=collect)
            trajs.extend(pair)
            scores.append(info["score"])
            env_steps += info["length"]
            if collect:
                for k in ce_acc:
                    ce_acc[k].extend(info["ce"][k])
        batch = assemble_batch(trajs, cfg.gamma)
        report = a2c_losses(member.params, batch, member_cfg)
        member.params = optimizer_step(member.params, report.grads, member.opt,
                                       member_cfg, lr=member.lr)
        mean_score = float(np.mean(scores))
        member.rating += cfg.rating_ema * (mean_score - member.rating)
        member.updates += 1
        if collect:
            metrics.append({
                "update": update, "member": m_idx, "env_steps": env_steps,
                "mean_score": mean_score, "rating": member.rating,
                "pg": report.pg, "baseline": report.baseline,
                "entropy": report.entropy, "grad_norm": report.grad_norm,
                "lr": member.lr, "entropy_weight": member.entropy_weight,
                "ce_v0": _ce_mean(ce_acc["v0"]),
                "ce_v1": _ce_mean(ce_acc["v1"]),
                "ce_v2": _ce_mean(ce_acc["v2"]),
            })
        if (cfg.population_size > 1 and update >= warmup
                and m_idx == cfg.population_size - 1
                and (update // cfg.population_size) % cfg.evolve_interval
                == cfg.evolve_interval - 1):
            events.extend(pbt_lite_evolve(members, rng, cfg))
        if (snapshot_hook is not None and snapshot_every
                and (update + 1) % snapshot_every == 0):
            leader = max(members, key=lambda m: m.rating)
            snapshot_hook(update + 1, leader.params)
    best = max(members, key=lambda m: m.rating)
    return {"params": best.params, "metrics": metrics, "env_steps": env_steps,
            "updates_run": updates_run, "population": members,
            "events": events}


# -- PBT-lite -----------------------------------------------------------------

@dataclass
class Member:
    params: dict
    opt: OptState
    lr: float
    entropy_weight: float
    rating: float = 0.0
    updates: int = 0


def pbt_lite_evolve(members: list[Member], rng: np.random.Generator,
                    cfg: TrainConfig) -> list[tuple[int, int]]:
    """Copy-and-perturb from clearly better-rated members; returns events."""
    events = []
    ratings = [m.rating for m in members]
    for i, member in enumerate(members):
        better = [j for j, r in enumerate(ratings)
                  if j != i and r >= member.rating + cfg.pbt_threshold]
        if not better:
            continue
        src = int(rng.choice(better))
        member.params = copy.deepcopy(members[src].params)
        member.opt = copy.deepcopy(members[src].opt)
        member.lr = members[src].lr * float(rng.choice(cfg.pbt_perturb))
        member.entropy_weight = members[src].entropy_weight \
            * float(rng.choice(cfg.pbt_perturb))
        events.append((i, src))
    return events
