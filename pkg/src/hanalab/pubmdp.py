"""Public-belief MDP layer: encodings, seeded partial policies, transitions.

A partial policy is a deterministic map from private observations to actions,
materialised lazily from the policy network: the action for an observation is
drawn by inverse CDF from the (legality-masked, temperature-scaled) softmax,
using a uniform variate keyed by hash(xi, observation bytes). Two processes
holding the same parameters, public input, and per-step seed xi therefore
realise the *same function*, which is what lets every player run the acting
player's reasoning without seeing its cards.

Input encodings (all float64, layouts documented in docs/formats.md and
discoverable via input_layout functions):

    network input = [ public block | observed-hands block | own-hand block ]

The policy pass zeroes the own-hand block; the value pass fills it (the
baseline may exploit private information during training without leaking it
into the executed policy). Hanabi blocks are rotated so the acting player's
slots come first; the belief and hint-mask arrays themselves stay in absolute
slot order everywhere else.

Seed schedule: xi_t = hash(episode_seed, t) with a keyed 128-bit blake2b;
episode seeds are common knowledge at reset.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import beliefs, nets
from .hanabi import EMPTY, GameConfig, GameState, PublicFeatures

FORMAT_VERSION = 1
TURN_NORM_FACTOR = 2  # turn index normalised by 2 * deck_size


# -- seeding ------------------------------------------------------------------

def derive_key(*ints: int) -> bytes:
    """16-byte key from a tuple of integers (stable across platforms)."""
    h = hashlib.blake2b(digest_size=16)
    for v in ints:
        h.update(struct.pack("<q", int(v) & 0x7FFFFFFFFFFFFFFF))
    return h.digest()


def derive_seed(*ints: int) -> int:
    return int.from_bytes(derive_key(*ints)[:8], "little")


def xi_schedule(episode_seed: int, t: int) -> bytes:
    return derive_key(episode_seed, t)


def keyed_uniform(key: bytes, data: bytes) -> float:
    """Deterministic uniform in [0, 1) keyed by (key, data)."""
    raw = hashlib.blake2b(data, key=key, digest_size=8).digest()
    return int.from_bytes(raw, "little") / 2.0 ** 64


# -- layouts ------------------------------------------------------------------

@dataclass(frozen=True)
class InputLayout:
    """Named contiguous sections of an encoded input vector."""

    sections: tuple[tuple[str, int], ...]

    @property
    def size(self) -> int:
        return sum(s for _, s in self.sections)

    def slices(self) -> dict[str, slice]:
        out = {}
        pos = 0
        for name, size in self.sections:
            out[name] = slice(pos, pos + size)
            pos += size
        return out


def hanabi_public_layout(cfg: GameConfig) -> InputLayout:
    t, a, h = cfg.n_types, cfg.n_players, cfg.hand_size
    last = 3 + h + cfg.n_color + cfg.n_rank + h + t + 1 + a + a + 1
    return InputLayout((
        ("fireworks", t),
        ("hint_tokens", cfg.max_hint_tokens),
        ("life_tokens", cfg.max_life_tokens),
        ("candidates", t),
        ("deck_fraction", 1),
        ("turn_fraction", 1),
        ("countdown", a + 1),
        ("last_action", last),
        ("hint_mask", cfg.n_slots * cfg.n_cols),
        ("belief", cfg.n_slots * cfg.n_cols),
    ))


def hanabi_obs_layout(cfg: GameConfig) -> InputLayout:
    return InputLayout((("observed_hands", (cfg.n_players - 1) * cfg.hand_size * cfg.n_cols),))


def hanabi_own_layout(cfg: GameConfig) -> InputLayout:
    return InputLayout((("own_hand", cfg.hand_size * cfg.n_cols),))


def hanabi_input_size(cfg: GameConfig) -> int:
    return (hanabi_public_layout(cfg).size + hanabi_obs_layout(cfg).size
            + hanabi_own_layout(cfg).size)


def rotated_slots(cfg: GameConfig, actor: int) -> np.ndarray:
    """Absolute slot indices reordered so the actor's hand comes first."""
    order = []
    for off in range(cfg.n_players):
        p = (actor + off) % cfg.n_players
        order.extend(range(p * cfg.hand_size, (p + 1) * cfg.hand_size))
    return np.array(order, dtype=np.int64)


def observed_slot_indices(cfg: GameConfig, actor: int) -> np.ndarray:
    """Slots the actor can see: everyone else's, nearest seat first."""
    return rotated_slots(cfg, actor)[cfg.hand_size:]


def one_hot_block(values: np.ndarray, n_cols: int) -> np.ndarray:
    """(..., k) card values (Null = n_cols-1, EMPTY maps to Null) -> (..., k*n_cols)."""
    v = np.asarray(values, dtype=np.int64)
    v = np.where(v == EMPTY, n_cols - 1, v)
    out = np.zeros(v.shape + (n_cols,), dtype=np.float64)
    np.put_along_axis(out, v[..., None], 1.0, axis=-1)
    return out.reshape(*v.shape[:-1], v.shape[-1] * n_cols)


def _thermo(value: int, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[:max(0, min(value, size))] = 1.0
    return out


def encode_last_action(cfg: GameConfig, feats: PublicFeatures, actor: int) -> np.ndarray:
    t, a, h = cfg.n_types, cfg.n_players, cfg.hand_size
    kind = np.zeros(3)
    slot = np.zeros(h)
    color = np.zeros(cfg.n_color)
    rank = np.zeros(cfg.n_rank)
    touched = np.zeros(h)
    revealed = np.zeros(t)
    success = np.zeros(1)
    who = np.zeros(a)
    target = np.zeros(a)
    seen = np.zeros(1)
    la = feats.last_action
    if la is not None:
        seen[0] = 1.0
        who[(la.actor - actor) % a] = 1.0
        if la.kind == "play":
            kind[0] = 1.0
        elif la.kind == "discard":
            kind[1] = 1.0
        else:
            kind[2] = 1.0
        if la.slot is not None:
            slot[la.slot] = 1.0
        if la.card is not None:
            revealed[la.card] = 1.0
        if la.success:
            success[0] = 1.0
        if la.kind == "hint":
            target[(la.target - actor) % a] = 1.0
            if la.hint_color is not None:
                color[la.hint_color] = 1.0
            else:
                rank[la.hint_rank - 1] = 1.0
            for s in range(h):
                if la.touched >> s & 1:
                    touched[s] = 1.0
    return np.concatenate([kind, slot, color, rank, touched, revealed,
                           success, who, target, seen])


def encode_public_input(cfg: GameConfig, feats: PublicFeatures,
                        belief_rows: np.ndarray, actor: int) -> np.ndarray:
    """The shared public block, rotated to the acting player's perspective."""
    t = cfg.n_types
    fireworks = np.zeros(t)
    for c, top in enumerate(feats.fireworks):
        fireworks[c * cfg.n_rank:c * cfg.n_rank + top] = 1.0
    countdown = np.zeros(cfg.n_players + 1)
    countdown[0 if feats.remaining_turns is None else feats.remaining_turns] = 1.0
    order = rotated_slots(cfg, actor)
    hm = np.asarray(feats.hint_mask, dtype=np.float64)[order].ravel()
    bel = np.asarray(belief_rows, dtype=np.float64)[order].ravel()
    return np.concatenate([
        fireworks,
        _thermo(feats.hint_tokens, cfg.max_hint_tokens),
        _thermo(feats.life_tokens, cfg.max_life_tokens),
        feats.candidates / 3.0,
        [feats.deck_size / cfg.deck_size],
        [feats.turn / (TURN_NORM_FACTOR * cfg.deck_size)],
        countdown,
        encode_last_action(cfg, feats, actor),
        hm,
        bel,
    ])


# -- Hanabi observation codec ---------------------------------------------------

class HanabiObsCodec:
    """Maps joint-hand rows to network observation blocks and legal masks.

    Bound to one acting player and a public snapshot (token counts and slot
    occupancy); everything per-sample is derived from the observed slot
    values, so identical observed values give identical rows, masks, and
    sampling keys.
    """

    def __init__(self, cfg: GameConfig, state: GameState, actor: int):
        self.cfg = cfg
        self.actor = actor
        self.n_value_cols = cfg.n_cols
        self.own_size = cfg.hand_size * cfg.n_cols
        self.observed_slots = observed_slot_indices(cfg, actor)
        self.own_slots = rotated_slots(cfg, actor)[:cfg.hand_size]
        h = cfg.hand_size
        base = np.zeros(cfg.n_actions, dtype=bool)
        own_occupied = [state.hands[s] != EMPTY for s in self.own_slots]
        for s in range(h):
            if own_occupied[s]:
                base[cfg.play_id(s)] = True
                if (state.hint_tokens < cfg.max_hint_tokens
                        or cfg.allow_discard_at_max_hints):
                    base[cfg.discard_id(s)] = True
        self.base_mask = base
        self.hints_possible = state.hint_tokens > 0
        self.nullv = cfg.n_types

    def encode_hands(self, hands: np.ndarray) -> np.ndarray:
        return one_hot_block(hands[:, self.observed_slots], self.cfg.n_cols)

    def encode_own(self, hands: np.ndarray) -> np.ndarray:
        return one_hot_block(hands[:, self.own_slots], self.cfg.n_cols)

    def legal_masks(self, hands: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        n = hands.shape[0]
        mask = np.tile(self.base_mask, (n, 1))
        if self.hints_possible:
            h, cr = cfg.hand_size, cfg.n_color + cfg.n_rank
            for off in range(cfg.n_players - 1):
                cols = self.observed_slots[off * h:(off + 1) * h]
                vals = hands[:, cols].astype(np.int64)
                occ = vals != self.nullv
                colors = np.where(occ, vals // cfg.n_rank, -1)
                ranks = np.where(occ, vals % cfg.n_rank, -1)
                base = 2 * h + off * cr
                for c in range(cfg.n_color):
                    mask[:, base + c] = (colors == c).any(axis=1)
                for r in range(cfg.n_rank):
                    mask[:, base + cfg.n_color + r] = (ranks == r).any(axis=1)
        return mask

    def observation_bytes(self, observed_values: np.ndarray) -> bytes:
        return struct.pack("<h", self.actor) \
            + np.ascontiguousarray(observed_values, dtype="<i2").tobytes()


class MatrixObsCodec:
    """Matrix game: the actor privately sees its own bit; all actions legal.

    Hand rows are (n, 2) arrays [card1, card2]; the codec picks the actor's
    column. The baseline's own-block carries the other player's bit.
    """

    N_ACTIONS = 3

    def __init__(self, actor: int):
        self.actor = actor
        self.n_value_cols = 2
        self.own_size = 2
        self.observed_slots = np.array([actor], dtype=np.int64)
        self.own_slots = np.array([1 - actor], dtype=np.int64)

    def encode_hands(self, hands: np.ndarray) -> np.ndarray:
        return one_hot_block(hands[:, self.observed_slots], 2)

    def encode_own(self, hands: np.ndarray) -> np.ndarray:
        return one_hot_block(hands[:, self.own_slots], 2)

    def legal_masks(self, hands: np.ndarray) -> np.ndarray:
        return np.ones((hands.shape[0], self.N_ACTIONS), dtype=bool)

    def observation_bytes(self, observed_values: np.ndarray) -> bytes:
        return struct.pack("<h", self.actor) \
            + np.ascontiguousarray(observed_values, dtype="<i2").tobytes()


def matrix_public_layout(use_beliefs: bool = True) -> InputLayout:
    sections = [("stage", 2)]
    if use_beliefs:
        sections += [("belief_card1", 2), ("belief_card2", 2)]
    sections += [("u1", 3)]
    return InputLayout(tuple(sections))


def encode_matrix_public(stage: int, belief1, belief2, u1: int | None,
                         use_beliefs: bool = True) -> np.ndarray:
    stage_oh = np.zeros(2)
    stage_oh[min(stage, 1)] = 1.0
    u1_oh = np.zeros(3)
    if u1 is not None:
        u1_oh[u1] = 1.0
    if use_beliefs:
        return np.concatenate([stage_oh, np.asarray(belief1, dtype=np.float64),
                               np.asarray(belief2, dtype=np.float64), u1_oh])
    return np.concatenate([stage_oh, u1_oh])


def matrix_input_size(use_beliefs: bool = True) -> int:
    return matrix_public_layout(use_beliefs).size + 2 + 2


# -- partial policies -----------------------------------------------------------

class PartialPolicy:
    """Deterministic map observation -> action, sampled once via a common seed."""

    def __init__(self, params: dict, public_input: np.ndarray, xi: bytes,
                 inv_temp: float, codec):
        if inv_temp <= 0:
            raise ValueError("inv_temp must be positive")
        self.params = params
        self.public_input = np.asarray(public_input, dtype=np.float64)
        self.xi = xi
        self.inv_temp = inv_temp
        self.codec = codec

    @property
    def observed_slots(self) -> np.ndarray:
        return self.codec.observed_slots

    def _assemble(self, obs_values: np.ndarray) -> np.ndarray:
        n = obs_values.shape[0]
        obs_block = one_hot_block(obs_values, self.codec.n_value_cols)
        own_zero = np.zeros((n, self.codec.own_size))
        return np.concatenate(
            [np.tile(self.public_input, (n, 1)), obs_block, own_zero], axis=1)

    def _distinct_eval(self, obs_values: np.ndarray, legal: np.ndarray):
        """Action for each distinct observed-value row (logits -> CDF -> key)."""
        logits, _, _ = nets.forward(self.params, self._assemble(obs_values))
        probs = nets.masked_softmax(logits, legal, self.inv_temp)
        cdf = np.cumsum(probs, axis=1)
        actions = np.empty(obs_values.shape[0], dtype=np.int64)
        for i in range(obs_values.shape[0]):
            u = keyed_uniform(self.xi, self.codec.observation_bytes(obs_values[i]))
            j = int(np.searchsorted(cdf[i], u, side="right"))
            j = min(j, probs.shape[1] - 1)
            while probs[i, j] <= 0.0 and j > 0:
                j -= 1
            actions[i] = j
        return actions

    def act_on_hands(self, hands: np.ndarray) -> np.ndarray:
        """Evaluate the map on joint-hand rows (only observed columns matter)."""
        hands = np.asarray(hands)
        obs = hands[:, self.codec.observed_slots]
        distinct, first, inverse = np.unique(obs, axis=0, return_index=True,
                                             return_inverse=True)
        legal = self.codec.legal_masks(hands[first])
        return self._distinct_eval(distinct, legal)[inverse]

    def action_probabilities(self, hands: np.ndarray) -> np.ndarray:
        """Softmax rows (post-masking) for each joint-hand row; for losses."""
        hands = np.asarray(hands)
        logits, _, _ = nets.forward(
            self.params, self._assemble(hands[:, self.codec.observed_slots]))
        return nets.masked_softmax(logits, self.codec.legal_masks(hands),
                                   self.inv_temp)


def sample_partial_policy(params: dict, public_input: np.ndarray, xi: bytes,
                          inv_temp: float, codec) -> PartialPolicy:
    return PartialPolicy(params, public_input, xi, inv_temp, codec)


def act(partial_policy: PartialPolicy, observed_values, legal_actions_set) -> int:
    """Single-observation evaluation against an explicit legal set."""
    legal_ids = list(legal_actions_set)
    if not legal_ids:
        raise ValueError("empty legal set")
    obs = np.asarray(observed_values, dtype=np.int64)[None, :]
    n_actions = partial_policy.params[_last_weight(partial_policy.params)].shape[1] - 1
    legal = np.zeros((1, n_actions), dtype=bool)
    legal[0, legal_ids] = True
    action = int(partial_policy._distinct_eval(obs, legal)[0])
    return action


def _last_weight(params: dict) -> str:
    return f"W{nets.n_layers(params) - 1}"


# -- belief transition ------------------------------------------------------------

@dataclass
class BeliefTransition:
    likelihood: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    bb: np.ndarray
    v2: np.ndarray
    samples_accepted: int
    likelihood_skipped: bool
    v1_fallbacks: int
    bb_fallbacks: int


def initial_beliefs(cfg: GameConfig, feats: PublicFeatures,
                    bcfg: beliefs.BeliefConfig) -> BeliefTransition:
    """Fresh likelihood table and the grounded belief family at game start."""
    L = np.ones((cfg.n_slots, cfg.n_cols))
    return _recompute(L, feats, bcfg, samples_accepted=0, skipped=False)


def _recompute(L, feats, bcfg, samples_accepted: int, skipped: bool) -> BeliefTransition:
    v0 = beliefs.v0_belief(feats.candidates, feats.hint_mask)
    v1, f1 = beliefs.v1_iterate(v0, feats.candidates, feats.hint_mask,
                                bcfg.iterations, return_flags=True)
    bb, fb = beliefs.bb_belief(feats.candidates, feats.hint_mask, L,
                               bcfg.iterations, return_flags=True)
    v2 = beliefs.v2_belief(bb, v1, bcfg.v1_mixin)
    return BeliefTransition(
        likelihood=L, v0=v0, v1=v1, bb=bb, v2=v2,
        samples_accepted=samples_accepted, likelihood_skipped=skipped,
        v1_fallbacks=int(f1.sum()), bb_fallbacks=int(fb.sum()),
    )


def public_belief_transition(cfg: GameConfig, L: np.ndarray,
                             pre: PublicFeatures, post: PublicFeatures,
                             partial_policy, observed: int, actor: int,
                             bcfg: beliefs.BeliefConfig, seed,
                             v2_pre: np.ndarray | None = None,
                             sample_count: int | None = None) -> BeliefTransition:
    """One public-belief step: evidence from the observed action, then
    grounded recompute at the post-action state.

    Hands are sampled from the pre-action V2 (the belief the actor reasoned
    under); the multipliers condition the observed slots' rows of L; the
    played/discarded slot's row resets (its card left the hand); V0, V1, BB,
    V2 are rebuilt from the post-action candidates and hint mask. An
    empty-sample draw skips the evidence step and flags it.
    """
    skipped = False
    accepted = 0
    L2 = L
    if partial_policy is not None:
        if v2_pre is None:
            v2_pre = _recompute(L, pre, bcfg, 0, False).v2
        if bcfg.exhaustive_samples:
            samples = beliefs.enumerate_hands(v2_pre, pre.candidates, pre.hint_mask)
        else:
            count = sample_count or bcfg.sample_count_train
            samples = beliefs.sample_hands(v2_pre, pre.candidates, count,
                                           bcfg.oversample, seed)
        accepted = samples.accepted
        if samples.empty:
            skipped = True
        else:
            L2 = beliefs.likelihood_update(L, samples, partial_policy, observed,
                                           actor, bcfg.likelihood_floor)
    la = post.last_action
    if la is not None and la.kind in ("play", "discard"):
        L2 = beliefs.reset_slot(L2, la.actor * cfg.hand_size + la.slot)
    return _recompute(L2, post, bcfg, accepted, skipped)


def bad_reward(belief1: np.ndarray, belief2: np.ndarray, p1_map, p2_map,
               payoff) -> float:
    """Exact belief-marginalised expected reward of a matrix-game profile."""
    b1 = np.asarray(belief1, dtype=np.float64)
    b2 = np.asarray(belief2, dtype=np.float64)
    v = payoff.values
    total = 0.0
    for c1 in range(2):
        u1 = int(np.asarray(p1_map)[c1])
        for c2 in range(2):
            u2 = int(np.asarray(p2_map)[c2][u1])
            total += b1[c1] * b2[c2] * v[c1, c2, u1, u2]
    return float(total)


# -- checkpoints --------------------------------------------------------------

def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(blob.encode(), digest_size=8).hexdigest()


def run_config_hash(game: GameConfig, variant: str = "v2") -> str:
    """Compatibility hash stored in checkpoints: same rules, same encoding.

    Guards against loading parameters into a differently shaped or
    differently interpreted input layout; training hyperparameters are
    deliberately excluded.
    """
    return config_hash({"game": dataclasses.asdict(game), "variant": variant})


def save_checkpoint(path, params: dict[str, np.ndarray], cfg_hash: str,
                    meta: dict | None = None) -> None:
    """JSON header line, then the named arrays as little-endian float32."""
    names = sorted(params)
    header = {
        "format_version": FORMAT_VERSION,
        "names": names,
        "shapes": {k: list(params[k].shape) for k in names},
        "dtype": "<f4",
        "config_hash": cfg_hash,
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for k in names:
            fh.write(np.ascontiguousarray(params[k], dtype="<f4").tobytes())


class CheckpointError(RuntimeError):
    pass


def load_checkpoint(path, expected_hash: str | None = None):
    """Returns (params as float64, header). Refuses on config-hash mismatch."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version in {path}")
        if expected_hash is not None and header["config_hash"] != expected_hash:
            raise CheckpointError(
                f"checkpoint config hash {header['config_hash']} does not match "
                f"the requested configuration {expected_hash}")
        params = {}
        for k in header["names"]:
            shape = tuple(header["shapes"][k])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * n)
            if len(raw) != 4 * n:
                raise CheckpointError(f"truncated checkpoint {path}")
            params[k] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    return params, header
