"""Shared test helpers: random playouts and tiny enumeration oracles."""

from __future__ import annotations

import itertools
import random

import numpy as np

from hanalab import hanabi


def random_game(config: hanabi.GameConfig, seed: int, max_steps: int = 10_000):
    """Play one game with a uniform-random legal policy; return (state, steps, rewards)."""
    rng = random.Random(seed)
    state = hanabi.new_game(config, seed)
    rewards = []
    steps = 0
    while not state.terminal and steps < max_steps:
        ids = hanabi.legal_actions(state)
        _, r, _ = hanabi.apply_action(state, ids[rng.randrange(len(ids))])
        rewards.append(r)
        steps += 1
    return state, steps, rewards


def brute_force_joint_deals(config: hanabi.GameConfig, ordered: bool) -> int:
    """Enumerate distinct joint deals of card types for tiny configs."""
    deck = []
    for t, c in enumerate(config.fresh_counts):
        deck.extend([t] * c)
    n = config.n_slots
    h = config.hand_size
    if ordered:
        return len(set(itertools.permutations(deck, n)))
    deals = set()
    for perm in itertools.permutations(deck, n):
        hands = tuple(tuple(sorted(perm[p * h:(p + 1) * h]))
                      for p in range(config.n_players))
        deals.add(hands)
    return len(deals)


def make_state_with_hands(config: hanabi.GameConfig, hands: list[list[int]],
                          seed: int = 0) -> hanabi.GameState:
    """A fresh game whose hands are forced to the given card types.

    The deck is rebuilt so the forced cards sit in the dealt positions and the
    remaining composition stays consistent (conservation holds).
    """
    flat = [c for hand in hands for c in hand]
    left = list(np.repeat(np.arange(config.n_types), config.fresh_counts))
    for c in flat:
        left.remove(c)
    rng = random.Random(seed)
    rng.shuffle(left)
    # round-robin deal order: slot i of player p is dealt at position i*A + p
    dealt = [0] * len(flat)
    pos = 0
    for i in range(config.hand_size):
        for p in range(config.n_players):
            dealt[pos] = hands[p][i]
            pos += 1
    state = hanabi.GameState(config, dealt + left, seed)
    for i in range(config.hand_size):
        for p in range(config.n_players):
            slot = p * config.hand_size + i
            state.hands[slot] = state.deck[state.deck_ptr]
            state.hint_rows[slot] = config.full_row_mask
            state.deck_ptr += 1
    if state.deck_ptr == len(state.deck):
        state.remaining_turns = config.n_players
    return state


def card(config: hanabi.GameConfig, color: int, rank: int) -> int:
    return color * config.n_rank + (rank - 1)


def fd_grad(loss_fn, params, eps=1e-6):
    """Central finite differences over the packed parameter vector."""
    from hanalab import nets
    theta = nets.pack(params)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += eps
        down = theta.copy()
        down[i] -= eps
        g[i] = (loss_fn(nets.unpack(up, params))
                - loss_fn(nets.unpack(down, params))) / (2 * eps)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


class MapPolicy:
    """Deterministic map over the values of its observed slots, for tests."""

    def __init__(self, observed_slots, fn):
        self.observed_slots = list(observed_slots)
        self.fn = fn

    def act_on_hands(self, hands):
        cols = hands[:, self.observed_slots]
        return np.array([self.fn(tuple(int(v) for v in row)) for row in cols])
