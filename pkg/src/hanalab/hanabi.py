"""Configurable Hanabi engine.

Cards are integers t = color * n_rank + (rank - 1); -1 marks an empty slot.
Hands live in a flat list of n_players * hand_size absolute slots (slot j
belongs to player j // hand_size). Per-slot hint knowledge is a bitmask over
n_types + 1 bits where bit n_types is the Null marker for empty slots:
emptiness is public, so an empty slot's mask is exactly the Null bit and an
occupied slot's mask never contains it.

Action ids for a config with H = hand_size, C = n_color, R = n_rank,
A = n_players:

    [0, H)                      play slot
    [H, 2H)                     discard slot
    2H + o*(C+R) + c            hint colour c to the player o+1 seats ahead
    2H + o*(C+R) + C + (r-1)    hint rank r to the player o+1 seats ahead
    2H + (A-1)*(C+R)            NoAction (only legal for non-acting players)

Scoring is one point per successful play; strict mode zeroes a game that
exhausts its life tokens.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

EMPTY = -1  # empty-slot sentinel in hands


class RuleError(ValueError):
    """An action violated the rules; the message names the rule."""


def _default_hand_size(n_players: int) -> int:
    return 5 if n_players <= 3 else 4


@dataclass(frozen=True)
class GameConfig:
    """Rules of one Hanabi variant. Immutable; derived tables are cached."""

    n_color: int = 5
    n_rank: int = 5
    n_players: int = 2
    hand_size: int | None = None
    max_hint_tokens: int = 8
    max_life_tokens: int = 3
    allow_discard_at_max_hints: bool = True
    strict_scoring: bool = False

    def __post_init__(self):
        if self.hand_size is None:
            object.__setattr__(self, "hand_size", _default_hand_size(self.n_players))
        if self.n_color < 1:
            raise ValueError("n_color must be >= 1")
        if self.n_rank < 2:
            raise ValueError("n_rank must be >= 2")
        if not 2 <= self.n_players <= 5:
            raise ValueError("n_players must be in [2, 5]")
        if self.hand_size < 1:
            raise ValueError("hand_size must be >= 1")
        if self.max_hint_tokens < 1:
            raise ValueError("max_hint_tokens must be >= 1")
        if self.max_life_tokens < 1:
            raise ValueError("max_life_tokens must be >= 1")
        if self.deck_size < self.n_players * self.hand_size:
            raise ValueError("deck smaller than the initial deal")

    # -- derived sizes ------------------------------------------------------

    @property
    def n_types(self) -> int:
        return self.n_color * self.n_rank

    @property
    def n_cols(self) -> int:
        """Belief/mask columns: one per card type plus the Null column."""
        return self.n_types + 1

    @property
    def n_slots(self) -> int:
        return self.n_players * self.hand_size

    @property
    def deck_size(self) -> int:
        return 2 * self.n_rank * self.n_color

    @property
    def max_score(self) -> int:
        return self.n_types

    @property
    def n_actions(self) -> int:
        return 2 * self.hand_size + (self.n_players - 1) * (self.n_color + self.n_rank) + 1

    @property
    def noaction_id(self) -> int:
        return self.n_actions - 1

    @cached_property
    def fresh_counts(self) -> tuple[int, ...]:
        """Copies of each card type in a fresh deck: 3/2/.../2/1 by rank."""
        per_rank = [3] + [2] * (self.n_rank - 2) + [1]
        return tuple(per_rank[t % self.n_rank] for t in range(self.n_types))

    @cached_property
    def color_bits(self) -> tuple[int, ...]:
        out = []
        for c in range(self.n_color):
            bits = 0
            for r in range(self.n_rank):
                bits |= 1 << (c * self.n_rank + r)
            out.append(bits)
        return tuple(out)

    @cached_property
    def rank_bits(self) -> tuple[int, ...]:
        out = []
        for r in range(self.n_rank):
            bits = 0
            for c in range(self.n_color):
                bits |= 1 << (c * self.n_rank + r)
            out.append(bits)
        return tuple(out)

    @property
    def full_row_mask(self) -> int:
        return (1 << self.n_types) - 1

    @property
    def null_row_mask(self) -> int:
        return 1 << self.n_types

    # -- action id helpers --------------------------------------------------

    def play_id(self, slot: int) -> int:
        return slot

    def discard_id(self, slot: int) -> int:
        return self.hand_size + slot

    def hint_color_id(self, offset: int, color: int) -> int:
        return 2 * self.hand_size + offset * (self.n_color + self.n_rank) + color

    def hint_rank_id(self, offset: int, rank: int) -> int:
        base = 2 * self.hand_size + offset * (self.n_color + self.n_rank)
        return base + self.n_color + (rank - 1)

    def action_meta(self, action: int) -> dict:
        """Decode an action id into a tagged dict (for transcripts and CLIs)."""
        h, cr = self.hand_size, self.n_color + self.n_rank
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action id {action} out of range")
        if action < h:
            return {"kind": "play", "slot": action}
        if action < 2 * h:
            return {"kind": "discard", "slot": action - h}
        if action == self.noaction_id:
            return {"kind": "noaction"}
        rel = action - 2 * h
        offset, sub = divmod(rel, cr)
        if sub < self.n_color:
            return {"kind": "hint", "offset": offset, "hint": "color", "value": sub}
        return {"kind": "hint", "offset": offset, "hint": "rank", "value": sub - self.n_color + 1}

    def card_color(self, card: int) -> int:
        return card // self.n_rank

    def card_rank(self, card: int) -> int:
        return card % self.n_rank + 1

    def signature(self) -> bytes:
        return struct.pack(
            "<6i2B",
            self.n_color, self.n_rank, self.n_players, self.hand_size,
            self.max_hint_tokens, self.max_life_tokens,
            self.allow_discard_at_max_hints, self.strict_scoring,
        )


@dataclass(frozen=True)
class LastAction:
    """Public record of the most recent applied action."""

    action: int
    actor: int
    kind: str                    # "play" | "discard" | "hint"
    slot: int | None = None      # played/discarded slot
    card: int | None = None      # revealed card for play/discard
    success: bool | None = None  # play succeeded
    target: int | None = None    # hinted player (absolute id)
    hint_color: int | None = None
    hint_rank: int | None = None
    touched: int = 0             # bitmask over the target's slots
    refilled: bool = False       # the played/discarded slot drew a new card
    drew_last: bool = False      # that draw emptied the deck


@dataclass
class PublicFeatures:
    """Everything both players can see, as plain arrays."""

    candidates: np.ndarray       # (n_types,) int64: fresh - played - discarded
    hint_mask: np.ndarray        # (n_slots, n_cols) uint8
    fireworks: tuple[int, ...]
    hint_tokens: int
    life_tokens: int
    discards: np.ndarray         # (n_types,) int64
    deck_size: int
    turn: int
    current_player: int
    remaining_turns: int | None
    terminal: bool
    last_action: LastAction | None


@dataclass(frozen=True)
class PrivateObservation:
    """One player's view: the other hands, nearest seat first. Own hand excluded."""

    player: int
    pids: tuple[int, ...]                 # absolute ids, relative order
    hands: tuple[tuple[int, ...], ...]    # card values per pid, EMPTY for holes


class GameState:
    """Mutable engine state. apply_action mutates in place; use copy() to fork."""

    __slots__ = (
        "config", "deck", "deck_ptr", "hands", "hint_rows", "fireworks",
        "hint_tokens", "life_tokens", "discards", "current_player", "turn",
        "remaining_turns", "terminal", "lives_exhausted", "last_action", "seed",
    )

    def __init__(self, config: GameConfig, deck: list[int], seed: int):
        self.config = config
        self.deck = deck
        self.deck_ptr = 0
        self.hands: list[int] = [EMPTY] * config.n_slots
        self.hint_rows: list[int] = [config.null_row_mask] * config.n_slots
        self.fireworks: list[int] = [0] * config.n_color
        self.hint_tokens = config.max_hint_tokens
        self.life_tokens = config.max_life_tokens
        self.discards: list[int] = [0] * config.n_types
        self.current_player = 0
        self.turn = 0
        self.remaining_turns: int | None = None
        self.terminal = False
        self.lives_exhausted = False
        self.last_action: LastAction | None = None
        self.seed = seed

    # -- bookkeeping --------------------------------------------------------

    @property
    def points(self) -> int:
        return sum(self.fireworks)

    @property
    def deck_remaining(self) -> int:
        return len(self.deck) - self.deck_ptr

    def hand(self, player: int) -> list[int]:
        h = self.config.hand_size
        return self.hands[player * h:(player + 1) * h]

    def copy(self) -> "GameState":
        c = GameState.__new__(GameState)
        c.config = self.config
        c.deck = self.deck              # dealt order never mutates
        c.deck_ptr = self.deck_ptr
        c.hands = self.hands[:]
        c.hint_rows = self.hint_rows[:]
        c.fireworks = self.fireworks[:]
        c.hint_tokens = self.hint_tokens
        c.life_tokens = self.life_tokens
        c.discards = self.discards[:]
        c.current_player = self.current_player
        c.turn = self.turn
        c.remaining_turns = self.remaining_turns
        c.terminal = self.terminal
        c.lives_exhausted = self.lives_exhausted
        c.last_action = self.last_action
        c.seed = self.seed
        return c

    def state_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.config.signature())
        h.update(struct.pack("<3i", self.deck_ptr, self.current_player, self.turn))
        h.update(struct.pack(f"<{len(self.hands)}i", *self.hands))
        for row in self.hint_rows:
            h.update(row.to_bytes(8, "little"))
        h.update(struct.pack(f"<{len(self.fireworks)}i", *self.fireworks))
        h.update(struct.pack(f"<{len(self.discards)}i", *self.discards))
        rt = -1 if self.remaining_turns is None else self.remaining_turns
        h.update(struct.pack("<5i", self.hint_tokens, self.life_tokens, rt,
                             int(self.terminal), int(self.lives_exhausted)))
        return h.hexdigest()

    def _draw_into(self, slot: int) -> tuple[bool, bool]:
        """Refill a slot from the deck. Returns (refilled, drew_last)."""
        cfg = self.config
        if self.deck_ptr < len(self.deck):
            self.hands[slot] = self.deck[self.deck_ptr]
            self.hint_rows[slot] = cfg.full_row_mask
            self.deck_ptr += 1
            drew_last = self.deck_ptr == len(self.deck)
            if drew_last:
                self.remaining_turns = cfg.n_players
            return True, drew_last
        self.hands[slot] = EMPTY
        self.hint_rows[slot] = cfg.null_row_mask
        return False, False


def new_game(config: GameConfig, seed: int) -> GameState:
    """Shuffle a fresh deck with PCG64(seed) and deal round-robin by slot."""
    rng = np.random.Generator(np.random.PCG64(seed))
    deck_types = np.repeat(np.arange(config.n_types), config.fresh_counts)
    deck = [int(t) for t in rng.permutation(deck_types)]
    state = GameState(config, deck, seed)
    for i in range(config.hand_size):
        for p in range(config.n_players):
            slot = p * config.hand_size + i
            state.hands[slot] = deck[state.deck_ptr]
            state.hint_rows[slot] = config.full_row_mask
            state.deck_ptr += 1
    if state.deck_ptr == len(deck):
        state.remaining_turns = config.n_players
    return state


def legal_actions(state: GameState, player: int | None = None) -> list[int]:
    """Legal action ids in ascending order. Non-acting players get [NoAction]."""
    cfg = state.config
    if state.terminal:
        raise RuleError("terminal: no legal actions in a finished game")
    p = state.current_player if player is None else player
    if p != state.current_player:
        return [cfg.noaction_id]
    h = cfg.hand_size
    base = p * h
    ids = [s for s in range(h) if state.hands[base + s] != EMPTY]
    if state.hint_tokens < cfg.max_hint_tokens or cfg.allow_discard_at_max_hints:
        ids += [h + s for s in range(h) if state.hands[base + s] != EMPTY]
    if state.hint_tokens > 0:
        for offset in range(cfg.n_players - 1):
            target = (p + 1 + offset) % cfg.n_players
            tbase = target * h
            colors_seen = 0
            ranks_seen = 0
            for s in range(h):
                card = state.hands[tbase + s]
                if card != EMPTY:
                    colors_seen |= 1 << (card // cfg.n_rank)
                    ranks_seen |= 1 << (card % cfg.n_rank)
            ids += [cfg.hint_color_id(offset, c)
                    for c in range(cfg.n_color) if colors_seen >> c & 1]
            ids += [cfg.hint_rank_id(offset, r)
                    for r in range(1, cfg.n_rank + 1) if ranks_seen >> (r - 1) & 1]
    return ids


def apply_action(state: GameState, action: int) -> tuple[GameState, float, bool]:
    """Apply the acting player's action in place; return (state, reward, terminal).

    Raises RuleError naming the violated rule for any illegal action.
    """
    cfg = state.config
    if state.terminal:
        raise RuleError("terminal: game is over")
    if not 0 <= action < cfg.n_actions:
        raise RuleError(f"unknown-action: id {action} out of range")
    p = state.current_player
    h = cfg.hand_size
    countdown_was_on = state.remaining_turns is not None
    reward = 0.0
    meta = cfg.action_meta(action)
    kind = meta["kind"]

    if kind == "noaction":
        raise RuleError("noaction-by-actor: the acting player must move")

    if kind in ("play", "discard"):
        slot = p * h + meta["slot"]
        card = state.hands[slot]
        if card == EMPTY:
            raise RuleError("slot-empty: no card in that slot")
        if kind == "play":
            rank = card % cfg.n_rank + 1
            color = card // cfg.n_rank
            success = state.fireworks[color] == rank - 1
            if success:
                state.fireworks[color] = rank
                reward = 1.0
                if rank == cfg.n_rank and state.hint_tokens < cfg.max_hint_tokens:
                    state.hint_tokens += 1
            else:
                state.discards[card] += 1
                state.life_tokens -= 1
                if state.life_tokens == 0:
                    state.lives_exhausted = True
        else:
            if state.hint_tokens >= cfg.max_hint_tokens and not cfg.allow_discard_at_max_hints:
                raise RuleError("discard-at-max-hints: hint tokens already full")
            state.discards[card] += 1
            if state.hint_tokens < cfg.max_hint_tokens:
                state.hint_tokens += 1
        refilled, drew_last = state._draw_into(slot)
        state.last_action = LastAction(
            action=action, actor=p, kind=kind, slot=meta["slot"], card=card,
            success=(reward > 0) if kind == "play" else None,
            refilled=refilled, drew_last=drew_last,
        )
    else:
        if state.hint_tokens <= 0:
            raise RuleError("no-hint-tokens: hints cost a token")
        target = (p + 1 + meta["offset"]) % cfg.n_players
        tbase = target * h
        touched = 0
        if meta["hint"] == "color":
            color = meta["value"]
            keep = cfg.color_bits[color]
            for s in range(h):
                card = state.hands[tbase + s]
                if card == EMPTY:
                    continue
                if card // cfg.n_rank == color:
                    touched |= 1 << s
                    state.hint_rows[tbase + s] &= keep
                else:
                    state.hint_rows[tbase + s] &= ~keep
            hc, hr = color, None
        else:
            rank = meta["value"]
            keep = cfg.rank_bits[rank - 1]
            for s in range(h):
                card = state.hands[tbase + s]
                if card == EMPTY:
                    continue
                if card % cfg.n_rank == rank - 1:
                    touched |= 1 << s
                    state.hint_rows[tbase + s] &= keep
                else:
                    state.hint_rows[tbase + s] &= ~keep
            hc, hr = None, rank
        if touched == 0:
            raise RuleError("empty-hint: hints must touch at least one card")
        state.hint_tokens -= 1
        state.last_action = LastAction(
            action=action, actor=p, kind="hint", target=target,
            hint_color=hc, hint_rank=hr, touched=touched,
        )

    # end of turn: countdown, terminal checks, advance seat
    if countdown_was_on:
        state.remaining_turns -= 1
    if state.lives_exhausted:
        state.terminal = True
    elif all(f == cfg.n_rank for f in state.fireworks):
        state.terminal = True
    elif state.remaining_turns == 0:
        state.terminal = True
    state.turn += 1
    state.current_player = (p + 1) % cfg.n_players
    return state, reward, state.terminal


def score(state: GameState, strict: bool | None = None) -> int:
    """Fireworks points; zero if lives ran out and strict scoring applies."""
    strict = state.config.strict_scoring if strict is None else strict
    if strict and state.lives_exhausted:
        return 0
    return state.points


def public_features(state: GameState) -> PublicFeatures:
    """Snapshot the public state as arrays (candidates, masks, counters)."""
    cfg = state.config
    played = np.zeros(cfg.n_types, dtype=np.int64)
    for c, top in enumerate(state.fireworks):
        if top:
            played[c * cfg.n_rank:c * cfg.n_rank + top] = 1
    discards = np.array(state.discards, dtype=np.int64)
    candidates = np.array(cfg.fresh_counts, dtype=np.int64) - played - discards
    rows = np.array(state.hint_rows, dtype=np.int64)
    hint_mask = ((rows[:, None] >> np.arange(cfg.n_cols)[None, :]) & 1).astype(np.uint8)
    return PublicFeatures(
        candidates=candidates,
        hint_mask=hint_mask,
        fireworks=tuple(state.fireworks),
        hint_tokens=state.hint_tokens,
        life_tokens=state.life_tokens,
        discards=discards,
        deck_size=state.deck_remaining,
        turn=state.turn,
        current_player=state.current_player,
        remaining_turns=state.remaining_turns,
        terminal=state.terminal,
        last_action=state.last_action,
    )


def private_observation(state: GameState, player: int) -> PrivateObservation:
    """What `player` privately sees: every other hand, nearest seat first."""
    cfg = state.config
    h = cfg.hand_size
    pids = []
    hands = []
    for offset in range(1, cfg.n_players):
        q = (player + offset) % cfg.n_players
        pids.append(q)
        hands.append(tuple(state.hands[q * h:(q + 1) * h]))
    return PrivateObservation(player=player, pids=tuple(pids), hands=tuple(hands))


def count_joint_hands(config: GameConfig, ordered: bool = True,
                      hand_size: int | None = None) -> int:
    """Exact number of distinct joint initial deals, by big-integer DP over types.

    ordered=True counts slot-distinct card-type sequences over all
    n_players * hand_size slots (standard 2-player: 6.2e13, the usual quoted
    size of the joint hidden space); ordered=False counts deals where each
    player's hand is an unordered multiset (players stay distinguishable).
    hand_size overrides the config value (hand_size=0 gives the empty deal, 1).
    """
    caps = config.fresh_counts
    h = config.hand_size if hand_size is None else hand_size
    players = config.n_players
    if ordered:
        n = players * h
        # g[j] = sum over per-type counts summing to j of the multinomial j!/prod n_t!
        g = [0] * (n + 1)
        g[0] = 1
        for cap in caps:
            nxt = [0] * (n + 1)
            for j in range(n + 1):
                gj = g[j]
                if gj:
                    for m in range(0, min(cap, n - j) + 1):
                        nxt[j + m] += gj * math.comb(j + m, m)
            g = nxt
        return g[n]
    # per-player multiset counts: DP over types on a tuple of per-player fill levels
    states: dict[tuple[int, ...], int] = {(0,) * players: 1}
    for cap in caps:
        nxt: dict[tuple[int, ...], int] = {}
        for fill, ways in states.items():
            for alloc in _allocations(cap, fill, h, players):
                key = tuple(f + a for f, a in zip(fill, alloc))
                nxt[key] = nxt.get(key, 0) + ways
        states = nxt
    return states.get((h,) * players, 0)


def _allocations(cap: int, fill: tuple[int, ...], h: int, players: int):
    """All ways to hand out up to `cap` copies of one type across players."""
    out = [()]
    for p in range(players):
        room = h - fill[p]
        out = [pre + (a,) for pre in out for a in range(0, room + 1)]
    for alloc in out:
        if sum(alloc) <= cap:
            yield alloc
