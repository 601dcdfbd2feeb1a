"""Two-step matrix game with hidden bits and an exhaustive optimal oracle.

Each player privately holds one uniform random bit. Player 1 picks u1 from
three actions, player 2 observes u1 (not the bits) and picks u2; the single
terminal reward is payoff[card1][card2][u1][u2]. The game is small enough
that public beliefs stay exact and every deterministic strategy profile can
be enumerated, which makes it the reference check for belief-conditioned
training: the oracle optimum is only reachable when u1 carries information
about card1.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

N_CARDS = 2
N_ACTIONS = 3

STAGE_P1 = 0
STAGE_P2 = 1
STAGE_DONE = 2


class InconsistencyError(ValueError):
    """Observed action has zero probability under the belief and policy."""


@dataclass(frozen=True)
class PayoffTensor:
    """Reward lookup indexed [card1][card2][u1][u2]; shape (2, 2, 3, 3)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_CARDS, N_CARDS, N_ACTIONS, N_ACTIONS):
            raise ValueError(f"payoff tensor must be 2x2x3x3, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("payoff tensor must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_json(cls, path) -> "PayoffTensor":
        with open(path) as fh:
            return cls(np.array(json.load(fh), dtype=np.float64))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.values.tolist(), fh, indent=1)
            fh.write("\n")


@dataclass(frozen=True)
class MGState:
    payoff: PayoffTensor
    card1: int
    card2: int
    stage: int = STAGE_P1
    u1: int | None = None
    u2: int | None = None
    reward: float | None = None


def mg_new(payoff: PayoffTensor, seed: int) -> MGState:
    rng = np.random.Generator(np.random.PCG64(seed))
    c1, c2 = rng.integers(0, N_CARDS, size=2)
    return MGState(payoff=payoff, card1=int(c1), card2=int(c2))


def mg_step(state: MGState, action: int) -> tuple[MGState, float | None, bool]:
    """Advance one stage; reward appears only on player 2's move."""
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action {action} out of range")
    if state.stage == STAGE_P1:
        return replace(state, stage=STAGE_P2, u1=action), None, False
    if state.stage == STAGE_P2:
        r = float(state.payoff.values[state.card1, state.card2, state.u1, action])
        return replace(state, stage=STAGE_DONE, u2=action, reward=r), r, True
    raise ValueError("game already done")


def mg_exact_public_update(belief: np.ndarray, partial_policy, observed: int) -> np.ndarray:
    """Posterior over one player's card: keep mass where the map picked `observed`."""
    prior = np.asarray(belief, dtype=np.float64)
    pmap = np.asarray(partial_policy, dtype=np.int64)
    post = prior * (pmap == observed)
    z = post.sum()
    if z <= 0.0:
        raise InconsistencyError(
            f"action {observed} impossible under the given map and prior")
    return post / z


def mg_profile_value(payoff: PayoffTensor, p1_map, p2_map) -> float:
    """Expected reward of a deterministic profile under uniform cards.

    p1_map[c1] -> u1; p2_map[c2][u1] -> u2.
    """
    v = payoff.values
    total = 0.0
    for c1 in range(N_CARDS):
        u1 = p1_map[c1]
        for c2 in range(N_CARDS):
            total += v[c1, c2, u1, p2_map[c2][u1]]
    return total / (N_CARDS * N_CARDS)


def _all_p1_maps():
    return list(itertools.product(range(N_ACTIONS), repeat=N_CARDS))


def _all_p2_maps():
    # one action per (card2, u1) cell
    for flat in itertools.product(range(N_ACTIONS), repeat=N_CARDS * N_ACTIONS):
        yield (flat[:N_ACTIONS], flat[N_ACTIONS:])


@dataclass(frozen=True)
class OracleReport:
    optimal_value: float
    optimal_p1: tuple[int, ...]
    optimal_p2: tuple[tuple[int, ...], ...]
    best_nonsignalling_value: float
    n_profiles: int


def mg_oracle_report(payoff: PayoffTensor) -> OracleReport:
    """Exhaustive search over all 9 x 729 deterministic strategy profiles."""
    best = -np.inf
    best_profile = None
    best_flat = -np.inf
    n = 0
    for p1 in _all_p1_maps():
        constant = p1[0] == p1[1]
        for p2 in _all_p2_maps():
            n += 1
            val = mg_profile_value(payoff, p1, p2)
            if val > best:
                best, best_profile = val, (p1, p2)
            if constant and val > best_flat:
                best_flat = val
    return OracleReport(
        optimal_value=float(best),
        optimal_p1=best_profile[0],
        optimal_p2=best_profile[1],
        best_nonsignalling_value=float(best_flat),
        n_profiles=n,
    )


def mg_optimal_value(payoff: PayoffTensor) -> float:
    return mg_oracle_report(payoff).optimal_value


def fixture_payoff_path() -> str:
    """Path of the payoff tensor shipped with the package."""
    return str(resources.files("hanalab").joinpath("fixtures/matrix_payoff.json"))


def fixture_meta_path() -> str:
    return str(resources.files("hanalab").joinpath("fixtures/matrix_payoff.meta.json"))


def load_fixture() -> tuple[PayoffTensor, dict]:
    payoff = PayoffTensor.from_json(fixture_payoff_path())
    with open(fixture_meta_path()) as fh:
        meta = json.load(fh)
    return payoff, meta
