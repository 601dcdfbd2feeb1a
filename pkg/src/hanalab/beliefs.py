"""Factorised public-belief machinery.

Beliefs are per-slot rows over n_types card columns plus a trailing Null
column (index n_types). Emptiness is public: an empty slot's hint-mask row is
exactly {Null}, so its belief row is a point mass there, and occupied rows
carry no Null mass. All operations broadcast over leading batch dimensions
and are pure functions of their inputs.

The belief family:

    V0   row i ∝ candidates * hint_mask[i]          (grounded counting only)
    V1   K sweeps of row i ∝ clamp(candidates - sum_{j != i} B[j], 0) * HM[i]
    BB   same sweeps with an extra per-slot likelihood factor L accumulated
         from observed actions under sampled deterministic partial policies
    V2   (1 - alpha) * BB + alpha * V1

The likelihood factor for a slot value v multiplies in

    E[1(hand[slot] = v) * 1(policy(hand) = observed)] / E[1(hand[slot] = v)]

estimated over sampled (or exhaustively enumerated, weighted) joint hands:
the probability of the observed action given that slot value. Evidence lands
on the slots the acting player can see, i.e. every slot outside the actor's
own hand; the actor's own rows stay untouched (their action cannot reveal
cards they never saw).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NULL_IDX = -1  # the Null column is always the last one

CE_FLOOR = 1e-12


class DegenerateBeliefError(ValueError):
    """A belief row lost all its mass (mask and candidates inconsistent)."""


@dataclass(frozen=True)
class BeliefConfig:
    iterations: int = 100
    v1_mixin: float = 0.01
    sample_count_train: int = 3000
    sample_count_eval: int = 20000
    oversample: int = 5
    likelihood_floor: float = 1e-10
    exhaustive_samples: bool = False   # enumerate-and-weight instead of Monte Carlo

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.v1_mixin <= 1.0:
            raise ValueError("v1_mixin must be in [0, 1]")
        if self.sample_count_train <= 0 or self.sample_count_eval <= 0:
            raise ValueError("sample counts must be positive")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")
        if self.likelihood_floor <= 0:
            raise ValueError("likelihood_floor must be positive")


@dataclass
class HandSamples:
    """Joint hand assignments drawn from (or enumerating) a factorised belief."""

    hands: np.ndarray              # (n, n_slots) int16, Null encoded as n_types
    accepted: int                  # legal samples kept (== len(hands))
    requested: int                 # how many the caller asked for
    attempted: int                 # draws made before filtering
    weights: np.ndarray | None = None  # belief weights for exhaustive enumeration

    @property
    def complete(self) -> bool:
        return self.accepted >= self.requested

    @property
    def empty(self) -> bool:
        return self.accepted == 0


def _check_rows(out: np.ndarray) -> None:
    if not np.isfinite(out).all():
        raise DegenerateBeliefError("non-finite belief row")


def v0_belief(candidates: np.ndarray, hint_mask: np.ndarray) -> np.ndarray:
    """Grounded belief: candidate counts masked by hints, row-normalised."""
    cand = np.asarray(candidates, dtype=np.float64)
    hm = np.asarray(hint_mask, dtype=np.float64)
    weights = np.concatenate(
        [cand[..., None, :] * hm[..., :-1], hm[..., -1:]], axis=-1)
    z = weights.sum(axis=-1, keepdims=True)
    if (z <= 0.0).any():
        raise DegenerateBeliefError("hint mask admits no candidate for a slot")
    out = weights / z
    _check_rows(out)
    return out


def _iterate(start: np.ndarray, candidates: np.ndarray, weights: np.ndarray,
             iterations: int, tol: float = 1e-9):
    """Shared V1/BB fixed-point sweep; weights = HM or HM * L.

    Returns (belief, fallback_flags). A slot whose updated row loses all mass
    keeps its previous row and is flagged.

    On small decks the simultaneous update can overshoot the shared counts and
    settle into a period-2 flip-flop whose phases each zero out cards that are
    actually possible. When two iterates apart match but adjacent ones do not,
    the sweep stops and returns the average of the two phases (the orbit's
    time average), which keeps every card alive that either phase allows.
    """
    cand = np.asarray(candidates, dtype=np.float64)[..., None, :]
    w = np.asarray(weights, dtype=np.float64)
    b = np.array(start, dtype=np.float64)
    flags = np.zeros(b.shape[:-1], dtype=bool)
    prev = None
    for _ in range(iterations):
        types = b[..., :-1]
        others = types.sum(axis=-2, keepdims=True) - types
        bracket = np.maximum(cand - others, 0.0)
        unnorm = np.concatenate([bracket * w[..., :-1], w[..., -1:]], axis=-1)
        z = unnorm.sum(axis=-1, keepdims=True)
        dead = z[..., 0] <= 0.0
        if dead.any():
            flags |= dead
            unnorm = np.where(dead[..., None], b, unnorm)
            z = np.where(dead[..., None], 1.0, z)
        nxt = unnorm / z
        if np.max(np.abs(nxt - b)) < tol:
            b = nxt
            break
        if prev is not None and np.max(np.abs(nxt - prev)) < tol:
            b = 0.5 * (nxt + b)
            break
        prev, b = b, nxt
    _check_rows(b)
    return b, flags


def v1_iterate(belief: np.ndarray, candidates: np.ndarray, hint_mask: np.ndarray,
               iterations: int, return_flags: bool = False):
    """Self-consistent iteration from a starting belief (usually V0)."""
    hm = np.asarray(hint_mask, dtype=np.float64)
    out, flags = _iterate(belief, candidates, hm, iterations)
    return (out, flags) if return_flags else out


def bb_belief(candidates: np.ndarray, hint_mask: np.ndarray, likelihood: np.ndarray,
              iterations: int, return_flags: bool = False):
    """Action-conditioned belief: V0-style seed and sweeps, weighted by L."""
    hm = np.asarray(hint_mask, dtype=np.float64)
    lk = np.asarray(likelihood, dtype=np.float64)
    w = hm * lk
    cand = np.asarray(candidates, dtype=np.float64)
    seed = np.concatenate(
        [cand[..., None, :] * w[..., :-1], w[..., -1:]], axis=-1)
    z = seed.sum(axis=-1, keepdims=True)
    if (z <= 0.0).any():
        raise DegenerateBeliefError("likelihood and mask admit no candidate")
    out, flags = _iterate(seed / z, candidates, w, iterations)
    return (out, flags) if return_flags else out


def v2_belief(bb: np.ndarray, v1: np.ndarray, alpha: float) -> np.ndarray:
    """Interpolate toward V1 to keep rare hands alive under sampling."""
    mix = (1.0 - alpha) * np.asarray(bb, dtype=np.float64) \
        + alpha * np.asarray(v1, dtype=np.float64)
    z = mix.sum(axis=-1, keepdims=True)
    return mix / z


def sample_hands(belief: np.ndarray, candidates: np.ndarray, count: int,
                 oversample: int, seed) -> HandSamples:
    """Draw joint hands slot-independently, keep the first `count` legal ones.

    `seed` may be an integer or a numpy Generator. Legality means the joint
    assignment never uses more copies of a type than `candidates` allows
    (Null entries use nothing). Determinism: a fixed seed fixes the draws.
    """
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.Generator(np.random.PCG64(seed))
    b = np.asarray(belief, dtype=np.float64)
    n_slots, n_cols = b.shape
    attempts = count * oversample
    cdf = np.cumsum(b, axis=-1)
    cdf[:, -1] = 1.0
    u = rng.random((attempts, n_slots))
    hands = np.empty((attempts, n_slots), dtype=np.int16)
    for s in range(n_slots):
        hands[:, s] = np.searchsorted(cdf[s], u[:, s], side="right")
    np.minimum(hands, n_cols - 1, out=hands)
    legal = _legal_mask(hands, candidates, n_cols)
    keep = np.flatnonzero(legal)[:count]
    return HandSamples(hands=hands[keep], accepted=len(keep),
                       requested=count, attempted=attempts)


def _legal_mask(hands: np.ndarray, candidates: np.ndarray, n_cols: int) -> np.ndarray:
    n, n_slots = hands.shape
    flat = hands.astype(np.int64) + np.arange(n, dtype=np.int64)[:, None] * n_cols
    counts = np.bincount(flat.ravel(), minlength=n * n_cols).reshape(n, n_cols)
    cand = np.asarray(candidates, dtype=np.int64)
    return (counts[:, :-1] <= cand[None, :]).all(axis=1)


def enumerate_hands(belief: np.ndarray, candidates: np.ndarray,
                    hint_mask: np.ndarray) -> HandSamples:
    """Every deck-consistent joint hand allowed by the mask, belief-weighted.

    Exhaustive stand-in for sample_hands on mini games: weights are the
    factorised belief products, so weighted averages over these samples are
    exact expectations under the legality-restricted belief.
    """
    b = np.asarray(belief, dtype=np.float64)
    hm = np.asarray(hint_mask)
    n_slots, n_cols = b.shape
    domains = [np.flatnonzero(hm[s]) for s in range(n_slots)]
    grids = np.meshgrid(*domains, indexing="ij")
    hands = np.stack([g.ravel() for g in grids], axis=1).astype(np.int16)
    legal = _legal_mask(hands, candidates, n_cols)
    hands = hands[legal]
    weights = np.ones(len(hands), dtype=np.float64)
    for s in range(n_slots):
        weights *= b[s, hands[:, s]]
    keep = weights > 0.0
    return HandSamples(hands=hands[keep], accepted=int(keep.sum()),
                       requested=int(keep.sum()), attempted=len(legal),
                       weights=weights[keep])


def evidence_multipliers(samples: HandSamples, partial_policy, observed: int,
                    n_cols: int) -> np.ndarray:
    """Evidence multipliers, one row per slot the partial policy observes.

    Multiplier[slot, v] is the sample estimate of
    P(policy output = observed | hand[slot] = v): the ratio of the two
    indicator expectations over the (weighted) sampled hands. Values absent
    from the samples carry no evidence and get multiplier 1.
    """
    acts = np.asarray(partial_policy.act_on_hands(samples.hands))
    w = samples.weights if samples.weights is not None \
        else np.ones(samples.accepted, dtype=np.float64)
    match_w = w * (acts == observed)
    slots = np.asarray(partial_policy.observed_slots, dtype=np.int64)
    k = len(slots)
    vals = samples.hands[:, slots].astype(np.int64)
    flat = (vals + np.arange(k, dtype=np.int64)[None, :] * n_cols).ravel()
    denom = np.bincount(flat, weights=np.repeat(w, k),
                        minlength=k * n_cols).reshape(k, n_cols)
    numer = np.bincount(flat, weights=np.repeat(match_w, k),
                        minlength=k * n_cols).reshape(k, n_cols)
    safe = np.where(denom > 0.0, denom, 1.0)
    return np.where(denom > 0.0, numer / safe, 1.0)


def likelihood_update(L: np.ndarray, samples: HandSamples, partial_policy,
                      observed: int, actor: int,
                      floor: float = 1e-10) -> np.ndarray:
    """Fold one observed action into the likelihood table.

    partial_policy must expose `observed_slots` (absolute slot indices the
    actor can see; these are the rows that receive evidence, per the module
    docstring) and `act_on_hands(hands) -> actions` evaluating the
    deterministic map on each sampled joint hand. Updated rows are floored
    and max-renormalised to dodge underflow over long games. The actor's own
    rows are unchanged.
    """
    out = np.array(L, dtype=np.float64)
    if samples.empty:
        return out
    n_cols = out.shape[-1]
    slots = np.asarray(partial_policy.observed_slots, dtype=np.int64)
    mult = evidence_multipliers(samples, partial_policy, observed, n_cols)
    rows = np.maximum(out[slots] * mult, floor)
    rows /= rows.max(axis=-1, keepdims=True)
    out[slots] = rows
    return out


def reset_slot(L: np.ndarray, slot: int) -> np.ndarray:
    """A freshly drawn card carries no action evidence yet."""
    out = np.array(L, dtype=np.float64)
    out[..., slot, :] = 1.0
    return out


def cross_entropy(belief: np.ndarray, true_hand: np.ndarray) -> float:
    """Mean -ln P(true card) over occupied slots; empty slots are skipped."""
    b = np.asarray(belief, dtype=np.float64)
    truth = np.asarray(true_hand, dtype=np.int64)
    n_cols = b.shape[-1]
    occupied = truth != n_cols - 1
    if not occupied.any():
        return 0.0
    p = b[occupied, truth[occupied]]
    return float(-np.log(np.maximum(p, CE_FLOOR)).mean())


def per_slot_neg_log(belief: np.ndarray, true_hand: np.ndarray):
    """(-ln P(true card) per slot, occupied mask); for report aggregation."""
    b = np.asarray(belief, dtype=np.float64)
    truth = np.asarray(true_hand, dtype=np.int64)
    n_cols = b.shape[-1]
    occupied = truth != n_cols - 1
    idx = np.where(occupied, truth, 0)
    p = np.take_along_axis(b, idx[..., None], axis=-1)[..., 0]
    return -np.log(np.maximum(p, CE_FLOOR)), occupied
