"""Evaluation and reporting: score statistics, belief-quality curves,
transcript dumps with replay verification, and convention statistics.

Everything here is deterministic given (parameters, seed, n_games): per-game
seeds come from the same derivation chain the trainer uses, so results are
reproducible across processes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import beliefs, hanabi, pubmdp
from .beliefs import BeliefConfig
from .hanabi import GameConfig
from .learner import HANABI_HORIZON, TrainConfig, _ce_entry, rollout_hanabi

EVAL_INV_TEMP = 100.0
TRANSCRIPT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# score statistics


@dataclass(frozen=True)
class ScoreStats:
    """Summary of one evaluation run.

    mean/sem/histogram cover the selected scoring mode; strict_mean is always
    the strict-mode (zero on lives exhausted) average. histogram[k] counts
    games that scored k, indices 0..max_score.
    """

    n_games: int
    mean: float
    sem: float
    prop_perfect: float
    strict_mean: float
    histogram: tuple[int, ...]

    @classmethod
    def from_scores(cls, scores, strict_scores, max_score: int,
                    strict: bool = False) -> "ScoreStats":
        basis = np.asarray(strict_scores if strict else scores, dtype=np.int64)
        strict_arr = np.asarray(strict_scores, dtype=np.int64)
        n = basis.size
        if n == 0:
            raise ValueError("no games to summarise")
        hist = np.bincount(basis, minlength=max_score + 1)
        if hist.size > max_score + 1:
            raise ValueError("score above max_score")
        sem = float(basis.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(
            n_games=int(n),
            mean=float(basis.mean()),
            sem=sem,
            prop_perfect=float((basis == max_score).mean()),
            strict_mean=float(strict_arr.mean()),
            histogram=tuple(int(c) for c in hist),
        )


# ---------------------------------------------------------------------------
# policies


def _resolve_params(checkpoint, game: GameConfig, variant: str) -> dict:
    """Accept in-memory parameters or a checkpoint path (hash-verified)."""
    if isinstance(checkpoint, dict):
        return checkpoint
    params, _ = pubmdp.load_checkpoint(
        checkpoint, expected_hash=pubmdp.run_config_hash(game, variant))
    return params


def random_rollout(game: GameConfig, bcfg: BeliefConfig, episode_seed: int,
                   *, collect_ce: bool = False, trace: list | None = None,
                   horizon: int = HANABI_HORIZON,
                   sample_count: int | None = None) -> dict:
    """One game played uniformly at random over legal actions.

    Belief state is tracked only when requested; with no sampled policy the
    likelihood stays flat, so BB coincides with V1 and V2 equals V1.
    """
    rng = np.random.Generator(np.random.PCG64(episode_seed))
    state = hanabi.new_game(game, episode_seed)
    track = collect_ce or trace is not None
    feats = hanabi.public_features(state) if track else None
    belief = pubmdp.initial_beliefs(game, feats, bcfg) if track else None
    info = {"score": 0, "length": 0, "skipped": 0, "fallbacks": 0,
            "ce": {"v0": [], "v1": [], "v2": []}}
    if collect_ce:
        for name, entry in _ce_entry(belief, state.hands).items():
            info["ce"][name].append(entry)
    for t in range(horizon):
        if state.terminal:
            break
        actor = state.current_player
        legal = hanabi.legal_actions(state)
        u = int(legal[rng.integers(len(legal))])
        hands_before = list(state.hands)
        _, r, _ = hanabi.apply_action(state, u)
        if track:
            feats_post = hanabi.public_features(state)
            belief = pubmdp.public_belief_transition(
                game, belief.likelihood, feats, feats_post, None, u, actor,
                bcfg, pubmdp.derive_seed(episode_seed, t, 1),
                v2_pre=belief.v2, sample_count=sample_count)
            feats = feats_post
            if collect_ce:
                for name, entry in _ce_entry(belief, state.hands).items():
                    info["ce"][name].append(entry)
            if trace is not None:
                la = feats.last_action
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
        info["length"] = t + 1
    info["score"] = hanabi.score(state, strict=False)
    info["score_strict"] = hanabi.score(state, strict=True)
    info["terminal"] = state.terminal
    return info


def _play_games(checkpoint, game, bcfg, n_games, seed, *, inv_temp, variant,
                sample_count, policy, horizon, collect_ce=False,
                trace_sink=None, start=0):
    """Shared evaluation loop; yields (game_index, info) pairs.

    Per-game seeds depend only on (seed, absolute game index), so a run split
    into index ranges across workers reproduces the single-process results.
    """
    if policy == "net":
        params = _resolve_params(checkpoint, game, variant)
    elif policy == "random":
        params = None
    else:
        raise ValueError(f"unknown policy {policy!r}")
    if sample_count is None:
        sample_count = bcfg.sample_count_eval
    cfg = TrainConfig(inv_temp=inv_temp)
    for i in range(start, start + n_games):
        eseed = pubmdp.derive_seed(seed, i)
        trace = [] if trace_sink is not None else None
        if policy == "random":
            info = random_rollout(game, bcfg, eseed, collect_ce=collect_ce,
                                  trace=trace, horizon=horizon,
                                  sample_count=sample_count)
        else:
            _, info = rollout_hanabi(game, params, bcfg, cfg, eseed,
                                     variant=variant, horizon=horizon,
                                     sample_count=sample_count,
                                     collect_ce=collect_ce, record=False,
                                     trace=trace)
        if trace_sink is not None:
            trace_sink(i, eseed, trace, info)
        yield i, info


def evaluate_scores(checkpoint, game: GameConfig, bcfg: BeliefConfig,
                    n_games: int, seed: int, *, start: int = 0,
                    inv_temp: float = EVAL_INV_TEMP, variant: str = "v2",
                    sample_count: int | None = None, policy: str = "net",
                    horizon: int = HANABI_HORIZON) -> tuple[list, list]:
    """(scores, strict scores) for game indices [start, start + n_games)."""
    scores, stricts = [], []
    for _, info in _play_games(checkpoint, game, bcfg, n_games, seed,
                               inv_temp=inv_temp, variant=variant,
                               sample_count=sample_count, policy=policy,
                               horizon=horizon, start=start):
        scores.append(info["score"])
        stricts.append(info["score_strict"])
    return scores, stricts


def evaluate(checkpoint, game: GameConfig, bcfg: BeliefConfig,
             n_games: int = 1000, seed: int = 0, *,
             inv_temp: float = EVAL_INV_TEMP, strict: bool = False,
             variant: str = "v2", sample_count: int | None = None,
             policy: str = "net",
             horizon: int = HANABI_HORIZON) -> ScoreStats:
    """Self-play over n_games fresh seeds; both scoring modes in one pass.

    checkpoint is a parameter dict or a checkpoint path; paths are refused
    when the stored config hash does not match (game, variant).
    """
    scores, stricts = evaluate_scores(checkpoint, game, bcfg, n_games, seed,
                                      inv_temp=inv_temp, variant=variant,
                                      sample_count=sample_count,
                                      policy=policy, horizon=horizon)
    return ScoreStats.from_scores(scores, stricts, game.max_score,
                                  strict=strict)


# ---------------------------------------------------------------------------
# belief-quality curves


def belief_quality_report(checkpoint, game: GameConfig, bcfg: BeliefConfig,
                          n_games: int = 100, seed: int = 0, *,
                          inv_temp: float = EVAL_INV_TEMP,
                          variant: str = "v2",
                          sample_count: int | None = None,
                          policy: str = "net",
                          horizon: int = HANABI_HORIZON) -> list[dict]:
    """Per-timestep mean cross entropy of each belief variant vs true hands.

    Row t describes beliefs after t actions (t=0 is the fresh deal). Means
    pool occupied slots only; n counts games still contributing at t.
    """
    acc: dict[int, dict] = {}
    for _, info in _play_games(checkpoint, game, bcfg, n_games, seed,
                               inv_temp=inv_temp, variant=variant,
                               sample_count=sample_count, policy=policy,
                               horizon=horizon, collect_ce=True):
        for t in range(len(info["ce"]["v0"])):
            if info["ce"]["v0"][t][1] == 0:
                continue
            slot = acc.setdefault(t, {"v0": [0.0, 0], "v1": [0.0, 0],
                                      "v2": [0.0, 0], "n": 0})
            slot["n"] += 1
            for name in ("v0", "v1", "v2"):
                s, c = info["ce"][name][t]
                slot[name][0] += s
                slot[name][1] += c
    rows = []
    for t in sorted(acc):
        slot = acc[t]
        rows.append({
            "t": t,
            "ce_v0": slot["v0"][0] / slot["v0"][1],
            "ce_v1": slot["v1"][0] / slot["v1"][1],
            "ce_v2": slot["v2"][0] / slot["v2"][1],
            "n": slot["n"],
        })
    return rows


def write_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["t", "ce_v0", "ce_v1",
                                                "ce_v2", "n"])
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# transcripts


def transcript_dump(checkpoint, game: GameConfig, bcfg: BeliefConfig,
                    n_games: int = 100, seed: int = 0, *, path,
                    inv_temp: float = EVAL_INV_TEMP, variant: str = "v2",
                    sample_count: int | None = None, policy: str = "net",
                    horizon: int = HANABI_HORIZON) -> dict:
    """Dump full per-turn game records as JSONL; returns a run summary.

    Line types: game_start (config + initial state hash), turn (action,
    meta, hands before, V2 belief, state hash after), game_end (scores).
    """
    path = Path(path)
    turn_records = []
    n_turns = 0

    with open(path, "w") as fh:
        def sink(i, eseed, trace, info):
            nonlocal n_turns
            initial = hanabi.new_game(game, eseed)
            fh.write(json.dumps({
                "type": "game_start",
                "schema_version": TRANSCRIPT_SCHEMA_VERSION,
                "game": i, "seed": eseed,
                "config": dataclasses.asdict(game),
                "state_hash": initial.state_hash(),
            }) + "\n")
            for rec in trace:
                out = {"type": "turn", "game": i, **rec}
                turn_records.append(out)
                fh.write(json.dumps(out) + "\n")
            n_turns += len(trace)
            fh.write(json.dumps({
                "type": "game_end", "game": i,
                "score": info["score"],
                "score_strict": info["score_strict"],
                "length": info["length"],
                "perfect": info["score"] == game.max_score,
            }) + "\n")

        for _ in _play_games(checkpoint, game, bcfg, n_games, seed,
                             inv_temp=inv_temp, variant=variant,
                             sample_count=sample_count, policy=policy,
                             horizon=horizon, trace_sink=sink):
            pass

    return {
        "games": n_games,
        "turns": n_turns,
        "path": str(path),
        "convention": convention_statistic(turn_records,
                                           hand_size=game.hand_size),
    }


def _iter_records(source):
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)
    else:
        yield from source


def verify_transcript(source) -> dict:
    """Replay a transcript through the engine, checking every state hash.

    Raises ValueError naming the first mismatching record. Returns counts.
    """
    games = 0
    turns = 0
    state = None
    cfg = None
    for rec in _iter_records(source):
        kind = rec.get("type")
        if kind == "game_start":
            if rec.get("schema_version") != TRANSCRIPT_SCHEMA_VERSION:
                raise ValueError(
                    f"game {rec.get('game')}: unsupported schema version "
                    f"{rec.get('schema_version')}")
            cfg = GameConfig(**rec["config"])
            state = hanabi.new_game(cfg, rec["seed"])
            if state.state_hash() != rec["state_hash"]:
                raise ValueError(f"game {rec['game']}: initial state hash "
                                 "mismatch")
            games += 1
        elif kind == "turn":
            if state is None:
                raise ValueError("turn record before game_start")
            hanabi.apply_action(state, rec["action"])
            if state.state_hash() != rec["state_hash"]:
                raise ValueError(f"game {rec['game']} turn {rec['t']}: "
                                 "state hash mismatch")
            turns += 1
        elif kind == "game_end":
            if state is None:
                raise ValueError("game_end record before game_start")
            if hanabi.score(state, strict=False) != rec["score"] or \
                    hanabi.score(state, strict=True) != rec["score_strict"]:
                raise ValueError(f"game {rec['game']}: final score mismatch")
            state = None
        else:
            raise ValueError(f"unknown record type {kind!r}")
    return {"games": games, "turns": turns}


def convention_statistic(source, hand_size: int | None = None) -> dict:
    """Fraction of colour hints answered by the target playing their newest
    card on the very next turn. Descriptive only; conventions are emergent.

    The newest card is the most recently refilled slot (the last-dealt slot
    before any draws). Accepts a transcript path or an iterable of records.
    """
    per_game: dict[int, list] = {}
    sizes: dict[int, int] = {}
    for rec in _iter_records(source):
        if rec.get("type") == "game_start":
            sizes[rec["game"]] = rec["config"]["hand_size"]
        elif rec.get("type", "turn") == "turn":
            per_game.setdefault(rec.get("game", 0), []).append(rec)
    hints = 0
    hits = 0
    for g, recs in per_game.items():
        h = sizes.get(g, hand_size)
        if h is None:
            raise ValueError("hand_size unknown: pass it or include "
                             "game_start records")
        newest: dict[int, int] = {}
        pending = None  # target of a colour hint on the previous turn
        for rec in recs:
            meta = rec["meta"]
            if pending is not None:
                if (rec["actor"] == pending and meta["kind"] == "play"
                        and meta["slot"] == newest.get(pending, h - 1)):
                    hits += 1
                pending = None
            if meta["kind"] == "hint" and meta["hint_color"] is not None:
                hints += 1
                pending = meta["target"]
            elif meta["kind"] in ("play", "discard") and meta["refilled"]:
                newest[rec["actor"]] = meta["slot"]
    return {
        "color_hints": hints,
        "newest_card_plays": hits,
        "fraction": hits / hints if hints else float("nan"),
    }
