"""Engine for one-stage sequential games with finite action sets.

A single leader (player 0) commits to an action; followers then play a
simultaneous game.  Payoffs come from a :class:`PayoffOracle`, any pure
callable mapping a strategy profile (tuple of action indices, leader first)
to an :class:`Outcome`.
"""
from __future__ import annotations

import itertools
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

Profile = tuple  # one action index per player, leader first

DEFAULT_TOLERANCE = 1e-9
POLICIES = ("optimistic", "pessimistic")
TIE_BREAKS = ("lexicographic", "profile-index")


class DegenerateGameError(ValueError):
    pass


class NoEquilibriumError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionSpace:
    player_id: int
    actions: tuple

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise DegenerateGameError(f"degenerate game: player {self.player_id} has no actions")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError(f"player {self.player_id} has duplicate actions")

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, index):
        return self.actions[index]


@dataclass(frozen=True)
class MetricsTriple:
    customer_cost: float
    emission_cost: float
    public_revenue: float

    def __post_init__(self):
        for name in ("customer_cost", "emission_cost", "public_revenue"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.customer_cost, self.emission_cost, self.public_revenue)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"metrics must be finite, got {vals}")
        # tiny negatives are solver noise
        if self.customer_cost < -1e-9 or self.emission_cost < -1e-9:
            raise ValueError(f"costs must be non-negative, got {vals}")

    def as_tuple(self):
        return (self.customer_cost, self.emission_cost, self.public_revenue)


@dataclass(frozen=True)
class Outcome:
    payoffs: tuple
    metrics: MetricsTriple
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "payoffs", tuple(float(v) for v in self.payoffs))


PayoffOracle = Callable[[Profile], Outcome]


@dataclass(frozen=True)
class WelfareWeights:
    """Weights on customer cost, emission cost and public revenue."""

    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        ks = (self.k1, self.k2, self.k3)
        if any(k < 0 or not math.isfinite(k) for k in ks):
            raise ValueError(f"weights must be finite and non-negative, got {ks}")
        if not any(ks):
            raise ValueError("weights must not all be zero")

    def welfare(self, metrics: MetricsTriple) -> float:
        return -self.k1 * metrics.customer_cost - self.k2 * metrics.emission_cost + self.k3 * metrics.public_revenue


@dataclass(frozen=True)
class EquilibriumRecord:
    profile: Profile
    payoffs: tuple
    metrics: MetricsTriple
    leader_welfare: float


class MemoizedOracle:
    """Thread-safe memo cache in front of a pure payoff oracle."""

    def __init__(self, oracle: PayoffOracle):
        self.oracle = oracle
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.calls = 0

    def __call__(self, profile: Profile) -> Outcome:
        key = tuple(int(i) for i in profile)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = self.oracle(key)
        with self._lock:
            self.calls += 1
            return self._cache.setdefault(key, out)


def _sizes(spaces) -> tuple:
    sizes = tuple(len(s) for s in spaces)
    if any(n == 0 for n in sizes):
        raise DegenerateGameError("degenerate game: empty follower action space")
    return sizes


def evaluate_profiles(profiles: Sequence[Profile], oracle: PayoffOracle, threads: int = 1) -> list:
    """Evaluate profiles, optionally on a thread pool; order of results follows ``profiles``."""
    if threads <= 1 or len(profiles) < 2:
        return [oracle(p) for p in profiles]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(oracle, profiles))


def follower_payoffs(follower_spaces, oracle: PayoffOracle, leader_action: int, threads: int = 1):
    """Payoff tensors (one per follower) and outcomes over the follower product space."""
    sizes = _sizes(follower_spaces)
    profiles = [(leader_action, *idx) for idx in itertools.product(*(range(n) for n in sizes))]
    outcomes = evaluate_profiles(profiles, oracle, threads)
    n_f = len(sizes)
    tensors = [np.empty(sizes) for _ in range(n_f)]
    for prof, out in zip(profiles, outcomes):
        for k in range(n_f):
            tensors[k][prof[1:]] = out.payoffs[k + 1]
    return tensors, dict(zip(profiles, outcomes))


def _nash_mask(tensors, tolerance):
    if not tensors:
        return np.ones((), dtype=bool)
    mask = np.ones(tensors[0].shape, dtype=bool)
    for k, U in enumerate(tensors):
        best = U.max(axis=k, keepdims=True)
        mask &= U >= best - tolerance
    return mask


def enumerate_pure_nash(follower_spaces, oracle: PayoffOracle, leader_action: int,
                        tolerance: float = DEFAULT_TOLERANCE, threads: int = 1) -> list:
    """All follower profiles where no follower gains more than ``tolerance`` by deviating alone."""
    tensors, _ = follower_payoffs(follower_spaces, oracle, leader_action, threads)
    mask = _nash_mask(tensors, tolerance)
    return [(leader_action, *map(int, idx)) for idx in np.argwhere(mask)] if mask.ndim else [(leader_action,)]


def _record(profile, outcome: Outcome, weights: WelfareWeights) -> EquilibriumRecord:
    return EquilibriumRecord(profile=tuple(profile), payoffs=tuple(outcome.payoffs),
                             metrics=outcome.metrics, leader_welfare=weights.welfare(outcome.metrics))


def _tie_key(record: EquilibriumRecord, tie_break: str):
    if tie_break == "profile-index":
        return (record.profile,)
    return (record.metrics.customer_cost, record.metrics.emission_cost, record.profile)


def select_welfare(records: Sequence[EquilibriumRecord], weights: WelfareWeights,
                   tolerance: float = 0.0, tie_break: str = "lexicographic") -> EquilibriumRecord:
    """Record maximising -k1*C - k2*E + k3*R.

    Records within ``tolerance`` of the best welfare tie; ties go to the
    lower customer cost, then lower emissions, then the lower profile.
    """
    if not records:
        raise ValueError("cannot select from an empty set of equilibria")
    if tie_break not in TIE_BREAKS:
        raise ValueError(f"unknown tie-break rule {tie_break!r}")
    w = np.array([weights.welfare(r.metrics) for r in records])
    best = w.max()
    # relative slack so that rescaled weights pick the same record
    slack = tolerance + 8 * np.finfo(float).eps * max(1.0, abs(best))
    cands = [r for r, wi in zip(records, w) if wi >= best - slack]
    return min(cands, key=lambda r: _tie_key(r, tie_break))


def _worst(records, weights, tie_break):
    w = np.array([weights.welfare(r.metrics) for r in records])
    worst = w.min()
    slack = 8 * np.finfo(float).eps * max(1.0, abs(worst))
    cands = [r for r, wi in zip(records, w) if wi <= worst + slack]
    return max(cands, key=lambda r: _tie_key(r, tie_break))


def dominance_filter(records: Sequence[EquilibriumRecord], chunk: int = 1024) -> list:
    """Records not dominated in (customer cost, emission cost, revenue).

    A dominates B when it is no worse in all three metrics and strictly better
    in one. Exact duplicates never dominate each other, so all are retained.
    """
    if not records:
        return []
    M = np.array([r.metrics.as_tuple() for r in records], dtype=float)
    C, E, R = M[:, 0], M[:, 1], M[:, 2]
    keep = np.ones(len(records), dtype=bool)
    for start in range(0, len(records), chunk):
        sl = slice(start, start + chunk)
        no_worse = (C[None, :] <= C[sl, None]) & (E[None, :] <= E[sl, None]) & (R[None, :] >= R[sl, None])
        better = (C[None, :] < C[sl, None]) | (E[None, :] < E[sl, None]) | (R[None, :] > R[sl, None])
        keep[sl] = ~np.any(no_worse & better, axis=1)
    return [r for r, k in zip(records, keep) if k]


@dataclass
class SubgameSolution:
    """Follower equilibria for every leader action."""

    equilibria: dict  # leader action -> list[EquilibriumRecord], canonical order
    outcomes: dict  # profile -> Outcome, every evaluated profile

    def all_records(self) -> list:
        return [r for a in sorted(self.equilibria) for r in self.equilibria[a]]


def solve_subgames(leader_space, follower_spaces, oracle: PayoffOracle, weights: WelfareWeights,
                   tolerance: float = DEFAULT_TOLERANCE, threads: int = 1,
                   leader_actions: Optional[Iterable[int]] = None) -> SubgameSolution:
    equilibria, outcomes = {}, {}
    actions = range(len(leader_space)) if leader_actions is None else leader_actions
    for a in actions:
        tensors, outs = follower_payoffs(follower_spaces, oracle, a, threads)
        outcomes.update(outs)
        mask = _nash_mask(tensors, tolerance)
        idxs = [tuple(map(int, i)) for i in np.argwhere(mask)] if mask.ndim else [()]
        equilibria[a] = [_record((a, *i), outs[(a, *i)], weights) for i in idxs]
    return SubgameSolution(equilibria, outcomes)


def _subgame_choice(records, weights, policy, tie_break):
    if policy == "optimistic":
        return select_welfare(records, weights, tie_break=tie_break)
    return _worst(records, weights, tie_break)


def backward_induction(leader_space, follower_spaces, oracle: PayoffOracle, weights: WelfareWeights,
                       tie_break: str = "lexicographic", policy: str = "optimistic",
                       tolerance: float = DEFAULT_TOLERANCE, threads: int = 1,
                       subgames: Optional[SubgameSolution] = None) -> EquilibriumRecord:
    """Leader sweep over follower Nash equilibria.

    ``policy`` decides which follower equilibrium is realised when several
    coexist: ``optimistic`` takes the one best for the leader,
    ``pessimistic`` the worst.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if subgames is None:
        subgames = solve_subgames(leader_space, follower_spaces, oracle, weights, tolerance, threads)
    chosen = [_subgame_choice(recs, weights, policy, tie_break)
              for _, recs in sorted(subgames.equilibria.items()) if recs]
    if not chosen:
        raise NoEquilibriumError("no equilibrium: no leader action admits a pure follower Nash equilibrium")
    return select_welfare(chosen, weights, tie_break=tie_break)


def is_equilibrium(profile: Profile, leader_space, follower_spaces, oracle: PayoffOracle,
                   weights: WelfareWeights, policy: str = "optimistic",
                   tolerance: float = DEFAULT_TOLERANCE, tie_break: str = "lexicographic") -> bool:
    """Certificate for a realised profile of the sequential game.

    Followers must be in Nash equilibrium at the realised leader action.
    Off the realised path, followers respond with the equilibrium chosen by
    ``policy``; where no pure equilibrium exists their response is free and
    the one worst for the leader is used. The leader must not gain by
    switching action against those responses.
    """
    profile = tuple(int(i) for i in profile)
    sizes = (len(leader_space), *_sizes(follower_spaces))
    if len(profile) != len(sizes) or any(not 0 <= i < n for i, n in zip(profile, sizes)):
        raise ValueError(f"profile {profile} out of bounds for spaces {sizes}")
    a0 = profile[0]
    sub = solve_subgames(leader_space, follower_spaces, oracle, weights, tolerance, leader_actions=[a0])
    if profile not in {r.profile for r in sub.equilibria[a0]}:
        return False
    here = weights.welfare(oracle(profile).metrics)
    for a in range(len(leader_space)):
        if a == a0:
            continue
        other = solve_subgames(leader_space, follower_spaces, oracle, weights, tolerance, leader_actions=[a])
        recs = other.equilibria[a]
        if recs:
            value = _subgame_choice(recs, weights, policy, tie_break).leader_welfare
        else:
            value = min(weights.welfare(o.metrics) for o in other.outcomes.values())
        if value > here + tolerance:
            return False
    return True
